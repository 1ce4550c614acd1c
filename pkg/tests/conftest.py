import shutil
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from helpers import ACCEPTANCE  # noqa: E402

TOY_SIZE = 64
TOY_TRAIN = 48
TOY_TEST = 50


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield


def toy_train_config(stage, epochs=15, **kw):
    from idovfi.training import TrainConfig
    # desk-scale learning rates: 10x the full-scale ones, same drop after epoch 10 of 15
    return TrainConfig(stage=stage, lr_initial=1e-3, lr_after=1e-4, lr_drop_epoch=10, epochs_per_stage=epochs, **kw)


@pytest.fixture(scope="session")
def toy(tmp_path_factory):
    """A 64x64 pipeline trained stage by stage on synthetic moving shapes."""
    from idovfi.fusion import FusionConfig
    from idovfi.pipeline import ModelConfig
    from idovfi.synthetic import make_synthetic_dataset
    from idovfi.training import STAGES, load_pipeline, staged_train

    start = time.perf_counter()
    ckpt = tmp_path_factory.mktemp("toy_ckpt")
    model = ModelConfig(fusion=FusionConfig(base_channels=16))
    train = make_synthetic_dataset(TOY_TRAIN, TOY_SIZE, TOY_SIZE, seed=1)
    test = make_synthetic_dataset(TOY_TEST, TOY_SIZE, TOY_SIZE, seed=2)
    for stage in STAGES:
        staged_train(toy_train_config(stage), train, ckpt, model)
    pipe = load_pipeline(ckpt, model)
    return {"ckpt": ckpt, "model": model, "train": train, "test": test, "pipe": pipe,
            "train_seconds": time.perf_counter() - start}


def copy_checkpoints(src, dst, stages):
    dst.mkdir(parents=True, exist_ok=True)
    for s in stages:
        shutil.copy(Path(src) / f"{s}.ckpt", dst / f"{s}.ckpt")
    return dst


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
