import json

import numpy as np
import pytest
import yaml

from idovfi.cli import EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_OK, ConfigError, PipelineConfig, load_config, main
from idovfi.synthetic import load_png, save_png


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small on-disk dataset plus a fully trained (few steps) checkpoint dir."""
    root = tmp_path_factory.mktemp("cli")
    cfg = {
        "dataset_root": str(root / "data"),
        "checkpoint_dir": str(root / "ck"),
        "output_dir": str(root / "out"),
        "height": 32, "width": 32,
        "model": {"fusion": {"base_channels": 8}},
        "train": {"epochs_per_stage": 1, "max_steps": 3, "batch_size": 2},
        "cost_model": {"base_flops": 1e9, "region_flops": [1e8] * 9},
    }
    path = root / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["--config", str(path), "make-synthetic", "--n", "3", "--skip", "3"]) == EXIT_OK
    for stage in ("flow", "gate", "residual", "fusion"):
        assert main(["--config", str(path), "train", "--stage", stage]) == EXIT_OK
    return root, path


def test_empty_dataset_warns_and_succeeds(tmp_path, caplog, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["simulate-events", "--root", str(tmp_path / "empty")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["written"] == 0
    assert "nothing to do" in caplog.text


def test_static_triplet_gives_empty_events(tmp_path):
    seq = tmp_path / "root" / "seq"
    seq.mkdir(parents=True)
    frame = np.random.default_rng(0).random((16, 16))
    for k in (1, 2, 3):
        save_png(seq / f"im{k}.png", frame)
    assert main(["simulate-events", "--root", str(tmp_path / "root")]) == EXIT_OK
    assert (seq / "events.txt").read_text() == ""


def test_simulate_events_is_idempotent_and_isolates_failures(workspace, tmp_path):
    root, path = workspace
    data = root / "data"
    assert main(["--config", str(path), "simulate-events"]) == EXIT_OK
    first = {p: p.read_bytes() for p in sorted(data.glob("*/events.txt"))}
    assert main(["--config", str(path), "simulate-events"]) == EXIT_OK
    assert first == {p: p.read_bytes() for p in sorted(data.glob("*/events.txt"))}
    assert all(first.values())
    # one unreadable frame does not stop the run
    bad = tmp_path / "mixed"
    for name in ("good", "bad"):
        (bad / name).mkdir(parents=True)
        for k in (1, 2):
            save_png(bad / name / f"im{k}.png", np.full((8, 8), 0.1 * k))
    (bad / "bad" / "im2.png").write_bytes(b"not a png")
    assert main(["simulate-events", "--root", str(bad)]) == EXIT_OK
    assert (bad / "good" / "events.txt").exists() and not (bad / "bad" / "events.txt").exists()


def test_missing_checkpoint_exit_code(tmp_path):
    (tmp_path / "seq").mkdir()
    save_png(tmp_path / "seq" / "im1.png", np.zeros((32, 32)))
    save_png(tmp_path / "seq" / "im2.png", np.zeros((32, 32)))
    code = main(["interpolate", "--sample", str(tmp_path / "seq"), "--checkpoints", str(tmp_path / "nock")])
    assert code == EXIT_DEPENDENCY


def test_config_errors(tmp_path, monkeypatch):
    bad = tmp_path / "bad.yaml"
    bad.write_text("ts: [0.5, 1.0]\n")
    assert main(["--config", str(bad), "flops-report"]) == EXIT_CONFIG
    bad.write_text("no_such_key: 1\n")
    assert main(["--config", str(bad), "flops-report"]) == EXIT_CONFIG
    assert main(["--config", str(tmp_path / "absent.yaml"), "flops-report"]) == EXIT_CONFIG
    assert main(["evaluate", "--data", str(tmp_path / "nowhere")]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        PipelineConfig(ts=[0.0]).validate()


def test_seed_override(monkeypatch):
    monkeypatch.setenv("IDOVFI_SEED", "17")
    assert load_config().train.seed == 17
    assert load_config(seed=3).train.seed == 3
    monkeypatch.delenv("IDOVFI_SEED")
    assert load_config().train.seed == 0


def test_interpolate_outputs(workspace, capsys):
    root, path = workspace
    seq = sorted((root / "data").iterdir())[0]
    code = main(["--config", str(path), "interpolate", "--sample", str(seq), "--t", "0.25", "0.75",
                 "--intermediates"])
    assert code == EXIT_OK
    out = root / "out" / seq.name
    a, b = load_png(out / "t0.250.png"), load_png(out / "t0.750.png")
    assert a.shape == load_png(seq / "im1.png").shape
    assert not np.array_equal(a, b)
    for name in ("I0_warp", "I1_warp", "I0_refine", "I1_refine"):
        assert (out / f"t0.250_{name}.png").exists()
    assert (out / "t0.250_F0t.flo").stat().st_size == 16 + 2 * 32 * 32 * 4
    warp = load_png(out / "t0.250_I0_warp.png")
    assert not np.array_equal(warp, a)


def test_evaluate_report(workspace, capsys):
    root, path = workspace
    assert main(["--config", str(path), "evaluate", "--skip", "3"]) == EXIT_OK
    table = capsys.readouterr().out
    assert "Without refinement" in table and "Ours (gated)" in table
    reports = json.loads((root / "out" / "eval_skip3.json").read_text())
    by = {r["variant"]: r for r in reports}
    assert set(by) == {"gated", "all", "none"}
    assert by["gated"]["tera_flops"] <= by["all"]["tera_flops"]
    assert by["gated"]["n_samples"] == 9
    assert main(["--config", str(path), "evaluate", "--skip", "1", "--variant", "none"]) == EXIT_OK
    (rep,) = json.loads((root / "out" / "eval_skip1.json").read_text())
    assert rep["variant"] == "none" and rep["n_samples"] == 6


def test_flops_report_uses_config_cost(workspace, capsys):
    root, path = workspace
    assert main(["--config", str(path), "flops-report"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    n = rep["inferences"]
    assert n == 9
    assert 1e9 * n / 1e12 <= rep["gated_expected_tflops"] <= 1.9e9 * n / 1e12
