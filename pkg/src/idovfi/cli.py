"""Command-line entry point: ``idovfi <command> [options]``.

Commands: simulate-events, make-synthetic, train, interpolate, evaluate,
flops-report.  Exit codes: 0 success, 2 configuration error, 3 missing
checkpoint (dependency) error.  ``IDOVFI_SEED`` overrides the configured seed.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import DependencyError
from .events import InvalidInputError, simulate_events, write_events, EventStream
from .gating import CostModel
from .metrics import render_table
from .pipeline import VARIANTS, ModelConfig
from .splines import write_flow
from .synthetic import (DEFAULT_THRESHOLD, frame_paths, list_sequences, load_png, make_synthetic_dataset, read_sample,
                        save_png, write_sample)
from .training import STAGES, TrainConfig, load_pipeline, staged_train

log = logging.getLogger("idovfi")

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY = 0, 2, 3
SEED_ENV = "IDOVFI_SEED"


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    dataset_root: str = "data"
    checkpoint_dir: str = "checkpoints"
    output_dir: str = "outputs"
    threshold: float = DEFAULT_THRESHOLD
    height: int = 64
    width: int = 64
    n_samples: int = 200
    skip: int = 1
    ts: list = field(default_factory=lambda: [0.5])
    cost_model: dict = None  # {"base_flops": .., "region_flops": [..]}; measured when absent
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if any(not 0.0 < t < 1.0 for t in self.ts):
            raise ConfigError(f"interpolation times must lie in (0, 1): {self.ts}")
        if self.threshold <= 0:
            raise ConfigError("threshold must be positive")
        return self


def load_config(path=None, seed=None):
    raw = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{p} must hold a key-value mapping")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        model = ModelConfig.from_dict(raw.pop("model", {}))
        train = TrainConfig(**(raw.pop("train", {}) or {}))
        cfg = PipelineConfig(model=model, train=train, **raw)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(str(exc)) from exc
    env_seed = os.environ.get(SEED_ENV)
    if seed is not None:
        cfg.train.seed = int(seed)
    elif env_seed:
        cfg.train.seed = int(env_seed)
    return cfg.validate()


def _require_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def _load_samples(root):
    samples, failures = [], []
    for folder in list_sequences(root):
        try:
            samples.append(read_sample(folder))
        except Exception as exc:
            failures.append(f"{folder.name}: {exc}")
    return samples, failures


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate_events(cfg, args):
    root = _require_dir(args.root or cfg.dataset_root, "dataset root")
    threshold = args.threshold or cfg.threshold
    folders = list_sequences(root)
    if not folders:
        log.warning("no frame sequences under %s; nothing to do", root)
    failures, written = [], 0
    for folder in folders:
        try:
            frames = [load_png(p) for p in frame_paths(folder)]
            n = len(frames)
            parts = [simulate_events(frames[k], frames[k + 1], threshold, k / (n - 1), (k + 1) / (n - 1))
                     for k in range(n - 1)]
            stream = EventStream((0.0, 1.0), *(np.concatenate([getattr(s, a) for s in parts])
                                               for a in ("x", "y", "p", "t")))
            write_events(folder / "events.txt", stream)
            written += 1
        except Exception as exc:
            log.error("%s: %s", folder.name, exc)
            failures.append(f"{folder.name}: {exc}")
    print(json.dumps({"written": written, "failures": failures}))
    return EXIT_CONFIG if failures and not written else EXIT_OK


def cmd_make_synthetic(cfg, args):
    out = Path(args.out or cfg.dataset_root)
    n = args.n or cfg.n_samples
    skip = args.skip if args.skip is not None else cfg.skip
    times = [k / (skip + 1) for k in range(1, skip + 1)]
    samples = make_synthetic_dataset(n, cfg.height, cfg.width, cfg.train.seed, times, threshold=cfg.threshold)
    for s in samples:
        write_sample(out / s.name, s)
    print(json.dumps({"written": len(samples), "root": str(out)}))
    return EXIT_OK


def cmd_train(cfg, args):
    root = Path(args.data or cfg.dataset_root)
    if root.is_dir() and list_sequences(root):
        samples, failures = _load_samples(root)
        if failures:
            log.warning("skipped %d unreadable sequences", len(failures))
    elif args.data:
        raise ConfigError(f"dataset root {root} has no sequences")
    else:
        log.info("no dataset at %s; training on %d synthetic samples", root, cfg.n_samples)
        samples = make_synthetic_dataset(cfg.n_samples, cfg.height, cfg.width, cfg.train.seed, cfg.ts,
                                         threshold=cfg.threshold)
    tc = TrainConfig(**{**asdict(cfg.train), "stage": args.stage})
    if args.max_steps is not None:
        tc.max_steps = args.max_steps
    ckpt = Path(args.checkpoints or cfg.checkpoint_dir)
    log_path = ckpt / "train_log.jsonl"
    ckpt.mkdir(parents=True, exist_ok=True)
    res = staged_train(tc, samples, ckpt, cfg.model, log_path)
    print(json.dumps({"stage": res.stage, "checkpoint": str(res.checkpoint), "steps": len(res.losses),
                      "final_loss": res.losses[-1] if res.losses else None}))
    return EXIT_OK


def cmd_interpolate(cfg, args):
    from .evaluation import PipelinePredictor, _to_image

    pipe = load_pipeline(args.checkpoints or cfg.checkpoint_dir, cfg.model)
    sample = read_sample(_require_dir(args.sample, "sample folder"))
    ts = args.t or cfg.ts
    if any(not 0.0 <= t <= 1.0 for t in ts):
        raise ConfigError(f"t values must lie in [0, 1]: {ts}")
    out_dir = Path(args.out or cfg.output_dir) / sample.name
    out_dir.mkdir(parents=True, exist_ok=True)
    results = PipelinePredictor(pipe).interpolate(sample, list(ts), args.variant)
    written = []
    for t, res in results.items():
        tag = f"t{t:.3f}"
        save_png(out_dir / f"{tag}.png", _to_image(res["output"]))
        written.append(f"{tag}.png")
        if args.intermediates:
            for key in ("I0_warp", "I1_warp", "I0_refine", "I1_refine"):
                save_png(out_dir / f"{tag}_{key}.png", _to_image(res[key]))
            for key in ("F0t", "F1t", "F0_refine", "F1_refine"):
                write_flow(out_dir / f"{tag}_{key}.flo", res[key][0].numpy())
    print(json.dumps({"sample": sample.name, "written": written}))
    return EXIT_OK


def cmd_evaluate(cfg, args):
    from .evaluation import evaluate_pipeline, skip_windows

    root = _require_dir(args.data or cfg.dataset_root, "dataset root")
    pipe = load_pipeline(args.checkpoints or cfg.checkpoint_dir, cfg.model)
    skip = args.skip if args.skip is not None else cfg.skip
    seqs, failures = _load_samples(root)
    samples = [w for s in seqs for w in skip_windows(s, skip)]
    if not samples:
        raise ConfigError(f"no skip-{skip} windows found under {root}")
    variants = args.variant or list(VARIANTS)
    reports = evaluate_pipeline(pipe, samples, variants)
    for r in reports:
        r.failures = (r.failures or []) + failures
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_skip{skip}.json").write_text(json.dumps([asdict(r) for r in reports], indent=2))
    print(render_table(reports))
    return EXIT_OK


def cmd_flops_report(cfg, args):
    from .evaluation import flops_report

    root = _require_dir(args.data or cfg.dataset_root, "dataset root")
    pipe = load_pipeline(args.checkpoints or cfg.checkpoint_dir, cfg.model)
    samples, _ = _load_samples(root)
    if not samples:
        raise ConfigError(f"no sequences under {root}")
    cost = None
    if cfg.cost_model:
        try:
            cost = CostModel(**cfg.cost_model)
        except TypeError as exc:
            raise ConfigError(f"bad cost_model: {exc}") from exc
        if len(cost.region_flops) != pipe.n_regions():
            raise ConfigError(f"cost_model needs {pipe.n_regions()} region costs")
    report = flops_report(pipe, samples, cost)
    print(json.dumps(report, indent=2))
    return EXIT_OK


COMMANDS = {
    "simulate-events": cmd_simulate_events,
    "make-synthetic": cmd_make_synthetic,
    "train": cmd_train,
    "interpolate": cmd_interpolate,
    "evaluate": cmd_evaluate,
    "flops-report": cmd_flops_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="idovfi", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="YAML file with PipelineConfig keys")
    parser.add_argument("--seed", type=int, help=f"overrides the config seed (and ${SEED_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-events", help="write events.txt for every frame sequence")
    p.add_argument("--root")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("make-synthetic", help="render a moving-shapes dataset to disk")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--skip", type=int, help="intermediate frames per sequence")

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--stage", choices=STAGES, required=True)
    p.add_argument("--data")
    p.add_argument("--checkpoints")
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("interpolate", help="synthesise frames at the given times")
    p.add_argument("--sample", required=True)
    p.add_argument("--t", type=float, nargs="+")
    p.add_argument("--variant", choices=VARIANTS, default="gated")
    p.add_argument("--checkpoints")
    p.add_argument("--out")
    p.add_argument("--intermediates", action="store_true", help="also write warped/refined frames and flows")

    p = sub.add_parser("evaluate", help="skip-N PSNR/SSIM/FLOPs report")
    p.add_argument("--skip", type=int)
    p.add_argument("--variant", choices=VARIANTS, action="append")
    p.add_argument("--data")
    p.add_argument("--checkpoints")
    p.add_argument("--out")

    p = sub.add_parser("flops-report", help="expected vs realised gate FLOPs")
    p.add_argument("--data")
    p.add_argument("--checkpoints")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, args)
    except DependencyError as exc:
        log.error("%s", exc)
        return EXIT_DEPENDENCY
    except (ConfigError, InvalidInputError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
