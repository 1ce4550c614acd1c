"""Staged training: flow, then gate, then residual, then fusion.

Each stage trains one sub-network with everything before it frozen (loaded
from its checkpoint) and writes its own checkpoint.  Outputs of frozen stages
are computed once per training item and cached.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import DependencyError, load_into, save_checkpoint
from .events import InvalidInputError
from .flow_net import warp_boundaries
from .gating import expected_flops, gate_forward, pixel_coverage
from .pipeline import ModelConfig, Pipeline, collate, prepare
from .residual import refine_warp

log = logging.getLogger(__name__)

STAGES = ("flow", "gate", "residual", "fusion")
PREREQUISITES = {"flow": (), "gate": ("flow",), "residual": ("flow", "gate"), "fusion": ("flow", "gate", "residual")}


@dataclass
class TrainConfig:
    lam: float = 2e-4
    lr_initial: float = 1e-4
    lr_after: float = 1e-5
    lr_drop_epoch: int = 10
    epochs_per_stage: int = 15
    batch_size: int = 4
    stage: str = "flow"
    seed: int = 0
    flops_unit: float = 1e8  # G in the loss is measured in units of 100 MFLOPs
    max_steps: int = 0  # 0 = no cap
    residual_mask: str = "gate"  # "gate" or "all"

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInputError("lambda must be non-negative")
        if self.lr_initial <= 0 or self.lr_after <= 0:
            raise InvalidInputError("learning rates must be positive")
        if self.stage not in STAGES:
            raise InvalidInputError(f"unknown stage {self.stage!r}")
        if self.residual_mask not in ("gate", "all"):
            raise InvalidInputError(f"unknown residual mask mode {self.residual_mask!r}")

    def lr_at(self, epoch):
        """Learning rate for 1-based ``epoch``."""
        return self.lr_initial if epoch <= self.lr_drop_epoch else self.lr_after


def loss(pred, gt, G=0.0, lam=0.0):
    """``mean|pred - gt| + lam * G``."""
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {tuple(pred.shape)} vs ground truth {tuple(gt.shape)}")
    if isinstance(pred, torch.Tensor):
        return (pred - gt).abs().mean() + lam * G
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))) + lam * G)


@dataclass
class TrainResult:
    stage: str
    checkpoint: Path
    losses: list = field(default_factory=list)
    schedule: list = field(default_factory=list)  # (epoch, lr)
    records: list = field(default_factory=list)


def checkpoint_path(ckpt_dir, stage):
    return Path(ckpt_dir) / f"{stage}.ckpt"


def build_pipeline(model_config, seed, ckpt_dir=None, stages=()):
    torch.manual_seed(seed)
    pipe = Pipeline(model_config)
    for s in stages:
        load_into(pipe.stages()[s], checkpoint_path(ckpt_dir, s))
    return pipe


def load_pipeline(ckpt_dir, model_config=None, stages=STAGES):
    model_config = model_config or ModelConfig()
    missing = [s for s in stages if not checkpoint_path(ckpt_dir, s).exists()]
    if missing:
        raise DependencyError(f"missing checkpoints for stages: {', '.join(missing)}")
    pipe = build_pipeline(model_config, 0, ckpt_dir, stages)
    pipe.eval()
    return pipe


def training_items(dataset):
    """``(sample index, t)`` pairs: one per ground-truth intermediate frame."""
    return [(i, t) for i, s in enumerate(dataset) for t in s.times[1:-1]]


def _batches(items, batch_size, rng):
    by_t = {}
    for it in items:
        by_t.setdefault(it[1], []).append(it)
    batches = []
    for t in sorted(by_t):
        group = by_t[t]
        order = rng.permutation(len(group))
        group = [group[k] for k in order]
        batches += [group[k:k + batch_size] for k in range(0, len(group), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[k] for k in order]


def _stage_loss(pipe, stage, batch, t, cfg, step, H, W, cost):
    """Return ``(total, l1, flops_term)`` for one batch."""
    gt = batch["gt"]
    zero = torch.zeros((), dtype=gt.dtype)
    if stage == "flow":
        out = pipe(batch, t, until="flow")
        l1 = 0.5 * (loss(out["I0_warp"], gt) + loss(out["I1_warp"], gt))
        # the far boundary frame is free supervision for the full interval
        e0, e1, _, _ = warp_boundaries(batch["I0"], batch["I1"], out["ctrl01"], out["ctrl10"], 1.0)
        l1 = l1 + 0.5 * (loss(e0, batch["I1"]) + loss(e1, batch["I0"]))
        return l1, l1, zero
    if stage == "gate":
        probs, mask = _gate_step(pipe, batch, cfg, step)
        err = 0.5 * ((batch["I0_warp"] - gt).abs() + (batch["I1_warp"] - gt).abs()).mean(dim=1)
        cover = pixel_coverage(mask, pipe.residual.regions(H, W), H, W)
        # refinement stand-in: dynamic pixels count as fixed, static ones keep their warp error
        l1 = ((1 - cover) * err).mean()
        G = expected_flops(probs[:, 1], cost).mean() / cfg.flops_unit
        return l1 + cfg.lam * G, l1, cfg.lam * G
    if stage == "residual":
        f0, f1 = pipe.residual(batch["I0"], batch["I1"], batch["V0t"], batch["V1t"], batch["I0_warp"],
                               batch["I1_warp"], batch["F0t"], batch["F1t"], batch["mask"])
        R0, R1 = refine_warp(batch["I0_warp"], batch["I1_warp"], f0, f1)
        l1 = 0.5 * (loss(R0, gt) + loss(R1, gt))
        return l1, l1, zero
    pred = pipe.fusion(batch["I0"], batch["I1"], batch["V0t"], batch["V1t"], batch["I0_refine"], batch["I1_refine"])
    l1 = loss(pred, gt)
    return l1, l1, zero


def _gate_step(pipe, batch, cfg, step):
    return gate_forward(pipe.gate, batch["F0t"], batch["F1t"], "train", pipe.config.tau,
                        seed=cfg.seed * 1_000_003 + step)


@torch.no_grad()
def _frozen_prefix(pipe, stage, prepared, t, residual_mask):
    """Cache the outputs of the frozen stages feeding ``stage``."""
    if stage == "flow":
        return prepared
    out = dict(prepared)
    res = pipe(prepared, t, until="flow")
    out.update(I0_warp=res["I0_warp"], I1_warp=res["I1_warp"], F0t=res["F0t"], F1t=res["F1t"])
    if stage == "gate":
        return out
    if residual_mask == "all":
        g = 3 if pipe.config.residual.overlap else 2
        out["mask"] = prepared["I0"].new_ones(1, g, g)
    else:
        out["mask"] = pipe(prepared, t, until="gate")["mask"]
    if stage == "residual":
        return out
    variant = "all" if residual_mask == "all" else "gated"
    res = pipe(prepared, t, variant=variant, until="residual")
    out.update(I0_refine=res["I0_refine"], I1_refine=res["I1_refine"])
    return out


def staged_train(config, dataset, ckpt_dir, model_config=None, log_path=None):
    """Train ``config.stage`` and write its checkpoint into ``ckpt_dir``."""
    model_config = model_config or ModelConfig()
    stage = config.stage
    prereq = list(PREREQUISITES[stage])
    if config.residual_mask == "all" and "gate" in prereq:
        prereq.remove("gate")
    for s in prereq:
        if not checkpoint_path(ckpt_dir, s).exists():
            raise DependencyError(f"stage {stage!r} needs the {s!r} checkpoint in {ckpt_dir}")
    if not dataset:
        raise InvalidInputError("empty training set")

    pipe = build_pipeline(model_config, config.seed, ckpt_dir, prereq)
    module = pipe.stages()[stage]
    for p in pipe.parameters():
        p.requires_grad_(False)
    for p in module.parameters():
        p.requires_grad_(True)
    pipe.eval()
    module.train()

    H, W = np.shape(dataset[0].I0)[:2]
    cost = pipe.cost_model(H, W)
    items = training_items(dataset)
    cache = {}
    for i, t in items:
        prepared = prepare(dataset[i], t, model_config.bins)
        cache[(i, t)] = _frozen_prefix(pipe, stage, prepared, t, config.residual_mask)

    opt = torch.optim.Adam(module.parameters(), lr=config.lr_initial, betas=(0.9, 0.999))
    rng = np.random.default_rng(config.seed)
    result = TrainResult(stage, checkpoint_path(ckpt_dir, stage))
    log_file = open(log_path, "a") if log_path else None
    step = 0
    try:
        for epoch in range(1, config.epochs_per_stage + 1):
            lr = config.lr_at(epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            result.schedule.append((epoch, lr))
            for chunk in _batches(items, config.batch_size, rng):
                t = chunk[0][1]
                batch = collate([cache[it] for it in chunk])
                total, l1, fterm = _stage_loss(pipe, stage, batch, t, config, step, H, W, cost)
                opt.zero_grad()
                total.backward()
                opt.step()
                step += 1
                rec = {"step": step, "stage": stage, "loss": total.item(), "l1": l1.item(),
                       "flops_term": float(fterm.item()), "lr": lr}
                result.losses.append(rec["loss"])
                result.records.append(rec)
                if log_file:
                    log_file.write(json.dumps(rec) + "\n")
                if config.max_steps and step >= config.max_steps:
                    break
            if config.max_steps and step >= config.max_steps:
                break
    finally:
        if log_file:
            log_file.close()
    log.info("stage %s: %d steps, final loss %.5f", stage, step, result.losses[-1] if result.losses else float("nan"))
    save_checkpoint(result.checkpoint, module, {"stage": stage, "model": model_config.to_dict(),
                                                "train": asdict(config)})
    return result


def train_all(config, dataset, ckpt_dir, model_config=None, log_path=None, stages=STAGES, overrides=None):
    """Run the listed stages in order; ``overrides`` maps stage -> TrainConfig kwargs."""
    results = {}
    for stage in stages:
        kw = asdict(config)
        kw.update((overrides or {}).get(stage, {}))
        kw["stage"] = stage
        results[stage] = staged_train(TrainConfig(**kw), dataset, ckpt_dir, model_config, log_path)
    return results
