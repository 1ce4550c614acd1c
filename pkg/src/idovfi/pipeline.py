"""The assembled interpolator: flow -> gate -> residual refinement -> fusion."""
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .events import DEFAULT_BINS, InvalidInputError, reverse_stream, split_stream, voxelize
from .flow_net import FlowNet, FlowNetConfig, warp_boundaries
from .fusion import FusionConfig, FusionNet
from .gating import CostModel, GatingNet, gate_forward
from .metrics import module_flops
from .residual import ResidualConfig, ResidualModule, bundle_channels, refine_warp

VARIANTS = ("gated", "all", "none")


@dataclass
class ModelConfig:
    image_channels: int = 1
    bins: int = DEFAULT_BINS
    tau: float = 1.0
    gate_width: int = 8
    flow: FlowNetConfig = field(default_factory=FlowNetConfig)
    residual: ResidualConfig = field(default_factory=ResidualConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        sub = {"flow": FlowNetConfig, "residual": ResidualConfig, "fusion": FusionConfig}
        for key, typ in sub.items():
            if isinstance(d.get(key), dict):
                d[key] = typ(**d[key])
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def _chw(image):
    image = np.asarray(image, dtype=np.float32)
    return image[None] if image.ndim == 2 else np.moveaxis(image, 2, 0)


def prepare(sample, t, bins=DEFAULT_BINS):
    """Tensors for one sample at time ``t`` (each with a leading batch dim).

    ``V1t`` is the voxelisation of the reversed ``t -> 1`` stream, i.e. the
    events seen when playing from frame 1 back to ``t``.
    """
    h, w = np.shape(sample.I0)[:2]
    first, second = split_stream(sample.events, t)
    gt = sample.gt.get(t)
    if gt is None:
        gt = next((f for s, f in sample.gt.items() if abs(s - t) < 1e-9), None)
    out = {
        "I0": _chw(sample.I0),
        "I1": _chw(sample.I1),
        "V01": voxelize(sample.events, bins, h, w),
        "V0t": voxelize(first, bins, h, w),
        "V1t": voxelize(reverse_stream(second), bins, h, w),
    }
    if gt is not None:
        out["gt"] = _chw(gt)
    return {k: torch.from_numpy(np.ascontiguousarray(v, dtype=np.float32))[None] for k, v in out.items()}


def collate(items):
    return {k: torch.cat([it[k] for it in items]) for k in items[0]}


class Pipeline(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        c, b = cfg.image_channels, cfg.bins
        self.flow = FlowNet(cfg.flow, c, b)
        self.gate = GatingNet(3 if cfg.residual.overlap else 2, cfg.gate_width)
        self.residual = ResidualModule(cfg.residual, c, b)
        self.fusion = FusionNet(cfg.fusion, c, b)

    def stages(self):
        return {"flow": self.flow, "gate": self.gate, "residual": self.residual, "fusion": self.fusion}

    def n_regions(self):
        return self.residual.n_regions

    def forward(self, batch, t, variant="gated", until="fusion", gate_mode="eval", seed=None,
                straight_through=True, controls=None):
        """Run the pipeline up to stage ``until`` and return every intermediate.

        ``controls`` reuses spline control points from an earlier call, so
        several ``t`` can share one pass of the flow network.
        """
        if variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {variant!r}")
        I0, I1 = batch["I0"], batch["I1"]
        out = {}
        c01, c10 = controls if controls is not None else self.flow(I0, I1, batch["V01"])
        I0w, I1w, F0t, F1t = warp_boundaries(I0, I1, c01, c10, t)
        out.update(ctrl01=c01, ctrl10=c10, I0_warp=I0w, I1_warp=I1w, F0t=F0t, F1t=F1t)
        if until == "flow":
            return out
        n = I0.shape[0]
        g = 3 if self.config.residual.overlap else 2
        if variant == "gated":
            probs, mask = gate_forward(self.gate, F0t, F1t, gate_mode, self.config.tau, seed,
                                       straight_through=straight_through)
        else:
            probs = None
            mask = I0.new_ones(n, g, g) if variant == "all" else I0.new_zeros(n, g, g)
        out.update(probs=probs, mask=mask)
        if until == "gate":
            return out
        if variant == "none":
            R0, R1 = I0w, I1w
            zero = torch.zeros_like(F0t)
            out.update(F0_refine=zero, F1_refine=zero)
        else:
            f0, f1 = self.residual(I0, I1, batch["V0t"], batch["V1t"], I0w, I1w, F0t, F1t, mask)
            R0, R1 = refine_warp(I0w, I1w, f0, f1)
            out.update(F0_refine=f0, F1_refine=f1)
        out.update(I0_refine=R0, I1_refine=R1)
        if until == "residual":
            return out
        out["output"] = self.fusion(I0, I1, batch["V0t"], batch["V1t"], R0, R1)
        return out

    # -- compute accounting -------------------------------------------------

    def stage_flops(self, H, W):
        return _stage_flops(self, H, W)

    def cost_model(self, H, W):
        f = self.stage_flops(H, W)
        r = self.n_regions()
        per_region = f["residual_region"] + f["attention"] / r
        return CostModel(f["flow"] + f["gate"] + f["fusion"], [per_region] * r)

    def count_flops(self, mask, H, W, variant="gated"):
        """Realised FLOPs of one inference given the binary region mask."""
        f = self.stage_flops(H, W)
        if variant == "none":
            return float(f["flow"] + f["fusion"])
        n_dyn = int(np.asarray(mask).astype(bool).sum())
        total = f["flow"] + f["gate"] + f["fusion"] + n_dyn * f["residual_region"]
        if n_dyn:
            total += f["attention"]
        return float(total)


_FLOPS_CACHE = {}


def _stage_flops(pipe, H, W):
    cfg = pipe.config
    key = (repr(cfg.to_dict()), H, W)
    if key in _FLOPS_CACHE:
        return _FLOPS_CACHE[key]
    c, b = cfg.image_channels, cfg.bins
    dtype = next(pipe.parameters()).dtype
    img = torch.zeros(1, c, H, W, dtype=dtype)
    vox = torch.zeros(1, b, H, W, dtype=dtype)
    flow = torch.zeros(1, 2, H, W, dtype=dtype)
    region = pipe.residual.regions(H, W)[0]
    r = pipe.n_regions()
    out = {
        "flow": module_flops(pipe.flow, img, img, vox),
        "gate": module_flops(pipe.gate, flow, flow),
        "fusion": module_flops(pipe.fusion, img, img, vox, vox, img, img),
        "residual_region": module_flops(
            pipe.residual.net, torch.zeros(1, bundle_channels(c, b), region.h, region.w, dtype=dtype)),
        "attention": module_flops(pipe.residual.attention, torch.zeros(1, 5 * r, H, W, dtype=dtype)),
    }
    _FLOPS_CACHE[key] = out
    return out
