"""Sliding-window region division and the Gumbel gate that marks regions dynamic."""
from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .events import InvalidInputError
from .layers import conv

STATIC, DYNAMIC = 0, 1


@dataclass(frozen=True)
class Region:
    index: int
    y0: int
    x0: int
    h: int
    w: int

    @property
    def slices(self):
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)


def divide_regions(H, W, overlap=True):
    """Half-size windows scanned from the top-left corner.

    With ``overlap`` the stride is a quarter of the frame, giving a 3 x 3 grid
    of windows whose neighbours share a band; without it the stride equals the
    window and the frame splits into 2 x 2 disjoint quadrants.
    """
    if H % 4 or W % 4 or H <= 0 or W <= 0:
        raise InvalidInputError(f"frame {H}x{W} must be divisible by 4")
    h, w = H // 2, W // 2
    sy, sx = (H // 4, W // 4) if overlap else (h, w)
    n = 3 if overlap else 2
    return [Region(i * n + j, i * sy, j * sx, h, w) for i in range(n) for j in range(n)]


def grid_size(regions):
    return int(round(len(regions) ** 0.5))


def coverage_count(regions, H, W):
    count = np.zeros((H, W), dtype=np.int64)
    for r in regions:
        count[r.slices] += 1
    return count


def region_masks(regions, H, W, like=None):
    """``(R, H, W)`` indicator of each region's footprint."""
    m = torch.zeros(len(regions), H, W) if like is None else like.new_zeros(len(regions), H, W)
    for r in regions:
        m[(r.index,) + r.slices] = 1
    return m


@dataclass
class CostModel:
    """FLOPs of the always-on path plus the residual cost of each region."""

    base_flops: float
    region_flops: List[float] = field(default_factory=lambda: [0.0] * 9)

    def __post_init__(self):
        if self.base_flops < 0 or any(c < 0 for c in self.region_flops):
            raise InvalidInputError("costs must be non-negative")

    @property
    def max_flops(self):
        return self.base_flops + sum(self.region_flops)


def expected_flops(dynamic_probs, cost):
    """``base + sum_i p_i * region_i``; linear (hence differentiable) in ``p``.

    ``dynamic_probs`` is a ``(..., g, g)`` array or tensor of per-region
    dynamic probabilities (or a hard mask, for realised cost).
    """
    if isinstance(dynamic_probs, torch.Tensor):
        rc = torch.as_tensor(cost.region_flops, dtype=dynamic_probs.dtype)
        p = dynamic_probs.flatten(start_dim=-2)
        return cost.base_flops + (p * rc).sum(dim=-1)
    p = np.asarray(dynamic_probs, dtype=np.float64).reshape(*np.shape(dynamic_probs)[:-2], -1)
    return cost.base_flops + (p * np.asarray(cost.region_flops)).sum(axis=-1)


def gumbel_softmax(logits, tau=1.0, noise=None, dim=-1, generator=None):
    """Temperature-scaled softmax of ``logits + noise``.

    ``noise`` defaults to fresh standard Gumbel samples drawn from ``generator``.
    Works on numpy arrays too when ``noise`` is supplied.
    """
    if not tau > 0:
        raise InvalidInputError("temperature must be positive")
    if not isinstance(logits, torch.Tensor):
        z = (np.asarray(logits, dtype=np.float64) + np.asarray(noise, dtype=np.float64)) / tau
        z = z - z.max(axis=dim, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=dim, keepdims=True)
    if noise is None:
        noise = sample_gumbel(logits.shape, generator, logits.dtype)
    return F.softmax((logits + noise) / tau, dim=dim)


def sample_gumbel(shape, generator=None, dtype=torch.float32):
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u.clamp(1e-10, 1.0 - 1e-7)))


class GatingNet(nn.Module):
    """Three stride-2 conv blocks on the stacked flow pair, pooled to the
    region grid, then a 1x1 conv to (static, dynamic) logits."""

    def __init__(self, grid=3, width=8):
        super().__init__()
        self.grid = grid
        self.body = nn.Sequential(conv(4, width, 2), conv(width, 2 * width, 2), conv(2 * width, 2 * width, 2))
        self.head = nn.Conv2d(2 * width, 2, 1)

    def forward(self, f0t, f1t):
        x = self.body(torch.cat([f0t, f1t], dim=1))
        return self.head(F.adaptive_avg_pool2d(x, self.grid))


def gate_forward(net, f0t, f1t, mode="eval", tau=1.0, seed=None, noise=None, straight_through=True):
    """Run the gate.  Returns ``(probs, mask)``.

    ``probs`` is ``(N, 2, g, g)`` (channel 0 static, 1 dynamic).  In eval mode
    ``mask`` is the rounded dynamic probability (ties are static).  In train
    mode ``mask`` is a Gumbel-softmax sample: hard one-hot on the forward pass
    with the soft sample's gradient when ``straight_through`` is set, or the
    soft sample itself otherwise.
    """
    if f0t.shape != f1t.shape:
        raise InvalidInputError("flow shapes differ")
    if not tau > 0:
        raise InvalidInputError("temperature must be positive")
    logits = net(f0t, f1t)
    probs = F.softmax(logits, dim=1)
    if mode == "eval":
        return probs, (probs[:, DYNAMIC] > 0.5).to(probs.dtype)
    if mode != "train":
        raise InvalidInputError(f"unknown gate mode {mode!r}")
    if noise is None:
        gen = torch.Generator().manual_seed(0 if seed is None else int(seed))
        noise = sample_gumbel(logits.shape, gen, logits.dtype)
    soft = gumbel_softmax(logits, tau, noise, dim=1)
    if not straight_through:
        return probs, soft[:, DYNAMIC]
    hard = (soft[:, DYNAMIC] > soft[:, STATIC]).to(soft.dtype)
    return probs, hard - soft[:, DYNAMIC].detach() + soft[:, DYNAMIC]


def pixel_coverage(mask, regions, H, W):
    """Probability that a pixel is refined: ``1 - prod_i (1 - m_i)`` over the
    regions covering it.  ``mask`` is ``(N, g, g)``."""
    fp = region_masks(regions, H, W, like=mask)
    m = mask.flatten(start_dim=1)[:, :, None, None] * fp[None]
    return 1 - torch.prod(1 - m, dim=1)
