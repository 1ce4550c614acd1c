"""Residual flow refinement of dynamic regions, attention blending and montage."""
from dataclasses import dataclass

import torch
import torch.nn as nn

from .events import InvalidInputError
from .gating import divide_regions, region_masks
from .layers import UNet, zero_init
from .splines import backward_warp

_NEG = -1e30


@dataclass
class ResidualConfig:
    base_channels: int = 12
    levels: int = 3
    attention_channels: int = 8
    overlap: bool = True


@dataclass
class RegionBundle:
    """Everything the residual net sees for one region, cropped to its window.

    All fields are ``(N, C, h, w)`` tensors.
    """

    region: object
    I0: torch.Tensor
    I1: torch.Tensor
    V0t: torch.Tensor
    V1t: torch.Tensor
    I0_warp: torch.Tensor
    I1_warp: torch.Tensor
    F0t: torch.Tensor
    F1t: torch.Tensor

    @classmethod
    def crop(cls, region, *frames):
        ys, xs = region.slices
        return cls(region, *(f[..., ys, xs] for f in frames))

    def stacked(self):
        parts = [self.I0, self.I1, self.V0t, self.V1t, self.I0_warp, self.I1_warp, self.F0t, self.F1t]
        size = parts[0].shape[-2:]
        if any(p.shape[-2:] != size or p.shape[0] != parts[0].shape[0] for p in parts):
            raise InvalidInputError("bundle crops disagree in shape")
        if tuple(size) != (self.region.h, self.region.w):
            raise InvalidInputError("bundle crops do not match the region window")
        return torch.cat(parts, dim=1)


def bundle_channels(image_channels, bins):
    return 4 * image_channels + 2 * bins + 4


def refine_region(bundle, net):
    """Residual flows ``(F0t, F1t)`` for one region, each ``(N, 2, h, w)``."""
    out = net(bundle.stacked())
    return out[:, :2], out[:, 2:]


def window_prior(regions, H, W, like=None):
    """Log of a separable tent peaking at each region's centre, ``(R, H, W)``.

    Added to the attention logits so that, before any learning, overlaps are
    blended like an overlap-add window and crop borders get little weight.
    """
    ref = like if like is not None else torch.zeros(())
    ys = torch.arange(H, dtype=ref.dtype) + 0.5
    xs = torch.arange(W, dtype=ref.dtype) + 0.5
    out = torch.zeros(len(regions), H, W, dtype=ref.dtype)
    for r in regions:
        ty = 1 - (ys - (r.y0 + r.h / 2)).abs() / (r.h / 2)
        tx = 1 - (xs - (r.x0 + r.w / 2)).abs() / (r.w / 2)
        out[r.index] = torch.log(ty.clamp_min(1e-3))[:, None] + torch.log(tx.clamp_min(1e-3))[None, :]
    return out


def blend_and_montage(padded, mask, regions, attention=None, prior=False):
    """Merge zero-padded per-region residual flows into one full-frame field.

    ``padded`` is ``(N, R, 4, H, W)`` (both directions stacked), ``mask`` is
    ``(N, g, g)`` with 1 for dynamic regions.  Pixels covered by several
    dynamic regions take a convex combination whose weights come from a
    per-pixel softmax of ``attention`` logits over the contributing regions
    only; with ``attention=None`` the logits are equal.  ``prior`` adds
    :func:`window_prior` to the logits.  Pixels outside every dynamic region
    get zero.
    """
    n, r, ch, h, w = padded.shape
    flat_mask = mask.reshape(mask.shape[0], -1)
    if r != len(regions) or flat_mask.shape != (n, r):
        raise InvalidInputError(f"{r} padded flows, {len(regions)} regions, mask {tuple(mask.shape)}")
    fp = region_masks(regions, h, w, like=padded)
    contrib = flat_mask[:, :, None, None] * fp[None]
    if attention is None:
        logits = torch.zeros_like(contrib)
    else:
        logits = attention(torch.cat([padded.reshape(n, r * ch, h, w), contrib], dim=1))
    if prior:
        logits = logits + window_prior(regions, h, w, like=padded)[None]
    logits = torch.where(contrib > 0, logits, torch.full_like(logits, _NEG))
    weights = torch.softmax(logits, dim=1) * contrib
    out = (weights[:, :, None] * padded).sum(dim=1)
    return out[:, :2], out[:, 2:], weights


def refine_warp(I0_warp, I1_warp, F0_refine, F1_refine):
    return backward_warp(I0_warp, F0_refine), backward_warp(I1_warp, F1_refine)


class ResidualModule(nn.Module):
    """Per-region residual UNet plus the attention UNet used for blending."""

    def __init__(self, config=None, image_channels=1, bins=5):
        super().__init__()
        self.config = config or ResidualConfig()
        cfg = self.config
        self.n_regions = 9 if cfg.overlap else 4
        self.net = UNet(bundle_channels(image_channels, bins), 4, cfg.base_channels, cfg.levels)
        zero_init(self.net.head)
        r = self.n_regions
        self.attention = UNet(5 * r, r, cfg.attention_channels, 2)
        zero_init(self.attention.head)

    def regions(self, H, W):
        return divide_regions(H, W, overlap=self.config.overlap)

    def forward(self, I0, I1, V0t, V1t, I0_warp, I1_warp, F0t, F1t, mask):
        """Return full-frame refined residual flows ``(F0_refine, F1_refine)``."""
        n, _, H, W = I0.shape
        regions = self.regions(H, W)
        flat_mask = mask.reshape(n, -1)
        if flat_mask.shape[1] != len(regions):
            raise InvalidInputError(f"mask has {flat_mask.shape[1]} entries for {len(regions)} regions")
        frames = (I0, I1, V0t, V1t, I0_warp, I1_warp, F0t, F1t)
        padded = I0.new_zeros(n, len(regions), 4, H, W)
        active = (flat_mask.detach() > 0.5).nonzero().tolist()
        if active:
            crops = []
            for b, ri in active:
                bundle = RegionBundle.crop(regions[ri], *(f[b:b + 1] for f in frames))
                crops.append(bundle.stacked())
            out = self.net(torch.cat(crops, dim=0))
            # a straight-through mask carries gradient through the multiplier
            out = out * flat_mask[[b for b, _ in active], [ri for _, ri in active]][:, None, None, None]
            rows = []
            for k, (b, ri) in enumerate(active):
                ys, xs = regions[ri].slices
                rows.append((b, ri, ys, xs, out[k]))
            padded = _scatter_crops(padded, rows)
        f0, f1, _ = blend_and_montage(padded, flat_mask, regions, self.attention, prior=True)
        return f0, f1


def _scatter_crops(padded, rows):
    # out-of-place so autograd sees a pure function of the crops
    n, r, ch, H, W = padded.shape
    pieces = {}
    for b, ri, ys, xs, val in rows:
        pieces[(b, ri)] = torch.nn.functional.pad(val, (xs.start, W - xs.stop, ys.start, H - ys.stop))
    stack = [torch.stack([pieces.get((b, ri), padded[b, ri]) for ri in range(r)]) for b in range(n)]
    return torch.stack(stack)
