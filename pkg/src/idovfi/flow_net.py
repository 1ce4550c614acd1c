"""Spline flow estimator: frames plus events in, bidirectional motion splines out."""
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .events import InvalidInputError
from .layers import UNet
from .splines import (DEFAULT_K, MotionSpline, forward_warp_softmax, photometric_importance,
                      sample_control_points)


@dataclass
class FlowNetConfig:
    base_channels: int = 16
    depth: int = 3
    K: int = DEFAULT_K

    def __post_init__(self):
        if self.depth < 2:
            raise InvalidInputError("flow net depth must be >= 2")
        if self.K < 2 or self.base_channels < 1:
            raise InvalidInputError("bad flow net config")


class FlowNet(nn.Module):
    """Shared UNet backbone with one spline head per direction.

    Each head predicts ``K - 1`` control points per axis; the ``k = 0`` point is
    a hard-wired zero so ``sample(t=0)`` is always the zero field.
    """

    def __init__(self, config=None, image_channels=1, bins=5):
        super().__init__()
        self.config = config or FlowNetConfig()
        cfg = self.config
        self.backbone = UNet(2 * image_channels + bins, 0, cfg.base_channels, cfg.depth)
        width = self.backbone.out_channels
        self.head01 = nn.Conv2d(width, 2 * (cfg.K - 1), 3, padding=1)
        self.head10 = nn.Conv2d(width, 2 * (cfg.K - 1), 3, padding=1)
        for head in (self.head01, self.head10):
            nn.init.normal_(head.weight, std=1e-3)
            nn.init.zeros_(head.bias)

    def _controls(self, head, feats):
        n, _, h, w = feats.shape
        pts = head(feats).reshape(n, self.config.K - 1, 2, h, w)
        return torch.cat([pts.new_zeros(n, 1, 2, h, w), pts], dim=1)

    def forward(self, i0, i1, voxels):
        """Return control points ``(N, K, 2, H, W)`` for 0->1 and 1->0."""
        h, w = i0.shape[-2:]
        div = 2 ** self.config.depth
        if h % div or w % div:
            raise InvalidInputError(f"resolution {h}x{w} not divisible by {div}")
        if not (i0.shape == i1.shape and voxels.shape[-2:] == i0.shape[-2:]):
            raise InvalidInputError("frame and voxel shapes disagree")
        feats = self.backbone.features(torch.cat([i0, i1, voxels], dim=1))
        return self._controls(self.head01, feats), self._controls(self.head10, feats)


def _batched(image):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[None]
    else:
        image = np.moveaxis(image, 2, 0)
    return torch.from_numpy(np.ascontiguousarray(image))[None]


@torch.no_grad()
def estimate_splines(net, I0, I1, voxels):
    """Numpy convenience wrapper around :class:`FlowNet` for one sample."""
    dtype = next(net.parameters()).dtype
    i0 = _batched(I0).to(dtype)
    i1 = _batched(I1).to(dtype)
    v = torch.as_tensor(np.asarray(voxels), dtype=dtype)[None]
    c01, c10 = net(i0, i1, v)
    return MotionSpline.from_array(c01[0]), MotionSpline.from_array(c10[0])


def warp_boundaries(I0, I1, ctrl01, ctrl10, t):
    """Sample both splines at ``t`` and forward-warp the boundary frames.

    Batched torch inputs: images ``(N, C, H, W)``, controls ``(N, K, 2, H, W)``.
    Returns ``(I0_warp, I1_warp, F0t, F1t)``.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"t={t} outside [0, 1]")
    f0t = sample_control_points(ctrl01, t, axis=1)
    f1t = sample_control_points(ctrl10, 1.0 - t, axis=1)
    z0 = photometric_importance(I0, I1, sample_control_points(ctrl01, 1.0, axis=1))
    z1 = photometric_importance(I1, I0, sample_control_points(ctrl10, 1.0, axis=1))
    return forward_warp_softmax(I0, f0t, z0), forward_warp_softmax(I1, f1t, z1), f0t, f1t
