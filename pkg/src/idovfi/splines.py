"""Cubic motion splines, softmax-splatting forward warp and bilinear backward warp.

Functions accept either numpy arrays or torch tensors.  Numpy images follow
the ``H x W`` / ``H x W x C`` convention and flows are ``(2, H, W)`` arrays of
``(dx, dy)`` pixel displacements.  Torch inputs are batched: images
``(N, C, H, W)``, flows ``(N, 2, H, W)``; the torch paths are differentiable.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import kernels
from .events import InvalidInputError

DEFAULT_K = 4


@dataclass
class FlowField:
    u: np.ndarray  # horizontal displacement (columns)
    v: np.ndarray  # vertical displacement (rows)

    @classmethod
    def from_array(cls, uv):
        uv = np.asarray(uv)
        return cls(uv[0], uv[1])

    @property
    def uv(self):
        return np.stack([self.u, self.v])

    @property
    def shape(self):
        return self.u.shape


@dataclass
class MotionSpline:
    """Per-pixel displacement curves with ``K`` control points at ``k/(K-1)``."""

    cx: np.ndarray  # (K, H, W)
    cy: np.ndarray  # (K, H, W)

    def __post_init__(self):
        if self.cx.shape != self.cy.shape or self.cx.ndim != 3:
            raise InvalidInputError("control point arrays must both be (K, H, W)")
        if self.cx.shape[0] < 2:
            raise InvalidInputError("a spline needs at least 2 control points")

    @property
    def K(self):
        return self.cx.shape[0]

    @classmethod
    def from_array(cls, ctrl):
        """Build from a ``(K, 2, H, W)`` array (or tensor)."""
        if isinstance(ctrl, torch.Tensor):
            ctrl = ctrl.detach().cpu().numpy()
        return cls(np.asarray(ctrl[:, 0]), np.asarray(ctrl[:, 1]))

    def as_array(self):
        return np.stack([self.cx, self.cy], axis=1)

    def validate(self):
        if not (np.all(self.cx[0] == 0) and np.all(self.cy[0] == 0)):
            raise InvalidInputError("first control point must be zero")
        if not (np.all(np.isfinite(self.cx)) and np.all(np.isfinite(self.cy))):
            raise InvalidInputError("control points must be finite")
        return self


def catmull_rom_weights(t, K):
    """Weights ``w`` such that the spline value at ``t`` is ``sum_k w[k] P_k``.

    Uniform Catmull-Rom: interior tangents ``(P[i+1] - P[i-1]) / 2``, end
    tangents by one-sided differences.  The weights depend only on ``t`` and
    ``K``, which is what makes sampling O(1) in the number of events.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"spline parameter {t} outside [0, 1]")
    if K < 2:
        raise InvalidInputError("need K >= 2")
    pos = t * (K - 1)
    if abs(pos - round(pos)) < 1e-12:
        pos = float(round(pos))
    seg = min(int(np.floor(pos)), K - 2)
    s = pos - seg
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2

    def tangent(i):
        m = np.zeros(K)
        if i == 0:
            m[1], m[0] = 1.0, -1.0
        elif i == K - 1:
            m[K - 1], m[K - 2] = 1.0, -1.0
        else:
            m[i + 1], m[i - 1] = 0.5, -0.5
        return m

    w = h10 * tangent(seg) + h11 * tangent(seg + 1)
    w[seg] += h00
    w[seg + 1] += h01
    return w


def sample_control_points(ctrl, t, axis=0):
    """Evaluate control points stacked along ``axis`` at parameter ``t``."""
    K = ctrl.shape[axis]
    w = catmull_rom_weights(t, K)
    if isinstance(ctrl, torch.Tensor):
        wt = torch.as_tensor(w, dtype=ctrl.dtype, device=ctrl.device)
        return torch.tensordot(wt, ctrl.movedim(axis, 0), dims=1)
    moved = np.moveaxis(np.asarray(ctrl, dtype=np.float64), axis, 0)
    out = np.zeros(moved.shape[1:])
    for k in range(K):
        if w[k] != 0.0:
            out = out + w[k] * moved[k]
    return out


def sample_flow(spline, t):
    """Displacement field at time ``t`` from a :class:`MotionSpline`."""
    w = catmull_rom_weights(t, spline.K)
    u = np.tensordot(w, spline.cx, axes=1)
    v = np.tensordot(w, spline.cy, axes=1)
    return FlowField(u, v)


# ---------------------------------------------------------------------------
# shape helpers
# ---------------------------------------------------------------------------

def _to_chw(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image[None], lambda a: a[0]
    if image.ndim == 3:
        return np.moveaxis(image, 2, 0), lambda a: np.moveaxis(a, 0, 2)
    raise InvalidInputError(f"expected H x W or H x W x C image, got {image.shape}")


def _flow_array(flow):
    if isinstance(flow, FlowField):
        return flow.uv.astype(np.float64)
    return np.asarray(flow, dtype=np.float64)


def _check_torch(image, flow):
    if image.dim() != 4 or flow.dim() != 4 or flow.shape[1] != 2:
        raise InvalidInputError("torch inputs must be (N, C, H, W) images and (N, 2, H, W) flows")
    if image.shape[0] != flow.shape[0] or image.shape[-2:] != flow.shape[-2:]:
        raise InvalidInputError(f"image {tuple(image.shape)} and flow {tuple(flow.shape)} disagree")


def _grid(h, w, like):
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=like.dtype, device=like.device),
        torch.arange(w, dtype=like.dtype, device=like.device),
        indexing="ij",
    )
    return gx, gy


# ---------------------------------------------------------------------------
# backward warp
# ---------------------------------------------------------------------------

def _backward_torch(image, flow):
    _check_torch(image, flow)
    n, c, h, w = image.shape
    gx, gy = _grid(h, w, image)
    sx = (gx + flow[:, 0]).clamp(0, w - 1)
    sy = (gy + flow[:, 1]).clamp(0, h - 1)
    x0 = sx.detach().floor().clamp(0, max(w - 2, 0))
    y0 = sy.detach().floor().clamp(0, max(h - 2, 0))
    fx = sx - x0
    fy = sy - y0
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    flat = image.reshape(n, c, h * w)

    def tap(yy, xx):
        idx = (yy * w + xx).reshape(n, 1, h * w).expand(n, c, h * w)
        return flat.gather(2, idx).reshape(n, c, h, w)

    fx = fx[:, None]
    fy = fy[:, None]
    top = tap(y0, x0) * (1 - fx) + tap(y0, x1) * fx
    bottom = tap(y1, x0) * (1 - fx) + tap(y1, x1) * fx
    return top * (1 - fy) + bottom * fy


def _backward_numpy(image, uv):
    c, h, w = image.shape
    gy, gx = np.mgrid[0:h, 0:w]
    sx = np.clip(gx + uv[0], 0, w - 1)
    sy = np.clip(gy + uv[1], 0, h - 1)
    x0 = np.clip(np.floor(sx), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(sy), 0, max(h - 2, 0))
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = image[:, y0, x0] * (1 - fx) + image[:, y0, x1] * fx
    bottom = image[:, y1, x0] * (1 - fx) + image[:, y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def backward_warp(image, flow):
    """Bilinear gather ``out(x) = image(x + flow(x))`` with edge clamping."""
    if isinstance(image, torch.Tensor):
        return _backward_torch(image, flow)
    chw, restore = _to_chw(image)
    uv = _flow_array(flow)
    if uv.shape != (2,) + chw.shape[1:]:
        raise InvalidInputError(f"flow {uv.shape} does not match image {np.shape(image)}")
    return restore(_backward_numpy(chw, uv))


# ---------------------------------------------------------------------------
# softmax splatting
# ---------------------------------------------------------------------------

def _splat_torch(image, flow, importance):
    _check_torch(image, flow)
    n, c, h, w = image.shape
    if importance.dim() == 3:
        importance = importance[:, None]
    if importance.shape != (n, 1, h, w):
        raise InvalidInputError(f"importance {tuple(importance.shape)} must be (N, 1, H, W)")
    gx, gy = _grid(h, w, image)
    tx = gx + flow[:, 0]
    ty = gy + flow[:, 1]
    x0 = tx.detach().floor()
    y0 = ty.detach().floor()
    fx = tx - x0
    fy = ty - y0
    wz = torch.exp(importance[:, 0] - importance.amax(dim=(1, 2, 3)).detach()[:, None, None])
    offsets = (torch.arange(n, device=image.device) * (h * w))[:, None, None]
    src = image.permute(0, 2, 3, 1).reshape(n * h * w, c)
    num = image.new_zeros(n * h * w, c)
    den = image.new_zeros(n * h * w)
    for dy in (0, 1):
        for dx in (0, 1):
            xx = (x0 + dx).long()
            yy = (y0 + dy).long()
            ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
            wb = (fx if dx else 1 - fx) * (fy if dy else 1 - fy) * wz * ok
            idx = (torch.where(ok, yy * w + xx, 0) + offsets).reshape(-1)
            wb = wb.reshape(-1)
            den = den.index_add(0, idx, wb)
            num = num.index_add(0, idx, src * wb[:, None])
    filled = den > 0
    out = torch.where(filled[:, None], num / torch.where(filled, den, 1.0)[:, None], 0.0)
    return out.reshape(n, h, w, c).permute(0, 3, 1, 2)


def forward_warp_softmax(image, flow, importance):
    """Softmax splatting: every source pixel is splatted bilinearly to
    ``x + flow(x)``; collisions are averaged with weights ``exp(importance)``.

    Targets that receive nothing stay 0; splats leaving the frame are dropped.
    An all-zero flow returns the image unchanged (no splat round-off).
    """
    if isinstance(image, torch.Tensor):
        if not flow.requires_grad and not torch.any(flow):
            _check_torch(image, flow)
            return image.clone()
        return _splat_torch(image, flow, importance)
    chw, restore = _to_chw(image)
    uv = _flow_array(flow)
    z = np.asarray(importance, dtype=np.float64)
    if uv.shape != (2,) + chw.shape[1:] or z.shape != chw.shape[1:]:
        raise InvalidInputError("image, flow and importance shapes disagree")
    if not np.any(uv):
        return np.array(image, dtype=np.float64)
    num, den = kernels.splat(chw, uv, np.exp(z - z.max()))
    filled = den > 0
    out = np.where(filled, num / np.where(filled, den, 1.0), 0.0)
    return restore(out)


def photometric_importance(source, target, flow):
    """``-|source(x) - target(x + flow(x))|`` averaged over channels.

    ``flow`` is the full source-to-target displacement.  Torch inputs return
    ``(N, 1, H, W)``; numpy inputs return ``(H, W)``.
    """
    if isinstance(source, torch.Tensor):
        err = (source - _backward_torch(target, flow)).abs().mean(dim=1, keepdim=True)
        return -err
    src, _ = _to_chw(source)
    tgt, _ = _to_chw(target)
    return -np.abs(src - _backward_numpy(tgt, _flow_array(flow))).mean(axis=0)


# ---------------------------------------------------------------------------
# flow files
# ---------------------------------------------------------------------------

FLOW_MAGIC = b"IDOF"
_HEADER = struct.Struct("<4sIII")  # magic, H, W, channels


def write_flow(path, flow):
    """Little-endian float32 ``(2, H, W)`` payload behind a 16-byte header."""
    uv = _flow_array(flow).astype("<f4")
    _, h, w = uv.shape
    Path(path).write_bytes(_HEADER.pack(FLOW_MAGIC, h, w, 2) + uv.tobytes())


def read_flow(path):
    raw = Path(path).read_bytes()
    magic, h, w, c = _HEADER.unpack_from(raw)
    if magic != FLOW_MAGIC or c != 2:
        raise InvalidInputError(f"{path} is not a flow file")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    if data.size != 2 * h * w:
        raise InvalidInputError(f"{path} is truncated")
    return FlowField.from_array(data.reshape(2, h, w).astype(np.float32))
