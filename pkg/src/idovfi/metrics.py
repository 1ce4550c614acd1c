"""Image quality metrics, analytic FLOPs counting and runtime accounting."""
import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import correlate1d

from .events import InvalidInputError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(peak**2 / mse)))


def _gaussian_taps(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _ssim_channel(a, b, data_range):
    taps = _gaussian_taps()
    pad = SSIM_WINDOW // 2

    def blur(x):
        y = correlate1d(correlate1d(x, taps, axis=0, mode="reflect"), taps, axis=1, mode="reflect")
        return y[pad:-pad, pad:-pad]

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range=1.0):
    """Gaussian-window SSIM (11x11, sigma 1.5) averaged over valid window
    positions and then over channels."""
    a, b = _same_shape(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise InvalidInputError(f"image {a.shape} smaller than the {SSIM_WINDOW}px SSIM window")
    if a.ndim == 2:
        return _ssim_channel(a, b, data_range)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], data_range) for c in range(a.shape[2])]))


# ---------------------------------------------------------------------------
# FLOPs
# ---------------------------------------------------------------------------

def conv2d_flops(height, width, cin, cout, kernel, stride=1, padding=0, groups=1):
    """2 FLOPs per multiply-accumulate; bias and activation are not counted."""
    h_out = (height + 2 * padding - kernel) // stride + 1
    w_out = (width + 2 * padding - kernel) // stride + 1
    return 2 * (cin // groups) * kernel * kernel * cout * h_out * w_out


def linear_flops(tokens, fin, fout):
    return 2 * tokens * fin * fout


def module_flops(module, *inputs):
    """Run ``module`` once on ``inputs`` and sum per-layer FLOPs.

    Counts ``Conv2d`` and ``Linear`` layers, plus the two attention matmuls of
    windowed-attention blocks (modules with ``window`` and ``heads``).
    """
    total = 0
    handles = []

    def on_conv(m, inp, out):
        nonlocal total
        k = m.kernel_size[0] * m.kernel_size[1]
        total += 2 * (m.in_channels // m.groups) * k * out.numel()

    def on_linear(m, inp, out):
        nonlocal total
        total += linear_flops(out.numel() // m.out_features, m.in_features, m.out_features)

    def on_attention(m, inp, out):
        nonlocal total
        n, c, h, w = inp[0].shape
        tokens = m.window * m.window
        windows = n * (h // m.window) * (w // m.window)
        total += 2 * 2 * windows * tokens * tokens * c  # q k^T and att v

    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            handles.append(m.register_forward_hook(on_conv))
        elif isinstance(m, nn.Linear):
            handles.append(m.register_forward_hook(on_linear))
        elif hasattr(m, "window") and hasattr(m, "heads"):
            handles.append(m.register_forward_hook(on_attention))
    try:
        with torch.no_grad():
            module(*inputs)
    finally:
        for h in handles:
            h.remove()
    return int(total)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    variant: str
    psnr_mean: float
    ssim_mean: float
    tera_flops: float
    runtime_s: float
    io_s: float
    n_samples: int
    failures: list = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


TABLE_COLUMNS = ("Method", "Runtime(s)", "Tera-FLOPs", "PSNR", "SSIM")
VARIANT_LABELS = {"none": "Without refinement", "all": "All regions process", "gated": "Ours (gated)"}
VARIANT_ORDER = ("none", "all", "gated")


def render_table(reports):
    rows = sorted(reports, key=lambda r: VARIANT_ORDER.index(r.variant) if r.variant in VARIANT_ORDER else 99)
    lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "---|" * len(TABLE_COLUMNS)]
    for r in rows:
        lines.append(f"| {VARIANT_LABELS.get(r.variant, r.variant)} | {r.runtime_s:.3f} | {r.tera_flops:.6f} "
                     f"| {r.psnr_mean:.2f} | {r.ssim_mean:.4f} |")
    return "\n".join(lines)


class Stopwatch:
    """Accumulates compute and I/O time separately."""

    def __init__(self):
        self.compute = 0.0
        self.io = 0.0

    @contextmanager
    def measure(self, kind="compute"):
        start = time.perf_counter()
        try:
            yield
        finally:
            setattr(self, kind, getattr(self, kind) + time.perf_counter() - start)
