"""Shared test utilities (oracles and a finite-difference gradient check)."""
import numpy as np
import torch


def shift_oracle(image, dx, dy, fill=0.0):
    """``out[y, x] = image[y - dy, x - dx]``; uncovered cells get ``fill``."""
    out = np.full_like(image, fill)
    h, w = image.shape[:2]
    ys_dst = slice(max(dy, 0), h + min(dy, 0))
    xs_dst = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys_dst, xs_dst] = image[ys_src, xs_src]
    return out


def directional_fd_error(loss_fn, params, n_dirs=3, eps=1e-5, seed=0):
    """Largest relative error between the analytic directional derivative of
    ``loss_fn`` and its central finite difference, over random directions.

    ``params`` must be double-precision leaf tensors with ``requires_grad``.
    """
    gen = torch.Generator().manual_seed(seed)
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
        norm = torch.sqrt(sum((d * d).sum() for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = float(sum((g * d).sum() for g, d in zip(grads, dirs)))
        with torch.no_grad():
            for p, d in zip(params, dirs):
                p.add_(eps * d)
            up = float(loss_fn())
            for p, d in zip(params, dirs):
                p.sub_(2 * eps * d)
            down = float(loss_fn())
            for p, d in zip(params, dirs):
                p.add_(eps * d)
        numeric = (up - down) / (2 * eps)
        rel = abs(analytic - numeric) / max(abs(numeric), abs(analytic), 1e-12)
        worst = max(worst, rel)
    return worst


def reinit_(module, std=0.1, seed=0):
    """Overwrite zero-initialised weights so gradients reach every layer."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)
    return module


ACCEPTANCE = {}  # criterion number -> (passed, detail), printed in the terminal summary


class criterion:
    """Context manager that records one acceptance line.

    The body sets ``c.detail`` and calls ``c.check(cond)``; an exception or a
    failed check marks the criterion FAIL.
    """

    def __init__(self, number):
        self.number = number
        self.detail = ""
        self.ok = True

    def check(self, cond, msg=""):
        if not cond:
            self.ok = False
            if msg:
                self.detail = f"{self.detail}; {msg}" if self.detail else msg
        return cond

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = self.ok and exc_type is None
        detail = self.detail if exc_type is None else f"{self.detail} [{exc_type.__name__}: {exc}]"
        ACCEPTANCE[self.number] = (ok, detail)
        print(f"criterion {self.number}: {'PASS' if ok else 'FAIL'}  {detail}")
        if exc_type is None:
            assert self.ok, detail
        return False
