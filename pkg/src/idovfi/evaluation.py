"""Skip-N evaluation, multi-t interpolation and FLOPs reporting."""
import logging

import numpy as np
import torch

from .events import EventStream
from .gating import expected_flops
from .metrics import EvalReport, Stopwatch, psnr, ssim
from .pipeline import VARIANTS, prepare
from .synthetic import Sample

log = logging.getLogger(__name__)


def _to_image(t):
    arr = t.detach().cpu().numpy()[0]
    return arr[0] if arr.shape[0] == 1 else np.moveaxis(arr, 0, 2)


def skip_windows(sample, skip):
    """Cut a frame sequence into skip-``skip`` windows.

    Each window keeps two frames ``skip + 1`` apart and holds the ``skip``
    frames between them as ground truth; events are cropped to the window and
    its time axis is renormalised to [0, 1].
    """
    n = len(sample.frames)
    span = skip + 1
    out = []
    for start in range(0, n - span, span):
        stop = start + span
        t0, t1 = sample.times[start], sample.times[stop]
        ev = sample.events
        keep = (ev.t >= t0) & (ev.t <= t1)
        scale = 1.0 / (t1 - t0)
        events = EventStream((0.0, 1.0), ev.x[keep], ev.y[keep], ev.p[keep],
                             np.clip((ev.t[keep] - t0) * scale, 0.0, 1.0))
        times = [(sample.times[k] - t0) * scale for k in range(start, stop + 1)]
        times = [round(t, 12) for t in times]
        out.append(Sample(sample.frames[start:stop + 1], times, events, dict(sample.meta),
                          f"{sample.name}@{start}"))
    return out


class PipelinePredictor:
    """Callable ``(sample, t, variant) -> (frame, mask, intermediates)``."""

    def __init__(self, pipe):
        self.pipe = pipe
        self.flow_passes = 0

    @torch.no_grad()
    def interpolate(self, sample, ts, variant="gated"):
        """All ``ts`` for one sample with a single flow-network pass."""
        bins = self.pipe.config.bins
        batches = {t: prepare(sample, t, bins) for t in ts}
        first = batches[ts[0]]
        controls = self.pipe.flow(first["I0"], first["I1"], first["V01"])
        self.flow_passes += 1
        results = {}
        for t in ts:
            results[t] = self.pipe(batches[t], t, variant, controls=controls)
        return results

    def __call__(self, sample, t, variant="gated"):
        out = self.interpolate(sample, [t], variant)[t]
        return _to_image(out["output"]), out["mask"][0].numpy(), out


def evaluate_samples(samples, predictor, variant, flops_fn=None):
    """Average PSNR/SSIM over every ground-truth frame of ``samples``.

    ``flops_fn(mask, variant)`` gives the FLOPs of one inference; the report's
    ``tera_flops`` is the total over the whole set.
    """
    watch = Stopwatch()
    psnrs, ssims, flops, failures = [], [], 0.0, []
    for sample in sorted(samples, key=lambda s: s.name):
        for t, gt in sorted(sample.gt.items()):
            try:
                with watch.measure("compute"):
                    pred, mask, _ = predictor(sample, t, variant)
            except Exception as exc:  # one bad sample must not sink the report
                log.warning("sample %s t=%s failed: %s", sample.name, t, exc)
                failures.append(f"{sample.name}@{t}: {exc}")
                continue
            psnrs.append(psnr(pred, gt))
            ssims.append(ssim(pred, gt))
            if flops_fn is not None:
                flops += flops_fn(mask, variant)
    return EvalReport(
        variant=variant,
        psnr_mean=float(np.mean(psnrs)) if psnrs else float("nan"),
        ssim_mean=float(np.mean(ssims)) if ssims else float("nan"),
        tera_flops=flops / 1e12,
        runtime_s=watch.compute,
        io_s=watch.io,
        n_samples=len(psnrs),
        failures=failures,
    )


def evaluate_pipeline(pipe, samples, variants=VARIANTS):
    predictor = PipelinePredictor(pipe)
    h, w = np.shape(samples[0].I0)[:2] if samples else (0, 0)

    def flops_fn(mask, variant):
        return pipe.count_flops(mask, h, w, variant)

    return [evaluate_samples(samples, predictor, v, flops_fn) for v in variants]


@torch.no_grad()
def flops_report(pipe, samples, cost=None):
    """Expected (soft gate) and realised (hard mask) FLOPs per variant, totalled
    over every ground-truth frame of ``samples``."""
    h, w = np.shape(samples[0].I0)[:2]
    cost = cost or pipe.cost_model(h, w)
    expected = realised = 0.0
    n = 0
    for sample in samples:
        for t in sorted(sample.gt):
            out = pipe(prepare(sample, t, pipe.config.bins), t, "gated", until="gate")
            expected += float(expected_flops(out["probs"][0, 1], cost))
            realised += pipe.count_flops(out["mask"][0].numpy(), h, w)
            n += 1
    full = pipe.count_flops(np.ones(pipe.n_regions()), h, w) * n
    none = pipe.count_flops(None, h, w, "none") * n
    return {
        "inferences": n,
        "stage_flops": pipe.stage_flops(h, w),
        "gated_expected_tflops": expected / 1e12,
        "gated_realised_tflops": realised / 1e12,
        "all_regions_tflops": full / 1e12,
        "no_refinement_tflops": none / 1e12,
    }
