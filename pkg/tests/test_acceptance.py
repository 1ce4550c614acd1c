"""Acceptance criteria 1-11, one PASS/FAIL line each (see the terminal summary)."""
import time

import numpy as np
import pytest
import torch

from conftest import TOY_SIZE, copy_checkpoints, toy_train_config
from helpers import criterion, directional_fd_error, reinit_, shift_oracle
from idovfi.checkpoint import file_digest
from idovfi.events import EventStream, simulate_events, voxelize
from idovfi.evaluation import evaluate_pipeline
from idovfi.fusion import FusionConfig
from idovfi.gating import (CostModel, GatingNet, coverage_count, divide_regions, expected_flops, gate_forward,
                           pixel_coverage, sample_gumbel)
from idovfi.metrics import psnr, ssim
from idovfi.pipeline import ModelConfig, prepare
from idovfi.residual import ResidualConfig
from idovfi.splines import MotionSpline, backward_warp, forward_warp_softmax, sample_flow
from idovfi.synthetic import make_synthetic_dataset
from idovfi.training import STAGES, build_pipeline, staged_train


def test_c01_warp_identities():
    with criterion(1) as c:
        rng = np.random.default_rng(0)
        img = rng.random((32, 40))
        zero = np.zeros((2, 32, 40))
        z = rng.normal(size=(32, 40))
        # first call pays numba's one-time JIT compilation; time the warps, not the compiler
        t0 = time.perf_counter()
        forward_warp_softmax(img, np.ones((2, 32, 40)), z)
        jit_s = time.perf_counter() - t0
        start = time.perf_counter()
        err_id = max(np.abs(backward_warp(img, zero) - img).max(),
                     np.abs(forward_warp_softmax(img, zero, z) - img).max())
        ti = torch.from_numpy(img)[None, None]
        tz = torch.zeros(1, 2, 32, 40, dtype=torch.float64, requires_grad=True)
        with torch.no_grad():
            err_id = max(err_id, (backward_warp(ti, tz) - ti).abs().max().item(),
                         (forward_warp_softmax(ti, tz, torch.from_numpy(z)[None, None]) - ti).abs().max().item())
        flat = np.zeros((32, 40))  # constant importance: each target's weight is exactly 1
        shifts_exact = True
        for dx, dy in [(1, 0), (-2, 1), (3, -3), (0, 2)]:
            flow = np.zeros((2, 32, 40))
            flow[0], flow[1] = dx, dy
            fwd = forward_warp_softmax(img, flow, flat)
            m = 4
            shifts_exact &= np.array_equal(fwd[m:-m, m:-m], shift_oracle(img, dx, dy)[m:-m, m:-m])
            # gather semantics: out(x) = img(x + d), i.e. content moves by -d
            bwd = backward_warp(img, flow)
            shifts_exact &= np.array_equal(bwd[m:-m, m:-m], shift_oracle(img, -dx, -dy)[m:-m, m:-m])
        elapsed = time.perf_counter() - start
        c.detail = (f"zero-flow max err {err_id:.1e}, integer shifts exact={shifts_exact}, {elapsed:.3f}s "
                    f"(+{jit_s:.2f}s one-time JIT)")
        c.check(err_id < 1e-6, "identity error too large")
        c.check(shifts_exact, "shift oracle mismatch")
        c.check(elapsed < 1.0, "slower than 1 s")


def test_c02_spline_contract():
    with criterion(2) as c:
        start = time.perf_counter()
        rng = np.random.default_rng(1)
        ctrl = rng.normal(0, 3, (4, 2, 16, 16))
        ctrl[0] = 0
        s = MotionSpline.from_array(ctrl)
        knot_err = max(max(np.abs(sample_flow(s, k / 3).u - s.cx[k]).max(),
                           np.abs(sample_flow(s, k / 3).v - s.cy[k]).max()) for k in range(4))
        f0 = sample_flow(s, 0.0)
        zero_ok = not f0.u.any() and not f0.v.any()
        d = rng.normal(0, 3, (2, 16, 16))
        line = MotionSpline.from_array(np.stack([k / 3 * d for k in range(4)]))
        lin_err = max(max(np.abs(sample_flow(line, t).u - t * d[0]).max(),
                          np.abs(sample_flow(line, t).v - t * d[1]).max()) for t in np.linspace(0, 1, 21))
        elapsed = time.perf_counter() - start
        c.detail = f"knot err {knot_err:.1e}, t=0 zero={zero_ok}, collinear err {lin_err:.1e}, {elapsed:.3f}s"
        c.check(knot_err < 1e-6 and zero_ok and lin_err < 1e-6)
        c.check(elapsed < 1.0, "slower than 1 s")


def test_c03_region_division():
    with criterion(3) as c:
        regions = divide_regions(256, 256)
        offsets = {(r.y0, r.x0) for r in regions}
        cover = coverage_count(regions, 256, 256)
        c.detail = (f"{len(regions)} regions, sizes {sorted({(r.h, r.w) for r in regions})}, "
                    f"min coverage {cover.min()}, centre coverage {cover[128, 128]}")
        c.check(len(regions) == 9)
        c.check(all((r.h, r.w) == (128, 128) for r in regions))
        c.check(offsets == {(y, x) for y in (0, 64, 128) for x in (0, 64, 128)})
        c.check(cover.min() >= 1 and cover[128, 128] == 4)


def test_c04_gumbel_gating():
    with criterion(4) as c:
        g = torch.Generator().manual_seed(0)
        net = reinit_(GatingNet(), std=0.5)
        f0, f1 = torch.randn(4, 2, 32, 32, generator=g), torch.randn(4, 2, 32, 32, generator=g)
        probs, mask = gate_forward(net, f0, f1, mode="eval")
        binary = set(mask.unique().tolist()) <= {0.0, 1.0}
        norm_err = (probs.sum(1) - 1).abs().max().item()
        _, soft = gate_forward(net, f0, f1, mode="train", noise=torch.zeros(4, 2, 3, 3), straight_through=False)
        sm_err = (soft - probs[:, 1]).abs().max().item()

        toy = reinit_(GatingNet(width=4), std=0.4, seed=2).double()
        h0, h1 = torch.randn(2, 2, 8, 8, generator=g, dtype=torch.float64), torch.randn(2, 2, 8, 8, generator=g,
                                                                                         dtype=torch.float64)
        noise = sample_gumbel((2, 2, 3, 3), torch.Generator().manual_seed(7), torch.float64)
        err = torch.rand(2, 8, 8, generator=g, dtype=torch.float64)
        regions = divide_regions(8, 8)
        cost = CostModel(100.0, [10.0 + i for i in range(9)])

        def loss():
            p, m = gate_forward(toy, h0, h1, mode="train", noise=noise, straight_through=False)
            return ((1 - pixel_coverage(m, regions, 8, 8)) * err).mean() + 2e-4 * expected_flops(p[:, 1], cost).mean()

        rel = directional_fd_error(loss, list(toy.parameters()))
        c.detail = (f"binary={binary}, norm err {norm_err:.1e}, zero-noise vs softmax {sm_err:.1e}, "
                    f"grad rel err {rel:.1e}")
        c.check(binary and norm_err < 1e-6 and sm_err < 1e-6 and rel < 1e-3)


@pytest.fixture(scope="module")
def toy_reports(toy):
    start = time.perf_counter()
    reports = {r.variant: r for r in evaluate_pipeline(toy["pipe"], toy["test"], ("none", "all", "gated"))}
    return reports, toy["train_seconds"] + time.perf_counter() - start


def test_c05_compute_saving(toy_reports):
    reports, seconds = toy_reports
    with criterion(5) as c:
        g, a = reports["gated"], reports["all"]
        c.detail = (f"TFLOPs gated {g.tera_flops:.4f} vs all {a.tera_flops:.4f} "
                    f"({100 * (1 - g.tera_flops / a.tera_flops):.1f}% less); PSNR gated {g.psnr_mean:.2f} vs "
                    f"all {a.psnr_mean:.2f} dB; n={g.n_samples}; train+eval {seconds:.0f}s")
        c.check(g.n_samples == 50 and not g.failures, "evaluation incomplete")
        c.check(g.tera_flops < a.tera_flops, "gated is not cheaper")
        c.check(g.psnr_mean >= a.psnr_mean - 0.5, "gated PSNR too low")
        c.check(seconds < 600, "over 10 min")


def test_c06_refinement_gain(toy_reports):
    reports, _ = toy_reports
    with criterion(6) as c:
        g, n = reports["gated"], reports["none"]
        c.detail = f"PSNR full {g.psnr_mean:.2f} vs no refinement {n.psnr_mean:.2f} dB (+{g.psnr_mean - n.psnr_mean:.2f})"
        c.check(g.psnr_mean - n.psnr_mean >= 0.3)


def _refined_psnr(pipe, samples):
    scores = []
    with torch.no_grad():
        for s in samples:
            for t, gt in s.gt.items():
                out = pipe(prepare(s, t), t, "all", until="residual")
                scores.append(0.5 * (psnr(out["I0_refine"][0, 0].numpy(), gt)
                                     + psnr(out["I1_refine"][0, 0].numpy(), gt)))
    return float(np.mean(scores))


def test_c07_cross_region_gain(toy, tmp_path):
    with criterion(7) as c:
        scores = {}
        for overlap in (True, False):
            model = ModelConfig(fusion=toy["model"].fusion, residual=ResidualConfig(overlap=overlap))
            d = copy_checkpoints(toy["ckpt"], tmp_path / f"overlap_{overlap}", ["flow"])
            staged_train(toy_train_config("residual", residual_mask="all"), toy["train"], d, model)
            pipe = build_pipeline(model, 0, d, ["flow", "residual"]).eval()
            scores[overlap] = _refined_psnr(pipe, toy["test"])
        c.detail = (f"refined-frame PSNR: 9 overlapping windows + attention {scores[True]:.2f} dB vs "
                    f"4 quadrants {scores[False]:.2f} dB")
        c.check(scores[True] >= scores[False])


def test_c08_event_round_trip():
    with criterion(8) as c:
        rng = np.random.default_rng(3)
        worst_count = 0
        for _ in range(20):
            f0, f1 = rng.random((24, 24)), rng.random((24, 24))
            C = rng.uniform(0.05, 0.8)
            ev = simulate_events(f0, f1, C)
            counts = np.zeros((24, 24), dtype=np.int64)
            np.add.at(counts, (ev.y, ev.x), 1)
            dlog = np.log(np.clip(f1, 1e-3, 1)) - np.log(np.clip(f0, 1e-3, 1))
            worst_count = max(worst_count, int(np.abs(counts - np.floor(np.abs(dlog) / C)).max()))
        worst_mass = 0.0
        streams = [s.events for s in make_synthetic_dataset(5, 64, 64, seed=9)]
        streams += [EventStream((0, 1), rng.integers(0, 64, n), rng.integers(0, 64, n), rng.choice([-1, 1], n),
                                np.sort(rng.random(n))) for n in (1, 100, 5000)]
        for s in streams:
            for bins in (2, 5, 9):
                g = voxelize(s, bins, 64, 64)
                worst_mass = max(worst_mass, abs(float(g.sum()) - s.net_polarity))
        c.detail = f"max count mismatch {worst_count}, max voxel mass error {worst_mass:.1e}"
        c.check(worst_count == 0 and worst_mass < 1e-6)


def test_c09_metric_oracles():
    with criterion(9) as c:
        a = np.full((5, 5), 0.25)
        b = a.copy()
        b[0, 0] = 0.75  # MSE = 0.25 / 25 = 0.01
        p = psnr(a, b)
        img = np.random.default_rng(4).random((32, 32))
        self_sim = ssim(img, img)
        m1, m2, c1 = 0.3, 0.8, 0.01**2
        const_err = abs(ssim(np.full((16, 16), m1), np.full((16, 16), m2)) - (2 * m1 * m2 + c1) / (m1**2 + m2**2 + c1))
        c.detail = f"PSNR(MSE 0.01) = {p!r} dB, SSIM self {self_sim:.12f}, constant closed-form err {const_err:.1e}"
        c.check(p == 20.0 and abs(self_sim - 1) < 1e-12 and const_err < 1e-6)


def test_c10_determinism(tmp_path):
    with criterion(10) as c:
        data = make_synthetic_dataset(4, 32, 32, seed=21)
        model = ModelConfig(fusion=FusionConfig(base_channels=8))
        runs = [tmp_path / "run_a", tmp_path / "run_b"]
        identical, frozen = True, True
        before = {}
        for stage in STAGES:
            for d in runs:
                staged_train(toy_train_config(stage, epochs=2, batch_size=2, seed=5), data, d, model)
            identical &= file_digest(runs[0] / f"{stage}.ckpt") == file_digest(runs[1] / f"{stage}.ckpt")
            frozen &= all(file_digest(runs[0] / f"{s}.ckpt") == h for s, h in before.items())
            before[stage] = file_digest(runs[0] / f"{stage}.ckpt")
        c.detail = f"repeat runs bit-identical={identical}, earlier checkpoints untouched={frozen}"
        c.check(identical and frozen)


def test_c11_fusion_overfit(toy, tmp_path):
    with criterion(11) as c:
        start = time.perf_counter()
        sample = make_synthetic_dataset(1, TOY_SIZE, TOY_SIZE, seed=5)[0]
        model = ModelConfig(fusion=FusionConfig())  # default width
        d = copy_checkpoints(toy["ckpt"], tmp_path / "overfit", ["flow", "gate", "residual"])
        cfg = toy_train_config("fusion", epochs=500, batch_size=1, max_steps=500)
        res = staged_train(cfg, [sample], d, model)
        pipe = build_pipeline(model, 0, d, STAGES).eval()
        with torch.no_grad():
            out = pipe(prepare(sample, 0.5), 0.5, "gated")["output"][0, 0].numpy()
        score = psnr(out, sample.gt[0.5])
        elapsed = time.perf_counter() - start
        c.detail = f"PSNR after {len(res.losses)} steps {score:.2f} dB, {elapsed:.0f}s"
        c.check(len(res.losses) <= 500 and score > 40, "PSNR not above 40 dB")
        c.check(elapsed < 300, "over 5 min")
