"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -s` to see the line per
criterion; tolerances are pinned here and nowhere else.
"""

import time

import numpy as np
from helpers import apply_per_channel, dense_pinv, dense_pool_matrix

from wsigen import (DownsampleOperator, GuidanceConfig, ImagePlane, SolverMethod,
                    StagePlan, StepContext, build_schedule, c_in, c_out, c_skip,
                    downsample, generate_wsi, guided_estimate, loss_weight,
                    pseudo_upsample, sample_unconditional, single_gaussian_oracle,
                    texture_oracle, write_pyramid)
from wsigen.denoisers import GaussianMixtureOracle
from wsigen.evaluate import (distribution_test, fit_loglog_slope,
                             mask_shift_patch_count, mask_shift_upscale,
                             relaxation_sweep, seam_comparison, solver_accuracy_sweep)
from wsigen.pyramid import upscale_stage


def _report(index: int, name: str, ok: bool, started: float) -> bool:
    verdict = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {index:02d} {name}: {verdict} "
          f"({time.perf_counter() - started:.1f}s)")
    return ok


def plane(values, resolution=1.0):
    return ImagePlane(np.asarray(values, dtype=np.float64), resolution)


def test_c01_projection_exactness():
    started = time.perf_counter()
    rng = np.random.default_rng(101)
    ok = True
    for trial in range(1000):
        factor = int(rng.choice([2, 4, 8]))
        op = DownsampleOperator(factor)
        size = factor * int(rng.integers(1, 64 // factor + 1))
        u = plane(rng.normal(size=(size, size, 1)))
        y = plane(rng.normal(size=(size // factor, size // factor, 1)))
        proj = guided_estimate(op, u, y)
        ok &= float(np.abs(downsample(op, proj).data - y.data).max()) <= 1e-9
        again = guided_estimate(op, proj, y)
        ok &= float(np.abs(again.data - proj.data).max()) <= 1e-12
    op = DownsampleOperator(2)
    for _ in range(5):
        u = plane(rng.normal(size=(4, 4, 1)))
        y = plane(rng.normal(size=(2, 2, 1)))
        proj = guided_estimate(op, u, y)
        best = np.linalg.norm(u.data - proj.data)
        for _ in range(1000):
            feasible = guided_estimate(op, plane(rng.normal(size=(4, 4, 1))), y)
            ok &= best <= np.linalg.norm(u.data - feasible.data) + 1e-12
    assert _report(1, "projection-exactness", ok, started)


def test_c02_pseudoinverse_algebra():
    started = time.perf_counter()
    rng = np.random.default_rng(102)
    ok = True
    for factor, size in ((2, 8), (2, 6), (4, 8)):
        op = DownsampleOperator(factor)
        dense_a = dense_pool_matrix(size, size, factor)
        dense_dagger = dense_pinv(dense_a)
        low = (size // factor) ** 2
        ok &= float(np.abs(dense_a @ dense_dagger - np.eye(low)).max()) <= 1e-12
        for _ in range(50):
            y = rng.normal(size=(size // factor, size // factor, 2))
            round_trip = downsample(op, pseudo_upsample(op, plane(y)))
            ok &= float(np.abs(round_trip.data - y).max()) <= 1e-12
            dense_up = apply_per_channel(dense_dagger, y, (size, size))
            ok &= float(np.abs(pseudo_upsample(op, plane(y)).data - dense_up).max()) <= 1e-12
            u = rng.normal(size=(size, size, 2))
            dense_down = apply_per_channel(dense_a, u, (size // factor, size // factor))
            ok &= float(np.abs(downsample(op, plane(u)).data - dense_down).max()) <= 1e-12
            proj_mat = np.eye(size * size) - dense_dagger @ dense_a
            dense_proj = (apply_per_channel(proj_mat, u, (size, size))
                          + apply_per_channel(dense_dagger, y, (size, size)))
            free = guided_estimate(op, plane(u), plane(y)).data
            ok &= float(np.abs(free - dense_proj).max()) <= 1e-12
    assert _report(2, "pseudoinverse-algebra", ok, started)


def test_c03_scaling_identities():
    started = time.perf_counter()
    rng = np.random.default_rng(103)
    sigmas = 10 ** rng.uniform(-4, 3, size=10_000)
    one = np.ones_like(sigmas)
    ok = np.allclose(loss_weight(sigmas) * c_out(sigmas) ** 2, one, rtol=1e-12, atol=0)
    ok &= np.allclose(c_in(sigmas) ** 2 * (sigmas ** 2 + 0.25), one, rtol=1e-12, atol=0)
    ok &= np.allclose(c_skip(sigmas), 0.25 * c_in(sigmas) ** 2, rtol=1e-12, atol=0)
    assert _report(3, "scaling-identities", ok, started)


def test_c04_schedule_fidelity():
    started = time.perf_counter()
    sched = build_schedule(40, 0.002, 80.0, 7.0)
    ok = (sched.times[0] == 80.0 and sched.times[39] == 0.002
          and sched.times[40] == 0.0 and len(sched.times) == 41)
    rng = np.random.default_rng(104)
    for _ in range(1000):
        n = int(rng.integers(2, 100))
        smin = float(10 ** rng.uniform(-4, 0))
        smax = smin * float(10 ** rng.uniform(0.05, 4))
        sched = build_schedule(n, smin, smax, float(rng.uniform(0.2, 10)))
        ok &= bool(np.all(np.diff(sched.times) < 0))
    assert _report(4, "schedule-fidelity", ok, started)


def test_c05_solver_order():
    started = time.perf_counter()
    oracle = single_gaussian_oracle((1, 1, 1), mean=0.0, std=0.5)
    counts = [10, 20, 40, 80, 160]
    heun = solver_accuracy_sweep(oracle, counts, SolverMethod.HEUN, seeds=256)
    euler = solver_accuracy_sweep(oracle, counts, SolverMethod.EULER, seeds=256)
    heun_slope = -fit_loglog_slope(heun)
    euler_slope = -fit_loglog_slope(euler)
    ok = 1.7 <= heun_slope <= 2.3
    ok &= 0.8 <= euler_slope <= 1.2
    he, ee = dict(heun), dict(euler)
    for n in (10, 20, 40, 80):
        ok &= he[n] < ee[n]
    assert _report(5, f"solver-order (heun {heun_slope:.2f}, euler {euler_slope:.2f})",
                   ok, started)


def test_c06_end_to_end_distribution():
    started = time.perf_counter()
    means = np.stack([
        np.array([-0.7, -0.3, -0.5, -0.1]).reshape(2, 2, 1),
        np.array([0.6, 0.2, 0.4, 0.8]).reshape(2, 2, 1),
    ])
    oracle = GaussianMixtureOracle(weights=np.array([0.3, 0.7]), means=means,
                                   stds=np.array([0.15, 0.15]))
    ctx = StepContext(schedule=build_schedule(40, 0.002, 80.0, 7.0),
                      denoiser=oracle, guidance=GuidanceConfig(0),
                      pool=DownsampleOperator(2), resolution=1.0,
                      method=SolverMethod.HEUN)
    count = 10_000
    samples = np.empty((count, 2, 2, 1))
    for seed in range(count):
        samples[seed] = sample_unconditional(ctx, (2, 2, 1), seed).data
    report = distribution_test(oracle, samples, weight_tolerance=0.05,
                               mean_sigma_limit=4.0)
    ok = report.mean_ok and report.weights_ok
    assert _report(6, f"end-to-end-distribution (weight errors "
                      f"{[round(e, 4) for e in report.weight_errors]})", ok, started)


def test_c07_relaxation_sweep():
    started = time.perf_counter()
    oracle = texture_oracle(32)
    plan = StagePlan(stages=1, factor=2, patch_size=32, num_steps=40, relaxation=0,
                     initial_resolution_range=(2.0, 2.0), background_color=(0.0,),
                     channels=1)
    report = relaxation_sweep(plan, oracle, r_values=[0, 10, 20, 28, 40],
                              seeds=range(50))
    errs = dict(zip(report.r_values, report.mean_errors))
    ok = report.spearman_rho < 0 and report.spearman_p < 0.01
    ok &= errs[40] < errs[28] < errs[0]
    assert _report(7, f"relaxation-sweep (rho {report.spearman_rho:.2f}, "
                      f"p {report.spearman_p:.1e})", ok, started)


def test_c08_grid_shift_seam_suppression():
    started = time.perf_counter()
    oracle = texture_oracle(32)
    wins = 0
    worst_shift_ratio = 0.0
    for seed in range(20):
        shifted, fixed = seam_comparison(oracle, 32, 1, 1000 + seed,
                                         extent_multiple=8, num_steps=40)
        wins += shifted.ratio < fixed.ratio
        worst_shift_ratio = max(worst_shift_ratio, shifted.ratio)
    ok = wins >= 18 and worst_shift_ratio <= 1.1
    assert _report(8, f"seam-suppression ({wins}/20 wins, worst ratio "
                      f"{worst_shift_ratio:.3f})", ok, started)


def test_c09_patch_count_economy():
    started = time.perf_counter()
    m = 32
    oracle = single_gaussian_oracle((m, m, 1), std=0.5)
    plan = StagePlan(stages=1, factor=2, patch_size=m, num_steps=40, relaxation=0,
                     initial_resolution_range=(2.0, 2.0), background_color=(0.0,),
                     channels=1)
    ok = True
    for multiple in (2, 4, 8):
        extent = multiple * m
        per_iteration: dict[int, int] = {}
        z_prev = plane(np.zeros((extent // 2, extent // 2, 1)), 2.0)
        upscale_stage(z_prev, plan, 1, oracle, seed=9,
                      on_patch=lambda st, it, w, used:
                      per_iteration.__setitem__(it, per_iteration.get(it, 0) + 1))
        bound = (extent // m + 1) ** 2
        ok &= max(per_iteration.values()) <= bound
        _, accounting = mask_shift_upscale(z_prev, plan, 0.5, oracle, seed=9)
        ok &= accounting.patches_processed >= (2 * (extent // m) - 1) ** 2
        ok &= accounting.patches_processed == mask_shift_patch_count(extent, m, 0.5, 2)
    assert _report(9, "patch-count-economy", ok, started)


def test_c10_determinism_across_workers(tmp_path):
    started = time.perf_counter()
    plan = StagePlan(stages=3, factor=2, patch_size=32, num_steps=40, relaxation=28,
                     initial_resolution_range=(80.0, 150.0),
                     background_color=(-5.0, -5.0, -5.0), channels=3)
    oracle = texture_oracle(32, channels=3)
    manifests = []
    for workers in (1, 2, 8):
        run = generate_wsi(plan, oracle, seed=4, workers=workers)
        manifest = write_pyramid(run, tmp_path / f"w{workers}")
        manifests.append(manifest)
    ok = True
    for other in manifests[1:]:
        for a, b in zip(manifests[0].levels, other.levels):
            ok &= a.raw_sha256 == b.raw_sha256
            ok &= a.tiles == b.tiles
    assert _report(10, "determinism-across-workers", ok, started)


def test_c11_paper_geometry_smoke():
    started = time.perf_counter()
    plan = StagePlan(stages=7, factor=2, patch_size=512, num_steps=40, relaxation=28,
                     initial_resolution_range=(80.0, 150.0), channels=3)
    ok = plan.final_extent == 65536
    ok &= plan.resolution_at(7, 80.0) == 80.0 / 128
    ok &= plan.resolution_at(7, 150.0) == 150.0 / 128
    ok &= plan.extent_at(0) == 512
    assert _report(11, "paper-geometry-smoke", ok, started)
