"""Desk-scale quantitative studies of the engine's comparative claims.

These routines measure, on analytically tractable denoisers, the
properties that matter at production scale: stitching seams versus
tiling strategy, solver accuracy versus step count, guide consistency
versus the relaxation bound, and the patch-count/ordering cost of the
sequential overlapped-patch baseline.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .denoisers import GaussianMixtureOracle
from .errors import InvalidParameter, ShapeMismatch
from .guidance import (Convention, DownsampleOperator, GuidanceConfig, block_mean,
                       downsample)
from .image import ImagePlane
from .pyramid import PatchGrid, StagePlan, upscale_stage
from .schedule import NoiseSchedule, build_schedule
from .solver import (SolverMethod, StepContext, draw_initial_noise, guided_step,
                     run_trajectory, sample_unconditional)
from .streams import rng_stream


# ---------------------------------------------------------------------------
# Seam energy


@dataclass(frozen=True)
class SeamReport:
    """Mean absolute first differences on versus off patch boundaries."""

    boundary_gradient_mean: float
    interior_gradient_mean: float

    @property
    def ratio(self) -> float:
        if self.interior_gradient_mean == 0.0:
            return 1.0 if self.boundary_gradient_mean == 0.0 else math.inf
        return self.boundary_gradient_mean / self.interior_gradient_mean


def seam_energy(img: ImagePlane, grid: PatchGrid) -> SeamReport:
    """Compare first differences across grid boundaries against the rest.

    A seamless image should not distinguish boundary columns and rows
    from interior ones, giving a ratio near one.
    """
    extent = img.height
    if img.width != extent or extent != grid.extent:
        raise ShapeMismatch(
            f"image extent {img.shape} does not match grid extent {grid.extent}")
    dy, dx = grid.offset
    m = grid.patch_size

    def boundary_positions(off: int) -> set[int]:
        # diff index j compares samples j and j+1; a patch starting at
        # column b makes (b-1, b) a boundary pair, i.e. diff index b-1.
        starts = range(-off + m, extent, m)
        return {b - 1 for b in starts if 0 < b < extent}

    cols = boundary_positions(dx)
    rows = boundary_positions(dy)
    if not cols and not rows:
        raise InvalidParameter("grid has no interior boundaries to measure")

    diff_x = np.abs(np.diff(img.data, axis=1))
    diff_y = np.abs(np.diff(img.data, axis=0))
    col_idx = np.arange(extent - 1)
    col_mask = np.isin(col_idx, list(cols))
    row_mask = np.isin(col_idx, list(rows))
    boundary = np.concatenate([diff_x[:, col_mask].ravel(), diff_y[row_mask].ravel()])
    interior = np.concatenate([diff_x[:, ~col_mask].ravel(), diff_y[~row_mask].ravel()])
    return SeamReport(boundary_gradient_mean=float(boundary.mean()) if boundary.size else 0.0,
                      interior_gradient_mean=float(interior.mean()) if interior.size else 0.0)


def seam_comparison(oracle, patch_size: int, channels: int, seed: int, *,
                    extent_multiple: int = 8, num_steps: int = 40,
                    schedule: NoiseSchedule | None = None,
                    workers: int = 1) -> tuple[SeamReport, SeamReport]:
    """Seam reports for grid-shifted versus fixed-grid tiled sampling.

    Both runs start from the same seed and use fully relaxed guidance
    (bound 0), so the only difference is whether the tiling moves
    between iterations. Seam energy is always measured against the
    fixed reference grid at offset zero.
    """
    extent = extent_multiple * patch_size
    plan = StagePlan(stages=1, factor=2, patch_size=patch_size, num_steps=num_steps,
                     relaxation=0, initial_resolution_range=(1.0, 1.0),
                     background_color=(0.0,) * channels, channels=channels)
    z_prev = ImagePlane(np.zeros((extent // 2, extent // 2, channels)), 2.0)
    reports = []
    for shifted in (True, False):
        out = upscale_stage(z_prev, plan, 1, oracle, seed, schedule=schedule,
                            convention=Convention.ALG1, grid_shift=shifted,
                            workers=workers)
        reference = PatchGrid(patch_size=patch_size, offset=(0, 0), extent=extent)
        reports.append(seam_energy(out, reference))
    return reports[0], reports[1]


# ---------------------------------------------------------------------------
# Solver accuracy versus step count


def closed_form_endpoint(oracle: GaussianMixtureOracle, x0: np.ndarray,
                         t0: float, t1: float) -> np.ndarray:
    """Exact ODE endpoint for a single-component oracle.

    With one Gaussian component the trajectory contracts around the
    mean: x(t) = mu + (x(t0) - mu) * sqrt((s^2 + t^2) / (s^2 + t0^2)).
    """
    if len(oracle.weights) != 1:
        raise InvalidParameter("closed form requires a single-component oracle")
    mu = oracle.means[0]
    s2 = float(oracle.stds[0]) ** 2
    scale = np.sqrt((s2 + t1 ** 2) / (s2 + t0 ** 2))
    return mu + (x0 - mu) * scale


def solver_accuracy_sweep(oracle: GaussianMixtureOracle,
                          step_counts: Sequence[int],
                          method: SolverMethod, *,
                          seeds: int = 256,
                          sigma_min: float = 0.002, sigma_max: float = 80.0,
                          rho: float = 7.0, seed: int = 0,
                          reference_steps: int = 2048) -> list[tuple[int, float]]:
    """Mean endpoint error at sigma_min for each step count.

    Single-component oracles are scored against the closed-form
    trajectory; anything else against a dense self-reference run. For
    the single-component case the per-sample dynamics are independent,
    so all seeds are stacked into one tall image and integrated together.
    """
    single = len(oracle.weights) == 1 and oracle.image_shape == (1, 1, 1)
    rng = rng_stream(seed, purpose="solver-sweep")
    rows = []
    if single:
        stacked = GaussianMixtureOracle(weights=oracle.weights,
                                        means=np.full((1, seeds, 1, 1),
                                                      float(oracle.means[0, 0, 0, 0])),
                                        stds=oracle.stds)
        x0 = ImagePlane(rng.normal(0.0, sigma_max, size=(seeds, 1, 1)), 1.0)
        exact = closed_form_endpoint(stacked, x0.data, sigma_max, sigma_min)
        for n in step_counts:
            ctx = _plain_context(stacked, n, sigma_min, sigma_max, rho, method)
            got = run_trajectory(ctx, x0, stop_after=n - 1)
            rows.append((int(n), float(np.abs(got.data - exact).mean())))
        return rows

    shape = oracle.image_shape
    x0s = [ImagePlane(rng.normal(0.0, sigma_max, size=shape), 1.0) for _ in range(seeds)]
    ref_ctx = _plain_context(oracle, reference_steps, sigma_min, sigma_max, rho, method)
    refs = [run_trajectory(ref_ctx, x0, stop_after=reference_steps - 1).data for x0 in x0s]
    for n in step_counts:
        ctx = _plain_context(oracle, n, sigma_min, sigma_max, rho, method)
        errs = [np.abs(run_trajectory(ctx, x0, stop_after=n - 1).data - ref).mean()
                for x0, ref in zip(x0s, refs)]
        rows.append((int(n), float(np.mean(errs))))
    return rows


def _plain_context(denoiser, num_steps, sigma_min, sigma_max, rho, method):
    return StepContext(schedule=build_schedule(num_steps, sigma_min, sigma_max, rho),
                       denoiser=denoiser,
                       guidance=GuidanceConfig(relaxation=0),
                       pool=DownsampleOperator(2), resolution=1.0, method=method)


def fit_loglog_slope(rows: Sequence[tuple[int, float]]) -> float:
    """Slope of log(error) against log(step count); negative for convergent methods."""
    ns = np.log([r[0] for r in rows])
    errs = np.log([r[1] for r in rows])
    return float(np.polyfit(ns, errs, 1)[0])


# ---------------------------------------------------------------------------
# Relaxation sweep


@dataclass
class RelaxationReport:
    """Guide-consistency error per relaxation bound, with the trend test."""

    r_values: list[int]
    mean_errors: list[float]
    per_seed_errors: dict[int, list[float]]
    spearman_rho: float
    spearman_p: float


def relaxation_sweep(plan: StagePlan, oracle, r_values: Sequence[int],
                     seeds: Sequence[int], *,
                     schedule: NoiseSchedule | None = None,
                     convention: Convention = Convention.ALG1,
                     method: SolverMethod = SolverMethod.HEUN) -> RelaxationReport:
    """Single-patch guided super-resolution at varying relaxation bounds.

    Per seed, one unconditionally sampled image is pooled down into a
    guide, then the same fresh noise is denoised once per bound; the
    reported error is the Euclidean distance between the pooled result
    and the guide. Seeds are paired across bounds so the trend test sees
    matched samples.
    """
    if schedule is None:
        schedule = build_schedule(plan.num_steps, 0.002, 80.0, 7.0)
    pool = DownsampleOperator(plan.factor)
    factor = plan.factor
    shape = (plan.patch_size, plan.patch_size, plan.channels)
    per_seed: dict[int, list[float]] = {int(r): [] for r in r_values}
    for s in seeds:
        ref_ctx = _plain_context(oracle, schedule.num_steps, schedule.sigma_min,
                                 schedule.sigma_max, schedule.rho, method)
        reference = sample_unconditional(ref_ctx, shape, int(s))
        guide = downsample(pool, reference)
        x0 = ImagePlane(draw_initial_noise(shape, schedule.sigma_max,
                                           rng_stream(int(s), purpose="relax-x0")), 1.0)
        for r in r_values:
            ctx = StepContext(schedule=schedule, denoiser=oracle,
                              guidance=GuidanceConfig(int(r), convention),
                              pool=pool, resolution=1.0, method=method)
            out = run_trajectory(ctx, x0, guide=guide)
            err = float(np.linalg.norm(block_mean(out.data, factor) - guide.data))
            per_seed[int(r)].append(err)

    r_list = [int(r) for r in r_values]
    means = [float(np.mean(per_seed[r])) for r in r_list]
    pairs_r = np.repeat(r_list, len(seeds))
    pairs_e = np.concatenate([per_seed[r] for r in r_list])
    rho, p = stats.spearmanr(pairs_r, pairs_e)
    return RelaxationReport(r_values=r_list, mean_errors=means,
                            per_seed_errors=per_seed,
                            spearman_rho=float(rho), spearman_p=float(p))


# ---------------------------------------------------------------------------
# Mask-shifting baseline (sequential, overlapped patches)


@dataclass
class MaskShiftAccounting:
    """Execution trace of the sequential overlapped-patch baseline."""

    patches_processed: int
    processing_order: list[tuple[int, int]]
    wall_clock_seconds: float


def mask_shift_starts(extent: int, patch_size: int, overlap: float,
                      align: int) -> list[int]:
    """Window start positions along one axis for a given overlap fraction."""
    if not 0 <= overlap < 1:
        raise InvalidParameter(f"overlap fraction must be in [0, 1), got {overlap}")
    stride = max(align, int(round(patch_size * (1.0 - overlap) / align)) * align)
    starts = list(range(0, extent - patch_size + 1, stride))
    if starts[-1] != extent - patch_size:
        starts.append(extent - patch_size)
    return starts


def mask_shift_patch_count(extent: int, patch_size: int, overlap: float,
                           align: int = 1) -> int:
    return len(mask_shift_starts(extent, patch_size, overlap, align)) ** 2


def mask_shift_upscale(z_prev: ImagePlane, plan: StagePlan, overlap: float,
                       denoiser, seed: int, *,
                       schedule: NoiseSchedule | None = None,
                       convention: Convention = Convention.ALG1,
                       method: SolverMethod = SolverMethod.HEUN,
                       background: Sequence[float] | None = None
                       ) -> tuple[ImagePlane, MaskShiftAccounting]:
    """Upscale once with overlapping patches processed in raster order.

    Regions of a patch that overlap already finished neighbours are
    reset to the finished content after every denoising step, which
    welds the seams but forces strictly sequential processing and more
    patches the larger the overlap.
    """
    if schedule is None:
        schedule = build_schedule(plan.num_steps, 0.002, 80.0, 7.0)
    factor = plan.factor
    m = plan.patch_size
    extent = z_prev.width * factor
    channels = z_prev.channels
    resolution = z_prev.resolution / factor
    if background is None:
        background = plan.background_color or (0.0,) * channels

    ctx = StepContext(schedule=schedule, denoiser=denoiser,
                      guidance=GuidanceConfig(plan.relaxation, convention),
                      pool=DownsampleOperator(factor),
                      resolution=resolution, method=method)

    starts = mask_shift_starts(extent, m, overlap, factor)
    canvas = np.zeros((extent, extent, channels), dtype=np.float64)
    finalized = np.zeros((extent, extent), dtype=bool)
    order: list[tuple[int, int]] = []
    began = time.perf_counter()
    for jy, ys in enumerate(starts):
        for jx, xs in enumerate(starts):
            order.append((ys, xs))
            window = np.s_[ys:ys + m, xs:xs + m]
            frozen = finalized[window]
            guide = ImagePlane(
                z_prev.data[ys // factor:(ys + m) // factor,
                            xs // factor:(xs + m) // factor].astype(np.float64),
                resolution * factor)
            patch_rng = rng_stream(seed, stage=1, patch_index=jy * len(starts) + jx,
                                   purpose="mask-shift-init")
            x = ImagePlane(draw_initial_noise((m, m, channels), schedule.sigma_max,
                                              patch_rng), resolution)
            for i in range(schedule.num_steps):
                x = guided_step(ctx, x, guide, i)
                if frozen.any():
                    data = x.data.copy()
                    data[frozen] = canvas[window][frozen]
                    x = x.with_data(data)
            canvas[window] = x.data
            finalized[window] = True
    accounting = MaskShiftAccounting(patches_processed=len(order),
                                     processing_order=order,
                                     wall_clock_seconds=time.perf_counter() - began)
    return ImagePlane(canvas, resolution), accounting


# ---------------------------------------------------------------------------
# Distribution recovery


@dataclass
class DistributionReport:
    """Sampler output statistics against the oracle's known target."""

    sample_count: int
    mean_abs_error: float
    mean_limit: float
    mean_ok: bool
    covariance_error: float
    covariance_limit: float
    covariance_ok: bool
    sliced_distance: float
    sliced_limit: float
    sliced_ok: bool
    weight_errors: list[float]
    weight_tolerance: float
    weights_ok: bool

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.covariance_ok and self.sliced_ok and self.weights_ok


def _sliced_w1(a: np.ndarray, b: np.ndarray, directions: np.ndarray) -> float:
    pa = a.reshape(len(a), -1) @ directions.T
    pb = b.reshape(len(b), -1) @ directions.T
    return float(np.mean(np.abs(np.sort(pa, axis=0) - np.sort(pb, axis=0))))


def distribution_test(oracle: GaussianMixtureOracle, samples: np.ndarray, *,
                      weight_tolerance: float = 0.05,
                      mean_sigma_limit: float = 4.0,
                      calibration_factor: float = 5.0,
                      direction_count: int = 16,
                      reference_seed: int = 0) -> DistributionReport:
    """Score sampler outputs against the oracle's exact target law.

    Mean errors are limited by standard errors of the true per-sample
    variance; covariance and sliced-distance limits are self-calibrated
    from the spread between two independent true-sample sets, so the
    test stays meaningful for any oracle geometry.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    if n < 1000:
        raise InvalidParameter(f"need at least 1000 samples, got {n}")
    if samples.shape[1:] != oracle.image_shape:
        raise ShapeMismatch(
            f"samples shape {samples.shape[1:]} does not match oracle {oracle.image_shape}")

    true_mean = oracle.mixture_mean()
    second_moment = np.einsum("k,k...->...", oracle.weights,
                              oracle.stds[:, None, None, None] ** 2 + oracle.means ** 2)
    per_sample_var = second_moment - true_mean ** 2
    se = np.sqrt(per_sample_var / n)
    mean_err = np.abs(samples.mean(axis=0) - true_mean)
    mean_limits = mean_sigma_limit * se
    mean_ok = bool(np.all(mean_err <= mean_limits))
    worst = np.unravel_index(np.argmax(mean_err / mean_limits), mean_err.shape)

    flat = samples.reshape(n, -1)
    dim = flat.shape[1]
    mu_flat = true_mean.ravel()
    means_flat = oracle.means.reshape(len(oracle.weights), -1)
    true_cov = np.einsum("k,ki,kj->ij", oracle.weights, means_flat, means_flat)
    true_cov += np.diag(np.full(dim, np.einsum("k,k->", oracle.weights, oracle.stds ** 2)))
    true_cov -= np.outer(mu_flat, mu_flat)
    emp_cov = np.cov(flat, rowvar=False).reshape(dim, dim)
    cov_err = float(np.linalg.norm(emp_cov - true_cov))

    cal_rng = rng_stream(reference_seed, purpose="distribution-calibration")
    ref_a = oracle.sample(cal_rng, n)
    ref_b = oracle.sample(cal_rng, n)
    cov_self = float(np.linalg.norm(np.cov(ref_a.reshape(n, -1), rowvar=False)
                                    .reshape(dim, dim) - true_cov))
    cov_limit = calibration_factor * cov_self

    raw = cal_rng.standard_normal((direction_count, dim))
    directions = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    sliced = _sliced_w1(samples, ref_a, directions)
    sliced_self = _sliced_w1(ref_b, ref_a, directions)
    sliced_limit = calibration_factor * sliced_self

    dists = np.stack([((samples - m) ** 2).sum(axis=(1, 2, 3)) for m in oracle.means])
    fractions = np.bincount(np.argmin(dists, axis=0),
                            minlength=len(oracle.weights)) / n
    weight_errors = [float(abs(f - w)) for f, w in zip(fractions, oracle.weights)]
    weights_ok = all(e <= weight_tolerance for e in weight_errors)

    return DistributionReport(
        sample_count=n,
        mean_abs_error=float(mean_err[worst]),
        mean_limit=float(mean_limits[worst]),
        mean_ok=mean_ok,
        covariance_error=cov_err, covariance_limit=cov_limit,
        covariance_ok=cov_err <= cov_limit,
        sliced_distance=sliced, sliced_limit=sliced_limit,
        sliced_ok=sliced <= sliced_limit,
        weight_errors=weight_errors, weight_tolerance=weight_tolerance,
        weights_ok=weights_ok)


# ---------------------------------------------------------------------------
# Result tables


def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Emit a tab-separated table with a header row."""
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(v) for v in row))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
