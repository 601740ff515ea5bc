"""Coarse-to-fine stage loop with a shifting patch grid.

Each stage multiplies the image extent by the pooling factor: fresh
noise is drawn at the new extent and denoised for N iterations, where
every iteration re-tiles the image into model-sized patches, steps each
patch once (guided by the matching region of the previous stage), and
stitches the results back. The tiling offset is redrawn every iteration
from a counter-based stream, so patch boundaries are temporary and
seams cannot accumulate; offsets are restricted to multiples of the
pooling factor so guide patches always align on integer coordinates.

Patches never overlap, every in-bounds sample is written exactly once
per iteration, and patch steps are pure, so iterations parallelize
across patches with bit-identical results for any worker count.
"""

from __future__ import annotations

import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .denoisers import Denoiser
from .errors import CoverageError, InvalidParameter, NumericalFailure, ShapeMismatch
from .guidance import Convention, DownsampleOperator, GuidanceConfig
from .image import ImagePlane
from .schedule import NoiseSchedule, build_schedule
from .solver import SolverMethod, StepContext, draw_initial_noise, guided_step, sample_unconditional
from .streams import rng_stream

DEFAULT_SIGMA_MIN = 0.002
DEFAULT_SIGMA_MAX = 80.0
DEFAULT_RHO = 7.0

# Stage canvases above this edge length are backed by scratch files
# rather than RAM; a full-scale run would otherwise need ~100 GB images.
DEFAULT_MEMMAP_THRESHOLD = 4096


@dataclass(frozen=True)
class StagePlan:
    """Static description of a full coarse-to-fine run."""

    stages: int               # upscaling stages after the initial image
    factor: int               # per-stage extent multiplier
    patch_size: int           # model resolution in pixels
    num_steps: int            # denoising iterations per stage
    relaxation: int           # step-index bound for the guide projection
    initial_resolution_range: tuple[float, float]  # µm/px interval for the first image
    background_color: tuple[float, ...] | None = None  # per channel; None derives it
    channels: int = 3

    def __post_init__(self):
        if self.stages < 0:
            raise InvalidParameter(f"stage count must be non-negative, got {self.stages}")
        if self.factor < 2:
            raise InvalidParameter(f"upscale factor must be at least 2, got {self.factor}")
        if self.patch_size < self.factor or self.patch_size % self.factor:
            raise InvalidParameter(
                f"patch size {self.patch_size} must be a positive multiple of factor {self.factor}")
        if self.num_steps < 2:
            raise InvalidParameter(f"num_steps must be at least 2, got {self.num_steps}")
        if not 0 <= self.relaxation <= self.num_steps:
            raise InvalidParameter(
                f"relaxation bound {self.relaxation} outside [0, {self.num_steps}]")
        lo, hi = self.initial_resolution_range
        if not (0 < lo <= hi):
            raise InvalidParameter(
                f"initial resolution range must satisfy 0 < low <= high, got {lo}, {hi}")
        if self.channels < 1:
            raise InvalidParameter(f"channel count must be positive, got {self.channels}")

    def extent_at(self, stage: int) -> int:
        return self.patch_size * self.factor ** stage

    @property
    def final_extent(self) -> int:
        return self.extent_at(self.stages)

    def resolution_at(self, stage: int, initial_resolution: float) -> float:
        return initial_resolution / self.factor ** stage


@dataclass(frozen=True)
class PatchGrid:
    """A tiling of a square extent into patch_size squares at some offset.

    Patches start at multiples of patch_size shifted left/up by the
    offset, so boundary patches can extend past the image on all sides.
    """

    patch_size: int
    offset: tuple[int, int]   # (dy, dx), each in [0, patch_size)
    extent: int

    def __post_init__(self):
        dy, dx = self.offset
        if not (0 <= dy < self.patch_size and 0 <= dx < self.patch_size):
            raise InvalidParameter(
                f"offset {self.offset} outside [0, {self.patch_size})")
        if self.extent < 1:
            raise InvalidParameter(f"extent must be positive, got {self.extent}")

    def _axis_starts(self, off: int) -> list[int]:
        count = -(-(self.extent + off) // self.patch_size)
        return [-off + j * self.patch_size for j in range(count)]

    def counts(self) -> tuple[int, int]:
        dy, dx = self.offset
        return (len(self._axis_starts(dy)), len(self._axis_starts(dx)))

    def patch_count(self) -> int:
        ny, nx = self.counts()
        return ny * nx

    def windows(self) -> list[tuple[int, int, int, int]]:
        """Raster-order (y0, y1, x0, x1) windows, possibly out of bounds."""
        dy, dx = self.offset
        m = self.patch_size
        return [(ys, ys + m, xs, xs + m)
                for ys in self._axis_starts(dy)
                for xs in self._axis_starts(dx)]


def shift_patch_grid(rng: np.random.Generator, grid: PatchGrid,
                     align: int = 1) -> PatchGrid:
    """Redraw the grid offset uniformly from the aligned lattice.

    Offsets are multiples of `align` in [0, patch_size), drawn from the
    caller's counter-based stream so a replay reproduces the tiling.
    """
    if grid.patch_size % align:
        raise InvalidParameter(
            f"alignment {align} must divide the patch size {grid.patch_size}")
    steps = grid.patch_size // align
    dy = int(rng.integers(0, steps)) * align
    dx = int(rng.integers(0, steps)) * align
    return PatchGrid(patch_size=grid.patch_size, offset=(dy, dx), extent=grid.extent)


def _extract(data: np.ndarray, window: tuple[int, int, int, int],
             fill: np.ndarray) -> np.ndarray:
    """Copy a window out of (E, E, C) data, padding out-of-bounds with fill."""
    y0, y1, x0, x1 = window
    extent = data.shape[0]
    out = np.empty((y1 - y0, x1 - x0, data.shape[2]), dtype=np.float64)
    out[:] = fill
    iy0, iy1 = max(y0, 0), min(y1, extent)
    ix0, ix1 = max(x0, 0), min(x1, extent)
    out[iy0 - y0:iy1 - y0, ix0 - x0:ix1 - x0] = data[iy0:iy1, ix0:ix1]
    return out


def _write_back(canvas: np.ndarray, window: tuple[int, int, int, int],
                patch: np.ndarray) -> None:
    y0, y1, x0, x1 = window
    extent = canvas.shape[0]
    iy0, iy1 = max(y0, 0), min(y1, extent)
    ix0, ix1 = max(x0, 0), min(x1, extent)
    canvas[iy0:iy1, ix0:ix1] = patch[iy0 - y0:iy1 - y0, ix0 - x0:ix1 - x0]


def patch_pair(x: ImagePlane, z_prev: ImagePlane, grid: PatchGrid,
               background: Sequence[float]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Aligned (patch of x, guide patch of z_prev) pairs in raster order.

    Guide windows are the patch windows divided by the extent ratio, so
    each pair covers the same physical region; out-of-bounds areas are
    padded with the background color at both scales.
    """
    if x.height != x.width or z_prev.height != z_prev.width:
        raise ShapeMismatch("patching expects square images")
    if x.width % z_prev.width:
        raise ShapeMismatch(
            f"extent {x.width} is not a multiple of the guide extent {z_prev.width}")
    factor = x.width // z_prev.width
    if grid.patch_size % factor or any(d % factor for d in grid.offset):
        raise InvalidParameter(
            "patch size and grid offset must be multiples of the extent ratio")
    fill = np.asarray(background, dtype=np.float64)
    pairs = []
    for (y0, y1, x0, x1) in grid.windows():
        patch = _extract(x.data, (y0, y1, x0, x1), fill)
        guide = _extract(z_prev.data,
                         (y0 // factor, y1 // factor, x0 // factor, x1 // factor), fill)
        pairs.append((patch, guide))
    return pairs


def stitch(patches: Sequence[np.ndarray], grid: PatchGrid,
           extent: int | None = None, out: np.ndarray | None = None) -> np.ndarray:
    """Inverse of patching: write each in-bounds sample exactly once.

    Windows are disjoint and jointly cover the extent, so no blending is
    needed and padded boundary content is simply discarded.
    """
    extent = grid.extent if extent is None else extent
    if extent != grid.extent:
        raise CoverageError(f"extent {extent} does not match the grid extent {grid.extent}")
    windows = grid.windows()
    if len(patches) != len(windows):
        raise CoverageError(
            f"got {len(patches)} patches for a grid of {len(windows)} windows")
    channels = patches[0].shape[2]
    if out is None:
        out = np.empty((extent, extent, channels), dtype=np.float64)
    for patch, window in zip(patches, windows):
        _write_back(out, window, patch)
    return out


# ---------------------------------------------------------------------------
# Tissue masking


@dataclass(frozen=True, eq=False)
class TissueMask:
    """Patch-granularity tissue map, replicated to each stage's grid.

    The base grid is computed once on the initial image at the first
    stage's patch granularity; later stages see it nearest-neighbour
    upscaled, i.e. each cell simply split into factor-by-factor children.
    """

    base: np.ndarray  # (cells, cells) bool
    factor: int

    def cells_for_stage(self, stage: int) -> np.ndarray:
        reps = self.factor ** (stage - 1)
        return np.repeat(np.repeat(self.base, reps, axis=0), reps, axis=1)

    def window_is_tissue(self, cells: np.ndarray, window: tuple[int, int, int, int],
                         patch_size: int, extent: int) -> bool:
        """A window counts as tissue if it overlaps any tissue cell."""
        y0, y1, x0, x1 = window
        iy0, iy1 = max(y0, 0), min(y1, extent)
        ix0, ix1 = max(x0, 0), min(x1, extent)
        cy0, cy1 = iy0 // patch_size, (iy1 - 1) // patch_size + 1
        cx0, cx1 = ix0 // patch_size, (ix1 - 1) // patch_size + 1
        return bool(cells[cy0:cy1, cx0:cx1].any())

    @property
    def tissue_fraction(self) -> float:
        return float(self.base.mean())

    @classmethod
    def all_tissue(cls, factor: int) -> "TissueMask":
        return cls(base=np.ones((factor, factor), dtype=bool), factor=factor)


def background_from_corners(image: ImagePlane) -> tuple[float, ...]:
    """Per-channel median of the four corner samples."""
    corners = np.stack([image.data[0, 0], image.data[0, -1],
                        image.data[-1, 0], image.data[-1, -1]])
    return tuple(float(v) for v in np.median(corners, axis=0))


def tissue_mask_from(z0: ImagePlane, background: Sequence[float],
                     cells_per_side: int, luma_threshold: float = 0.1,
                     chroma_threshold: float = 0.1,
                     min_coverage: float = 0.1) -> TissueMask:
    """Threshold heuristic: a cell is tissue if enough samples leave the background.

    A sample differs from background when its mean channel deviation
    (luma) or any centred per-channel deviation (chroma) exceeds its
    threshold; a cell needs at least `min_coverage` such samples.
    """
    if z0.height != z0.width:
        raise ShapeMismatch("tissue masking expects a square image")
    if z0.height % cells_per_side:
        raise ShapeMismatch(
            f"extent {z0.height} is not divisible into {cells_per_side} cells per side")
    delta = z0.data - np.asarray(background, dtype=np.float64)
    luma = delta.mean(axis=2)
    chroma = np.abs(delta - luma[..., None]).max(axis=2)
    is_tissue = (np.abs(luma) > luma_threshold) | (chroma > chroma_threshold)
    cell = z0.height // cells_per_side
    blocks = is_tissue.reshape(cells_per_side, cell, cells_per_side, cell)
    coverage = blocks.mean(axis=(1, 3))
    return TissueMask(base=coverage >= min_coverage, factor=cells_per_side)


# ---------------------------------------------------------------------------
# Stage execution


@dataclass
class PyramidRun:
    """Everything a finished coarse-to-fine run produced."""

    plan: StagePlan
    seed: int
    initial_resolution: float
    background: tuple[float, ...]
    levels: list[ImagePlane]
    durations: list[float] = field(default_factory=list)
    mask: TissueMask | None = None


def _alloc_canvas(extent: int, channels: int, memmap_threshold: int,
                  scratch_dir: str | None) -> np.ndarray:
    if extent <= memmap_threshold:
        return np.empty((extent, extent, channels), dtype=np.float64)
    directory = scratch_dir or tempfile.gettempdir()
    handle = tempfile.NamedTemporaryFile(prefix="wsigen-stage-", suffix=".raw",
                                         dir=directory, delete=False)
    handle.close()
    mapped = np.memmap(handle.name, dtype=np.float64, mode="w+",
                       shape=(extent, extent, channels))
    # The mapping keeps the inode alive; unlinking now means no scratch
    # file outlives the arrays that use it.
    Path(handle.name).unlink()
    return mapped


PatchHook = Callable[[int, int, tuple[int, int, int, int], bool], None]


def upscale_stage(z_prev: ImagePlane, plan: StagePlan, stage: int,
                  denoiser: Denoiser, seed: int, *,
                  schedule: NoiseSchedule | None = None,
                  convention: Convention = Convention.ALG1,
                  method: SolverMethod = SolverMethod.HEUN,
                  mask: TissueMask | None = None,
                  background: Sequence[float] | None = None,
                  workers: int = 1,
                  grid_shift: bool = True,
                  memmap_threshold: int = DEFAULT_MEMMAP_THRESHOLD,
                  scratch_dir: str | None = None,
                  on_patch: PatchHook | None = None) -> ImagePlane:
    """Grow one image by the plan's factor through N patch-wise iterations.

    An image no larger than one patch is stepped whole (a fixed grid at
    offset zero); anything larger gets a freshly shifted grid every
    iteration. Patches covering no tissue are filled with the background
    color instead of being stepped.
    """
    if z_prev.height != z_prev.width:
        raise ShapeMismatch("stage input must be square")
    if schedule is None:
        schedule = build_schedule(plan.num_steps, DEFAULT_SIGMA_MIN,
                                  DEFAULT_SIGMA_MAX, DEFAULT_RHO)
    if schedule.num_steps != plan.num_steps:
        raise InvalidParameter(
            f"schedule has {schedule.num_steps} steps but the plan wants {plan.num_steps}")
    factor = plan.factor
    m = plan.patch_size
    extent = z_prev.width * factor
    channels = z_prev.channels
    resolution = z_prev.resolution / factor
    if background is None:
        background = plan.background_color or background_from_corners(z_prev)
    fill = np.asarray(background, dtype=np.float64)
    if fill.shape != (channels,):
        raise ShapeMismatch(
            f"background color has {fill.size} channels, image has {channels}")

    ctx = StepContext(schedule=schedule, denoiser=denoiser,
                      guidance=GuidanceConfig(plan.relaxation, convention),
                      pool=DownsampleOperator(factor),
                      resolution=resolution, method=method)
    cells = mask.cells_for_stage(stage) if mask is not None else None

    init_rng = rng_stream(seed, stage=stage, purpose="init")
    x = _alloc_canvas(extent, channels, memmap_threshold, scratch_dir)
    draw_initial_noise((extent, extent, channels), schedule.sigma_max, init_rng, out=x)
    canvas = _alloc_canvas(extent, channels, memmap_threshold, scratch_dir)
    base_grid = PatchGrid(patch_size=m, offset=(0, 0), extent=extent)
    guide_data = np.asarray(z_prev.data, dtype=np.float64)

    def step_patch(window, iteration):
        y0, y1, x0, x1 = window
        patch = ImagePlane(_extract(x, window, fill), resolution)
        guide = ImagePlane(
            _extract(guide_data, (y0 // factor, y1 // factor, x0 // factor, x1 // factor),
                     fill),
            resolution * factor)
        try:
            return guided_step(ctx, patch, guide, iteration - 1).data
        except NumericalFailure as failure:
            raise NumericalFailure(
                str(failure), step=failure.step, stage=stage, iteration=iteration,
                patch=(y0, x0)) from failure

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for iteration in range(1, plan.num_steps + 1):
            if grid_shift and extent > m:
                grid_rng = rng_stream(seed, stage=stage, iteration=iteration,
                                      purpose="grid")
                grid = shift_patch_grid(grid_rng, base_grid, align=factor)
            else:
                grid = base_grid
            windows = grid.windows()
            tissue_flags = [
                cells is None or mask.window_is_tissue(cells, w, m, extent)
                for w in windows]
            active = [w for w, t in zip(windows, tissue_flags) if t]
            if on_patch is not None:
                for w, t in zip(windows, tissue_flags):
                    on_patch(stage, iteration, w, t)
            if pool is not None:
                stepped = iter(list(pool.map(lambda w: step_patch(w, iteration), active)))
            else:
                stepped = iter([step_patch(w, iteration) for w in active])
            for window, tissue in zip(windows, tissue_flags):
                if tissue:
                    _write_back(canvas, window, next(stepped))
                else:
                    y0, y1, x0, x1 = window
                    canvas[max(y0, 0):min(y1, extent), max(x0, 0):min(x1, extent)] = fill
            x, canvas = canvas, x
    finally:
        if pool is not None:
            pool.shutdown()
    return ImagePlane(x, resolution)


def generate_wsi(plan: StagePlan, denoiser: Denoiser, seed: int, *,
                 schedule: NoiseSchedule | None = None,
                 convention: Convention = Convention.ALG1,
                 method: SolverMethod = SolverMethod.HEUN,
                 workers: int = 1,
                 grid_shift: bool = True,
                 dtype=np.float64,
                 memmap_threshold: int = DEFAULT_MEMMAP_THRESHOLD,
                 scratch_dir: str | None = None,
                 luma_threshold: float = 0.1,
                 chroma_threshold: float = 0.1,
                 min_coverage: float = 0.1) -> PyramidRun:
    """Run the full coarse-to-fine pipeline and record every level.

    The initial image is sampled unconditionally at a spatial resolution
    drawn from the plan's range; its tissue mask and background color
    are derived once and reused by every stage.
    """
    if schedule is None:
        schedule = build_schedule(plan.num_steps, DEFAULT_SIGMA_MIN,
                                  DEFAULT_SIGMA_MAX, DEFAULT_RHO)
    lo, hi = plan.initial_resolution_range
    res_rng = rng_stream(seed, purpose="initial-resolution")
    s0 = float(res_rng.uniform(lo, hi))

    ctx0 = StepContext(schedule=schedule, denoiser=denoiser,
                       guidance=GuidanceConfig(plan.relaxation, convention),
                       pool=DownsampleOperator(plan.factor),
                       resolution=s0, method=method)
    started = time.perf_counter()
    z0 = sample_unconditional(ctx0, (plan.patch_size, plan.patch_size, plan.channels),
                              seed).astype(dtype)
    durations = [time.perf_counter() - started]

    background = plan.background_color or background_from_corners(z0)
    mask = tissue_mask_from(z0, background, cells_per_side=plan.factor,
                            luma_threshold=luma_threshold,
                            chroma_threshold=chroma_threshold,
                            min_coverage=min_coverage)

    levels = [z0]
    for stage in range(1, plan.stages + 1):
        started = time.perf_counter()
        z = upscale_stage(levels[-1], plan, stage, denoiser, seed,
                          schedule=schedule, convention=convention, method=method,
                          mask=mask, background=background, workers=workers,
                          grid_shift=grid_shift, memmap_threshold=memmap_threshold,
                          scratch_dir=scratch_dir)
        # Re-tag with the single-rounding expression so the recorded
        # chain satisfies s_l == s_0 / factor**l bit-exactly.
        z = ImagePlane(z.data, plan.resolution_at(stage, s0))
        levels.append(z.astype(dtype))
        durations.append(time.perf_counter() - started)
    return PyramidRun(plan=plan, seed=seed, initial_resolution=s0,
                      background=tuple(float(v) for v in background),
                      levels=levels, durations=durations, mask=mask)
