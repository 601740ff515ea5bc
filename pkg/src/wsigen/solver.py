"""One guided denoising step and full unguided trajectories.

The sampling ODE is dx/dt = (x - estimate) / t where estimate is the
denoiser output, optionally projected onto the guide constraint. Each
step integrates from times[i] to times[i+1] with either a plain Euler
proposal or Heun's predictor-corrector; the corrector re-evaluates the
slope at the proposal (with the same guidance gating) and averages, and
is skipped on the terminal step where t = 0 would make the slope
singular. Guidance is applied inside both slope evaluations, never only
once per step.

All state arithmetic runs in float64 regardless of the denoiser's
internal precision; denoiser outputs are promoted on return.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .denoisers import Denoiser
from .errors import InvalidParameter, NumericalFailure, ShapeMismatch
from .guidance import DownsampleOperator, GuidanceConfig, project_to_guide, should_guide
from .image import ImagePlane
from .schedule import NoiseSchedule
from .streams import rng_stream


class SolverMethod(str, enum.Enum):
    HEUN = "heun"
    EULER = "euler"


@dataclass(frozen=True)
class StepContext:
    """Everything immutable a trajectory needs: schedule, denoiser, guidance, tag."""

    schedule: NoiseSchedule
    denoiser: Denoiser
    guidance: GuidanceConfig
    pool: DownsampleOperator
    resolution: float
    method: SolverMethod = SolverMethod.HEUN


def _estimate(ctx: StepContext, data: np.ndarray, sigma: float,
              guide: np.ndarray | None, gated: bool) -> np.ndarray:
    plane = ctx.denoiser(ImagePlane(data, ctx.resolution), sigma, ctx.resolution)
    out = np.asarray(plane.data, dtype=np.float64)
    if out.shape != data.shape:
        raise ShapeMismatch(
            f"denoiser returned shape {out.shape}, expected {data.shape}")
    if gated and guide is not None:
        out = project_to_guide(out, guide, ctx.pool.factor)
    return out


def guided_step(ctx: StepContext, x_i: ImagePlane, guide: ImagePlane | None,
                i: int) -> ImagePlane:
    """Advance one step from times[i] to times[i+1].

    With `guide` absent the step is the plain unguided one regardless of
    the relaxation bound, so unconditional sampling does not depend on
    the gate convention.
    """
    times = ctx.schedule.times
    if not 0 <= i < ctx.schedule.num_steps:
        raise InvalidParameter(f"step index {i} outside [0, {ctx.schedule.num_steps})")
    x = np.asarray(x_i.data, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NumericalFailure("non-finite state entering step", step=i)
    y = None if guide is None else np.asarray(guide.data, dtype=np.float64)
    gated = should_guide(i, ctx.guidance)
    t_cur = times[i]
    t_next = times[i + 1]
    h = t_next - t_cur

    u = _estimate(ctx, x, t_cur, y, gated)
    d_cur = (x - u) / t_cur
    x_next = x + h * d_cur
    if ctx.method is SolverMethod.HEUN and t_next != 0.0:
        if not np.isfinite(x_next).all():
            raise NumericalFailure("non-finite Euler proposal", step=i)
        u_next = _estimate(ctx, x_next, t_next, y, gated)
        d_next = (x_next - u_next) / t_next
        x_next = x + h * 0.5 * (d_cur + d_next)

    if not np.isfinite(x_next).all():
        raise NumericalFailure("non-finite state produced by step", step=i)
    return x_i.with_data(x_next)


def run_trajectory(ctx: StepContext, x0: ImagePlane, guide: ImagePlane | None = None,
                   stop_after: int | None = None) -> ImagePlane:
    """Run steps 0..N-1 (or the first `stop_after` steps) from x0."""
    last = ctx.schedule.num_steps if stop_after is None else stop_after
    x = x0
    for i in range(last):
        x = guided_step(ctx, x, guide, i)
    return x


def draw_initial_noise(shape: tuple[int, int, int], sigma_max: float,
                       rng: np.random.Generator,
                       out: np.ndarray | None = None) -> np.ndarray:
    """x0 ~ Normal(0, sigma_max^2 I), filled in row blocks.

    Block-wise filling keeps peak memory bounded for memory-mapped
    targets while drawing the exact same sequence as a single call.
    """
    if out is None:
        out = np.empty(shape, dtype=np.float64)
    rows_per_block = max(1, (1 << 22) // max(1, shape[1] * shape[2]))
    for r0 in range(0, shape[0], rows_per_block):
        r1 = min(r0 + rows_per_block, shape[0])
        out[r0:r1] = rng.standard_normal((r1 - r0,) + shape[1:]) * sigma_max
    return out


def sample_unconditional(ctx: StepContext, shape: tuple[int, int, int],
                         seed: int) -> ImagePlane:
    """Draw pure noise from the stream keyed by seed and denoise it fully."""
    rng = rng_stream(seed, purpose="init")
    x0 = ImagePlane(draw_initial_noise(shape, ctx.schedule.sigma_max, rng),
                    ctx.resolution)
    return run_trajectory(ctx, x0)
