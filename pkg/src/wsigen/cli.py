"""Command-line surface for generation, evaluation, and verification.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O or
verification failure. Failures print one machine-readable line of the
form ``ERROR kind=<usage|numerical|io> detail="..."`` to stderr, and a
run that dies after writing tiles leaves a manifest marked incomplete.
"""

from __future__ import annotations

import dataclasses
import sys
import time
from pathlib import Path

import click
import numpy as np

from ._version import __version__
from .config import RunConfig, config_echo, load_config, serialize_config
from .denoisers import resolve_denoiser, single_gaussian_oracle
from .errors import EngineError, InvalidParameter, NumericalFailure, PyramidIOError
from .evaluate import (fit_loglog_slope, mask_shift_upscale, relaxation_sweep,
                       seam_comparison, solver_accuracy_sweep, write_table)
from .image import ImagePlane
from .pyramid import PyramidRun, generate_wsi, upscale_stage
from .solver import SolverMethod
from .storage import from_png, mark_incomplete, verify_pyramid, write_pyramid


def _int_list(_ctx, _param, value):
    if value is None:
        return None
    try:
        return [int(v) for v in str(value).split(",") if v.strip() != ""]
    except ValueError as exc:
        raise click.BadParameter(f"expected a comma-separated integer list: {value!r}") from exc


def _load_config(config_path, **overrides) -> RunConfig:
    cfg = load_config(config_path)
    changes = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **changes) if changes else cfg


common_options = [
    click.option("--config", "config_path", required=True,
                 type=click.Path(exists=True, dir_okay=False), help="Run config file."),
    click.option("--seed", type=int, default=None, help="Override the config seed."),
    click.option("--workers", type=int, default=None, help="Override the worker count."),
    click.option("--out", "output_dir", type=click.Path(), default=None,
                 help="Override the output directory."),
    click.option("--precision", type=click.Choice(["single", "double"]), default=None),
    click.option("--convention", type=click.Choice(["alg1", "inverted"]), default=None),
]


def with_common_options(fn):
    for option in reversed(common_options):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__)
def cli():
    """Tiled coarse-to-fine diffusion sampling engine."""


@cli.command()
@with_common_options
def generate(config_path, seed, workers, output_dir, precision, convention):
    """Run the full coarse-to-fine pipeline and write a tiled pyramid."""
    cfg = _load_config(config_path, seed=seed, workers=workers,
                       output_dir=output_dir, precision=precision,
                       convention=convention)
    plan = cfg.to_plan()
    denoiser = resolve_denoiser(cfg.denoiser, cfg.patch_size, cfg.channels)
    out = Path(cfg.output_dir)
    try:
        run = generate_wsi(plan, denoiser, cfg.seed, schedule=cfg.to_schedule(),
                           convention=cfg.guidance_convention,
                           method=cfg.solver_method, workers=cfg.workers,
                           dtype=cfg.dtype, memmap_threshold=cfg.memmap_threshold)
        manifest = write_pyramid(run, out, tile_size=cfg.effective_tile_size,
                                 precision=cfg.precision, config=config_echo(cfg))
    except EngineError:
        mark_incomplete(out, "generation failed before completion")
        raise
    click.echo(f"wrote {len(manifest.levels)} levels to {out}")


@cli.command()
@with_common_options
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Input image (.npy raw samples in [-1,1] or 8-bit .png).")
@click.option("--resolution", type=float, required=True,
              help="Spatial resolution tag of the input in µm/px.")
@click.option("--levels", "level_count", type=int, default=1, show_default=True,
              help="How many successive upscaling stages to run.")
def upscale(config_path, seed, workers, output_dir, precision, convention,
            input_path, resolution, level_count):
    """Upscale a provided image by one stage (or several with --levels)."""
    cfg = _load_config(config_path, seed=seed, workers=workers,
                       output_dir=output_dir, precision=precision,
                       convention=convention)
    if level_count < 1:
        raise InvalidParameter(f"--levels must be positive, got {level_count}")
    plan = cfg.to_plan()
    denoiser = resolve_denoiser(cfg.denoiser, cfg.patch_size, cfg.channels)
    path = Path(input_path)
    data = np.load(path) if path.suffix == ".npy" else from_png(path)
    levels = [ImagePlane(np.asarray(data, dtype=np.float64), resolution)]
    out = Path(cfg.output_dir)
    try:
        durations = [0.0]
        for stage in range(1, level_count + 1):
            began = time.perf_counter()
            z = upscale_stage(levels[-1], plan, stage, denoiser, cfg.seed,
                              schedule=cfg.to_schedule(),
                              convention=cfg.guidance_convention,
                              method=cfg.solver_method, workers=cfg.workers,
                              memmap_threshold=cfg.memmap_threshold)
            z = ImagePlane(z.data, resolution / cfg.factor ** stage)
            levels.append(z)
            durations.append(time.perf_counter() - began)
        run = PyramidRun(plan=plan, seed=cfg.seed, initial_resolution=resolution,
                         background=plan.background_color or (0.0,) * cfg.channels,
                         levels=[z.astype(cfg.dtype) for z in levels],
                         durations=durations)
        manifest = write_pyramid(run, out, tile_size=cfg.effective_tile_size,
                                 precision=cfg.precision, config=config_echo(cfg))
    except EngineError:
        mark_incomplete(out, "upscaling failed before completion")
        raise
    final = levels[-1]
    click.echo(f"wrote {len(manifest.levels)} levels (top {final.height}x"
               f"{final.width}) to {out}")


@cli.command("eval-seams")
@with_common_options
@click.option("--seeds", "seed_count", type=int, default=20, show_default=True)
def eval_seams(config_path, seed, workers, output_dir, precision, convention,
               seed_count):
    """Compare seam energy of grid-shifted and fixed-grid tilings."""
    cfg = _load_config(config_path, seed=seed, workers=workers,
                       output_dir=output_dir, precision=precision,
                       convention=convention)
    denoiser = resolve_denoiser(cfg.denoiser, cfg.patch_size, cfg.channels)
    rows = []
    for s in range(seed_count):
        shifted, fixed = seam_comparison(denoiser, cfg.patch_size, cfg.channels,
                                         cfg.seed + s, num_steps=cfg.num_steps,
                                         workers=cfg.workers)
        rows.append((cfg.seed + s, shifted.ratio, fixed.ratio))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "seam_energy.tsv"
    write_table(table, ["seed", "grid_shift_ratio", "fixed_grid_ratio"], rows)
    wins = sum(1 for _, a, b in rows if a < b)
    click.echo(f"grid-shift beat the fixed grid in {wins}/{len(rows)} seeds; "
               f"table in {table}")


@cli.command("eval-solver")
@with_common_options
@click.option("--steps", callback=_int_list, default="10,20,40,80,160",
              show_default=True, help="Comma-separated step counts.")
def eval_solver(config_path, seed, workers, output_dir, precision, convention,
                steps):
    """Endpoint accuracy of both solvers against the closed-form trajectory."""
    cfg = _load_config(config_path, seed=seed, workers=workers,
                       output_dir=output_dir, precision=precision,
                       convention=convention)
    oracle = single_gaussian_oracle((1, 1, 1), mean=0.0, std=cfg.sigma_data)
    results = {}
    for method in (SolverMethod.HEUN, SolverMethod.EULER):
        results[method] = solver_accuracy_sweep(
            oracle, steps, method, sigma_min=cfg.sigma_min, sigma_max=cfg.sigma_max,
            rho=cfg.rho, seed=cfg.seed)
    rows = [(n, results[SolverMethod.HEUN][i][1], results[SolverMethod.EULER][i][1])
            for i, n in enumerate(steps)]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "solver_accuracy.tsv"
    write_table(table, ["steps", "heun_error", "euler_error"], rows)
    click.echo(f"heun slope {fit_loglog_slope(results[SolverMethod.HEUN]):.3f}, "
               f"euler slope {fit_loglog_slope(results[SolverMethod.EULER]):.3f}; "
               f"table in {table}")


@cli.command("eval-relaxation")
@with_common_options
@click.option("--r", "r_values", callback=_int_list, default="0,10,20,28,40",
              show_default=True, help="Comma-separated relaxation bounds.")
@click.option("--seeds", "seed_count", type=int, default=50, show_default=True)
def eval_relaxation(config_path, seed, workers, output_dir, precision, convention,
                    r_values, seed_count):
    """Guide-consistency error versus the relaxation bound."""
    cfg = _load_config(config_path, seed=seed, workers=workers,
                       output_dir=output_dir, precision=precision,
                       convention=convention)
    for r in r_values:
        if not 0 <= r <= cfg.num_steps:
            raise InvalidParameter(f"relaxation bound {r} outside [0, {cfg.num_steps}]")
    denoiser = resolve_denoiser(cfg.denoiser, cfg.patch_size, cfg.channels)
    report = relaxation_sweep(cfg.to_plan(), denoiser, r_values,
                              seeds=[cfg.seed + s for s in range(seed_count)],
                              schedule=cfg.to_schedule(),
                              convention=cfg.guidance_convention,
                              method=cfg.solver_method)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "relaxation.tsv"
    write_table(table, ["relaxation", "mean_consistency_error"],
                list(zip(report.r_values, report.mean_errors)))
    click.echo(f"spearman rho {report.spearman_rho:.3f} (p={report.spearman_p:.2e}); "
               f"table in {table}")


@cli.command("bench-stitch")
@with_common_options
@click.option("--overlap", type=float, default=0.5, show_default=True)
@click.option("--extent-multiple", type=int, default=4, show_default=True,
              help="Output extent as a multiple of the patch size.")
def bench_stitch(config_path, seed, workers, output_dir, precision, convention,
                 overlap, extent_multiple):
    """Patch-count and wall-clock comparison of the two stitching strategies."""
    cfg = _load_config(config_path, seed=seed, workers=workers,
                       output_dir=output_dir, precision=precision,
                       convention=convention)
    denoiser = resolve_denoiser(cfg.denoiser, cfg.patch_size, cfg.channels)
    plan = dataclasses.replace(cfg.to_plan(), stages=1,
                               background_color=(0.0,) * cfg.channels)
    half = extent_multiple * cfg.patch_size // cfg.factor
    z_prev = ImagePlane(np.zeros((half, half, cfg.channels)), 2.0)

    counted = []
    started = time.perf_counter()
    upscale_stage(z_prev, plan, 1, denoiser, cfg.seed, schedule=cfg.to_schedule(),
                  convention=cfg.guidance_convention, method=cfg.solver_method,
                  workers=cfg.workers,
                  on_patch=lambda stage, it, w, used: counted.append((it, used)))
    grid_seconds = time.perf_counter() - started
    grid_patches = sum(1 for _, used in counted if used)

    _, accounting = mask_shift_upscale(z_prev, plan, overlap, denoiser, cfg.seed,
                                       schedule=cfg.to_schedule(),
                                       convention=cfg.guidance_convention,
                                       method=cfg.solver_method)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "stitch_benchmark.tsv"
    write_table(table, ["technique", "patches", "seconds"],
                [("grid-shift", grid_patches, grid_seconds),
                 ("mask-shift", accounting.patches_processed * cfg.num_steps,
                  accounting.wall_clock_seconds)])
    click.echo(f"grid-shift stepped {grid_patches} patches, mask-shift "
               f"{accounting.patches_processed * cfg.num_steps}; table in {table}")


@cli.command()
@click.option("--dir", "directory", required=True, type=click.Path(exists=True,
                                                                   file_okay=False))
def verify(directory):
    """Re-check a stored pyramid against its manifest."""
    manifest = verify_pyramid(directory)
    click.echo(f"ok: {len(manifest.levels)} levels verified in {directory}")


@cli.command("show-config")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def show_config(config_path):
    """Print the effective config after environment overrides."""
    click.echo(serialize_config(load_config(config_path)), nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        sys.stderr.write(f'ERROR kind=usage detail="{exc.format_message()}"\n')
        return 1
    except NumericalFailure as exc:
        sys.stderr.write(f'ERROR kind=numerical detail="{exc}"\n')
        return 2
    except (PyramidIOError, OSError) as exc:
        sys.stderr.write(f'ERROR kind=io detail="{exc}"\n')
        return 3
    except InvalidParameter as exc:
        sys.stderr.write(f'ERROR kind=usage detail="{exc}"\n')
        return 1
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
