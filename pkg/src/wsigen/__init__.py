"""Tiled coarse-to-fine diffusion sampling engine.

Generates arbitrarily large images from a fixed-resolution denoiser by
iterating guided super-resolution stages over a shifting patch grid.
Closed-form Gaussian-mixture denoisers stand in for a trained network
so every component is verifiable end to end.
"""

from ._version import __version__
from .config import RunConfig, load_config, parse_config, serialize_config
from .denoisers import (Denoiser, GaussianMixtureOracle, ResolutionSwitchedOracle,
                        load_oracle, resolve_denoiser, save_oracle,
                        single_gaussian_oracle, sinusoidal_encode, texture_oracle,
                        tissue_demo_oracle)
from .errors import (CoverageError, EngineError, InvalidParameter, NumericalFailure,
                     PyramidIOError, ShapeMismatch, VerificationError)
from .guidance import (Convention, DownsampleOperator, GuidanceConfig, downsample,
                       guided_estimate, pseudo_upsample, should_guide)
from .image import ImagePlane
from .precondition import (PreconditionConfig, PreconditionedDenoiser, c_in, c_out,
                           c_skip, denoising_loss, loss_weight, precondition_denoise)
from .pyramid import (PatchGrid, PyramidRun, StagePlan, TissueMask, generate_wsi,
                      patch_pair, shift_patch_grid, stitch, tissue_mask_from,
                      upscale_stage)
from .schedule import NoiseSchedule, build_schedule
from .solver import SolverMethod, StepContext, guided_step, run_trajectory, sample_unconditional
from .storage import (PyramidManifest, read_level, verify_pyramid, write_pyramid)
from .streams import rng_stream, stream_key

__all__ = [
    "__version__",
    "RunConfig", "load_config", "parse_config", "serialize_config",
    "Denoiser", "GaussianMixtureOracle", "ResolutionSwitchedOracle",
    "load_oracle", "save_oracle", "resolve_denoiser", "single_gaussian_oracle",
    "sinusoidal_encode", "texture_oracle", "tissue_demo_oracle",
    "CoverageError", "EngineError", "InvalidParameter", "NumericalFailure",
    "PyramidIOError", "ShapeMismatch", "VerificationError",
    "Convention", "DownsampleOperator", "GuidanceConfig", "downsample",
    "guided_estimate", "pseudo_upsample", "should_guide",
    "ImagePlane",
    "PreconditionConfig", "PreconditionedDenoiser", "c_in", "c_out", "c_skip",
    "denoising_loss", "loss_weight", "precondition_denoise",
    "PatchGrid", "PyramidRun", "StagePlan", "TissueMask", "generate_wsi",
    "patch_pair", "shift_patch_grid", "stitch", "tissue_mask_from", "upscale_stage",
    "NoiseSchedule", "build_schedule",
    "SolverMethod", "StepContext", "guided_step", "run_trajectory",
    "sample_unconditional",
    "PyramidManifest", "read_level", "verify_pyramid", "write_pyramid",
    "rng_stream", "stream_key",
]
