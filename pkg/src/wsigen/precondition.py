"""Noise-level dependent scalings around a raw denoising network.

The raw network never sees raw images: its input is scaled to unit
variance by c_in, its output is scaled by c_out, and a sigma-dependent
skip connection c_skip mixes the noisy input back in. The loss weight
makes the training objective contribute equally at every noise level;
lambda(sigma) * c_out(sigma)^2 == 1 is the identity that ties the two
together. No training loop lives here: these are pure functions plus
the executable form of the denoising loss, so the identities can be
tested directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidParameter, ShapeMismatch
from .image import ImagePlane

RawNetwork = Callable[[np.ndarray, float, float], np.ndarray]


@dataclass(frozen=True)
class PreconditionConfig:
    """Holds the training-data standard deviation (0.5 for images normalized to [-1, 1])."""

    sigma_data: float = 0.5

    def __post_init__(self):
        if not self.sigma_data > 0:
            raise InvalidParameter(f"sigma_data must be positive, got {self.sigma_data}")


def c_skip(sigma, cfg: PreconditionConfig = PreconditionConfig()):
    """Skip-connection gain: sigma_data^2 / (sigma^2 + sigma_data^2)."""
    sd2 = cfg.sigma_data ** 2
    return sd2 / (np.asarray(sigma, dtype=np.float64) ** 2 + sd2)


def c_out(sigma, cfg: PreconditionConfig = PreconditionConfig()):
    """Output gain: sigma * sigma_data / sqrt(sigma_data^2 + sigma^2)."""
    s = np.asarray(sigma, dtype=np.float64)
    return s * cfg.sigma_data / np.sqrt(cfg.sigma_data ** 2 + s ** 2)


def c_in(sigma, cfg: PreconditionConfig = PreconditionConfig()):
    """Input gain: 1 / sqrt(sigma^2 + sigma_data^2)."""
    s = np.asarray(sigma, dtype=np.float64)
    return 1.0 / np.sqrt(s ** 2 + cfg.sigma_data ** 2)


def loss_weight(sigma, cfg: PreconditionConfig = PreconditionConfig()):
    """Loss weight sigma^-2 + sigma_data^-2; diverges at sigma = 0."""
    s = np.asarray(sigma, dtype=np.float64)
    if np.any(s <= 0):
        raise InvalidParameter("loss_weight requires sigma > 0")
    return s ** -2 + cfg.sigma_data ** -2


def precondition_denoise(raw_net: RawNetwork, x: ImagePlane, sigma: float,
                         resolution: float,
                         cfg: PreconditionConfig = PreconditionConfig()) -> ImagePlane:
    """Wrap a raw network call into a full denoiser evaluation.

    Returns c_skip(sigma) * x + c_out(sigma) * raw_net(c_in(sigma) * x, sigma, resolution)
    with the same shape and resolution tag as x.
    """
    if sigma < 0:
        raise InvalidParameter(f"sigma must be non-negative, got {sigma}")
    if not x.is_finite():
        raise InvalidParameter("input image contains non-finite samples")
    scaled = c_in(sigma, cfg) * x.data
    raw = np.asarray(raw_net(scaled, sigma, resolution), dtype=np.float64)
    if raw.shape != x.data.shape:
        raise ShapeMismatch(
            f"raw network returned shape {raw.shape}, expected {x.data.shape}")
    return x.with_data(c_skip(sigma, cfg) * x.data + c_out(sigma, cfg) * raw)


def denoising_loss(denoiser, clean: ImagePlane, sigma: float, resolution: float,
                   noise: ImagePlane,
                   cfg: PreconditionConfig = PreconditionConfig()) -> float:
    """Weighted squared denoising error on one (clean, noise) pair.

    loss = lambda(sigma) * || D(clean + noise; sigma, resolution) - clean ||_2^2
    summed over all samples.
    """
    if clean.shape != noise.shape:
        raise ShapeMismatch(
            f"clean shape {clean.shape} does not match noise shape {noise.shape}")
    weight = float(loss_weight(sigma, cfg))
    noisy = clean.with_data(clean.data + noise.data)
    denoised = denoiser(noisy, sigma, resolution)
    residual = denoised.data - clean.data
    return weight * float(np.sum(residual * residual))


def draw_training_sigma(rng: np.random.Generator, mean: float = -1.2,
                        std: float = 1.2) -> float:
    """Draw one noise level with ln(sigma) ~ Normal(mean, std^2)."""
    return float(np.exp(rng.normal(mean, std)))


class PreconditionedDenoiser:
    """Adapter turning a raw network into the denoiser contract.

    A trained network plugged in through this class automatically gets
    the input/output/skip scalings; the rest of the engine only ever
    sees the composed denoiser.
    """

    def __init__(self, raw_net: RawNetwork,
                 cfg: PreconditionConfig = PreconditionConfig()):
        self.raw_net = raw_net
        self.cfg = cfg

    def __call__(self, x: ImagePlane, sigma: float, resolution: float) -> ImagePlane:
        return precondition_denoise(self.raw_net, x, sigma, resolution, self.cfg)
