"""Denoiser contract and closed-form reference denoisers.

The sampling engine only assumes a callable D(x, sigma, resolution)
returning an equally shaped image. Gaussian-mixture oracles implement
that contract exactly: their posterior mean under isotropic noise has a
closed form, so every downstream component can be verified against
analytic ground truth without a trained network. A trained model slots
in later through the same contract (see precondition.PreconditionedDenoiser).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import InvalidParameter, ShapeMismatch
from .image import ImagePlane

_WEIGHT_TOL = 1e-12


@runtime_checkable
class Denoiser(Protocol):
    """Evaluation contract: (noisy image, noise level, µm/px) -> denoised image."""

    def __call__(self, x: ImagePlane, sigma: float, resolution: float) -> ImagePlane:
        ...


@dataclass(frozen=True, eq=False)
class GaussianMixtureOracle:
    """Mixture of isotropic Gaussians over whole images.

    weights: (K,) positive, summing to one.
    means:   (K, H, W, C) component mean images.
    stds:    (K,) per-component isotropic standard deviations.

    For x = x0 + sigma * n with x0 drawn from the mixture, the posterior
    mean E[x0 | x] is a responsibility-weighted blend of per-component
    shrinkage estimates; responsibilities are computed in the log domain
    because sigma spans several orders of magnitude.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "stds", np.asarray(self.stds, dtype=np.float64))
        if self.means.ndim != 4:
            raise ShapeMismatch(
                f"means must be (components, height, width, channels), got {self.means.shape}")
        k = self.means.shape[0]
        if self.weights.shape != (k,) or self.stds.shape != (k,):
            raise ShapeMismatch("weights, means and stds disagree on the component count")
        if abs(float(self.weights.sum()) - 1.0) > _WEIGHT_TOL:
            raise InvalidParameter(f"weights must sum to 1, got {self.weights.sum()!r}")
        if np.any(self.weights <= 0):
            raise InvalidParameter("weights must be positive")
        if np.any(self.stds <= 0):
            raise InvalidParameter("component stds must be positive")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.means.shape[1:]

    def mixture_mean(self) -> np.ndarray:
        return np.einsum("k,k...->...", self.weights, self.means)

    def _check_input(self, x: np.ndarray):
        if x.shape[-3:] != self.image_shape:
            raise ShapeMismatch(
                f"input trailing shape {x.shape[-3:]} does not match oracle shape {self.image_shape}")
        if not np.isfinite(x).all():
            raise InvalidParameter("input image contains non-finite samples")

    def _log_responsibilities(self, x: np.ndarray, sigma: float) -> np.ndarray:
        var = self.stds ** 2 + sigma ** 2  # (K,)
        dim = int(np.prod(self.image_shape))
        diff = x[..., None, :, :, :] - self.means  # (..., K, H, W, C)
        sq = np.sum(diff * diff, axis=(-3, -2, -1))  # (..., K)
        logp = np.log(self.weights) - 0.5 * dim * np.log(2.0 * np.pi * var) - sq / (2.0 * var)
        return logp

    def log_density(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """Marginal log p(x; sigma) of the noisy-image distribution."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        logp = self._log_responsibilities(x, sigma)
        peak = logp.max(axis=-1, keepdims=True)
        return np.squeeze(peak, -1) + np.log(np.exp(logp - peak).sum(axis=-1))

    def posterior_mean(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """Exact E[x0 | x] for noise level sigma; identity at sigma = 0.

        Accepts any number of leading batch axes; each batch element is
        treated as an independent image.
        """
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        if sigma < 0:
            raise InvalidParameter(f"sigma must be non-negative, got {sigma}")
        if sigma == 0.0:
            return x.copy()
        logp = self._log_responsibilities(x, sigma)
        logp -= logp.max(axis=-1, keepdims=True)
        gamma = np.exp(logp)
        gamma /= gamma.sum(axis=-1, keepdims=True)
        var = self.stds ** 2 + sigma ** 2
        s2 = (self.stds ** 2)[:, None, None, None]
        shrunk = (s2 * x[..., None, :, :, :] + sigma ** 2 * self.means) / var[:, None, None, None]
        return np.einsum("...k,...khwc->...hwc", gamma, shrunk)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw clean images from the mixture; shape (count, H, W, C)."""
        picks = rng.choice(len(self.weights), size=count, p=self.weights)
        noise = rng.standard_normal((count,) + self.image_shape)
        return self.means[picks] + self.stds[picks, None, None, None] * noise

    def __call__(self, x: ImagePlane, sigma: float, resolution: float) -> ImagePlane:
        return x.with_data(self.posterior_mean(x.data, sigma))


@dataclass(frozen=True, eq=False)
class ResolutionSwitchedOracle:
    """Dispatches to a different mixture per spatial-resolution band.

    bands: ((min_resolution, oracle), ...) sorted ascending; an input at
    resolution s uses the band with the largest min_resolution <= s.
    The coarsest band must start at 0 so every resolution is covered.
    """

    bands: tuple[tuple[float, GaussianMixtureOracle], ...]

    def __post_init__(self):
        if not self.bands:
            raise InvalidParameter("at least one resolution band is required")
        edges = [edge for edge, _ in self.bands]
        if sorted(edges) != list(edges) or len(set(edges)) != len(edges):
            raise InvalidParameter("band edges must be strictly increasing")
        if edges[0] != 0.0:
            raise InvalidParameter("the first band must start at resolution 0")

    def pick(self, resolution: float) -> GaussianMixtureOracle:
        chosen = self.bands[0][1]
        for edge, oracle in self.bands:
            if resolution >= edge:
                chosen = oracle
        return chosen

    def __call__(self, x: ImagePlane, sigma: float, resolution: float) -> ImagePlane:
        return self.pick(resolution)(x, sigma, resolution)


def sinusoidal_encode(value: float, dim: int, max_period: float = 1e4) -> np.ndarray:
    """Interleaved sin/cos encoding over geometrically spaced frequencies.

    Output layout is [sin(f0 v), cos(f0 v), sin(f1 v), cos(f1 v), ...]
    with frequencies descending from 1 to 1/max_period, so the last pair
    has period 2*pi*max_period exactly.
    """
    if dim <= 0 or dim % 2 != 0:
        raise InvalidParameter(f"dim must be a positive even integer, got {dim}")
    if not max_period > 0:
        raise InvalidParameter(f"max_period must be positive, got {max_period}")
    half = dim // 2
    if half == 1:
        freqs = np.array([1.0 / max_period])
    else:
        freqs = max_period ** (-np.arange(half, dtype=np.float64) / (half - 1))
    phase = freqs * float(value)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(phase)
    out[1::2] = np.cos(phase)
    return out


# ---------------------------------------------------------------------------
# Built-in oracles


def texture_oracle(patch_size: int, channels: int = 1, amplitude: float = 0.5,
                   carrier_amplitude: float = 0.3, std: float = 0.15,
                   periods: int = 1) -> GaussianMixtureOracle:
    """Two-mode texture prior: a patch-periodic carrier shifted up or down.

    The carrier completes `periods` full cycles per patch, so it continues
    seamlessly across patch boundaries aligned to patch_size / periods.
    Any seam in a stitched sample therefore comes from neighbouring
    patches picking different modes, which is exactly what the tiling
    experiments need to expose.
    """
    yy, xx = np.mgrid[0:patch_size, 0:patch_size].astype(np.float64)
    phase = 2 * np.pi * periods / patch_size
    carrier = carrier_amplitude * (np.cos(phase * xx) + np.cos(phase * yy))
    base = np.repeat(carrier[..., None], channels, axis=2)
    means = np.stack([base + amplitude, base - amplitude])
    return GaussianMixtureOracle(weights=np.array([0.5, 0.5]), means=means,
                                 stds=np.array([std, std]))


def single_gaussian_oracle(shape: tuple[int, int, int], mean: float = 0.0,
                           std: float = 0.5) -> GaussianMixtureOracle:
    """One-component oracle; its sampling ODE has a closed-form solution."""
    return GaussianMixtureOracle(weights=np.array([1.0]),
                                 means=np.full((1,) + tuple(shape), mean),
                                 stds=np.array([std]))


def _channel_color(base: list[float], channels: int) -> np.ndarray:
    reps = -(-channels // len(base))
    return np.array((base * reps)[:channels])


def _blob_means(patch_size: int, channels: int) -> np.ndarray:
    """Procedural macro structures on a light background."""
    bg = _channel_color([0.85, 0.80, 0.88], channels)
    tissue = _channel_color([0.35, -0.30, 0.10], channels)
    yy, xx = np.mgrid[0:patch_size, 0:patch_size].astype(np.float64)
    cy = cx = (patch_size - 1) / 2.0
    centered = np.hypot(yy - cy, xx - cx)
    offset = np.hypot(yy - 0.28 * patch_size, xx - 0.28 * patch_size)
    # every shape stays clear of the corners so the per-corner background
    # derivation sees clean background in any mode; the offset disk leaves
    # whole quadrants empty so tissue masking has something to skip
    shapes = [
        offset < 0.2 * patch_size,
        (centered > 0.18 * patch_size) & (centered < 0.42 * patch_size),
        np.abs(yy - cy) < 0.2 * patch_size,
    ]
    means = []
    for inside in shapes:
        img = np.where(inside[..., None], tissue, bg)
        means.append(img)
    return np.stack(means)


def tissue_demo_oracle(patch_size: int, channels: int = 3,
                       band_edge: float = 5.0) -> ResolutionSwitchedOracle:
    """Demo prior for end-to-end runs: blobs at coarse µm/px, texture at fine.

    The band switch makes the spatial-resolution conditioning observable:
    coarse stages lay out macro structure, fine stages add texture.
    """
    coarse = GaussianMixtureOracle(weights=np.full(3, 1 / 3),
                                   means=_blob_means(patch_size, channels),
                                   stds=np.full(3, 0.05))
    fine = texture_oracle(patch_size, channels, amplitude=0.35,
                          carrier_amplitude=0.25, std=0.12)
    return ResolutionSwitchedOracle(bands=((0.0, fine), (band_edge, coarse)))


# ---------------------------------------------------------------------------
# Structured-text (JSON) oracle files


def _component_from_dict(entry: dict, shape: tuple[int, int, int],
                         base_dir: Path) -> tuple[float, np.ndarray, float]:
    weight = float(entry["weight"])
    std = float(entry["std"])
    if "mean" in entry:
        mean = np.asarray(entry["mean"], dtype=np.float64).reshape(shape)
    elif "mean_file" in entry:
        mean = np.load(base_dir / entry["mean_file"]).astype(np.float64).reshape(shape)
    else:
        raise InvalidParameter("oracle component needs either 'mean' or 'mean_file'")
    return weight, mean, std


def _mixture_from_dict(spec: dict, base_dir: Path) -> GaussianMixtureOracle:
    shape = tuple(int(v) for v in spec["shape"])
    if len(shape) != 3:
        raise InvalidParameter(f"oracle shape must have 3 entries, got {spec['shape']}")
    parts = [_component_from_dict(c, shape, base_dir) for c in spec["components"]]
    return GaussianMixtureOracle(weights=np.array([p[0] for p in parts]),
                                 means=np.stack([p[1] for p in parts]),
                                 stds=np.array([p[2] for p in parts]))


def load_oracle(path) -> GaussianMixtureOracle | ResolutionSwitchedOracle:
    """Load an oracle definition from a JSON file."""
    path = Path(path)
    spec = json.loads(path.read_text())
    kind = spec.get("kind", "gaussian-mixture")
    if kind == "gaussian-mixture":
        return _mixture_from_dict(spec, path.parent)
    if kind == "resolution-switched":
        bands = tuple((float(b["min_resolution"]), _mixture_from_dict(b["oracle"], path.parent))
                      for b in spec["bands"])
        return ResolutionSwitchedOracle(bands=bands)
    raise InvalidParameter(f"unknown oracle kind {kind!r}")


def save_oracle(oracle: GaussianMixtureOracle | ResolutionSwitchedOracle, path) -> None:
    """Write an oracle definition as JSON with inline means."""

    def mixture_dict(o: GaussianMixtureOracle) -> dict:
        return {
            "kind": "gaussian-mixture",
            "shape": list(o.image_shape),
            "components": [
                {"weight": float(w), "std": float(s), "mean": m.ravel().tolist()}
                for w, m, s in zip(o.weights, o.means, o.stds)
            ],
        }

    if isinstance(oracle, GaussianMixtureOracle):
        spec = mixture_dict(oracle)
    else:
        spec = {"kind": "resolution-switched",
                "bands": [{"min_resolution": edge, "oracle": mixture_dict(o)}
                          for edge, o in oracle.bands]}
    Path(path).write_text(json.dumps(spec))


def resolve_denoiser(reference: str, patch_size: int, channels: int):
    """Turn a config denoiser reference into a callable denoiser.

    'builtin:<name>' picks a procedural oracle sized to the patch;
    anything else is read as a path to a JSON oracle file.
    """
    if reference.startswith("builtin:"):
        name = reference.split(":", 1)[1]
        if name == "texture":
            return texture_oracle(patch_size, channels)
        if name == "tissue-demo":
            return tissue_demo_oracle(patch_size, channels)
        if name == "single-gaussian":
            return single_gaussian_oracle((patch_size, patch_size, channels))
        raise InvalidParameter(f"unknown builtin denoiser {name!r}")
    return load_oracle(reference)
