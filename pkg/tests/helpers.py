"""Independent oracles and small utilities shared by the test suite.

Everything here deliberately avoids the code paths it is used to check:
the quadrature posterior mean integrates densities numerically, and the
dense pooling matrices spell out the linear algebra the engine does
matrix-free.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad

from wsigen import ImagePlane


def quad_posterior_mean(weights, means, stds, x: float, sigma: float) -> float:
    """E[x0 | x] for a scalar Gaussian mixture, by adaptive quadrature."""
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)

    def prior(x0):
        return sum(w * np.exp(-((x0 - m) ** 2) / (2 * s * s)) / np.sqrt(2 * np.pi * s * s)
                   for w, m, s in zip(weights, means, stds))

    def likelihood(x0):
        return np.exp(-((x - x0) ** 2) / (2 * sigma * sigma)) / np.sqrt(2 * np.pi * sigma * sigma)

    lo = min(means.min() - 10 * stds.max(), x - 10 * sigma)
    hi = max(means.max() + 10 * stds.max(), x + 10 * sigma)
    numerator = quad(lambda t: t * prior(t) * likelihood(t), lo, hi, limit=400)[0]
    denominator = quad(lambda t: prior(t) * likelihood(t), lo, hi, limit=400)[0]
    return numerator / denominator


def fd_log_density_grad(oracle, x: float, sigma: float, h: float = 1e-5) -> float:
    """Central finite difference of the marginal log density at a scalar point."""
    point = np.full((1, 1, 1), x)
    up = oracle.log_density(point + h, sigma)
    down = oracle.log_density(point - h, sigma)
    return float((up - down) / (2 * h))


def dense_pool_matrix(height: int, width: int, factor: int) -> np.ndarray:
    """Explicit block-mean pooling matrix over a flattened (H, W) plane."""
    hh, ww = height // factor, width // factor
    mat = np.zeros((hh * ww, height * width))
    for by in range(hh):
        for bx in range(ww):
            row = by * ww + bx
            for dy in range(factor):
                for dx in range(factor):
                    col = (by * factor + dy) * width + (bx * factor + dx)
                    mat[row, col] = 1.0 / factor ** 2
    return mat


def dense_pinv(mat: np.ndarray) -> np.ndarray:
    """A^T (A A^T)^-1 for a full-row-rank matrix."""
    return mat.T @ np.linalg.inv(mat @ mat.T)


def apply_per_channel(mat: np.ndarray, img: np.ndarray,
                      out_hw: tuple[int, int]) -> np.ndarray:
    """Apply a flattened-plane matrix to every channel of an (H, W, C) array."""
    channels = img.shape[2]
    out = np.empty(out_hw + (channels,))
    for c in range(channels):
        out[:, :, c] = (mat @ img[:, :, c].ravel()).reshape(out_hw)
    return out


class CountingDenoiser:
    """Wraps any denoiser and counts evaluations."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def __call__(self, x: ImagePlane, sigma: float, resolution: float) -> ImagePlane:
        self.calls += 1
        return self.inner(x, sigma, resolution)


def identity_denoiser(x: ImagePlane, sigma: float, resolution: float) -> ImagePlane:
    return x
