"""Linear downsampling operator, its pseudoinverse, and the guided projection.

Downsampling is mean pooling over disjoint k-by-k blocks. Because the
blocks are disjoint the operator has full row rank and its pseudoinverse
is plain replication of each low-resolution sample into its block, so
both directions run matrix-free in O(samples). The guided estimate

    projected = u - replicate(block_mean(u)) + replicate(y)

is the Euclidean projection of u onto the affine set of images whose
block means equal the guide y; applying the pooling afterwards returns
y up to float accumulation.

Whether the projection is applied at a given step is controlled by a
step-index bound. Two gate conventions exist because the source
material for this scheme is self-contradictory about which direction
the bound cuts; the default guides the early (high-noise) steps and
relaxes the final ones, and the inverted reading is available behind a
flag.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, ShapeMismatch
from .image import ImagePlane


class Convention(str, enum.Enum):
    """Gate direction for the relaxation bound."""

    ALG1 = "alg1"          # guide while step < bound
    INVERTED = "inverted"  # guide while step >= bound


@dataclass(frozen=True)
class DownsampleOperator:
    """Mean pooling over disjoint factor-by-factor blocks, channel-wise."""

    factor: int

    def __post_init__(self):
        if self.factor < 2:
            raise InvalidParameter(f"pooling factor must be at least 2, got {self.factor}")


@dataclass(frozen=True)
class GuidanceConfig:
    """Relaxation bound plus the gate convention."""

    relaxation: int
    convention: Convention = Convention.ALG1

    def __post_init__(self):
        if self.relaxation < 0:
            raise InvalidParameter(f"relaxation bound must be non-negative, got {self.relaxation}")


def block_mean(data: np.ndarray, factor: int) -> np.ndarray:
    """Mean over k-by-k blocks of a (H, W, C) array; H and W must divide by k."""
    h, w, c = data.shape
    if h % factor or w % factor:
        raise ShapeMismatch(
            f"extent {h}x{w} is not divisible by the pooling factor {factor}")
    blocks = data.reshape(h // factor, factor, w // factor, factor, c)
    return blocks.mean(axis=(1, 3))


def block_replicate(data: np.ndarray, factor: int) -> np.ndarray:
    """Replicate each sample of a (h, w, C) array into a k-by-k block."""
    return np.repeat(np.repeat(data, factor, axis=0), factor, axis=1)


def project_to_guide(data: np.ndarray, guide: np.ndarray, factor: int) -> np.ndarray:
    """Closest image to `data` whose block means equal `guide`."""
    h, w, _ = data.shape
    gh, gw, gc = guide.shape
    if (gh * factor, gw * factor) != (h, w) or gc != data.shape[2]:
        raise ShapeMismatch(
            f"guide shape {guide.shape} does not match image shape {data.shape} at factor {factor}")
    return data - block_replicate(block_mean(data, factor) - guide, factor)


def downsample(op: DownsampleOperator, u: ImagePlane) -> ImagePlane:
    """Pool each k-by-k block to its mean; the µm/px tag grows by k."""
    return ImagePlane(block_mean(u.data, op.factor), u.resolution * op.factor)


def pseudo_upsample(op: DownsampleOperator, y: ImagePlane) -> ImagePlane:
    """Pseudoinverse of the pooling: exact replication into blocks.

    For block-mean pooling A the Gram matrix A A^T is (1/k^2) times the
    identity, so A^T (A A^T)^-1 replicates each sample unscaled.
    """
    return ImagePlane(block_replicate(y.data, op.factor), y.resolution / op.factor)


def guided_estimate(op: DownsampleOperator, u: ImagePlane, y: ImagePlane) -> ImagePlane:
    """Project the clean-image estimate u onto {v : block means of v == y}."""
    return u.with_data(project_to_guide(u.data, y.data, op.factor))


def should_guide(i: int, cfg: GuidanceConfig) -> bool:
    """Gate for step index i under the configured convention."""
    if cfg.convention is Convention.ALG1:
        return i < cfg.relaxation
    return i >= cfg.relaxation
