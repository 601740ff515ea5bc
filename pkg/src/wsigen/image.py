"""Image container used throughout the engine.

Samples live in a (height, width, channels) float array and carry a
physical spatial-resolution tag in micrometres per pixel. Low values
mean high magnification. Arrays are treated as immutable by convention;
operations return new planes and never write into their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, ShapeMismatch


@dataclass(frozen=True, eq=False)
class ImagePlane:
    """A 2-D multi-channel grid of real samples tagged with µm/px."""

    data: np.ndarray
    resolution: float

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeMismatch(
                f"image data must be (height, width, channels), got shape {self.data.shape}")
        if not self.resolution > 0:
            raise InvalidParameter(f"spatial resolution must be positive, got {self.resolution}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "ImagePlane":
        """Same resolution tag, new samples."""
        return ImagePlane(np.asarray(data), self.resolution)

    def astype(self, dtype) -> "ImagePlane":
        return ImagePlane(self.data.astype(dtype), self.resolution)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())
