"""Raster container used at the library boundary."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError

DEFAULT_PIXEL_SPACING_MM = 0.070


@dataclass(frozen=True)
class GrayImage:
    """2D intensity image with physical pixel spacing.

    ``data`` is stored as a read-only float64 array of shape (height, width);
    rows are ``y`` and columns are ``x``.
    """

    data: np.ndarray
    pixel_spacing_mm: float = DEFAULT_PIXEL_SPACING_MM

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise DataError(f"image must be a non-empty 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("image contains non-finite values")
        if not self.pixel_spacing_mm > 0:
            raise ParameterError(f"pixel_spacing_mm must be > 0, got {self.pixel_spacing_mm}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_raw(cls, raw, max_value: float, pixel_spacing_mm: float = DEFAULT_PIXEL_SPACING_MM):
        """Normalize container integers to [0, 1] by the container's maximum value."""
        if not max_value > 0:
            raise ParameterError(f"max_value must be > 0, got {max_value}")
        return cls(np.asarray(raw, dtype=np.float64) / float(max_value), pixel_spacing_mm)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def area_cm2(self) -> float:
        return image_area_cm2(self.shape, self.pixel_spacing_mm)


def image_area_cm2(shape, pixel_spacing_mm: float) -> float:
    height, width = shape
    return width * height * (pixel_spacing_mm / 10.0) ** 2


def as_array(image) -> np.ndarray:
    """Return the float64 pixel array of a GrayImage or array-like."""
    if isinstance(image, GrayImage):
        return image.data
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"expected a 2D image, got shape {arr.shape}")
    return arr
