"""Classic Canny baseline: hysteresis thresholding on NMS magnitudes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import ImageLike, RasterImage, as_plane, gradient, nonmax_suppress

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Thresholds:
    """Absolute hysteresis thresholds on [0, 1]-scaled magnitudes."""

    high: float
    low: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.low <= self.high <= 1.0):
            raise ValueError(
                f"thresholds must satisfy 0 <= low <= high <= 1, got low={self.low}, high={self.high}"
            )


def thresholds_from_fractiles(nms: ImageLike, high_fractile: float, low_fractile: float) -> Thresholds:
    """Turn fractiles of the positive NMS magnitudes into absolute thresholds."""
    for q in (high_fractile, low_fractile):
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"fractile {q} outside [0, 1]")
    values = as_plane(nms)
    values = values[values > 0]
    if values.size == 0:
        return Thresholds(1.0, 1.0)
    high = min(float(np.quantile(values, high_fractile)), 1.0)
    low = min(float(np.quantile(values, low_fractile)), high)
    return Thresholds(high, low)


def hysteresis(nms: ImageLike, th: Thresholds) -> np.ndarray:
    """Pixels above ``th.low`` 8-connected (through such pixels) to a pixel >= ``th.high``."""
    mag = as_plane(nms)
    if np.any(mag < 0):
        raise ValueError("hysteresis expects nonnegative magnitudes")
    weak = mag > th.low
    strong = weak & (mag >= th.high)
    if not strong.any():
        return np.zeros(mag.shape, dtype=bool)
    labels, count = ndimage.label(weak, structure=EIGHT_CONNECTED)
    seeded = np.zeros(count + 1, dtype=bool)
    seeded[labels[strong]] = True
    seeded[0] = False
    return seeded[labels]


def canny_detect(img: RasterImage, sigma: float, th: Thresholds) -> np.ndarray:
    grad = gradient(img, sigma)
    return hysteresis(nonmax_suppress(grad), th)
