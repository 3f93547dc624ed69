"""Snakelets: open active contours for edge detection and broken-edge recovery."""

from .canny import Thresholds, canny_detect, hysteresis
from .detect import DetectParams, detect, rasterize
from .gvf import VectorField, gvf_init, gvf_iterate, gvf_normalize
from .imagecore import GradientField, RasterImage, gradient, load_image, nonmax_suppress, save_image
from .recovery import RecoveryParams, SnakeletSet, recover
from .snakelet import Snakelet, SnakeletParams, State

__all__ = [
    "DetectParams",
    "GradientField",
    "RasterImage",
    "RecoveryParams",
    "Snakelet",
    "SnakeletParams",
    "SnakeletSet",
    "State",
    "Thresholds",
    "VectorField",
    "canny_detect",
    "detect",
    "gradient",
    "gvf_init",
    "gvf_iterate",
    "gvf_normalize",
    "hysteresis",
    "load_image",
    "nonmax_suppress",
    "rasterize",
    "recover",
    "save_image",
]
