"""Smoothing/sharpening filters and the Laplacian-variance smoothness metric.

All convolutions use replicate ("nearest") boundary handling so spectrogram
edges are not darkened. The smoothness metric is computed on the interior
(border of width 1 excluded) to avoid padding artefacts; a lower value means
a smoother grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .spectral import MelSpectrogram

__all__ = [
    "Kernel2D",
    "LAPLACIAN_KERNEL",
    "gaussian_kernel",
    "convolve2d",
    "smooth",
    "sharpen",
    "var_laplacian",
]

# 4-neighbour Laplacian stencil, the standard form of the focus measure.
LAPLACIAN_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class Kernel2D:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise ValueError("kernel must be 2-D with odd width and height")
        object.__setattr__(self, "weights", w)

    @property
    def shape(self):
        return self.weights.shape


def gaussian_kernel(sigma: float) -> Kernel2D:
    """Separable 2-D Gaussian, radius ceil(3*sigma), normalized to sum 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1)
    w1 = np.exp(-0.5 * (x / sigma) ** 2)
    w1 /= w1.sum()
    return Kernel2D(np.outer(w1, w1))


def _values(grid) -> np.ndarray:
    if isinstance(grid, MelSpectrogram):
        return grid.values
    return np.asarray(grid, dtype=np.float64)


def _like(grid, values: np.ndarray):
    if isinstance(grid, MelSpectrogram):
        return MelSpectrogram(values, grid.config)
    return values


def convolve2d(grid, kernel: Kernel2D | np.ndarray) -> np.ndarray:
    """Same-shape 2-D convolution with replicate-padded boundary."""
    values = _values(grid)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("grid must be a non-empty 2-D array")
    weights = kernel.weights if isinstance(kernel, Kernel2D) else np.asarray(kernel)
    # ndimage.convolve flips the kernel (true convolution), mode='nearest'
    # replicates the border values.
    return ndimage.convolve(values, weights, mode="nearest")


def smooth(spec, sigma: float = 1.0):
    """Gaussian blur of the spectrogram grid."""
    return _like(spec, convolve2d(spec, gaussian_kernel(sigma)))


def sharpen(spec, s: float = 1.0):
    """Unsharp boost: out = in - s * (laplacian * in). Identity at s = 0."""
    if s < 0:
        raise ValueError("sharpen strength must be >= 0")
    values = _values(spec)
    return _like(spec, values - s * convolve2d(values, LAPLACIAN_KERNEL))


def var_laplacian(spec) -> float:
    """Variance of the Laplacian-filtered grid over the interior region.

    The Laplacian response of a spectrogram is zero-sum, so the second moment
    is taken about zero; this keeps the constant grid at exactly 0 and a unit
    checkerboard at exactly 64.
    """
    values = _values(spec)
    if values.ndim != 2 or values.shape[0] < 3 or values.shape[1] < 3:
        raise ValueError("var_laplacian needs a grid of at least 3x3")
    lap = convolve2d(values, LAPLACIAN_KERNEL)[1:-1, 1:-1]
    return float(np.mean(lap**2))
