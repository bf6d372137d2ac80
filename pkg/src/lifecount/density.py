"""Ground-truth density maps from point annotations.

A head annotation list is first rasterized into an integer occupancy map
(one unit per head at its nearest pixel), then smoothed with a truncated
Gaussian kernel that is renormalized per head so the map's total mass equals
the head count regardless of truncation or image borders. Count-preserving
sum pooling aligns the full-resolution ground truth with the model's output
stride.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Desk-scale kernel width in pixels for 64x64 images.
DEFAULT_SIGMA = 2.0


@dataclass
class DensityMap:
    """Non-negative scalar field on a pixel grid.

    ``grid[r, c]`` is persons per cell; ``stride`` is how many input pixels
    each cell spans along each axis (1 for full-resolution ground truth).
    """

    grid: np.ndarray
    stride: int = 1

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ValueError(f"density grid must be 2-D, got shape {self.grid.shape}")
        if self.stride < 1:
            raise ValueError(f"stride must be a positive integer, got {self.stride}")
        if np.any(self.grid < 0):
            raise ValueError("density grid must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape  # type: ignore[return-value]

    def mass(self) -> float:
        """Total mass (expected person count over the whole map)."""
        return float(self.grid.sum())

    def to_csv(self, path) -> None:
        """Dump the raw grid as CSV, one row per grid row (debug aid)."""
        np.savetxt(path, self.grid, delimiter=",")


def build_binary_map(heads, shape: tuple[int, int]) -> DensityMap:
    """Rasterize head coordinates into an integer occupancy map.

    Each head adds 1 at its nearest pixel; rounding is half-up on both axes
    and the result is clipped to the last row/column so coordinates like
    W-0.5 still land on the grid. Heads sharing a pixel accumulate.
    """
    h, w = shape
    grid = np.zeros((h, w), dtype=np.float64)
    for x, y in np.atleast_2d(np.asarray(heads, dtype=np.float64).reshape(-1, 2)):
        if not (0.0 <= x < w and 0.0 <= y < h):
            raise ValueError(f"head ({x}, {y}) outside {h}x{w} image bounds")
        col = min(int(math.floor(x + 0.5)), w - 1)
        row = min(int(math.floor(y + 0.5)), h - 1)
        grid[row, col] += 1.0
    return DensityMap(grid, stride=1)


def _truncated_kernel(sigma: float) -> tuple[np.ndarray, int]:
    radius = int(math.ceil(3.0 * sigma))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return k, radius


def gaussian_density(binary: DensityMap, sigma: float) -> DensityMap:
    """Smooth an occupancy map with a mass-preserving Gaussian kernel.

    Each unit of mass becomes a Gaussian bump truncated at radius ceil(3*sigma)
    and renormalized to unit mass after truncation *and* boundary clipping, so
    the output mass equals the input mass even for heads near the borders.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kernel, radius = _truncated_kernel(sigma)
    h, w = binary.shape
    out = np.zeros((h, w), dtype=np.float64)
    for r, c in zip(*np.nonzero(binary.grid)):
        r0, r1 = max(0, r - radius), min(h, r + radius + 1)
        c0, c1 = max(0, c - radius), min(w, c + radius + 1)
        win = kernel[r0 - r + radius : r1 - r + radius, c0 - c + radius : c1 - c + radius]
        out[r0:r1, c0:c1] += binary.grid[r, c] * (win / win.sum())
    return DensityMap(out, stride=binary.stride)


def downsample_density(d: DensityMap, factor: int) -> DensityMap:
    """Non-overlapping factor x factor sum pooling; preserves total mass."""
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    h, w = d.shape
    if h % factor or w % factor:
        raise ValueError(f"grid shape {h}x{w} not divisible by factor {factor}")
    pooled = d.grid.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
    return DensityMap(pooled, stride=d.stride * factor)


def density_from_heads(heads, shape: tuple[int, int], sigma: float = DEFAULT_SIGMA) -> DensityMap:
    """Full ground-truth pipeline: rasterize then smooth."""
    return gaussian_density(build_binary_map(heads, shape), sigma)
