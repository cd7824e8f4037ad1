"""Random elastic deformations from a coarse control lattice.

Control displacements are drawn i.i.d. from a zero-mean normal and densified
with a separable uniform cubic B-spline. The lattice is anchored to the image
corners and padded by one replicated node on every side so the spline has
full support at the borders.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import DeformationField
from .seeding import SeedKey


@dataclass(frozen=True)
class WarpParams:
    sigma: float = 0.0
    grid_rows: int = 3
    grid_cols: int = 3

    def __post_init__(self):
        if self.grid_rows < 2 or self.grid_cols < 2:
            raise ValueError("control grid needs at least 2 rows and 2 columns")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Control displacements ``dx[row, col]``, ``dy[row, col]`` in pixels."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = np.array(self.dx, dtype=np.float64)
        dy = np.array(self.dy, dtype=np.float64)
        if dx.ndim != 2 or dx.shape != dy.shape or min(dx.shape) < 2:
            raise ValueError("control grid must be two equal-shaped arrays, at least 2x2")
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise ValueError("control displacements must be finite")
        dx.setflags(write=False)
        dy.setflags(write=False)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape


def cubic_bspline(t):
    """Uniform cubic B-spline kernel, support |t| < 2."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t < 1
    far = (t >= 1) & (t < 2)
    out[near] = (4.0 - 6.0 * t[near] ** 2 + 3.0 * t[near] ** 3) / 6.0
    out[far] = (2.0 - t[far]) ** 3 / 6.0
    return out


@lru_cache(maxsize=64)
def basis_matrix(n_pixels: int, n_nodes: int) -> np.ndarray:
    """Weights of each control node for each pixel along one axis.

    Nodes sit at ``i / (n_nodes - 1) * (n_pixels - 1)``. Returns an
    ``(n_pixels, n_nodes)`` matrix; the replicated pad nodes are folded into
    the first and last columns.
    """
    if n_pixels == 1:
        u = np.zeros(1)
    else:
        u = np.arange(n_pixels) * (n_nodes - 1) / (n_pixels - 1)
    padded = np.arange(-1, n_nodes + 1)
    w = cubic_bspline(u[:, None] - padded[None, :])
    folded = w[:, 1:-1].copy()
    folded[:, 0] += w[:, 0]
    folded[:, -1] += w[:, -1]
    folded.setflags(write=False)
    return folded


def sample_control_displacements(params: WarpParams, seed: SeedKey) -> ControlGrid:
    rng = seed.generator()
    shape = (params.grid_rows, params.grid_cols)
    d = rng.standard_normal((2,) + shape) * params.sigma
    return ControlGrid(d[0], d[1])


def densify(grid: ControlGrid, width: int, height: int) -> DeformationField:
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    rows, cols = grid.shape
    by = basis_matrix(height, rows)
    bx = basis_matrix(width, cols)
    return DeformationField(by @ grid.dx @ bx.T, by @ grid.dy @ bx.T)


def make_warp(params: WarpParams, width: int, height: int, seed: SeedKey) -> DeformationField:
    return densify(sample_control_displacements(params, seed), width, height)
