"""Raster value types and exact geometric primitives.

Coordinates: ``x`` is the column, ``y`` is the row, origin at the top-left.
Arrays are stored row-major, so ``values[y, x]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np


def round_half_up(x):
    """Round to the nearest integer, ties toward +inf (works on arrays)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Mask:
    """Binary label map, 0 = background and 1 = tumour. Immutable."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.asarray(values)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError(f"mask must be a non-empty 2D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.dtype == bool:
                arr = arr.astype(np.uint8)
            else:
                if not np.all((arr == 0) | (arr == 1)):
                    raise ValueError("mask values must be 0 or 1")
                arr = arr.astype(np.uint8)
        elif arr.size and arr.max() > 1:
            raise ValueError("mask values must be 0 or 1")
        else:
            arr = arr.copy()
        self._values = _frozen(np.ascontiguousarray(arr))

    @classmethod
    def zeros(cls, width: int, height: int) -> "Mask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def width(self) -> int:
        return self._values.shape[1]

    @property
    def height(self) -> int:
        return self._values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._values.shape

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._values, other._values))

    def __hash__(self):
        return hash((self.shape, self._values.tobytes()))

    def __repr__(self):
        return f"Mask({self.width}x{self.height}, area={area(self)})"


@dataclass(frozen=True, eq=False)
class MultiChannelImage:
    """Real-valued image stored as ``values[channel, y, x]``."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or min(arr.shape) == 0:
            raise ValueError(f"image must be (channels, height, width), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


class BoundingBox(NamedTuple):
    """Half-open box: x0, y0 inclusive; x1, y1 exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Per-pixel displacement in pixels, ``dx[y, x]`` and ``dy[y, x]``."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = np.array(self.dx, dtype=np.float64)
        dy = np.array(self.dy, dtype=np.float64)
        if dx.ndim != 2 or dx.shape != dy.shape or min(dx.shape) == 0:
            raise ValueError("dx and dy must be equal-shaped non-empty 2D arrays")
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise ValueError("displacements must be finite")
        object.__setattr__(self, "dx", _frozen(dx))
        object.__setattr__(self, "dy", _frozen(dy))

    @classmethod
    def zeros(cls, width: int, height: int) -> "DeformationField":
        z = np.zeros((height, width))
        return cls(z, z)

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx, self.dy)


def area(mask: Mask) -> int:
    return int(np.count_nonzero(mask.values))


def bounding_box(mask: Mask) -> Optional[BoundingBox]:
    """Tightest box around the foreground, or None for an empty mask."""
    rows = np.flatnonzero(mask.values.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.values.any(axis=0))
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def _shifted_slices(n: int, d: int) -> tuple[slice, slice]:
    # (destination, source) slices along one axis for a shift by d
    if d >= 0:
        return slice(min(d, n), n), slice(0, max(n - d, 0))
    return slice(0, max(n + d, 0)), slice(min(-d, n), n)


def translate(mask: Mask, dx: int, dy: int) -> Mask:
    """Move the foreground by (dx, dy); content leaving the canvas is dropped."""
    dx, dy = int(dx), int(dy)
    out = np.zeros_like(mask.values)
    ydst, ysrc = _shifted_slices(mask.height, dy)
    xdst, xsrc = _shifted_slices(mask.width, dx)
    out[ydst, xdst] = mask.values[ysrc, xsrc]
    return Mask(out)


def warp_apply(mask: Mask, field: DeformationField) -> Mask:
    """Backward-map ``mask`` through ``field`` with nearest-neighbour reads.

    Output pixel p takes the input value nearest to ``p - displacement(p)``;
    reads outside the canvas return 0.
    """
    if field.shape != mask.shape:
        raise ValueError(
            f"field shape {field.shape} does not match mask shape {mask.shape}"
        )
    h, w = mask.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sx = round_half_up(xs - field.dx)
    sy = round_half_up(ys - field.dy)
    inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros((h, w), dtype=np.uint8)
    out[inside] = mask.values[sy[inside], sx[inside]]
    return Mask(out)
