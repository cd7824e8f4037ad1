"""Mask builders shared by the test modules."""

import numpy as np

from labelnoise.grid import Mask


def disk(width, height, radius, cx=None, cy=None):
    cx = (width - 1) / 2 if cx is None else cx
    cy = (height - 1) / 2 if cy is None else cy
    ys, xs = np.mgrid[0:height, 0:width]
    return Mask(((xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2).astype(np.uint8))


def random_blob(rng, width, height, min_area=1):
    """A random ellipse, redrawn until it has at least ``min_area`` pixels."""
    ys, xs = np.mgrid[0:height, 0:width]
    while True:
        a, b = rng.uniform(2, min(width, height) / 3, size=2)
        t = rng.uniform(0, np.pi)
        cx, cy = rng.uniform(a, width - a), rng.uniform(b, height - b)
        u = (np.cos(t) * (xs - cx) + np.sin(t) * (ys - cy)) / a
        v = (-np.sin(t) * (xs - cx) + np.cos(t) * (ys - cy)) / b
        v = (u * u + v * v <= 1).astype(np.uint8)
        if v.sum() >= min_area:
            return Mask(v)
