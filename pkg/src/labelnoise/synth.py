"""Synthetic multi-channel phantoms with elliptical lesions.

Each diseased sample carries one rotated ellipse. A pixel is foreground iff
its center satisfies the ellipse inequality. Intensity per channel is a
smooth background field, plus a per-channel offset inside the lesion, plus
i.i.d. pixel texture noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import Mask, MultiChannelImage
from .seeding import OP_SYNTH, SeedKey


@dataclass(frozen=True)
class SynthConfig:
    width: int = 64
    height: int = 64
    channels: int = 4
    axis_min: float = 5.0
    axis_max: float = 14.0
    lesion_offsets: tuple = (1.0, 0.6, 0.8, 1.2)
    background_std: float = 0.3
    background_smoothing: float = 4.0
    texture_std: float = 0.6
    healthy_fraction: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "lesion_offsets", tuple(float(v) for v in self.lesion_offsets))
        if self.width <= 0 or self.height <= 0 or self.channels < 1:
            raise ValueError("canvas and channel count must be positive")
        if len(self.lesion_offsets) != self.channels:
            raise ValueError("need one lesion offset per channel")
        if not 0 < self.axis_min <= self.axis_max:
            raise ValueError("need 0 < axis_min <= axis_max")
        if 2 * self.axis_max > min(self.width, self.height):
            raise ValueError("lesion axis range does not fit inside the canvas")
        if min(self.background_std, self.texture_std, self.background_smoothing) < 0:
            raise ValueError("noise parameters must be >= 0")
        if not 0 <= self.healthy_fraction <= 1:
            raise ValueError("healthy_fraction must be in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lesion_offsets"] = list(self.lesion_offsets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown synth config fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float  # semi-axis along the rotated x direction
    b: float
    theta: float

    def contains(self, x, y):
        c, s = np.cos(self.theta), np.sin(self.theta)
        dx, dy = np.asarray(x) - self.cx, np.asarray(y) - self.cy
        u = (c * dx + s * dy) / self.a
        v = (-s * dx + c * dy) / self.b
        return u * u + v * v <= 1.0

    def half_extent(self) -> tuple[float, float]:
        c, s = np.cos(self.theta), np.sin(self.theta)
        hx = np.sqrt((self.a * c) ** 2 + (self.b * s) ** 2)
        hy = np.sqrt((self.a * s) ** 2 + (self.b * c) ** 2)
        return float(hx), float(hy)


@dataclass(frozen=True, eq=False)
class Sample:
    id: int
    image: MultiChannelImage
    mask: Mask
    lesion: Ellipse | None = None

    @property
    def diseased(self) -> bool:
        return self.lesion is not None

    def __post_init__(self):
        if (self.image.height, self.image.width) != self.mask.shape:
            raise ValueError("mask and image dimensions differ")


def rasterize(ellipse: Ellipse, width: int, height: int) -> Mask:
    ys, xs = np.mgrid[0:height, 0:width]
    return Mask(ellipse.contains(xs, ys).astype(np.uint8))


def _random_ellipse(cfg: SynthConfig, rng: np.random.Generator) -> Ellipse:
    a, b = rng.uniform(cfg.axis_min, cfg.axis_max, size=2)
    theta = rng.uniform(0.0, np.pi)
    hx, hy = Ellipse(0, 0, a, b, theta).half_extent()
    # pixel i covers [i - 0.5, i + 0.5]; keep the whole ellipse on the canvas
    cx = rng.uniform(hx - 0.5, cfg.width - 0.5 - hx)
    cy = rng.uniform(hy - 0.5, cfg.height - 0.5 - hy)
    return Ellipse(float(cx), float(cy), float(a), float(b), float(theta))


def generate_sample(cfg: SynthConfig, sample_id: int, seed: int) -> Sample:
    rng = SeedKey(seed, 0, sample_id, OP_SYNTH).generator()
    healthy = rng.uniform() < cfg.healthy_fraction
    lesion = None if healthy else _random_ellipse(cfg, rng)
    shape = (cfg.channels, cfg.height, cfg.width)

    background = rng.standard_normal(shape)
    if cfg.background_smoothing > 0:
        for ch in range(cfg.channels):
            smooth = gaussian_filter(background[ch], cfg.background_smoothing, mode="wrap")
            sd = smooth.std()
            background[ch] = smooth / sd if sd > 0 else smooth
    values = cfg.background_std * background
    values += cfg.texture_std * rng.standard_normal(shape)

    if lesion is None:
        mask = Mask.zeros(cfg.width, cfg.height)
    else:
        mask = rasterize(lesion, cfg.width, cfg.height)
        offsets = np.asarray(cfg.lesion_offsets)[:, None, None]
        values += offsets * mask.values[None]
    return Sample(sample_id, MultiChannelImage(values), mask, lesion)


def generate(cfg: SynthConfig, n: int, seed: int) -> list[Sample]:
    """Generate ``n`` samples; sample i depends only on (cfg, seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [generate_sample(cfg, i, seed) for i in range(n)]


def stack_images(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.image.values for s in samples])
