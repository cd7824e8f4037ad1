"""Annotation corruption operators.

Per-mask operators (warp, shift, crops) are applied to the pristine reference
each time a mask is loaded; dataset-level operators (permute, discard) are
resolved once into a :class:`DatasetPlan` before training starts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq

from .grid import Mask, area, bounding_box, round_half_up, translate, warp_apply
from .seeding import OP_PLAN, SeedKey
from .warp import WarpParams, make_warp

log = logging.getLogger(__name__)


class CorruptionError(ValueError):
    """A corruption spec was used where it does not apply."""


@dataclass(frozen=True)
class NoOp:
    op = "none"


@dataclass(frozen=True)
class Warp:
    params: WarpParams = field(default_factory=WarpParams)
    op = "warp"

    @property
    def sigma(self) -> float:
        return self.params.sigma


@dataclass(frozen=True)
class Shift:
    dx: int = 0
    dy: int = 0
    op = "shift"


@dataclass(frozen=True)
class CropLeft:
    op = "crop_left"


@dataclass(frozen=True)
class CropRand:
    lo: float = 0.5
    hi: float = 1.0
    calibrate: bool = False
    op = "crop_rand"

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi <= 1:
            raise ValueError(f"need 0 <= lo <= hi <= 1, got lo={self.lo} hi={self.hi}")


@dataclass(frozen=True)
class Permute:
    fraction: float = 0.0
    op = "permute"

    def __post_init__(self):
        if not 0 <= self.fraction <= 1:
            raise ValueError(f"fraction must be in [0, 1], got {self.fraction}")


@dataclass(frozen=True)
class Discard:
    fraction: float = 0.0
    op = "discard"

    def __post_init__(self):
        if not 0 <= self.fraction <= 1:
            raise ValueError(f"fraction must be in [0, 1], got {self.fraction}")


CorruptionSpec = Union[NoOp, Warp, Shift, CropLeft, CropRand, Permute, Discard]

DATASET_LEVEL = (Permute, Discard)


def is_dataset_level(spec: CorruptionSpec) -> bool:
    return isinstance(spec, DATASET_LEVEL)


# -- JSON form ---------------------------------------------------------------


def spec_to_dict(spec: CorruptionSpec) -> dict:
    if isinstance(spec, NoOp):
        return {"op": "none"}
    if isinstance(spec, Warp):
        d = {"op": "warp", "sigma": spec.params.sigma}
        if (spec.params.grid_rows, spec.params.grid_cols) != (3, 3):
            d["grid_rows"] = spec.params.grid_rows
            d["grid_cols"] = spec.params.grid_cols
        return d
    if isinstance(spec, Shift):
        return {"op": "shift", "dx": spec.dx, "dy": spec.dy}
    if isinstance(spec, CropLeft):
        return {"op": "crop_left"}
    if isinstance(spec, CropRand):
        d = {"op": "crop_rand", "lo": spec.lo, "hi": spec.hi}
        if spec.calibrate:
            d["calibrate"] = True
        return d
    if isinstance(spec, (Permute, Discard)):
        return {"op": spec.op, "fraction": spec.fraction}
    raise TypeError(f"not a corruption spec: {spec!r}")


_ALLOWED = {
    "none": set(),
    "warp": {"sigma", "grid_rows", "grid_cols"},
    "shift": {"dx", "dy"},
    "crop_left": set(),
    "crop_rand": {"lo", "hi", "calibrate"},
    "permute": {"fraction"},
    "discard": {"fraction"},
}


def spec_from_dict(d: dict) -> CorruptionSpec:
    if not isinstance(d, dict) or "op" not in d:
        raise ValueError("corruption spec must be a JSON object with an 'op' field")
    op = d["op"]
    if op not in _ALLOWED:
        raise ValueError(f"unknown corruption op {op!r}")
    extra = set(d) - {"op"} - _ALLOWED[op]
    if extra:
        raise ValueError(f"unexpected fields for op {op!r}: {sorted(extra)}")
    if op == "none":
        return NoOp()
    if op == "warp":
        return Warp(
            WarpParams(
                sigma=float(d.get("sigma", 0.0)),
                grid_rows=int(d.get("grid_rows", 3)),
                grid_cols=int(d.get("grid_cols", 3)),
            )
        )
    if op == "shift":
        dx, dy = d.get("dx", 0), d.get("dy", 0)
        if int(dx) != dx or int(dy) != dy:
            raise ValueError("shift dx/dy must be integers")
        return Shift(int(dx), int(dy))
    if op == "crop_left":
        return CropLeft()
    if op == "crop_rand":
        return CropRand(float(d.get("lo", 0.5)), float(d.get("hi", 1.0)), bool(d.get("calibrate", False)))
    if op == "permute":
        return Permute(float(d.get("fraction", 0.0)))
    return Discard(float(d.get("fraction", 0.0)))


# -- per-mask operators -------------------------------------------------------


def crop_left(mask: Mask) -> Mask:
    """Clear ceil(area/2) foreground pixels, leftmost column first, top-down."""
    a = area(mask)
    if a == 0:
        return mask
    xs, ys = np.nonzero(mask.values.T)  # column-major order
    k = (a + 1) // 2
    out = mask.values.copy()
    out[ys[:k], xs[:k]] = 0
    return Mask(out)


def _expected_clipped(s: float, lo: float, hi: float) -> float:
    # E[min(s*u, 1)] for u ~ Uniform[lo, hi]
    if hi == lo:
        return min(s * lo, 1.0)
    a, b = s * lo, s * hi
    if b <= 1:
        return (a + b) / 2
    if a >= 1:
        return 1.0
    knee = 1.0 / s
    left = (knee - lo) * (a + 1) / 2
    right = hi - knee
    return (left + right) / (hi - lo)


def calibration_scale(lo: float, hi: float, target: float = 0.5) -> float:
    """Edge scale making the expected cleared bbox fraction equal ``target``.

    Edges are drawn as min(scale * u, 1) with u ~ Uniform[lo, hi]; rounding to
    whole pixels is ignored.
    """
    goal = math.sqrt(target)
    if hi == 0:
        raise ValueError("cannot calibrate a crop with hi = 0")
    f = lambda s: _expected_clipped(s, lo, hi) - goal  # noqa: E731
    upper = 1e6 / hi
    return brentq(f, 0.0, upper, xtol=1e-12)


def crop_rand(mask: Mask, lo: float, hi: float, seed: SeedKey, calibrate: bool = False) -> Mask:
    """Clear a random rectangle placed inside the mask's bounding box.

    Edge lengths are ``round(u * bbox_edge)`` with ``u ~ Uniform[lo, hi]``
    drawn independently for width and height; the top-left corner is uniform
    over all placements that keep the rectangle inside the box.
    """
    box = bounding_box(mask)
    if box is None:
        return mask
    rng = seed.generator()
    u = rng.uniform(lo, hi, size=2)
    if calibrate:
        u = np.minimum(u * calibration_scale(lo, hi), 1.0)
    rw = int(round_half_up(u[0] * box.width))
    rh = int(round_half_up(u[1] * box.height))
    x = box.x0 + int(rng.integers(0, box.width - rw + 1))
    y = box.y0 + int(rng.integers(0, box.height - rh + 1))
    if rw == 0 or rh == 0:
        return mask
    out = mask.values.copy()
    out[y : y + rh, x : x + rw] = 0
    return Mask(out)


def apply(spec: CorruptionSpec, mask: Mask, seed: SeedKey) -> Mask:
    """Corrupt a pristine reference mask. Deterministic in (spec, mask, seed)."""
    if isinstance(spec, NoOp):
        return mask
    if isinstance(spec, Warp):
        return warp_apply(mask, make_warp(spec.params, mask.width, mask.height, seed))
    if isinstance(spec, Shift):
        return translate(mask, spec.dx, spec.dy)
    if isinstance(spec, CropLeft):
        return crop_left(mask)
    if isinstance(spec, CropRand):
        return crop_rand(mask, spec.lo, spec.hi, seed, calibrate=spec.calibrate)
    if is_dataset_level(spec):
        raise CorruptionError(
            f"{spec.op!r} acts on the whole dataset; use build_dataset_plan instead"
        )
    raise TypeError(f"not a corruption spec: {spec!r}")


# -- dataset-level operators ----------------------------------------------------


@dataclass(frozen=True)
class DatasetPlan:
    sample_ids: tuple
    permutation_map: dict
    discarded: frozenset = frozenset()

    @property
    def retained(self) -> tuple:
        return tuple(i for i in self.sample_ids if i not in self.discarded)

    def label_source(self, sample_id) -> object:
        """Which sample's mask is served as the annotation for ``sample_id``."""
        return self.permutation_map.get(sample_id, sample_id)

    @property
    def permuted(self) -> tuple:
        return tuple(i for i in self.sample_ids if self.permutation_map.get(i, i) != i)

    @classmethod
    def identity(cls, sample_ids) -> "DatasetPlan":
        ids = tuple(sample_ids)
        return cls(ids, {i: i for i in ids}, frozenset())


def _subset_size(fraction: float, n: int) -> int:
    return int(round_half_up(fraction * n))


def build_dataset_plan(
    spec: CorruptionSpec, sample_ids, seed: Optional[SeedKey] = None
) -> DatasetPlan:
    """Resolve Permute/Discard into a fixed plan; any other spec gives identity.

    Permute(f) picks round(f*N) ids uniformly and joins them into a single
    random cycle, so every picked sample is paired with another's mask.
    """
    ids = tuple(sample_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    plan = DatasetPlan.identity(ids)
    if not is_dataset_level(spec):
        return plan
    if seed is None:
        seed = SeedKey(0, op_tag=OP_PLAN)
    rng = seed.generator()
    m = _subset_size(spec.fraction, len(ids))
    chosen = [ids[j] for j in rng.permutation(len(ids))[:m]]
    if isinstance(spec, Discard):
        return DatasetPlan(ids, plan.permutation_map, frozenset(chosen))
    if m < 2:
        if m == 1:
            log.warning("permute subset has a single sample; plan is identity")
        return plan
    # chosen is already in uniformly random order: map each to its successor
    mapping = dict(plan.permutation_map)
    for a, b in zip(chosen, chosen[1:] + chosen[:1]):
        mapping[a] = b
    return DatasetPlan(ids, mapping, frozenset())
