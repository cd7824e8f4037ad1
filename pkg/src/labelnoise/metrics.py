"""Pooled Dice, relative performance, and the Monte-Carlo bias estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corrupt import CorruptionSpec, apply, is_dataset_level
from .grid import Mask
from .seeding import OP_CORRUPT, SeedKey


class BaselineError(ValueError):
    """Relative performance requested against a zero clean baseline."""


@dataclass(frozen=True)
class OverlapCounts:
    intersection: int = 0
    pred_total: int = 0
    ref_total: int = 0

    def __post_init__(self):
        if min(self.intersection, self.pred_total, self.ref_total) < 0:
            raise ValueError("overlap counts must be non-negative")
        if self.intersection > min(self.pred_total, self.ref_total):
            raise ValueError("intersection exceeds a total")

    def __add__(self, other: "OverlapCounts") -> "OverlapCounts":
        return OverlapCounts(
            self.intersection + other.intersection,
            self.pred_total + other.pred_total,
            self.ref_total + other.ref_total,
        )


def overlap(pred: Mask, ref: Mask) -> OverlapCounts:
    if pred.shape != ref.shape:
        raise ValueError(f"prediction shape {pred.shape} != reference shape {ref.shape}")
    p, r = pred.values, ref.values
    return OverlapCounts(
        int(np.count_nonzero(p & r)), int(np.count_nonzero(p)), int(np.count_nonzero(r))
    )


def accumulate(counts: OverlapCounts, pred: Mask, ref: Mask) -> OverlapCounts:
    return counts + overlap(pred, ref)


def pooled_dice(counts: OverlapCounts) -> float:
    """2|P∩G| / (|P| + |G|) over everything accumulated; 1.0 if both empty."""
    denom = counts.pred_total + counts.ref_total
    if denom == 0:
        return 1.0
    return 2.0 * counts.intersection / denom


def dice(pred: Mask, ref: Mask) -> float:
    return pooled_dice(overlap(pred, ref))


def stacked_dice(preds: Iterable[Mask], refs: Iterable[Mask]) -> float:
    counts = OverlapCounts()
    for p, r in zip(preds, refs, strict=True):
        counts = accumulate(counts, p, r)
    return pooled_dice(counts)


@dataclass(frozen=True)
class RelativePerformance:
    ratio: float
    variance: float

    @property
    def percent_drop(self) -> float:
        return 100.0 * (1.0 - self.ratio)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


def _sample_var(x: np.ndarray) -> float:
    return float(np.var(x, ddof=1)) if x.size > 1 else 0.0


def relative_performance(
    dice_runs: Sequence[float], clean_runs: Sequence[float]
) -> RelativePerformance:
    """Mean corrupted Dice over mean clean Dice, with delta-method variance.

    Var(r) ~= Var(d) / c^2 + d^2 Var(c) / c^4, where d and c are the means of
    the corrupted and clean runs and the variances are sample variances of
    individual runs (ddof=1; zero for a single run).
    """
    d = np.asarray(dice_runs, dtype=np.float64)
    c = np.asarray(clean_runs, dtype=np.float64)
    if d.size == 0 or c.size == 0:
        raise ValueError("need at least one corrupted and one clean run")
    d_bar, c_bar = float(d.mean()), float(c.mean())
    if c_bar <= 0:
        raise BaselineError("clean baseline mean Dice is zero; relative performance undefined")
    var = _sample_var(d) / c_bar**2 + d_bar**2 * _sample_var(c) / c_bar**4
    return RelativePerformance(d_bar / c_bar, var)


@dataclass(frozen=True, eq=False)
class BiasReport:
    mean_mask: np.ndarray
    consensus_mask: Mask
    recovery_dice: float
    l1_bias: float
    draws: int

    def summary(self) -> dict:
        return {
            "draws": self.draws,
            "recovery_dice": self.recovery_dice,
            "l1_bias": self.l1_bias,
        }


def estimate_bias(
    spec: CorruptionSpec, mask: Mask, draws: int, base_seed: int
) -> BiasReport:
    """Average ``draws`` independent corruptions of ``mask``.

    Draw i uses ``SeedKey(base_seed, epoch=i, sample_id=0, op_tag=OP_CORRUPT)``,
    i.e. the same stream the trainer would use for sample 0 at epoch i. The
    consensus keeps pixels whose foreground frequency is >= 1/2.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    if is_dataset_level(spec):
        raise ValueError(f"bias estimation needs a per-mask corruption, got {spec.op!r}")
    total = np.zeros(mask.shape, dtype=np.int64)
    for i in range(draws):
        total += apply(spec, mask, SeedKey(base_seed, i, 0, OP_CORRUPT)).values
    freq = total / draws
    consensus = Mask((2 * total >= draws).astype(np.uint8))
    l1 = float(np.abs(freq - mask.values).mean())
    return BiasReport(freq, consensus, dice(consensus, mask), l1, draws)
