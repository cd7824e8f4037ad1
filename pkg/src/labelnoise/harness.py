"""Corruption sweeps: train per grid cell and repetition, score on a clean test split.

Each repetition draws a fresh phantom dataset; every cell of that repetition
trains on the same data with the same training seed, so cells differ only in
the corruption applied to the training masks. The test split is never touched
by a corruption, which :func:`run` checks by hashing it after every cell.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corrupt import (
    CorruptionSpec,
    CropLeft,
    CropRand,
    Discard,
    NoOp,
    Permute,
    Shift,
    Warp,
    _subset_size,
    spec_from_dict,
    spec_to_dict,
)
from .learner import TrainConfig, patch_features, predict, train
from .metrics import relative_performance, stacked_dice
from .seeding import OP_DATASET, OP_TRAIN, derive_seed
from .synth import SynthConfig, generate, stack_images
from .warp import WarpParams

log = logging.getLogger(__name__)

CSV_COLUMNS = ("experiment", "param", "rep", "dice", "relative", "variance")
BASELINE = "clean"


class ExperimentError(RuntimeError):
    """A grid cell failed; the message names the cell and repetition."""


def _label(x: float) -> str:
    return f"{x:g}"


@dataclass(frozen=True)
class Cell:
    family: str
    param: str
    spec: CorruptionSpec

    def to_dict(self) -> dict:
        return {"family": self.family, "param": self.param, "spec": spec_to_dict(self.spec)}

    @classmethod
    def from_dict(cls, d: dict) -> "Cell":
        extra = set(d) - {"family", "param", "spec"}
        if extra:
            raise ValueError(f"unknown grid cell fields: {sorted(extra)}")
        return cls(str(d["family"]), str(d["param"]), spec_from_dict(d["spec"]))


def baseline_cell() -> Cell:
    return Cell(BASELINE, "0", NoOp())


def default_grid() -> tuple:
    cells = [baseline_cell()]
    cells += [Cell("warp", _label(s), Warp(WarpParams(float(s)))) for s in (0, 2, 5, 10, 20)]
    cells += [Cell("shift", _label(n), Shift(n, 0)) for n in (0, 2, 5, 10, 30)]
    cells += [
        Cell("crop", "left", CropLeft()),
        Cell("crop", "rand_0.5", CropRand(0.5, 1.0)),
        Cell("crop", "rand_0", CropRand(0.0, 1.0)),
    ]
    fractions = (0.0, 0.1, 0.25, 0.5)
    cells += [Cell("permute", _label(f), Permute(f)) for f in fractions]
    cells += [Cell("discard", _label(f), Discard(f)) for f in fractions]
    return tuple(cells)


def _is_identity(spec: CorruptionSpec) -> bool:
    """Specs whose training run is bit-identical to the clean baseline."""
    if isinstance(spec, NoOp):
        return True
    if isinstance(spec, Warp):
        return spec.sigma == 0
    if isinstance(spec, Shift):
        return spec.dx == 0 and spec.dy == 0
    if isinstance(spec, (Permute, Discard)):
        return spec.fraction == 0
    return False


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: tuple = field(default_factory=default_grid)
    repetitions: int = 3
    n_samples: int = 430
    split: tuple = (0.7, 0.1, 0.2)
    experiment_seed: int = 0
    output_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0):
            raise ValueError(f"split must be three non-negative fractions summing to 1, got {self.split}")
        keys = [(c.family, c.param) for c in self.grid]
        if len(set(keys)) != len(keys):
            raise ValueError("grid cells must have distinct (family, param) pairs")
        n_train, _, n_test = self.split_sizes()
        if n_train < 1 or n_test < 1:
            raise ValueError(f"{self.n_samples} samples leave an empty train or test split")
        for c in self.grid:
            if isinstance(c.spec, Discard) and _subset_size(c.spec.fraction, n_train) >= n_train:
                raise ValueError(f"cell {c.family}={c.param} discards the whole training set")

    def split_sizes(self) -> tuple[int, int, int]:
        n_train = int(round(self.split[0] * self.n_samples))
        n_val = int(round(self.split[1] * self.n_samples))
        return n_train, n_val, self.n_samples - n_train - n_val

    def cells(self) -> tuple:
        """Grid cells, with the clean baseline first (added if absent)."""
        base = [c for c in self.grid if c.family == BASELINE]
        if not base:
            base = [baseline_cell()]
        if len(base) != 1 or not isinstance(base[0].spec, NoOp):
            raise ValueError(f"the '{BASELINE}' family must be a single NoOp cell")
        return tuple(base) + tuple(c for c in self.grid if c.family != BASELINE)

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "train": self.train.to_dict(),
            "grid": [c.to_dict() for c in self.grid],
            "repetitions": self.repetitions,
            "n_samples": self.n_samples,
            "split": list(self.split),
            "experiment_seed": self.experiment_seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"synth", "train", "grid", "repetitions", "n_samples", "split", "experiment_seed", "output_dir"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment config fields: {sorted(extra)}")
        kw = {k: d[k] for k in ("repetitions", "n_samples", "experiment_seed", "output_dir") if k in d}
        if "split" in d:
            kw["split"] = tuple(d["split"])
        if "synth" in d:
            kw["synth"] = SynthConfig.from_dict(d["synth"])
        if "train" in d:
            kw["train"] = TrainConfig.from_dict(d["train"])
        if "grid" in d:
            kw["grid"] = tuple(Cell.from_dict(c) for c in d["grid"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class Row:
    experiment: str
    param: str
    rep: int
    dice: float
    relative: float
    variance: float


@dataclass
class ResultTable:
    rows: list
    config: Optional[ExperimentConfig] = None
    test_digests: list = field(default_factory=list)

    def families(self) -> list:
        seen = []
        for r in self.rows:
            if r.experiment not in seen:
                seen.append(r.experiment)
        return seen

    def params(self, family: str) -> list:
        seen = []
        for r in self.rows:
            if r.experiment == family and r.param not in seen:
                seen.append(r.param)
        return seen

    def cell_rows(self, family: str, param: str) -> list:
        return [r for r in self.rows if r.experiment == family and r.param == param]

    def mean_dice(self, family: str, param: str) -> float:
        rows = self.cell_rows(family, param)
        if not rows:
            raise KeyError(f"no rows for {family}={param}")
        return float(np.mean([r.dice for r in rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.experiment, r.param, r.rep, repr(r.dice), repr(r.relative), repr(r.variance)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "config": None if self.config is None else self.config.to_dict(),
            "test_digests": list(self.test_digests),
            "rows": [dict(zip(CSV_COLUMNS, (r.experiment, r.param, r.rep, r.dice, r.relative, r.variance))) for r in self.rows],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _digest(samples) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(str(s.id).encode())
        h.update(np.ascontiguousarray(s.image.values).tobytes())
        h.update(s.mask.values.tobytes())
    return h.hexdigest()


def _evaluate(model, samples) -> float:
    return stacked_dice([predict(model, s.image) for s in samples], [s.mask for s in samples])


def _run_repetition(config: ExperimentConfig, cells: Sequence[Cell], rep: int) -> tuple[dict, str]:
    data = generate(config.synth, config.n_samples, derive_seed(config.experiment_seed, rep, OP_DATASET))
    n_train, n_val, _ = config.split_sizes()
    train_set = data[:n_train]
    val_set = data[n_train : n_train + n_val]
    test_set = data[n_train + n_val :]
    digest = _digest(test_set)
    feats = patch_features(stack_images(train_set), config.train.patch_size, np.float32)
    tcfg = replace(config.train, seed=derive_seed(config.experiment_seed, rep, OP_TRAIN))

    scores = {}
    baseline = None
    for cell in cells:
        if baseline is not None and _is_identity(cell.spec):
            scores[cell] = baseline
            continue
        try:
            result = train(train_set, cell.spec, tcfg, features=feats)
            score = _evaluate(result.model, test_set)
        except Exception as e:
            raise ExperimentError(f"cell {cell.family}={cell.param} rep {rep} failed: {e}") from e
        if _digest(test_set) != digest:
            raise ExperimentError(f"cell {cell.family}={cell.param} rep {rep} modified the test split")
        if val_set:
            log.info("%s=%s rep %d: val %.4f test %.4f", cell.family, cell.param, rep, _evaluate(result.model, val_set), score)
        scores[cell] = score
        if cell.family == BASELINE:
            baseline = score
    return scores, digest


def run(config: ExperimentConfig) -> ResultTable:
    """Train and score every grid cell for every repetition."""
    cells = config.cells()
    per_rep = []
    digests = []
    for rep in range(config.repetitions):
        scores, digest = _run_repetition(config, cells, rep)
        per_rep.append(scores)
        digests.append(digest)

    clean = [s[cells[0]] for s in per_rep]
    rows = []
    for cell in cells:
        runs = [s[cell] for s in per_rep]
        rel = relative_performance(runs, clean)
        for rep, d in enumerate(runs):
            rows.append(Row(cell.family, cell.param, rep, float(d), rel.ratio, rel.variance))
    return ResultTable(rows, config, digests)


def permute_vs_discard(config: ExperimentConfig, fractions: Iterable[float]) -> ResultTable:
    """Paired Permute/Discard cells per fraction, sharing data and seeds."""
    grid = [baseline_cell()]
    for f in fractions:
        f = float(f)
        if not 0 <= f <= 1:
            raise ValueError(f"fraction must be in [0, 1], got {f}")
        grid += [Cell("permute", _label(f), Permute(f)), Cell("discard", _label(f), Discard(f))]
    return run(replace(config, grid=tuple(grid)))


# -- output -------------------------------------------------------------------


def _numeric(labels: Sequence[str]):
    try:
        return [float(x) for x in labels]
    except ValueError:
        return None


def _plot_family(table: ResultTable, family: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    params = table.params(family)
    ratio = np.array([table.cell_rows(family, p)[0].relative for p in params])
    std = np.sqrt([table.cell_rows(family, p)[0].variance for p in params])
    xs = _numeric(params)
    categorical = xs is None
    if categorical:
        xs = list(range(len(params)))

    with plt.rc_context({"svg.hashsalt": "labelnoise", "path.simplify": False, "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.fill_between(xs, ratio - std, ratio + std, alpha=0.25, linewidth=0, gid=f"band-{family}")
        ax.plot(xs, ratio, marker="o", gid=f"curve-{family}")
        if categorical:
            ax.set_xticks(xs)
            ax.set_xticklabels(params)
        ax.set_xlabel(family)
        ax.set_ylabel("relative Dice")
        ax.set_title(family)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit(table: ResultTable, directory) -> list:
    """Write results.csv, results.json and one SVG per corruption family."""
    if not table.rows:
        raise ValueError("result table is empty")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in (("results.csv", table.to_csv()), ("results.json", table.to_json())):
        p = out / name
        p.write_text(text, encoding="utf-8", newline="")
        written.append(p)
    families = [f for f in table.families() if f != BASELINE] or table.families()
    for family in families:
        p = out / f"{family}.svg"
        _plot_family(table, family, p)
        written.append(p)
    return written
