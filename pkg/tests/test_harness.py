import csv
import io
import json
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from labelnoise.corrupt import CropLeft, Discard, NoOp, Shift, Warp
from labelnoise.harness import (
    BASELINE,
    CSV_COLUMNS,
    Cell,
    ExperimentConfig,
    ExperimentError,
    ResultTable,
    Row,
    default_grid,
    emit,
    permute_vs_discard,
    run,
)
from labelnoise.learner import TrainConfig
from labelnoise.synth import SynthConfig
from labelnoise.warp import WarpParams

SMALL_SYNTH = SynthConfig(width=24, height=24, axis_min=3, axis_max=7)


def small_config(grid, **kw):
    kw.setdefault("train", TrainConfig(epochs=4, batch_size=8))
    kw.setdefault("n_samples", 40)
    kw.setdefault("repetitions", 2)
    return ExperimentConfig(synth=SMALL_SYNTH, grid=tuple(grid), **kw)


def NoOpCell():
    return Cell(BASELINE, "0", NoOp())


def warp_grid():
    return [Cell("warp", f"{s:g}", Warp(WarpParams(float(s)))) for s in (0, 2, 5, 10, 20)]


def svg_vertices(path, gid):
    root = ET.parse(path).getroot()
    ns = {"svg": "http://www.w3.org/2000/svg"}
    groups = [g for g in root.iter("{http://www.w3.org/2000/svg}g") if g.get("id") == gid]
    assert len(groups) == 1
    paths = groups[0].findall("svg:path", ns)
    assert len(paths) == 1
    return re.findall(r"[ML]\s*([-\d.]+)\s+([-\d.]+)", paths[0].get("d"))


class TestConfig:
    def test_default_grid(self):
        grid = default_grid()
        fams = [c.family for c in grid]
        assert fams.count("warp") == 5 and fams.count("shift") == 5 and fams.count("crop") == 3
        assert fams.count("permute") == 4 and fams.count("discard") == 4
        assert grid[0] == Cell(BASELINE, "0", NoOp())

    def test_split_sizes(self):
        assert ExperimentConfig().split_sizes() == (301, 43, 86)

    @pytest.mark.parametrize(
        "kw",
        [dict(repetitions=0), dict(split=(0.5, 0.2, 0.2)), dict(split=(0.9, 0.1)), dict(n_samples=2)],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ExperimentConfig(**kw)

    def test_discard_everything_is_config_error(self):
        with pytest.raises(ValueError, match="discard"):
            small_config([Cell("discard", "1", Discard(1.0))])

    def test_duplicate_cells(self):
        with pytest.raises(ValueError):
            ExperimentConfig(grid=(Cell("a", "1", NoOp()), Cell("a", "1", CropLeft())))

    def test_json_round_trip(self):
        cfg = ExperimentConfig(experiment_seed=9, repetitions=2)
        back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"reps": 3})

    def test_baseline_added(self):
        cells = small_config([Cell("shift", "2", Shift(2, 0))]).cells()
        assert cells[0].family == BASELINE and len(cells) == 2


@pytest.fixture(scope="module")
def warp_table():
    return run(small_config(warp_grid()))


class TestRun:
    def test_noop_only(self):
        t = run(small_config([Cell(BASELINE, "0", NoOp())], repetitions=3))
        assert len(t.rows) == 3
        assert all(r.relative == 1.0 for r in t.rows)
        d = np.array([r.dice for r in t.rows])
        c = d.mean()
        assert t.rows[0].variance == pytest.approx(2 * d.var(ddof=1) / c**2)

    def test_rows_per_cell_and_rep(self, warp_table):
        assert len(warp_table.rows) == 6 * 2
        assert warp_table.families() == [BASELINE, "warp"]
        assert warp_table.params("warp") == ["0", "2", "5", "10", "20"]

    def test_identity_cells_match_baseline(self, warp_table):
        for rep in range(2):
            base = warp_table.cell_rows(BASELINE, "0")[rep].dice
            assert warp_table.cell_rows("warp", "0")[rep].dice == base

    def test_relative_against_baseline(self, warp_table):
        clean = np.mean([r.dice for r in warp_table.cell_rows(BASELINE, "0")])
        for r in warp_table.rows:
            cell = warp_table.cell_rows(r.experiment, r.param)
            assert r.relative == pytest.approx(np.mean([x.dice for x in cell]) / clean)

    def test_one_test_digest_per_repetition(self, warp_table):
        assert len(warp_table.test_digests) == 2
        assert warp_table.test_digests[0] != warp_table.test_digests[1]

    def test_deterministic(self, warp_table):
        again = run(small_config(warp_grid()))
        assert again.to_csv() == warp_table.to_csv()

    def test_seed_matters(self, warp_table):
        other = run(small_config(warp_grid(), experiment_seed=1))
        assert other.to_csv() != warp_table.to_csv()

    def test_large_shift_hurts(self):
        t = run(small_config([Cell("shift", "30", Shift(30, 0))], train=TrainConfig(epochs=10, batch_size=8)))
        assert t.mean_dice("shift", "30") < t.mean_dice(BASELINE, "0")

    def test_cell_failure_names_cell(self, monkeypatch):
        import labelnoise.harness as h

        def boom(*a, **k):
            raise ValueError("kaput")

        monkeypatch.setattr(h, "train", boom)
        with pytest.raises(ExperimentError, match=r"clean=0 rep 0.*kaput"):
            run(small_config([NoOpCell()]))


class TestPermuteVsDiscard:
    def test_pairs(self):
        t = permute_vs_discard(small_config([NoOpCell()], repetitions=1), [0.0, 0.5])
        assert t.families() == [BASELINE, "permute", "discard"]
        assert t.params("permute") == ["0", "0.5"] == t.params("discard")
        base = t.mean_dice(BASELINE, "0")
        assert t.mean_dice("permute", "0") == base == t.mean_dice("discard", "0")

    def test_discard_all(self):
        with pytest.raises(ValueError):
            permute_vs_discard(small_config([NoOpCell()]), [1.0])

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            permute_vs_discard(small_config([NoOpCell()]), [1.5])


class TestEmit:
    def test_one_row(self, tmp_path):
        t = ResultTable([Row("shift", "2", 0, 0.5, 0.9, 0.01)])
        emit(t, tmp_path)
        lines = (tmp_path / "results.csv").read_text().splitlines()
        assert lines == [",".join(CSV_COLUMNS), "shift,2,0,0.5,0.9,0.01"]
        assert (tmp_path / "shift.svg").exists()

    def test_empty_table(self, tmp_path):
        with pytest.raises(ValueError):
            emit(ResultTable([]), tmp_path)

    def test_files_and_bytes(self, warp_table, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        emit(warp_table, a)
        emit(warp_table, b)
        names = sorted(p.name for p in a.iterdir())
        assert names == ["results.csv", "results.json", "warp.svg"]
        for n in names:
            assert (a / n).read_bytes() == (b / n).read_bytes()

    def test_csv_parses_back(self, warp_table, tmp_path):
        emit(warp_table, tmp_path)
        rows = list(csv.DictReader(io.StringIO((tmp_path / "results.csv").read_text())))
        assert len(rows) == len(warp_table.rows)
        assert [float(r["dice"]) for r in rows] == [r.dice for r in warp_table.rows]

    def test_json_echoes_config(self, warp_table, tmp_path):
        emit(warp_table, tmp_path)
        doc = json.loads((tmp_path / "results.json").read_text())
        assert ExperimentConfig.from_dict(doc["config"]) == warp_table.config
        assert len(doc["rows"]) == len(warp_table.rows)

    def test_warp_curve_has_five_vertices(self, warp_table, tmp_path):
        emit(warp_table, tmp_path)
        svg = tmp_path / "warp.svg"
        assert len(svg_vertices(svg, "curve-warp")) == 5
        assert svg.read_text().count('id="curve-') == 1

    def test_categorical_family(self, tmp_path):
        rows = [Row("crop", p, 0, 0.8, 0.9, 0.0) for p in ("left", "rand_0.5", "rand_0")]
        emit(ResultTable(rows), tmp_path)
        assert len(svg_vertices(tmp_path / "crop.svg", "curve-crop")) == 3

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit(ResultTable([Row("a", "1", 0, 0.5, 1.0, 0.0)]), blocker / "sub")
