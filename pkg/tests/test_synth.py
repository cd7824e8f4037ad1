import math

import numpy as np
import pytest

from labelnoise.grid import area
from labelnoise.synth import Ellipse, SynthConfig, generate, generate_sample, rasterize


@pytest.fixture(scope="module")
def thousand():
    return generate(SynthConfig(), 1000, 7)


def test_all_healthy():
    samples = generate(SynthConfig(healthy_fraction=1.0), 20, 0)
    assert all(area(s.mask) == 0 and not s.diseased for s in samples)


def test_all_diseased():
    samples = generate(SynthConfig(healthy_fraction=0.0), 20, 0)
    assert all(area(s.mask) > 0 for s in samples)


def test_deterministic():
    a = generate(SynthConfig(), 5, 3)
    b = generate(SynthConfig(), 5, 3)
    for x, y in zip(a, b):
        assert x.image.values.tobytes() == y.image.values.tobytes()
        assert x.mask == y.mask


def test_sample_independent_of_n():
    a = generate(SynthConfig(), 8, 3)[5]
    b = generate_sample(SynthConfig(), 5, 3)
    assert a.image.values.tobytes() == b.image.values.tobytes()


def test_shapes():
    cfg = SynthConfig(width=40, height=30, channels=2, lesion_offsets=(1, 1), axis_max=12)
    s = generate_sample(cfg, 0, 0)
    assert s.image.values.shape == (2, 30, 40)
    assert s.mask.shape == (30, 40)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(axis_min=0),
        dict(axis_max=40),
        dict(texture_std=-1),
        dict(healthy_fraction=1.5),
        dict(lesion_offsets=(1.0,)),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)


def test_config_round_trip():
    cfg = SynthConfig(texture_std=0.4)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"bogus": 1})


def test_mask_is_pixel_center_rasterization(thousand):
    for s in thousand[:200]:
        if s.lesion is None:
            continue
        e = s.lesion
        c, sn = math.cos(e.theta), math.sin(e.theta)
        for y in range(s.mask.height):
            for x in range(s.mask.width):
                u = (c * (x - e.cx) + sn * (y - e.cy)) / e.a
                v = (-sn * (x - e.cx) + c * (y - e.cy)) / e.b
                assert s.mask.values[y, x] == (u * u + v * v <= 1.0)


def test_lesion_fully_contained(thousand):
    for s in thousand:
        if s.lesion is None:
            continue
        hx, hy = s.lesion.half_extent()
        assert s.lesion.cx - hx >= -0.5 - 1e-9
        assert s.lesion.cx + hx <= 63.5 + 1e-9
        assert s.lesion.cy - hy >= -0.5 - 1e-9
        assert s.lesion.cy + hy <= 63.5 + 1e-9


def test_diseased_areas_in_analytic_range(thousand):
    lo, hi = math.pi * 5**2 * 0.8, math.pi * 14**2 * 1.2
    areas = [area(s.mask) for s in thousand if s.diseased]
    assert len(areas) > 600
    assert min(areas) >= lo and max(areas) <= hi
    # rasterised area tracks the analytic ellipse area
    for s in thousand[:100]:
        if s.diseased:
            exact = math.pi * s.lesion.a * s.lesion.b
            assert abs(area(s.mask) - exact) <= 2 * math.pi * max(s.lesion.a, s.lesion.b) + 4


def test_healthy_fraction(thousand):
    healthy = sum(not s.diseased for s in thousand)
    p = SynthConfig().healthy_fraction
    assert abs(healthy / 1000 - p) < 4 * math.sqrt(p * (1 - p) / 1000)


def test_lesion_contrast_matches_offsets(thousand):
    cfg = SynthConfig()
    inside = [[] for _ in range(cfg.channels)]
    outside = [[] for _ in range(cfg.channels)]
    for s in thousand:
        if not s.diseased:
            continue
        m = s.mask.values.astype(bool)
        for c in range(cfg.channels):
            # per-image means, so samples are independent
            inside[c].append(s.image.values[c][m].mean())
            outside[c].append(s.image.values[c][~m].mean())
    for c in range(cfg.channels):
        gaps = np.array(inside[c]) - np.array(outside[c])
        se = gaps.std(ddof=1) / math.sqrt(len(gaps))
        assert abs(gaps.mean() - cfg.lesion_offsets[c]) < 3 * se + 1e-3


def test_rasterize_axis_aligned():
    m = rasterize(Ellipse(5, 5, 3, 1, 0.0), 11, 11)
    assert m.values[5].sum() == 7
    assert m.values[:, 5].sum() == 3


def test_rejects_zero_samples():
    with pytest.raises(ValueError):
        generate(SynthConfig(), 0, 0)
