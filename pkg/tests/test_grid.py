import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from labelnoise.grid import (
    BoundingBox,
    DeformationField,
    Mask,
    MultiChannelImage,
    area,
    bounding_box,
    round_half_up,
    translate,
    warp_apply,
)


def block(w, h, x0, y0, bw, bh):
    v = np.zeros((h, w), dtype=np.uint8)
    v[y0 : y0 + bh, x0 : x0 + bw] = 1
    return Mask(v)


masks = st.integers(1, 12).flatmap(
    lambda h: st.integers(1, 12).flatmap(
        lambda w: arrays(np.uint8, (h, w), elements=st.integers(0, 1)).map(Mask)
    )
)


def brute_translate(m, dx, dy):
    # enumeration oracle
    out = np.zeros(m.shape, dtype=np.uint8)
    for y in range(m.height):
        for x in range(m.width):
            if m.values[y, x]:
                nx, ny = x + dx, y + dy
                if 0 <= nx < m.width and 0 <= ny < m.height:
                    out[ny, nx] = 1
    return Mask(out)


class TestMask:
    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            Mask(np.array([[0, 2]]))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            Mask(np.zeros(5))

    def test_values_are_read_only(self):
        m = Mask.zeros(3, 2)
        with pytest.raises(ValueError):
            m.values[0, 0] = 1

    def test_accepts_bool(self):
        m = Mask(np.eye(3, dtype=bool))
        assert m.values.dtype == np.uint8
        assert area(m) == 3

    def test_dimensions(self):
        m = Mask.zeros(7, 4)
        assert (m.width, m.height) == (7, 4)
        assert m.values.size == 28


def test_image_rejects_nonfinite():
    with pytest.raises(ValueError):
        MultiChannelImage(np.array([[[np.nan]]]))


def test_image_2d_becomes_single_channel():
    img = MultiChannelImage(np.ones((3, 4)))
    assert (img.channels, img.height, img.width) == (1, 3, 4)


def test_round_half_up():
    assert list(round_half_up([0.5, 1.5, -0.5, 2.49])) == [1, 2, 0, 2]


class TestArea:
    def test_empty(self):
        assert area(Mask.zeros(8, 8)) == 0

    def test_full(self):
        assert area(Mask(np.ones((8, 8), dtype=np.uint8))) == 64

    def test_rectangle(self):
        m = block(10, 10, 2, 3, 4, 3)
        expected = sum(int(m.values[y, x]) for y in range(10) for x in range(10))
        assert expected == 12
        assert area(m) == 12


class TestBoundingBox:
    def test_single_pixel(self):
        v = np.zeros((8, 8), dtype=np.uint8)
        v[5, 3] = 1
        assert bounding_box(Mask(v)) == BoundingBox(3, 5, 4, 6)

    def test_empty(self):
        assert bounding_box(Mask.zeros(4, 4)) is None

    def test_rectangle(self):
        # rows 2..5, cols 1..3 inclusive
        m = block(8, 8, 1, 2, 3, 4)
        ys, xs = np.nonzero(m.values)
        oracle = (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
        assert oracle == (1, 2, 4, 6)
        assert bounding_box(m) == oracle

    @given(masks)
    def test_matches_enumeration(self, m):
        pts = [(x, y) for y in range(m.height) for x in range(m.width) if m.values[y, x]]
        box = bounding_box(m)
        if not pts:
            assert box is None
            return
        xs, ys = zip(*pts)
        assert box == (min(xs), min(ys), max(xs) + 1, max(ys) + 1)


class TestTranslate:
    @given(masks)
    def test_identity(self, m):
        assert translate(m, 0, 0) == m

    def test_off_canvas(self):
        v = np.zeros((4, 4), dtype=np.uint8)
        v[0, 0] = 1
        assert area(translate(Mask(v), -1, 0)) == 0

    def test_block(self):
        m = block(10, 10, 2, 2, 3, 3)
        assert translate(m, 5, 0) == block(10, 10, 7, 2, 3, 3)
        assert translate(m, 5, 0) == brute_translate(m, 5, 0)

    def test_shift_larger_than_canvas(self):
        m = block(5, 5, 0, 0, 5, 5)
        assert area(translate(m, 9, -9)) == 0

    @given(masks, st.integers(-14, 14), st.integers(-14, 14))
    def test_matches_oracle(self, m, dx, dy):
        assert translate(m, dx, dy) == brute_translate(m, dx, dy)

    @given(masks, st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3))
    def test_additive_without_clipping(self, m, a, b, c, d):
        mid = translate(m, a, b)
        if area(mid) != area(m):
            return
        assert translate(mid, c, d) == translate(m, a + c, b + d)

    @given(masks, st.integers(-4, 4), st.integers(-4, 4))
    def test_bbox_offsets(self, m, dx, dy):
        moved = translate(m, dx, dy)
        if area(moved) != area(m) or area(m) == 0:
            return
        x0, y0, x1, y1 = bounding_box(m)
        assert bounding_box(moved) == (x0 + dx, y0 + dy, x1 + dx, y1 + dy)


class TestWarpApply:
    @given(masks)
    def test_zero_field_identity(self, m):
        assert warp_apply(m, DeformationField.zeros(m.width, m.height)) == m

    @given(masks, st.integers(-6, 6))
    def test_constant_field_is_translation(self, m, k):
        field = DeformationField(np.full(m.shape, float(k)), np.zeros(m.shape))
        assert warp_apply(m, field) == translate(m, k, 0)

    def test_constant_vertical_field(self):
        m = block(9, 9, 2, 2, 3, 3)
        field = DeformationField(np.zeros(m.shape), np.full(m.shape, -2.0))
        assert warp_apply(m, field) == translate(m, 0, -2)

    def test_all_sources_out_of_bounds(self):
        m = Mask(np.ones((6, 6), dtype=np.uint8))
        field = DeformationField(np.full(m.shape, 100.0), np.zeros(m.shape))
        assert area(warp_apply(m, field)) == 0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            warp_apply(Mask.zeros(4, 4), DeformationField.zeros(5, 4))

    def test_nearest_neighbour_rounding(self):
        v = np.zeros((1, 5), dtype=np.uint8)
        v[0, 2] = 1
        m = Mask(v)
        # source x = p - 0.4 rounds back to p; p - 0.5 rounds half up to p
        assert warp_apply(m, DeformationField(np.full((1, 5), 0.4), np.zeros((1, 5)))) == m
        assert warp_apply(m, DeformationField(np.full((1, 5), 0.5), np.zeros((1, 5)))) == m
        moved = warp_apply(m, DeformationField(np.full((1, 5), 0.6), np.zeros((1, 5))))
        assert moved == translate(m, 1, 0)

    @settings(max_examples=60)
    @given(masks, st.integers(0, 2**32 - 1))
    def test_output_binary_and_bounded(self, m, seed):
        rng = np.random.default_rng(seed)
        field = DeformationField(rng.normal(0, 3, m.shape), rng.normal(0, 3, m.shape))
        out = warp_apply(m, field)
        assert set(np.unique(out.values)) <= {0, 1}
        assert area(out) <= m.width * m.height
        assert out.shape == m.shape
