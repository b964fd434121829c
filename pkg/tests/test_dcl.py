import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fenceguide.dcl import (
    FEATURE_ANGLES, argmax_margin, connectivity_map, dcl, dcl_and_gradient, dcl_gradient,
    directional_features)
from fenceguide.gradcheck import dcl_gradcheck, numeric_dcl_gradient, relative_error

soft = st.integers(1, 10).flatmap(lambda h: st.integers(1, 10).flatmap(
    lambda w: arrays(np.float64, (h, w), elements=st.floats(0, 1))))


def brute_force_map(y):
    bank = [f.cells for f in directional_features()]
    h, w = y.shape
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            best = -np.inf
            for feat in bank:
                s = 0.0
                for i in range(5):
                    for j in range(5):
                        if not feat[i, j]:
                            continue
                        rr, cc = r + i - 2, c + j - 2
                        s += y[rr, cc] if 0 <= rr < h and 0 <= cc < w else 0.0
                best = max(best, s)
            out[r, c] = best
    return out


def test_feature_bank_shape():
    bank = directional_features()
    assert [f.angle_label for f in bank] == list(FEATURE_ANGLES)
    for f in bank:
        assert f.cells.shape == (5, 5) and f.cells.sum() == 5 and f.cells[2, 2] == 1
        # point symmetric about the centre
        np.testing.assert_array_equal(f.cells, f.cells[::-1, ::-1])
    assert len({f.cells.tobytes() for f in bank}) == 8


def test_feature_cells():
    bank = {f.angle_label: f.cells for f in directional_features()}
    assert bank[0.0][2].sum() == 5
    assert bank[90.0][:, 2].sum() == 5
    np.testing.assert_array_equal(bank[45.0], np.eye(5, dtype=np.uint8)[::-1])
    np.testing.assert_array_equal(bank[135.0], np.eye(5, dtype=np.uint8))
    expect = np.zeros((5, 5), np.uint8)
    for x, y in [(-2, -1), (-1, -1), (0, 0), (1, 1), (2, 1)]:
        expect[2 - y, 2 + x] = 1
    np.testing.assert_array_equal(bank[26.6], expect)
    np.testing.assert_array_equal(bank[63.4], expect.T[::-1, ::-1])


def test_map_examples():
    assert connectivity_map(np.zeros((6, 6))).max() == 0
    y = np.zeros((9, 9))
    y[4, 2:7] = 1
    assert connectivity_map(y)[4, 4] == 5
    one = np.zeros((5, 5))
    one[2, 2] = 1
    # every cell of the 5x5 window lies on some feature through it
    assert dcl(one) == pytest.approx(-1.0)
    np.testing.assert_array_equal(connectivity_map(one), np.ones((5, 5)))


def test_map_matches_brute_force():
    rng = np.random.default_rng(0)
    for shape in [(1, 1), (3, 7), (9, 9), (16, 12)]:
        y = rng.random(shape)
        np.testing.assert_array_equal(connectivity_map(y), brute_force_map(y))


def test_line_versus_scatter_totals():
    line = np.zeros((15, 15))
    line[7, 5:10] = 1
    scatter = np.zeros((15, 15))
    for r, c in [(2, 2), (2, 12), (7, 7), (12, 2), (12, 12)]:
        scatter[r, c] = 1
    # the map rewards connection at the mask's own pixels ...
    assert connectivity_map(line)[line == 1].sum() == 3 + 4 + 5 + 4 + 3
    assert connectivity_map(scatter)[scatter == 1].sum() == 5
    # ... but the whole-field mean also counts empty pixels near the mask:
    # a line reaches 45 of them, five isolated pixels reach 125
    np.testing.assert_array_equal(connectivity_map(line), brute_force_map(line))
    assert dcl(line) == pytest.approx(-75 / 225)
    assert dcl(scatter) == pytest.approx(-125 / 225)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        dcl(np.full((3, 3), 1.5))
    with pytest.raises(ValueError):
        dcl(np.zeros(4))


def test_gradient_finite_differences():
    rng = np.random.default_rng(3)
    y = rng.uniform(0.05, 0.95, size=(10, 10))
    assert argmax_margin(y).min() > 1e-3
    err = relative_error(dcl_gradient(y), numeric_dcl_gradient(y))
    assert err.max() < 1e-6


def test_gradient_of_empty_mask():
    g = dcl_gradient(np.zeros((6, 6)))
    assert np.all(g <= 0) and np.any(g < 0)


def test_gradient_total():
    rng = np.random.default_rng(4)
    g = dcl_gradient(rng.random((9, 9)))
    # each pixel spreads -1/N over the in-bounds cells of its chosen feature
    assert -5.0 <= g.sum() < 0.0
    np.testing.assert_allclose(dcl_gradient(np.array([[0.3]])), [[-1.0]])
    interior = np.zeros((9, 9))
    interior[2:7, 2:7] = rng.random((5, 5))
    assert dcl_gradient(interior)[4, 4] < 0


def test_gradcheck_helper():
    res = dcl_gradcheck(seed=1, size=8, count=3)
    assert res.tested == 192 and res.pass_fraction == 1.0


@settings(max_examples=40, deadline=None)
@given(soft)
def test_range(y):
    v = dcl(y)
    assert -5.0 <= v <= 0.0


@settings(max_examples=40, deadline=None)
@given(soft, st.integers(0, 10**6), st.floats(0, 1))
def test_monotone_in_mask(y, where, delta):
    bigger = y.copy()
    idx = np.unravel_index(where % y.size, y.shape)
    bigger[idx] = min(1.0, bigger[idx] + delta)
    assert dcl(bigger) <= dcl(y) + 1e-12


@settings(max_examples=30, deadline=None)
@given(soft)
def test_transpose_and_flip_symmetry(y):
    # the bank is closed under transpose and left/right mirroring
    assert dcl(y.T) == pytest.approx(dcl(y), abs=1e-12)
    assert dcl(y[:, ::-1]) == pytest.approx(dcl(y), abs=1e-12)
