import numpy as np
import pytest

from octupole import make_pattern, minima_metrics
from octupole.errors import PatternMismatchError
from octupole.minima import classify, pair_distances


def test_classification():
    assert make_pattern([[0, 0]]).classification == "single"
    assert make_pattern([[0, 0], [1, 0]]).classification == "line"
    assert make_pattern([[-1, 0], [0, 0], [1, 0]]).classification == "line"
    assert make_pattern([[-1, 0], [0, 1], [1, 0]]).classification == "triangle"
    # within the absolute tolerance a flat triangle is a line
    assert classify(np.array([[-1.0, 0], [0, 0.01], [1, 0]]), abs_tol=0.02) == "line"


def test_barycentre_and_mean_distance():
    p = make_pattern([[1, 0], [-1, 0], [0, 3]])
    np.testing.assert_allclose(p.barycenter, [0, 1])
    expect = (2 * np.hypot(1, 1) + 2) / 3
    assert p.d_b == pytest.approx(expect)


def test_pattern_size_limits():
    with pytest.raises(ValueError):
        make_pattern(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        make_pattern(np.zeros((0, 2)))


def test_metrics_use_best_pairing():
    a = make_pattern([[0, 0], [1, 0], [0, 1]])
    b = make_pattern([[0, 1], [0, 0], [1, 0]])
    assert minima_metrics(a, b) == (0.0, 0.0)
    c = make_pattern([[0.1, 1], [0.1, 0], [1.1, 0]])
    d_bar, d_bar_s = minima_metrics(a, c)
    assert d_bar == pytest.approx(0.1)
    assert d_bar_s == pytest.approx(0.1 / c.d_b)
    # a common shift disappears in the centred comparison
    assert minima_metrics(a, c, centered=True)[0] == pytest.approx(0.0, abs=1e-15)


def test_metrics_reject_unequal_counts():
    with pytest.raises(PatternMismatchError):
        minima_metrics(make_pattern([[0, 0]]), make_pattern([[0, 0], [1, 1]]))


def test_pair_distances_subset():
    d = pair_distances([[0, 0]], [[5, 5], [0, 0.5], [3, 3]])
    np.testing.assert_allclose(d, [0.5])


def test_shape_descriptors():
    eq = make_pattern([[1, 0], [np.cos(2.0944), np.sin(2.0944)], [np.cos(4.18879), np.sin(4.18879)]])
    assert eq.side_balance() == pytest.approx(1.0, abs=1e-4)
    assert eq.shape_ratio() == pytest.approx(np.sqrt(3) / 2, abs=1e-4)
    flat = make_pattern([[-1, 0], [0, 0], [1, 0]])
    assert flat.shape_ratio() == 0.0


def test_snapped_view():
    p = make_pattern([[0.1, 0.2]], snapped=[[0.0, 0.0]])
    np.testing.assert_allclose(p.use_snapped().points, [[0.0, 0.0]])
    assert make_pattern([[1, 1]]).use_snapped().points[0, 0] == 1
