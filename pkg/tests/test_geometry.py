import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from transmission_lab.errors import InvalidInputError
from transmission_lab.geometry import convex_hull_2d, min_diameter

clouds = arrays(np.float64, st.tuples(st.integers(3, 40), st.just(2)),
                elements=st.floats(-5, 5))


def brute_width(P, n=20000):
    # independent route: dense direction sweep
    t = np.linspace(0, np.pi, n, endpoint=False)
    proj = P @ np.stack([np.cos(t), np.sin(t)])
    return float((proj.max(0) - proj.min(0)).min())


def test_collinear_is_zero():
    P = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [-3.0, -3.0]])
    assert min_diameter(P) == pytest.approx(0.0, abs=1e-12)


def test_unit_square():
    P = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5]], dtype=float)
    assert min_diameter(P) == pytest.approx(1.0)


def test_circle():
    t = np.linspace(0, 2 * np.pi, 4000, endpoint=False)
    assert min_diameter(np.column_stack([np.cos(t), np.sin(t)])) == pytest.approx(2.0, abs=1e-3)


def test_single_point_and_empty():
    assert min_diameter(np.array([[0.3, 0.1]])) == 0.0
    with pytest.raises(InvalidInputError):
        min_diameter(np.zeros((0, 2)))


def test_hull_drops_interior_points():
    P = np.array([[0, 0], [2, 0], [2, 2], [0, 2], [1, 1], [1, 0]], dtype=float)
    assert len(convex_hull_2d(P)) == 4


def test_three_dimensional_box():
    rng = np.random.default_rng(0)
    P = rng.uniform(0, 1, (2000, 3)) * np.array([3.0, 2.0, 0.5])
    w = min_diameter(P)
    assert 0.45 <= w <= 0.5 + 1e-9


@settings(max_examples=60, deadline=None)
@given(clouds)
def test_matches_direction_sweep(P):
    w = min_diameter(P)
    assert w <= brute_width(P) + 1e-9
    assert w >= brute_width(P) - 1e-3 * (1 + np.ptp(P))


@settings(max_examples=40, deadline=None)
@given(clouds, st.floats(0, 2 * np.pi), st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
def test_rigid_motion_invariance(P, angle, shift):
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    Q = P @ R.T + np.array(shift)
    assert min_diameter(Q) == pytest.approx(min_diameter(P), abs=1e-8)
