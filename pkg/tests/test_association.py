import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

from objmap.association import CostMatrix, build_cost_matrix, linear_assignment, solve
from objmap.geometry import FrameMismatchError
from conftest import upright_box


def brute_force(c):
    m, n = c.shape
    if m <= n:
        return min(sum(c[i, p[i]] for i in range(m)) for p in itertools.permutations(range(n), m))
    return brute_force(c.T)


def test_cost_examples():
    a = upright_box((0, 0, 0.5), (1, 1, 1))
    c = build_cost_matrix([a], [a, upright_box((0.5, 0, 0.5), (1, 1, 1)), upright_box((500, 0, 0.5), (1, 1, 1))])
    assert c.costs[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert c.costs[0, 1] == pytest.approx(2 / 3, abs=1e-9)
    assert c.costs[0, 2] > 1.99
    assert np.all((c.costs >= 0) & (c.costs <= 2))


def test_frame_mismatch():
    with pytest.raises(FrameMismatchError):
        build_cost_matrix([upright_box((0, 0, 0), (1, 1, 1), frame="camera")], [upright_box((0, 0, 0), (1, 1, 1))])


def test_solve_examples():
    a = solve(CostMatrix(np.array([[1.0, 2.0], [2.0, 1.0]])), gate=10)
    assert sorted(a.matches) == [(0, 0), (1, 1)]
    assert a.total_cost([[1, 2], [2, 1]]) == 2
    g = solve(CostMatrix(np.array([[0.1]])), gate=0.05)
    assert g.matches == [] and g.unmatched_detections == [0] and g.unmatched_tracks == [0]
    e = solve(CostMatrix(np.zeros((0, 3))), gate=1)
    assert e.matches == [] and e.unmatched_tracks == [0, 1, 2]
    with pytest.raises(ValueError):
        solve(CostMatrix(np.zeros((1, 1))), gate=0)
    with pytest.raises(ValueError):
        CostMatrix(np.array([[np.inf]]))


def test_ids_are_carried():
    c = CostMatrix(np.array([[0.2, 0.9], [0.9, 0.1]]), row_ids=[7, 8], col_ids=[40, 41])
    assert sorted(solve(c, 1.0).matches) == [(7, 40), (8, 41)]


def test_fixed_examples_vs_brute_force(rng):
    for shape in [(5, 5), (3, 7), (7, 3)]:
        c = rng.random(shape)
        pairs = linear_assignment(c)
        assert len(pairs) == min(shape)
        assert sum(c[i, j] for i, j in pairs) == pytest.approx(brute_force(c), abs=1e-12)


matrices = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(0, 2, allow_nan=False)))


@settings(max_examples=150, deadline=None)
@given(matrices)
def test_optimality(c):
    pairs = linear_assignment(c)
    total = sum(c[i, j] for i, j in pairs)
    assert total == pytest.approx(brute_force(c), abs=1e-9)
    r, k = linear_sum_assignment(c)
    assert total == pytest.approx(c[r, k].sum(), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(matrices, st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_gating_monotone(c, g1, extra):
    cm = CostMatrix(c)
    low, high = solve(cm, g1), solve(cm, g1 + extra)
    assert set(low.matches) <= set(high.matches)


@settings(max_examples=100, deadline=None)
@given(matrices, st.booleans())
def test_assignment_partition(c, pregate):
    a = solve(CostMatrix(c), 0.8, pregate=pregate)
    rows = [i for i, _ in a.matches] + a.unmatched_detections
    cols = [j for _, j in a.matches] + a.unmatched_tracks
    assert sorted(rows) == list(range(c.shape[0]))
    assert sorted(cols) == list(range(c.shape[1]))
    assert all(c[i, j] <= 0.8 for i, j in a.matches)


def test_pregate_routes_around():
    # post-gating picks (0,0),(1,1) then drops (1,1); pre-gating keeps two valid pairs
    c = np.array([[0.1, 0.5], [0.6, 0.9]])
    assert solve(CostMatrix(c), 0.7).matches == [(0, 0)]
    assert sorted(solve(CostMatrix(c), 0.7, pregate=True).matches) == [(0, 1), (1, 0)]


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(0, 2, allow_nan=False), unique=True), st.permutations(range(5)))
def test_row_permutation_equivariance(c, perm):
    base = solve(CostMatrix(c), 2.0)
    permuted = solve(CostMatrix(c[list(perm)], row_ids=list(perm)), 2.0)
    assert sorted(base.matches) == sorted(permuted.matches)
