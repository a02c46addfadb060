import itertools
import json
import warnings

import numpy as np
import pytest
from conftest import random_stable_system
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import membership_mc_volume

from reach_codesign.errors import InvalidArgumentError
from reach_codesign.lti import LtiSystem, TimeGrid, expm, propagate_pwc
from reach_codesign.reach import (
    DegenerateHullWarning,
    InputBox,
    ReachSet,
    bangbang_control,
    contains,
    extreme_point,
    extreme_points,
    hull_volume,
    sample_directions,
    sample_reach_set,
    support_length,
    switching_function,
)

DOUBLE = LtiSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])
SCALAR = LtiSystem([[0.0]], [[1.0]])
UNIT = TimeGrid(0.0, 1.0, 200)
SYM1 = InputBox([-1.0], [1.0])


def test_input_box():
    box = InputBox([-1.0, 0.0], [2.0, 1.0])
    assert np.allclose(box.center, [0.5, 0.5]) and np.allclose(box.radius, [1.5, 0.5])
    assert not box.contains_origin_strictly()
    with pytest.raises(InvalidArgumentError):
        InputBox([1.0], [0.0])
    with pytest.raises(InvalidArgumentError):
        InputBox([0.0], [np.inf])


def test_switching_function_closed_forms():
    sys = LtiSystem(np.zeros((4, 4)), np.vstack([np.eye(2), np.zeros((2, 2))]))
    psi = switching_function(sys, [1, 0, 0, 0], UNIT)
    assert np.allclose(psi, [1.0, 0.0])
    psi = switching_function(DOUBLE, [1.0, 0.0], UNIT)
    assert np.allclose(psi[:, 0], 1.0 - UNIT.midpoints, atol=1e-12)
    assert np.all(psi > 0)
    with pytest.raises(InvalidArgumentError):
        switching_function(DOUBLE, [0.0, 0.0], UNIT)


def test_switching_function_matches_expm_oracle():
    rng = np.random.default_rng(0)
    sys = random_stable_system(rng)
    c = rng.standard_normal(4)
    grid = TimeGrid(0.0, 2.0, 40)
    oracle = np.array([c @ expm(sys.a, grid.t_final - t) @ sys.b for t in grid.midpoints])
    assert np.allclose(switching_function(sys, c, grid), oracle, rtol=0, atol=1e-10)


def test_bangbang_conventions():
    assert np.all(bangbang_control(SCALAR, SYM1, [1.0], UNIT) == 1.0)
    assert np.all(bangbang_control(SCALAR, InputBox([0.0], [1.0]), [-1.0], UNIT) == 0.0)
    assert np.all(bangbang_control(DOUBLE, SYM1, [0.0, -1.0], UNIT) == -1.0)
    # psi == 0 everywhere (B = 0): ties go to the upper bound
    null = LtiSystem([[0.0]], [[0.0]])
    assert np.all(bangbang_control(null, InputBox([-2.0], [3.0]), [1.0], UNIT) == 3.0)


def test_analytic_extremes():
    assert extreme_point(SCALAR, SYM1, [1.0], UNIT)[0] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(extreme_point(DOUBLE, SYM1, [1.0, 0.0], UNIT), [0.5, 1.0], atol=1e-9)
    assert support_length(SCALAR, SYM1, [1.0], UNIT) == pytest.approx(2.0, abs=1e-12)
    assert support_length(SCALAR, InputBox([0.0], [1.0]), [1.0], UNIT) == pytest.approx(1.0, abs=1e-9)
    assert support_length(DOUBLE, SYM1, [1.0, 0.0], UNIT) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(InvalidArgumentError):
        support_length(DOUBLE, SYM1, [2.0, 0.0], UNIT)


def test_batched_matches_single():
    rng = np.random.default_rng(1)
    sys = random_stable_system(rng)
    box = InputBox([-0.3, -1.0], [1.0, 0.2])
    dirs = sample_directions(16, 4, 5)
    grid = TimeGrid(0.0, 2.0, 100)
    batch = extreme_points(sys, box, dirs, grid)
    single = np.array([extreme_point(sys, box, c, grid) for c in dirs])
    assert np.allclose(batch, single, rtol=0, atol=1e-12)


def test_dominance_monte_carlo():
    rng = np.random.default_rng(2)
    sys = random_stable_system(rng)
    box = InputBox([-0.5, -1.0], [1.0, 0.3])
    grid = TimeGrid(0.0, 2.0, 50)
    for c in sample_directions(5, 4, 9):
        best = c @ extreme_point(sys, box, c, grid)
        for _ in range(200):
            u = rng.uniform(box.lower, box.upper, (50, 2))
            x = propagate_pwc(sys, np.zeros(4), u, grid).final_state
            assert c @ x <= best + 1e-9


def test_sample_reach_set_cube_and_determinism():
    sys = LtiSystem(np.zeros((4, 4)), np.eye(4))
    box = InputBox(-np.ones(4), np.ones(4))
    rs = sample_reach_set(sys, box, 64, UNIT, seed=7)
    assert np.all(np.abs(rs.vertices) <= 1 + 1e-12)
    assert rs.volume() <= 16 + 1e-9
    again = sample_reach_set(sys, box, 64, UNIT, seed=7)
    assert np.array_equal(rs.vertices, again.vertices)
    with pytest.raises(InvalidArgumentError):
        sample_reach_set(sys, box, 4, UNIT)


def test_self_consistency_invariant():
    rng = np.random.default_rng(3)
    sys = random_stable_system(rng)
    rs = sample_reach_set(sys, InputBox([-1.0, -0.2], [0.4, 1.0]), 128, TimeGrid(0.0, 2.0, 80), 1)
    scores = rs.directions @ rs.vertices.T
    own = np.einsum("ij,ij->i", rs.directions, rs.vertices)
    assert np.all(own >= scores.max(axis=1) - 1e-12)


def test_direction_prefix_and_nested_volume():
    assert np.array_equal(sample_directions(512, 4, 3)[:64], sample_directions(64, 4, 3))
    rng = np.random.default_rng(4)
    sys = random_stable_system(rng)
    box = InputBox([-1.0, -1.0], [1.0, 0.5])
    grid = TimeGrid(0.0, 2.0, 60)
    small = sample_reach_set(sys, box, 64, grid, 3).volume()
    large = sample_reach_set(sys, box, 512, grid, 3).volume()
    assert large >= small - 1e-12


def test_hull_volume_closed_forms():
    cube = np.array(list(itertools.product([0.0, 1.0], repeat=4)))
    assert hull_volume(cube) == pytest.approx(1.0, abs=1e-9)
    cross = np.vstack([np.eye(4), -np.eye(4)])
    assert hull_volume(cross) == pytest.approx(2.0 / 3.0, abs=1e-9)
    perm = np.random.default_rng(0).permutation(16)
    assert hull_volume(cube[perm]) == pytest.approx(1.0, abs=1e-12)
    assert hull_volume(cube * [2.0, 1.0, 0.5, 3.0] + 10.0) == pytest.approx(3.0, rel=1e-12)


def test_hull_volume_degenerate():
    with pytest.warns(DegenerateHullWarning):
        assert hull_volume(np.eye(4)) == 0.0
    flat = np.random.default_rng(0).random((30, 4))
    flat[:, 3] = 0.5
    with pytest.warns(DegenerateHullWarning):
        assert hull_volume(flat) == 0.0


def test_hull_volume_monte_carlo_single_cloud():
    rng = np.random.default_rng(11)
    pts = rng.random((60, 4))
    est, se, _ = membership_mc_volume(pts, 20000, rng)
    assert abs(hull_volume(pts) - est) <= 3 * se


def test_contains():
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((40, 4))
    centroid = pts.mean(axis=0)
    assert contains(pts, centroid)
    assert not contains(pts, pts[0] + 10 * (pts[0] - centroid), tol=1e-6)
    w = rng.dirichlet(np.ones(40), size=50)
    assert all(contains(pts, x) for x in w @ pts)


def test_convexity_midpoints():
    rng = np.random.default_rng(6)
    sys = random_stable_system(rng)
    rs = sample_reach_set(sys, InputBox([-1.0, -1.0], [1.0, 1.0]), 48, TimeGrid(0.0, 1.0, 40), 2)
    for i, j in rng.integers(0, 48, (20, 2)):
        assert contains(rs, 0.5 * (rs.vertices[i] + rs.vertices[j]), tol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_asymmetry_shift_identity(seed):
    rng = np.random.default_rng(seed)
    sys = random_stable_system(rng)
    lo = -rng.uniform(0.1, 2.0, 2)
    hi = rng.uniform(0.1, 2.0, 2)
    box = InputBox(lo, hi)
    grid = TimeGrid(0.0, 1.5, 60)
    centered = InputBox(-box.radius, box.radius)
    particular = propagate_pwc(sys, np.zeros(4), np.tile(box.center, (60, 1)), grid).final_state
    dirs = sample_directions(20, 4, seed)
    lhs = extreme_points(sys, box, dirs, grid)
    rhs = extreme_points(sys, centered, dirs, grid) + particular
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-9)


def test_symmetric_bounds_central_symmetry():
    rng = np.random.default_rng(7)
    sys = random_stable_system(rng)
    box = InputBox([-0.7, -1.2], [0.7, 1.2])
    dirs = sample_directions(30, 4, 1)
    grid = TimeGrid(0.0, 2.0, 50)
    assert np.allclose(extreme_points(sys, box, dirs, grid),
                       -extreme_points(sys, box, -dirs, grid), rtol=0, atol=1e-9)


def test_volume_monotone_in_horizon():
    rng = np.random.default_rng(8)
    sys = random_stable_system(rng)
    box = InputBox([-0.5, -1.0], [1.0, 0.5])
    dirs = sample_directions(128, 4, 0)
    v1 = sample_reach_set(sys, box, grid=TimeGrid(0.0, 1.0, 100), directions=dirs).volume()
    v2 = sample_reach_set(sys, box, grid=TimeGrid(0.0, 2.0, 200), directions=dirs).volume()
    assert v2 >= v1 - 1e-9


def test_serialization_round_trip():
    rng = np.random.default_rng(9)
    sys = random_stable_system(rng)
    rs = sample_reach_set(sys, InputBox([-1.0, -1.0], [1.0, 1.0]), 16, TimeGrid(0.0, 1.0, 20), 4)
    data = json.loads(rs.dumps())
    assert set(data) == {"seed", "horizon", "directions", "vertices", "system_fingerprint"}
    back = ReachSet.from_dict(data)
    assert np.array_equal(back.vertices, rs.vertices)
    assert back.horizon == rs.horizon and back.seed == 4
    with pytest.raises(InvalidArgumentError):
        ReachSet.from_dict({"seed": 0})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert rs.dumps() == back.dumps()
