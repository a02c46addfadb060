import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reach_codesign.aero import (
    AXIS_NAMES,
    AeroAxes,
    AeroTable,
    AircraftParams,
    SurrogateConfig,
    default_axes,
    force_derivatives,
    generate_table,
    grid_lines,
    interpolate,
    stability_derivatives,
    surrogate_forces,
)
from reach_codesign.errors import InvalidArgumentError, OutOfDomainError


def _bounds(table):
    return (np.array([table.axes.bounds(n)[0] for n in AXIS_NAMES]),
            np.array([table.axes.bounds(n)[1] for n in AXIS_NAMES]))


def test_default_axes_ranges(table):
    assert table.axes.shape == (6,) * 5
    assert table.axes.bounds("V") == (100.0, 295.0)
    assert table.axes.bounds("alpha") == (-0.0873, 0.2618)
    assert table.axes.bounds("c") == (3.0, 7.0)
    assert table.axes.bounds("w") == (10.0, 20.0)
    assert table.axes.bounds("delta_e") == (-0.523, 0.523)
    assert len(table.lift) == 6 ** 5


def test_axes_validation():
    with pytest.raises(InvalidArgumentError):
        default_axes(1)
    good = default_axes(3)
    with pytest.raises(InvalidArgumentError):
        AeroAxes(good.v, good.alpha[::-1], good.c, good.w, good.delta_e)
    with pytest.raises(InvalidArgumentError):
        generate_table(default_axes(3, {"alpha": (-0.5, 0.2)}))


def test_surrogate_closed_forms(params):
    cfg = SurrogateConfig()
    c, w, v = 5.0, 12.0, 200.0
    lift, _, _ = surrogate_forces(v, 0.0, c, w, 0.0)
    area = 2 * (c * cfg.chord_center + w * cfg.chord_wing)
    assert lift == pytest.approx(0.5 * params.rho * v ** 2 * area * cfg.cl0, rel=1e-15)
    l1 = np.array(surrogate_forces(150.0, 0.07, c, w, 0.1))
    l2 = np.array(surrogate_forces(300.0, 0.07, c, w, 0.1))
    assert np.allclose(l2, 4 * l1, rtol=1e-9)


def test_generated_table_sanity(table):
    assert np.all(table.drag > 0)
    for line in grid_lines(table, "alpha"):
        assert np.all(np.diff(line[:, 0]) > 0)  # lift increasing in alpha
        assert np.all(np.diff(line[:, 2]) < 0)  # moment decreasing in alpha
    v, a, c, w, e = np.meshgrid(*table.axes.as_tuple(), indexing="ij")
    cfg = SurrogateConfig()
    span = 2 * (c + w)
    area = 2 * (c * cfg.chord_center + w * cfg.chord_wing)
    qbar_s = 0.5 * AircraftParams().rho * v ** 2 * area
    assert np.all(table.drag.reshape(v.shape) / qbar_s >= cfg.cd0 * (1 - 1e-12))
    assert np.all(span > 0)


def test_interpolate_exact_at_nodes(table):
    rng = np.random.default_rng(0)
    axes = table.axes.as_tuple()
    for _ in range(50):
        idx = tuple(int(rng.integers(0, len(a))) for a in axes)
        q = [a[i] for a, i in zip(axes, idx)]
        flat = np.ravel_multi_index(idx, table.axes.shape)
        got = interpolate(table, q)
        assert got == (table.lift[flat], table.drag[flat], table.moment[flat])


def test_interpolate_cell_midpoint(table):
    axes = table.axes.as_tuple()
    base = [a[2] for a in axes]
    for k in range(5):
        q = list(base)
        q[k] = 0.5 * (axes[k][2] + axes[k][3])
        idx_lo = [2] * 5
        idx_hi = [2] * 5
        idx_hi[k] = 3
        lo = np.ravel_multi_index(idx_lo, table.axes.shape)
        hi = np.ravel_multi_index(idx_hi, table.axes.shape)
        want = 0.5 * (np.array([table.lift[lo], table.drag[lo], table.moment[lo]])
                      + np.array([table.lift[hi], table.drag[hi], table.moment[hi]]))
        assert np.allclose(interpolate(table, q), want, rtol=1e-12, atol=0)


def test_interpolate_piecewise_linear_along_axis(table):
    axes = table.axes.as_tuple()
    base = [a[1] for a in axes]
    for k in range(5):
        h = 0.1 * (axes[k][2] - axes[k][1])
        def at(x):
            q = list(base)
            q[k] = x
            return np.array(interpolate(table, q))
        mid = axes[k][1] + 0.45 * (axes[k][2] - axes[k][1])
        second = at(mid + h) - 2 * at(mid) + at(mid - h)
        assert np.all(np.abs(second) <= 1e-10 * np.abs(at(mid)).max())


def test_interpolate_out_of_domain(table):
    with pytest.raises(OutOfDomainError) as err:
        interpolate(table, (200.0, 0.5, 5.0, 12.0, 0.0))
    assert err.value.axis == "alpha"
    with pytest.raises(InvalidArgumentError):
        interpolate(table, (200.0, 0.0))


def test_dense_table_matches_formula():
    # relative to each output's largest magnitude on the table; lift and
    # moment change sign inside the domain
    dense = generate_table(default_axes(21))
    lo, hi = _bounds(dense)
    q = np.random.default_rng(1).uniform(lo, hi, (1000, 5))
    got = np.array([interpolate(dense, x) for x in q])
    exact = np.array(surrogate_forces(*q.T)).T
    scale = np.abs(np.stack([dense.lift, dense.drag, dense.moment], axis=1)).max(axis=0)
    assert np.all(np.abs(got - exact) / scale < 0.01)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_interpolant_bounded_by_cell_values(u):
    from reach_codesign.aero import default_table

    table = default_table()
    lo, hi = _bounds(table)
    q = lo + np.array(u) * (hi - lo)
    lift, drag, moment = interpolate(table, q)
    assert table.lift.min() <= lift <= table.lift.max()
    assert table.drag.min() <= drag <= table.drag.max()
    assert table.moment.min() <= moment <= table.moment.max()


def test_table_round_trip(tmp_path):
    tab = generate_table(default_axes(3))
    path = tmp_path / "t.json"
    tab.save(path)
    back = AeroTable.load(path)
    assert np.array_equal(back.lift, tab.lift) and back.axes.shape == (3,) * 5
    data = json.loads(path.read_text())
    assert data["layout"] == "row-major V,alpha,c,w,delta_e"
    data["lift"] = data["lift"][:-1]
    with pytest.raises(InvalidArgumentError):
        AeroTable.from_dict(data)
    data = json.loads(path.read_text())
    data["axes"]["V"] = data["axes"]["V"][::-1]
    with pytest.raises(InvalidArgumentError):
        AeroTable.from_dict(data)


def test_derivatives_linear_lift_table(default_trim):
    # lift exactly linear in alpha: a table with no induced drag curvature
    axes = default_axes(6)
    cfg = SurrogateConfig()
    tab = generate_table(axes, surrogate_config=cfg)
    vals = []
    for a0 in (0.0, 0.02, 0.04):
        d = force_derivatives(tab, 200.0, a0, 5.0, 12.0, 0.0)
        vals.append(d["alpha"][0])
    assert np.allclose(vals, vals[0], rtol=1e-6)


def test_m_dth_zero_without_arm(table, params, default_trim):
    sd = stability_derivatives(table, (5.0, 12.0), default_trim, params)
    assert sd.m_dth == 0.0 and sd.z_q == 0.0 and sd.m_q == 0.0
    armed = AircraftParams(thrust_moment_arm=1.5)
    assert stability_derivatives(table, (5.0, 12.0), default_trim, armed).m_dth > 0


def test_derivatives_match_five_point_stencil(table, params, default_trim):
    three = stability_derivatives(table, (5.0, 12.0), default_trim, params, stencil=3).to_dict()
    five = stability_derivatives(table, (5.0, 12.0), default_trim, params, stencil=5).to_dict()
    for key, val in three.items():
        ref = five[key]
        assert val == pytest.approx(ref, rel=1e-4, abs=1e-12), key


def test_derivatives_reject_edge(table):
    with pytest.raises(OutOfDomainError):
        force_derivatives(table, 100.05, 0.0, 5.0, 12.0, 0.0)
