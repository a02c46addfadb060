import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from oracles import dense_grid_argmin
from reach_codesign.errors import InvalidArgumentError, ObjectiveEvaluationError, TrimFailureError
from reach_codesign.lti import LtiSystem, TimeGrid
from reach_codesign.optim import (
    DEFAULT_V,
    Evaluators,
    OptProblem,
    ReachContext,
    constraint_vmdc,
    fd_gradient,
    objective_dm,
    objective_vm,
    solve,
    solve_box_qp,
)
from reach_codesign.reach import InputBox


class _StubContext:
    """Stands in for ReachContext with a fixed synthetic model."""

    def __init__(self, sys, box, k=64, seed=0):
        self.sys, self.box = sys, box
        self.directions, self.seed = k, seed
        self.grid = TimeGrid(0.0, 1.0, 100)

    def linear_model(self, d):
        return self.sys, self.box


@pytest.fixture(scope="module")
def ctx(table):
    return ReachContext(table=table)


def test_fd_gradient_examples():
    g = fd_gradient(lambda d: d[0] + 2 * d[1], (5.0, 12.0))
    assert np.allclose(g, [1, 2], atol=1e-9)
    g = fd_gradient(lambda d: d[0] * d[1], (5.0, 12.0))
    assert np.allclose(g, [12, 5], atol=1e-6)


def test_fd_gradient_one_sided_at_bounds():
    f = lambda d: d[0] ** 2 + d[1] ** 2  # noqa: E731
    g = fd_gradient(f, (7.0, 10.0), h=0.05)
    assert g[0] == pytest.approx((49 - 6.95 ** 2) / 0.05)
    assert g[1] == pytest.approx((10.05 ** 2 - 100) / 0.05)
    with pytest.raises(InvalidArgumentError):
        fd_gradient(f, (5.0, 12.0), h=10.0)


def test_fd_gradient_wraps_failures():
    def f(d):
        if d[0] > 5:
            raise TrimFailureError("boom")
        return 0.0
    with pytest.raises(ObjectiveEvaluationError) as err:
        fd_gradient(f, (5.0, 12.0))
    assert err.value.design[0] > 5


def test_box_qp_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(30):
        m = rng.standard_normal((2, 2))
        hess = m @ m.T + 0.1 * np.eye(2)
        grad = rng.standard_normal(2) * 3
        lo, hi = -rng.uniform(0.1, 1, 2), rng.uniform(0.1, 1, 2)
        p, _ = solve_box_qp(hess, grad, lo, hi)
        ref = minimize(lambda x: 0.5 * x @ hess @ x + grad @ x, np.zeros(2),
                       jac=lambda x: hess @ x + grad, bounds=list(zip(lo, hi)),
                       method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
        assert np.allclose(p, ref.x, atol=1e-6)


def test_box_qp_infeasible_linear_row():
    assert solve_box_qp(np.eye(2), np.zeros(2), [-1, -1], [1, 1], lin=([1.0, 0.0], 5.0)) is None


def _analytic(objective, constraint=None, d0=(5.0, 12.0)):
    prob = OptProblem("VM", d0=d0)
    return solve(prob, Evaluators(objective, constraint))


def test_interior_quadratic():
    res = _analytic(lambda d: -(d[0] - 5) ** 2 - (d[1] - 12) ** 2, d0=(4.0, 17.0))
    assert np.allclose(res.d_star, (5, 12), atol=1e-3)
    assert res.status == "converged" and res.kkt_residual < 1e-3


def test_linear_vertex():
    res = _analytic(lambda d: d[0] + d[1])
    assert res.d_star == (7.0, 20.0)
    assert res.kkt_residual == 0.0


def test_constrained_quadratic_matches_grid():
    f = lambda d: -(d[0] - 5) ** 2 - (d[1] - 12) ** 2  # noqa: E731
    g = lambda d: d[0] - 6  # noqa: E731
    res = _analytic(f, g)
    assert np.allclose(res.d_star, (6, 12), atol=1e-3)
    penalised = lambda d: -f(d) if g(d) >= 0 else np.inf  # noqa: E731
    grid = dense_grid_argmin(penalised, (3, 10), (7, 20), 1e-2)
    assert np.allclose(res.d_star, grid, atol=1e-2)
    assert res.constraint_values[-1] >= -1e-6


def test_objective_history_nondecreasing():
    res = _analytic(lambda d: -(d[0] - 6.3) ** 4 - np.cosh(d[1] - 14.2), d0=(3.5, 19.0))
    hist = res.objective_history
    assert all(b >= a - 1e-12 for a, b in zip(hist, hist[1:]))
    for entry in res.per_iteration:
        if not entry["start"]:
            assert entry["merit_after"] <= entry["merit_before"] + 1e-12


def test_iterates_stay_in_box():
    res = _analytic(lambda d: 3 * d[0] - d[1] ** 2, d0=(3.0, 20.0))
    for entry in res.per_iteration:
        c, w = entry["d"]
        assert 3 <= c <= 7 and 10 <= w <= 20
    assert np.allclose(res.d_star, (7, 10), atol=1e-3)


def test_problem_validation():
    with pytest.raises(InvalidArgumentError):
        OptProblem("XX")
    with pytest.raises(InvalidArgumentError):
        OptProblem("DM", v=(1, 1, 0, 0))
    with pytest.raises(InvalidArgumentError):
        OptProblem("VMDC", kappa=1.5)
    with pytest.raises(InvalidArgumentError):
        OptProblem("VM", d0=(8, 12))
    assert OptProblem("vmdc").kappa == 0.15
    assert np.allclose(OptProblem("DM").v, DEFAULT_V)


def test_vm_objective_deterministic(ctx):
    fresh = ReachContext(table=ctx.table)
    assert objective_vm((5.0, 12.0), ctx) == objective_vm((5.0, 12.0), fresh)


def _richardson_gap(ctx):
    f = lambda d: objective_vm(d, ctx)  # noqa: E731
    g_h = fd_gradient(f, (5.0, 12.0), 0.05)
    g_h2 = fd_gradient(f, (5.0, 12.0), 0.025)
    richardson = (4 * g_h2 - g_h) / 3
    return np.abs(g_h - richardson) / np.abs(richardson)


@pytest.mark.xfail(strict=True, reason="w = 12 is a table node, so the volume has a slope "
                   "kink there; switching instants also snap to the 200-step grid")
def test_vm_gradient_richardson(ctx):
    assert np.all(_richardson_gap(ctx) <= 0.02)


def test_vm_gradient_richardson_smooth_direction(ctx):
    # c = 5 is interior to a table cell; a fine time grid removes the
    # step-like ripple left by grid-snapped switching instants
    fine = ReachContext(table=ctx.table, n_steps=8000)
    assert _richardson_gap(fine)[0] <= 0.02


def test_dm_symmetric_in_direction(ctx):
    v = np.array(DEFAULT_V)
    assert objective_dm((5.0, 12.0), v, ctx) == pytest.approx(
        objective_dm((5.0, 12.0), -v, ctx), rel=1e-12)


def test_dm_linear_in_b():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((4, 4)) - 3 * np.eye(4)
    b = rng.standard_normal((4, 2))
    box = InputBox([-1.0, -0.5], [1.0, 0.5])
    v = rng.standard_normal(4)
    v /= np.linalg.norm(v)
    one = objective_dm(None, v, _StubContext(LtiSystem(a, b), box))
    two = objective_dm(None, v, _StubContext(LtiSystem(a, 2 * b), box))
    assert two == pytest.approx(2 * one, abs=1e-9)


def test_vm_uncontrollable_is_zero():
    a = np.diag([-1.0, -2.0, -3.0, -4.0])
    b = np.zeros((4, 2))
    b[0, 0] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vol = objective_vm(None, _StubContext(LtiSystem(a, b), InputBox([-1, -1], [1, 1])))
    assert vol == 0.0


def test_vmdc_constraint_at_start(ctx):
    v = np.array(DEFAULT_V)
    base = objective_dm((5.0, 12.0), v, ctx)
    assert constraint_vmdc((5.0, 12.0), v, 0.15, base, ctx) == pytest.approx(-0.15 * base)
    assert constraint_vmdc((5.0, 12.0), v, 0.0, base, ctx) == 0.0


def test_trim_failure_propagates(table):
    from reach_codesign.aero import AircraftParams

    heavy = ReachContext(table=table, params=AircraftParams(mass=2e7))
    with pytest.raises(ObjectiveEvaluationError) as err:
        objective_vm((5.0, 12.0), heavy)
    assert err.value.design == (5.0, 12.0)


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["VM", "DM", "VMDC"])
def test_surrogate_runs_improve(ctx, kind):
    prob = OptProblem(kind, context=ReachContext(table=ctx.table))
    res = solve(prob)
    assert res.objective_history[-1] >= res.objective_history[0] or kind == "VMDC"
    assert res.kkt_residual < 1e-3
    if kind == "VMDC":
        assert res.constraint_values[-1] >= -1e-6
        assert objective_vm(res.d_star, ctx) >= objective_vm((5.0, 12.0), ctx)
