"""Nonlinear longitudinal dynamics, trim and linearization.

State x = (V, alpha, Q, theta), inputs u = (delta_th, delta_e).  Forces are
in the wind frame: drag opposes the velocity (X = -D) and lift is normal to
it (Z = -L).  Flight path angle gamma = theta - alpha.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .aero import ELEVATOR_LIMIT, AircraftParams, interpolate, stability_derivatives
from .errors import InvalidArgumentError, SaturatedTrimError, TrimFailureError
from .lti import LtiSystem
from .reach import InputBox

DESIGN_BOUNDS = ((3.0, 7.0), (10.0, 20.0))
THROTTLE_RANGE = (0.0, 1.0)
ELEVATOR_RANGE = (-ELEVATOR_LIMIT, ELEVATOR_LIMIT)
PITCH_RANGE = (-0.5236, 0.5236)

TRIM_TOL = 1e-8
TRIM_MAX_ITER = 50
FD_STEP = 1e-6


@dataclass(frozen=True)
class Design:
    c: float
    w: float

    def __post_init__(self):
        (clo, chi), (wlo, whi) = DESIGN_BOUNDS
        if not (clo <= self.c <= chi and wlo <= self.w <= whi):
            raise InvalidArgumentError(
                f"design (c={self.c}, w={self.w}) outside [{clo}, {chi}] x [{wlo}, {whi}] m"
            )
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "w", float(self.w))

    def as_array(self):
        return np.array([self.c, self.w])


@dataclass(frozen=True)
class TrimPoint:
    v0: float
    alpha0: float
    q0: float
    theta0: float
    dth0: float
    de0: float
    gamma0: float
    residual_norm: float
    iterations: int = 0

    @property
    def state(self):
        return np.array([self.v0, self.alpha0, self.q0, self.theta0])

    @property
    def inputs(self):
        return np.array([self.dth0, self.de0])

    def to_dict(self):
        return asdict(self)


def _as_design(design):
    return design if isinstance(design, Design) else Design(*design)


def nonlinear_rhs(state, inputs, design, table, params=None):
    """Right-hand side of the longitudinal equations of motion."""
    params = params or AircraftParams()
    design = _as_design(design)
    v, alpha, q, theta = (float(s) for s in state)
    dth, de = (float(u) for u in inputs)
    if not v > 0:
        raise InvalidArgumentError(f"airspeed must be positive, got {v}")
    lift, drag, moment = interpolate(table, (v, alpha, design.c, design.w, de))
    m, g = params.mass, params.g
    thrust = dth * params.max_thrust
    gamma = theta - alpha
    return np.array([
        thrust * np.cos(alpha) / m - drag / m - g * np.sin(gamma),
        -thrust * np.sin(alpha) / (m * v) - lift / (m * v) + g * np.cos(gamma) / v + q,
        (moment + params.thrust_moment_arm * thrust) / params.j_y,
        q,
    ])


def trim_residual(y, design, table, params, v0, gamma):
    """F(y) for unknowns y = (alpha, delta_e, delta_th, theta)."""
    alpha, de, dth, theta = y
    f = nonlinear_rhs((v0, alpha, 0.0, theta), (dth, de), design, table, params)
    return np.array([f[0], f[1], f[2], theta - alpha - gamma])


def _unknown_bounds(table):
    alo, ahi = table.axes.bounds("alpha")
    elo, ehi = table.axes.bounds("delta_e")
    return np.array([
        (max(alo, -np.inf), ahi),
        (max(elo, ELEVATOR_RANGE[0]), min(ehi, ELEVATOR_RANGE[1])),
        THROTTLE_RANGE,
        PITCH_RANGE,
    ])


def _fd_jacobian(func, y, step, lo, hi):
    n = len(y)
    cols = []
    for j in range(n):
        hp = min(step, hi[j] - y[j])
        hm = min(step, y[j] - lo[j])
        yp, ym = y.copy(), y.copy()
        yp[j] += hp
        ym[j] -= hm
        cols.append((func(yp) - func(ym)) / (hp + hm))
    return np.column_stack(cols)


def _trim_jac(design, table, params, y, v0, gamma, step=FD_STEP):
    bounds = _unknown_bounds(table)
    jac = _fd_jacobian(lambda yy: trim_residual(yy, design, table, params, v0, gamma),
                       np.asarray(y, dtype=float), step, bounds[:, 0], bounds[:, 1])
    jac[3] = [-1.0, 0.0, 0.0, 1.0]
    return jac


def trim(design, table, params=None, v0=200.0, gamma=0.0):
    """Newton iteration for a trimmed flight condition at airspeed v0 and
    flight path angle gamma.

    Raises:
        TrimFailureError: no convergence within 50 iterations
        SaturatedTrimError: the solution sits on a physical bound
    """
    params = params or AircraftParams()
    design = _as_design(design)
    vlo, vhi = table.axes.bounds("V")
    if not vlo <= v0 <= vhi:
        raise InvalidArgumentError(f"airspeed {v0} outside table range [{vlo}, {vhi}]")
    bounds = _unknown_bounds(table)
    # keep iterates one FD step inside so the Jacobian stencil stays in the table
    lo = bounds[:, 0] + 10 * FD_STEP
    hi = bounds[:, 1] - 10 * FD_STEP
    y = np.clip(np.array([0.05, 0.0, 0.5, 0.05 + gamma]), lo, hi)

    def resid(yy):
        return trim_residual(yy, design, table, params, v0, gamma)

    r = resid(y)
    for it in range(1, TRIM_MAX_ITER + 1):
        jac = _trim_jac(design, table, params, y, v0, gamma)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise TrimFailureError("singular trim Jacobian", residual=r, iterate=y) from exc
        y = np.clip(y + step, lo, hi)
        # the kinematic constraint row is linear; enforce it exactly
        y[3] = y[0] + gamma
        r = resid(y)
        if np.max(np.abs(r)) < TRIM_TOL:
            break
    else:
        raise TrimFailureError(
            f"trim did not converge in {TRIM_MAX_ITER} iterations (|F| = {np.max(np.abs(r)):.3e})",
            residual=r, iterate=y,
        )
    on_bound = np.isclose(y, lo, rtol=0, atol=1e-9) | np.isclose(y, hi, rtol=0, atol=1e-9)
    if np.any(on_bound[:3]) or not PITCH_RANGE[0] < y[3] < PITCH_RANGE[1]:
        names = np.array(["alpha", "delta_e", "delta_th", "theta"])[on_bound]
        raise SaturatedTrimError(f"trim saturates at bound(s): {', '.join(names)}",
                                 residual=r, iterate=y)
    alpha, de, dth, theta = (float(v) for v in y)
    return TrimPoint(v0=float(v0), alpha0=alpha, q0=0.0, theta0=theta, dth0=dth, de0=de,
                     gamma0=float(gamma), residual_norm=float(np.max(np.abs(r))),
                     iterations=it)


def trim_jacobian(design, table, params, trim_point, step=FD_STEP):
    """dF/dy at the trim point, columns ordered (alpha, delta_e, delta_th, theta)."""
    params = params or AircraftParams()
    y = np.array([trim_point.alpha0, trim_point.de0, trim_point.dth0, trim_point.theta0])
    return _trim_jac(_as_design(design), table, params, y, trim_point.v0, trim_point.gamma0, step)


@dataclass(frozen=True)
class TrimRegularity:
    condition_number: float
    invertible: bool
    singular_values: tuple

    def to_dict(self):
        return {"condition_number": self.condition_number, "invertible": self.invertible,
                "singular_values": list(self.singular_values)}


def check_trim_regularity(jac):
    """Singular-value test of the trim Jacobian (implicit-function premise)."""
    jac = np.asarray(jac, dtype=float)
    s = np.linalg.svd(jac, compute_uv=False)
    invertible = bool(s[-1] > 1e-10 * s[0]) if s[0] > 0 else False
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    return TrimRegularity(cond, invertible, tuple(float(v) for v in s))


def trim_sensitivity(design, table, params=None, trim_point=None, h=1e-3, v0=200.0, gamma=0.0):
    """Design sensitivity of the trim map by two routes.

    Returns:
        (implicit, finite_difference): 4x2 matrices d(alpha, de, dth, theta)/d(c, w),
        the first from -(dF/dy)^{-1} dF/dd, the second by re-trimming at d +- h.
    """
    params = params or AircraftParams()
    design = _as_design(design)
    if trim_point is None:
        trim_point = trim(design, table, params, v0, gamma)
    y0 = np.array([trim_point.alpha0, trim_point.de0, trim_point.dth0, trim_point.theta0])
    jac_y = trim_jacobian(design, table, params, trim_point)
    jac_d = np.empty((4, 2))
    fd = np.empty((4, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        dp = Design(*(design.as_array() + e))
        dm = Design(*(design.as_array() - e))
        args = (table, params, trim_point.v0, trim_point.gamma0)
        jac_d[:, j] = (trim_residual(y0, dp, *args) - trim_residual(y0, dm, *args)) / (2 * h)
        tp = trim(dp, table, params, trim_point.v0, trim_point.gamma0)
        tm = trim(dm, table, params, trim_point.v0, trim_point.gamma0)
        fd[:, j] = (np.array([tp.alpha0, tp.de0, tp.dth0, tp.theta0])
                    - np.array([tm.alpha0, tm.de0, tm.dth0, tm.theta0])) / (2 * h)
    implicit = -np.linalg.solve(jac_y, jac_d)
    return implicit, fd


def state_matrices(derivs, trim_point, g):
    """Assemble (A, B) of the linear longitudinal model from stability derivatives."""
    v0, a0, g0 = trim_point.v0, trim_point.alpha0, trim_point.gamma0
    d = derivs
    a = np.array([
        [d.x_v, d.x_alpha, 0.0, -g * np.cos(g0)],
        [d.z_v / v0, d.z_alpha / v0, 1.0 + d.z_q / v0, -g * np.sin(g0) / v0],
        [d.m_v, d.m_alpha, d.m_q, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ])
    b = np.array([
        [d.x_dth * np.cos(a0), d.x_de],
        [-d.x_dth * np.sin(a0) / v0, d.z_de / v0],
        [d.m_dth, d.m_de],
        [0.0, 0.0],
    ])
    return a, b


def input_box(trim_point):
    """Perturbation input bounds that keep throttle in [0, 1] and elevator in
    [-0.523, 0.523] once the trim inputs are added back."""
    return InputBox(
        [THROTTLE_RANGE[0] - trim_point.dth0, ELEVATOR_RANGE[0] - trim_point.de0],
        [THROTTLE_RANGE[1] - trim_point.dth0, ELEVATOR_RANGE[1] - trim_point.de0],
    )


def linearize(design, table, params=None, trim_point=None, steps=None):
    """Linear perturbation model about a trim point and its input box."""
    params = params or AircraftParams()
    design = _as_design(design)
    derivs = stability_derivatives(table, design, trim_point, params, steps)
    a, b = state_matrices(derivs, trim_point, params.g)
    return LtiSystem(a, b), input_box(trim_point)
