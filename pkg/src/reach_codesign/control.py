"""LQ tracking, LQR/LQI gains, saturated closed-loop simulation and L2 metrics.

Linear simulations work in perturbation coordinates about a trim point, so a
velocity reference of 4 means 4 m/s above trim airspeed.  The nonlinear
maneuver works in absolute states and reports deviations from whichever trim
point is active.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid

from . import _jsonio
from .aero import AircraftParams
from .errors import HorizonTooLongError, InvalidArgumentError, RiccatiError
from .flight import ELEVATOR_RANGE, THROTTLE_RANGE, Design, linearize, nonlinear_rhs, trim
from .lti import STATE_LABELS, TimeGrid, Trajectory

CHANNELS = {"V": 0, "theta": 3}
MODES = ("lq_finite", "lqi", "nonlinear_lqi")
LINEAR_DURATION = 30.0
LINEAR_STEPS = 3000
BLOWUP_NORM = 1e12
CARE_REFINE_ITER = 20

REFERENCE_PRESETS = {"velocity": ("V", 4.0), "pitch": ("theta", 0.5)}


def l2_norm(signal, dt):
    """L2 norm of a sampled signal by the trapezoidal rule.

    Args:
        signal: samples on a uniform grid, shape (N+1,) or (N+1, k)
        dt: grid spacing in seconds
    """
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    s = np.asarray(signal, dtype=float)
    if s.size == 0:
        raise InvalidArgumentError("empty signal")
    sq = s ** 2 if s.ndim == 1 else np.sum(s.reshape(len(s), -1) ** 2, axis=1)
    if len(sq) == 1:
        return 0.0
    return float(np.sqrt(trapezoid(sq, dx=dt)))


@dataclass(frozen=True)
class WeightSpec:
    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        for name, m in (("q", q), ("r", r)):
            if m.shape[0] != m.shape[1]:
                raise InvalidArgumentError(f"{name} must be square, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise InvalidArgumentError(f"{name} has non-finite entries")
            if np.max(np.abs(m - m.T)) > 1e-12:
                raise InvalidArgumentError(f"{name} is not symmetric")
        if np.min(np.linalg.eigvalsh(q)) < -1e-12:
            raise InvalidArgumentError("q must be nonnegative definite")
        if np.min(np.linalg.eigvalsh(r)) <= 0:
            raise InvalidArgumentError("r must be positive definite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)

    @classmethod
    def diag(cls, q, r):
        return cls(np.diag(np.asarray(q, dtype=float)), np.diag(np.asarray(r, dtype=float)))

    def to_dict(self):
        return {"q": self.q.tolist(), "r": self.r.tolist()}


WEIGHT_PRESETS = {
    "paper-lq-velocity": WeightSpec.diag([1000, 0, 0, 0], [1000, 1000]),
    "paper-lq-pitch": WeightSpec.diag([0, 0, 0, 1000], [100, 100]),
    "paper-lqi-velocity": WeightSpec.diag([1, 1, 1, 1, 1], [0.1, 0.1]),
    "paper-lqi-pitch": WeightSpec.diag([0, 1, 0, 1, 100], [0.1, 10]),
    "paper-nonlinear": WeightSpec.diag([1, 100, 1, 100, 100], [0.1, 1000]),
}


@dataclass(frozen=True)
class TrackingTask:
    """A constant reference on one output channel.

    Attributes:
        mode: one of lq_finite, lqi, nonlinear_lqi
        channel: "V" or "theta"
        value: reference value (a perturbation from trim in linear modes)
    """

    mode: str
    channel: str = "V"
    value: float = 0.0
    duration: float = LINEAR_DURATION
    n_steps: int = LINEAR_STEPS

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown tracking mode {self.mode!r}")
        if self.channel not in CHANNELS:
            raise InvalidArgumentError(f"channel must be one of {sorted(CHANNELS)}, got {self.channel!r}")
        if not self.duration > 0:
            raise InvalidArgumentError("duration must be positive")
        if int(self.n_steps) < 1:
            raise InvalidArgumentError("n_steps must be positive")
        object.__setattr__(self, "value", float(self.value))

    @property
    def c_row(self):
        row = np.zeros(4)
        row[CHANNELS[self.channel]] = 1.0
        return row

    def grid(self):
        return TimeGrid(0.0, self.duration, int(self.n_steps))

    def to_dict(self):
        return {"mode": self.mode, "channel": self.channel, "value": self.value,
                "duration": self.duration, "n_steps": int(self.n_steps)}


@dataclass
class PerformanceReport:
    """L2 tracking errors and control cost of one closed-loop run.

    ``improvement`` holds percent reductions against a baseline report
    (positive means lower error or cost than the baseline).
    """

    mode: str
    tracking_error_l2: float
    control_cost_l2: float
    state_error_l2: dict
    saturation_fraction: float
    improvement: dict = None
    config: dict = field(default_factory=dict)

    def metrics(self):
        out = {"tracking_error_l2": self.tracking_error_l2,
               "control_cost_l2": self.control_cost_l2}
        out.update({f"{k}_error_l2": v for k, v in self.state_error_l2.items()})
        return out

    def with_baseline(self, baseline):
        """Copy of this report with percent improvements over ``baseline``."""
        base = baseline.metrics() if isinstance(baseline, PerformanceReport) else baseline
        improvement = {}
        for key, value in self.metrics().items():
            ref = base.get(key)
            improvement[key] = (100.0 * (ref - value) / ref) if ref else None
        return PerformanceReport(self.mode, self.tracking_error_l2, self.control_cost_l2,
                                 dict(self.state_error_l2), self.saturation_fraction,
                                 improvement, dict(self.config))

    def to_dict(self):
        return {
            "mode": self.mode,
            "tracking_error_l2": self.tracking_error_l2,
            "control_cost_l2": self.control_cost_l2,
            "state_error_l2": dict(self.state_error_l2),
            "saturation_fraction": self.saturation_fraction,
            "improvement_percent": self.improvement,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["mode"], data["tracking_error_l2"], data["control_cost_l2"],
                   dict(data["state_error_l2"]), data["saturation_fraction"],
                   data.get("improvement_percent"), data.get("config", {}))

    def dumps(self):
        return _jsonio.dumps(self.to_dict())


def _care_residual(a, s, q, p):
    return a.T @ p + p @ a - p @ s @ p + q


def solve_care(a, b, q, r):
    """Stabilizing solution of A'P + PA - P B R^-1 B' P + Q = 0.

    The stable invariant subspace of the Hamiltonian matrix gives the initial
    solution, which Newton-Kleinman iterations then refine.

    Raises:
        RiccatiError: the Hamiltonian has no n-dimensional stable subspace
            (pair not stabilizable, or imaginary-axis eigenvalues) or the
            refined residual misses tolerance
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    b = np.asarray(b, dtype=float).reshape(n, -1)
    w = WeightSpec(q, r)
    q, r = w.q, w.r
    s = b @ np.linalg.solve(r, b.T)
    s = 0.5 * (s + s.T)
    ham = np.block([[a, -s], [-q, -a.T]])
    t, z, sdim = scipy.linalg.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiError(f"Hamiltonian spectral split failed ({sdim} stable eigenvalues, need {n}); "
                           "pair is not stabilizable or has imaginary-axis modes")
    u11, u21 = z[:n, :n], z[n:, :n]
    if np.linalg.cond(u11) > 1e12:
        raise RiccatiError("stable subspace is not a graph; pair is not stabilizable")
    p = np.linalg.solve(u11.T, u21.T).T
    p = 0.5 * (p + p.T)

    tol = lambda pp: 1e-8 * (1.0 + np.linalg.norm(pp, "fro"))
    res = _care_residual(a, s, q, p)
    for _ in range(CARE_REFINE_ITER):
        if np.linalg.norm(res, "fro") < 0.01 * tol(p):
            break
        acl = a - s @ p
        if np.max(np.linalg.eigvals(acl).real) >= 0:
            break
        delta = scipy.linalg.solve_continuous_lyapunov(acl.T, -res)
        p_new = p + 0.5 * (delta + delta.T)
        res_new = _care_residual(a, s, q, p_new)
        if np.linalg.norm(res_new, "fro") >= np.linalg.norm(res, "fro"):
            break
        p, res = p_new, res_new
    if np.linalg.norm(res, "fro") >= tol(p):
        raise RiccatiError(f"CARE residual {np.linalg.norm(res, 'fro'):.3e} above tolerance")
    if np.max(np.linalg.eigvals(a - s @ p).real) >= 0:
        raise RiccatiError("CARE solution is not stabilizing")
    return p


def lqr_gain(a, b, q, r):
    """Infinite-horizon state-feedback gain K (u = -K x) and the CARE solution."""
    p = solve_care(a, b, q, r)
    b = np.asarray(b, dtype=float).reshape(p.shape[0], -1)
    k = np.linalg.solve(np.atleast_2d(np.asarray(r, dtype=float)), b.T @ p)
    return k, p


def augment_integrator(a, b, c_row):
    """Append z' = C x to the state: a_hat = [[A, 0], [C, 0]], b_hat = [[B], [0]]."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    b = np.asarray(b, dtype=float).reshape(n, -1)
    c = np.asarray(c_row, dtype=float).reshape(-1)
    if len(c) != n:
        raise InvalidArgumentError(f"c_row must have length {n}, got {len(c)}")
    a_hat = np.zeros((n + 1, n + 1))
    a_hat[:n, :n] = a
    a_hat[n, :n] = c
    b_hat = np.zeros((n + 1, b.shape[1]))
    b_hat[:n] = b
    return a_hat, b_hat


def solve_lq_tracking(sys, weights, x_ref, grid):
    """Finite-horizon LQ tracking law on ``grid``.

    Integrates the Riccati equation and the tracking adjoint backward from
    P(T) = 0, b(T) = 0 with RK4 on the grid step.

    Args:
        x_ref: reference states on the grid nodes, shape (N+1, n), or a single
            n-vector held constant
    Returns:
        (gains, feedforward): arrays of shape (N+1, m, n) and (N+1, m) such that
        u(t_k) = -gains[k] @ x + feedforward[k]
    """
    a, b = sys.a, sys.b
    n = a.shape[0]
    q, r = weights.q, weights.r
    if q.shape != (n, n) or r.shape != (b.shape[1],) * 2:
        raise InvalidArgumentError("weight dimensions do not match the system")
    n_steps = grid.n_steps
    x_ref = np.asarray(x_ref, dtype=float)
    if x_ref.ndim == 1:
        x_ref = np.tile(x_ref, (n_steps + 1, 1))
    if x_ref.shape != (n_steps + 1, n):
        raise InvalidArgumentError(f"x_ref must have shape {(n_steps + 1, n)}")
    r_inv_bt = np.linalg.solve(r, b.T)
    s = b @ r_inv_bt
    qx = x_ref @ q.T

    # tau = T - t runs forward; f returns d/dtau of (P, b)
    def f(p, bb, qxr):
        return a.T @ p + p @ a - p @ s @ p + q, (a - s @ p).T @ bb + qxr

    dt = grid.dt
    ps = np.zeros((n_steps + 1, n, n))
    bs = np.zeros((n_steps + 1, n))
    p, bb = np.zeros((n, n)), np.zeros(n)
    for k in range(n_steps, 0, -1):
        q_hi, q_lo = qx[k], qx[k - 1]
        q_mid = 0.5 * (q_hi + q_lo)
        k1p, k1b = f(p, bb, q_hi)
        k2p, k2b = f(p + 0.5 * dt * k1p, bb + 0.5 * dt * k1b, q_mid)
        k3p, k3b = f(p + 0.5 * dt * k2p, bb + 0.5 * dt * k2b, q_mid)
        k4p, k4b = f(p + dt * k3p, bb + dt * k3b, q_lo)
        p = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        bb = bb + dt / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
        p = 0.5 * (p + p.T)
        if not np.all(np.isfinite(p)) or np.linalg.norm(p) > BLOWUP_NORM:
            raise HorizonTooLongError(f"Riccati solution blew up at t = {grid.times[k - 1]:.6g}")
        ps[k - 1], bs[k - 1] = p, bb
    gains = np.einsum("ij,kjl->kil", r_inv_bt, ps)
    feedforward = bs @ r_inv_bt.T
    return gains, feedforward


def _rk4_step(f, t, x, dt):
    k1 = f(t, x, 0)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1, 1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2, 1)
    k4 = f(t + dt, x + dt * k3, 2)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _saturation_fraction(inputs, lower, upper, tol=1e-12):
    u = np.asarray(inputs)
    on_bound = (np.abs(u - lower) <= tol) | (np.abs(u - upper) <= tol)
    return float(np.mean(on_bound)) if u.size else 0.0


def simulate_linear_tracking(sys, box, task, weights, grid=None):
    """Closed-loop RK4 simulation of the linear model with saturated inputs.

    The commanded control is clipped to ``box`` at every RK4 stage.  In
    lq_finite mode the law comes from :func:`solve_lq_tracking`; in lqi mode
    from the CARE gain of the integrator-augmented system.

    Returns:
        (Trajectory, PerformanceReport); ``trajectory.meta["final_input"]`` holds
        the control at the last grid node.
    """
    if task.mode not in ("lq_finite", "lqi"):
        raise InvalidArgumentError(f"linear simulation does not support mode {task.mode!r}")
    grid = grid or task.grid()
    n, dt, n_steps = sys.n_states, grid.dt, grid.n_steps
    c_row = task.c_row
    ref = task.value
    lo, hi = box.lower, box.upper

    if task.mode == "lq_finite":
        # schedule on the half-step grid so RK4 stages land on schedule nodes
        fine = TimeGrid(grid.t0, grid.t_final, 2 * n_steps)
        gains, ff = solve_lq_tracking(sys, weights, ref * c_row, fine)

        def control(k, stage, xs):
            j = 2 * k + stage
            return np.clip(-gains[j] @ xs + ff[j], lo, hi)

        def rhs_state(xs, u):
            return sys.a @ xs + sys.b @ u
        x = np.zeros(n)
    else:
        a_hat, b_hat = augment_integrator(sys.a, sys.b, c_row)
        k_gain, _ = lqr_gain(a_hat, b_hat, weights.q, weights.r)
        forcing = np.zeros(n + 1)
        forcing[n] = -ref

        def control(k, stage, xs):
            return np.clip(-k_gain @ xs, lo, hi)

        def rhs_state(xs, u):
            return a_hat @ xs + b_hat @ u + forcing
        x = np.zeros(n + 1)

    states = np.empty((n_steps + 1, len(x)))
    inputs = np.empty((n_steps + 1, sys.n_inputs))
    states[0] = x
    for k in range(n_steps):
        inputs[k] = control(k, 0, x)

        def f(t, xs, stage, k=k):
            return rhs_state(xs, control(k, stage, xs))
        x = _rk4_step(f, grid.times[k], x, dt)
        if not np.all(np.isfinite(x)):
            raise RiccatiError(f"closed-loop simulation overflowed at t = {grid.times[k + 1]:.6g}")
        states[k + 1] = x
    inputs[-1] = control(n_steps, 0, x) if task.mode == "lqi" else np.clip(
        -gains[-1] @ x + ff[-1], lo, hi)

    x_states = states[:, :n]
    x_ref = ref * c_row
    err = x_states - x_ref
    report = PerformanceReport(
        mode=task.mode,
        tracking_error_l2=l2_norm(x_states @ c_row - ref, dt),
        control_cost_l2=l2_norm(inputs, dt),
        state_error_l2={lab: l2_norm(err[:, i], dt) for i, lab in enumerate(STATE_LABELS)},
        saturation_fraction=_saturation_fraction(inputs, lo, hi),
        config={"task": task.to_dict(), "weights": weights.to_dict(), "grid": grid.to_dict(),
                "input_box": box.to_dict()},
    )
    meta = {"final_input": inputs[-1], "coordinates": "perturbation"}
    if task.mode == "lqi":
        meta["integrator"] = states[:, n]
    traj = Trajectory(grid.times, x_states, inputs[:-1], meta)
    return traj, report


@dataclass(frozen=True)
class ManeuverPhase:
    v0: float
    gamma: float
    duration: float


NONLINEAR_PHASES = (
    ManeuverPhase(190.0, float(np.radians(10.0)), 20.0),
    ManeuverPhase(210.0, 0.0, 20.0),
)
NONLINEAR_DT = 0.01


def _phase_controller(design, table, params, phase, weights):
    tp = trim(design, table, params, phase.v0, phase.gamma)
    sys, _ = linearize(design, table, params, tp)
    a_hat, b_hat = augment_integrator(sys.a, sys.b, np.array([0.0, 0.0, 0.0, 1.0]))
    k_gain, _ = lqr_gain(a_hat, b_hat, weights.q, weights.r)
    return tp, k_gain


def simulate_nonlinear_tracking(design, table, params=None, phases=NONLINEAR_PHASES,
                                weights=None, dt=NONLINEAR_DT, initial_state=None):
    """Two-phase nonlinear maneuver under per-phase LQI control on pitch.

    Each phase trims at its own (V0, gamma), linearizes there and computes an
    LQI gain with an integrator on pitch angle.  The controller and its
    integrator state switch (integrator reset to zero) exactly at each phase
    boundary.  Absolute inputs are clipped to throttle [0, 1] and elevator
    [-0.523, 0.523] at every RK4 stage.

    Args:
        initial_state: absolute (V, alpha, Q, theta); defaults to level-flight
            trim at the first phase's airspeed

    Returns:
        (Trajectory, PerformanceReport).  The trajectory holds absolute states
        and inputs; ``meta`` carries the deviation series, per-phase trims and
        the deviation jump at each switch.
    """
    params = params or AircraftParams()
    design = design if isinstance(design, Design) else Design(*design)
    weights = weights or WEIGHT_PRESETS["paper-nonlinear"]
    steps = [int(round(ph.duration / dt)) for ph in phases]
    if any(s < 1 or not np.isclose(s * dt, ph.duration, rtol=0, atol=1e-9)
           for s, ph in zip(steps, phases)):
        raise InvalidArgumentError("phase durations must be positive multiples of dt")
    controllers = [_phase_controller(design, table, params, ph, weights) for ph in phases]
    if initial_state is None:
        level = trim(design, table, params, phases[0].v0, 0.0)
        initial_state = level.state
    x = np.asarray(initial_state, dtype=float).copy()
    lo = np.array([THROTTLE_RANGE[0], ELEVATOR_RANGE[0]])
    hi = np.array([THROTTLE_RANGE[1], ELEVATOR_RANGE[1]])

    n_total = sum(steps)
    grid = TimeGrid(0.0, n_total * dt, n_total)
    states = np.empty((n_total + 1, 4))
    inputs = np.empty((n_total + 1, 2))
    states[0] = x
    phase_segments = []
    switch_jumps = []
    k = 0
    for idx, ((tp, k_gain), n_ph) in enumerate(zip(controllers, steps)):
        x0, u0 = tp.state, tp.inputs

        def control(xz):
            return np.clip(u0 - k_gain @ np.concatenate([xz[:4] - x0, xz[4:]]), lo, hi)

        def f(t, xz, stage):
            u = control(xz)
            dx = nonlinear_rhs(xz[:4], u, design, table, params)
            return np.concatenate([dx, [xz[3] - x0[3]]])

        if idx > 0:
            prev = controllers[idx - 1][0].state
            switch_jumps.append({"t": float(grid.times[k]), "jump": (prev - x0).tolist()})
        xz = np.concatenate([x, [0.0]])
        start = k
        for _ in range(n_ph):
            inputs[k] = control(xz)
            xz = _rk4_step(f, grid.times[k], xz, dt)
            k += 1
            states[k] = xz[:4]
        x = xz[:4]
        phase_segments.append((start, k, x0, u0))
        inputs[k] = control(xz)

    # per-phase deviations; each phase's segment includes both its endpoints
    dev_sq = np.zeros(4)
    ctl_sq = 0.0
    deviations = np.empty_like(states)
    input_dev = np.empty_like(inputs)
    for start, stop, x0, u0 in phase_segments:
        seg = states[start:stop + 1] - x0
        useg = inputs[start:stop + 1] - u0
        # at a switch node the later phase's trim wins
        deviations[start:stop + 1] = seg
        input_dev[start:stop + 1] = useg
        dev_sq += np.array([l2_norm(seg[:, i], dt) ** 2 for i in range(4)])
        ctl_sq += l2_norm(useg, dt) ** 2
    state_err = {lab: float(np.sqrt(v)) for lab, v in zip(STATE_LABELS, dev_sq)}
    report = PerformanceReport(
        mode="nonlinear_lqi",
        tracking_error_l2=float(np.sqrt(dev_sq.sum())),
        control_cost_l2=float(np.sqrt(ctl_sq)),
        state_error_l2=state_err,
        saturation_fraction=_saturation_fraction(inputs, lo, hi),
        config={
            "design": {"c": design.c, "w": design.w},
            "phases": [{"v0": ph.v0, "gamma": ph.gamma, "duration": ph.duration} for ph in phases],
            "weights": weights.to_dict(),
            "dt": dt,
            "initial_state": np.asarray(initial_state, dtype=float).tolist(),
            "trims": [tp.to_dict() for tp, _ in controllers],
        },
    )
    meta = {
        "final_input": inputs[-1],
        "coordinates": "absolute",
        "deviations": deviations,
        "input_deviations": input_dev,
        "trims": [tp for tp, _ in controllers],
        "switch_jumps": switch_jumps,
    }
    return Trajectory(grid.times, states, inputs[:-1], meta), report


def trajectory_csv(traj):
    """CSV text with header t,V,alpha,Q,theta,delta_th,delta_e at 12 significant digits."""
    final = np.asarray(traj.meta.get("final_input", traj.inputs[-1] if len(traj.inputs) else [0, 0]))
    inputs = np.vstack([traj.inputs, final[None, :]])
    lines = ["t,V,alpha,Q,theta,delta_th,delta_e"]
    for t, xs, u in zip(traj.times, traj.states, inputs):
        lines.append(",".join(f"{v:.12g}" for v in (t, *xs, *u)))
    return "\n".join(lines) + "\n"


def default_linear_system(design=(5.0, 12.0), table=None, params=None, v0=200.0, gamma=0.0):
    """Linear model and input box of the shipped surrogate at a design's trim."""
    from .aero import default_table

    table = table or default_table()
    params = params or AircraftParams()
    tp = trim(design, table, params, v0, gamma)
    sys, box = linearize(design, table, params, tp)
    return sys, box, tp


__all__ = [
    "CHANNELS", "MODES", "WEIGHT_PRESETS", "REFERENCE_PRESETS", "NONLINEAR_PHASES",
    "WeightSpec", "TrackingTask", "PerformanceReport", "ManeuverPhase",
    "l2_norm", "solve_care", "lqr_gain", "augment_integrator", "solve_lq_tracking",
    "simulate_linear_tracking", "simulate_nonlinear_tracking", "trajectory_csv",
    "default_linear_system"
]
