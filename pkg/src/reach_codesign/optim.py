"""Design optimization over (c, w) with reachable-set metrics.

The solver is a small SQP method specialised to two variables: BFGS Hessian
of the (negated, normalised) objective, a quadratic subproblem with box bounds
and at most one linearised inequality solved by enumerating active sets, and
an l1-merit backtracking line search.  Gradients are central finite
differences.
"""

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _jsonio
from .aero import AircraftParams, default_table
from .errors import InvalidArgumentError, NumericalError, ObjectiveEvaluationError
from .flight import DESIGN_BOUNDS, Design, linearize, trim
from .lti import TimeGrid
from .reach import DEFAULT_DIRECTIONS, DEFAULT_HORIZON, sample_reach_set, support_length

FD_STEP = 0.05
DEFAULT_KAPPA = 0.15
DEFAULT_V = (0.0, 0.0, math.cos(math.radians(110.0)), math.sin(math.radians(110.0)))
PROBLEM_KINDS = ("VM", "DM", "VMDC")

STEP_TOL = 1e-3
REL_F_TOL = 1e-6
MAX_ITER = 100
LS_FACTOR = 0.5
LS_MAX = 20
ARMIJO = 1e-4


def thread_count():
    """Worker cap from REACH_CODESIGN_THREADS (0 or unset = auto)."""
    raw = os.environ.get("REACH_CODESIGN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, os.cpu_count() or 1) if n <= 0 else n


@dataclass(frozen=True)
class ReachContext:
    """Everything needed to turn a design into a linear model and a reach set."""

    table: object = None
    params: AircraftParams = field(default_factory=AircraftParams)
    airspeed: float = 200.0
    gamma: float = 0.0
    horizon: float = DEFAULT_HORIZON
    n_steps: int = 200
    directions: int = DEFAULT_DIRECTIONS
    seed: int = 0

    def __post_init__(self):
        if self.table is None:
            object.__setattr__(self, "table", default_table())
        object.__setattr__(self, "_cache", {})

    @property
    def grid(self):
        return TimeGrid(0.0, self.horizon, self.n_steps)

    def linear_model(self, d):
        design = d if isinstance(d, Design) else Design(*d)
        key = (design.c, design.w)
        if key not in self._cache:
            try:
                tp = trim(design, self.table, self.params, self.airspeed, self.gamma)
            except NumericalError as exc:
                raise ObjectiveEvaluationError(
                    f"trim failed at design {key}: {exc}", design=key, cause=exc) from exc
            self._cache[key] = linearize(design, self.table, self.params, tp)
        return self._cache[key]

    def to_dict(self):
        return {"airspeed": self.airspeed, "gamma": self.gamma, "horizon": self.horizon,
                "n_steps": self.n_steps, "directions": self.directions, "seed": self.seed,
                "params": self.params.to_dict()}


def objective_vm(d, ctx):
    """Hull volume of the sampled reachable set at design ``d``."""
    sys, box = ctx.linear_model(d)
    rs = sample_reach_set(sys, box, ctx.directions, ctx.grid, ctx.seed)
    return rs.volume()


def objective_dm(d, v, ctx):
    """Length of the reachable set's projection onto the unit vector ``v``."""
    sys, box = ctx.linear_model(d)
    return support_length(sys, box, v, ctx.grid)


def constraint_vmdc(d, v, kappa, baseline, ctx):
    """Projection floor: nonnegative iff the projection beats (1 + kappa) * baseline."""
    return objective_dm(d, v, ctx) - (1.0 + kappa) * baseline


@dataclass
class OptProblem:
    kind: str
    d0: tuple = (5.0, 12.0)
    v: tuple = None
    kappa: float = None
    bounds: tuple = DESIGN_BOUNDS
    context: ReachContext = None
    baseline_projection: float = None

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in PROBLEM_KINDS:
            raise InvalidArgumentError(f"unknown problem kind {self.kind!r}")
        if self.kind in ("DM", "VMDC"):
            v = np.asarray(DEFAULT_V if self.v is None else self.v, dtype=float)
            if v.shape != (4,) or abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise InvalidArgumentError("v must be a unit 4-vector")
            self.v = tuple(float(x) for x in v)
        if self.kind == "VMDC":
            self.kappa = DEFAULT_KAPPA if self.kappa is None else float(self.kappa)
            if not 0.0 <= self.kappa <= 1.0:
                raise InvalidArgumentError("kappa must lie in [0, 1]")
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        d0 = np.asarray(self.d0, dtype=float)
        if np.any(d0 < lo) or np.any(d0 > hi):
            raise InvalidArgumentError(f"d0 = {self.d0} outside the design box")
        self.d0 = tuple(float(x) for x in d0)

    def to_dict(self):
        out = {"kind": self.kind, "d0": list(self.d0),
               "bounds": [list(b) for b in self.bounds]}
        if self.v is not None:
            out["v"] = list(self.v)
        if self.kappa is not None:
            out["kappa"] = self.kappa
        if self.baseline_projection is not None:
            out["baseline_projection"] = self.baseline_projection
        if self.context is not None:
            out["reach_config"] = self.context.to_dict()
        return out


@dataclass
class Evaluators:
    """Objective (to maximize) and optional constraint (feasible when >= 0)."""

    objective: callable
    constraint: callable = None


def make_evaluators(problem):
    """Bind the reach metrics of ``problem`` into plain callables of a 2-vector."""
    ctx = problem.context or ReachContext()
    problem.context = ctx
    if problem.kind == "VM":
        return Evaluators(lambda d: objective_vm(d, ctx))
    if problem.kind == "DM":
        return Evaluators(lambda d: objective_dm(d, problem.v, ctx))
    if problem.baseline_projection is None:
        problem.baseline_projection = objective_dm(problem.d0, problem.v, ctx)
    base = problem.baseline_projection
    return Evaluators(lambda d: objective_vm(d, ctx),
                      lambda d: constraint_vmdc(d, problem.v, problem.kappa, base, ctx))


def fd_gradient(f, d, h=FD_STEP, bounds=DESIGN_BOUNDS, f0=None, executor=None):
    """Central-difference gradient; one-sided at active bounds.

    Args:
        f: scalar function of a 2-vector
        f0: f(d) if already known (used by one-sided differences)
    """
    d = np.asarray(d, dtype=float)
    points, plan = [], []
    for i, (lo, hi) in enumerate(bounds):
        e = np.zeros_like(d)
        e[i] = h
        up, down = d[i] + h <= hi, d[i] - h >= lo
        if up and down:
            plan.append(("c", len(points)))
            points += [d + e, d - e]
        elif up:
            plan.append(("f", len(points)))
            points.append(d + e)
        elif down:
            plan.append(("b", len(points)))
            points.append(d - e)
        else:
            raise InvalidArgumentError(f"finite-difference step {h} exceeds the box width")
    if f0 is None and any(kind != "c" for kind, _ in plan):
        f0 = f(d)

    def safe(p):
        try:
            return f(p)
        except ObjectiveEvaluationError:
            raise
        except NumericalError as exc:
            raise ObjectiveEvaluationError(str(exc), design=tuple(p), cause=exc) from exc

    values = list(executor.map(safe, points)) if executor else [safe(p) for p in points]
    grad = np.empty_like(d)
    for i, (kind, j) in enumerate(plan):
        if kind == "c":
            grad[i] = (values[j] - values[j + 1]) / (2 * h)
        elif kind == "f":
            grad[i] = (values[j] - f0) / h
        else:
            grad[i] = (f0 - values[j]) / h
    return grad


def solve_box_qp(hess, grad, lower, upper, lin=None):
    """min 0.5 p'Hp + g'p  s.t. lower <= p <= upper and a'p >= b for (a, b) = lin.

    Exact for two variables: every active set of size <= 2 is tried and the
    feasible KKT point with nonnegative multipliers and lowest value wins.

    Returns:
        (p, multipliers) where multipliers maps constraint index -> value;
        index 0..3 are the bounds (lower c, lower w, upper c, upper w), 4 the
        linear constraint.  None if the subproblem is infeasible.
    """
    n = len(grad)
    rows = [np.eye(n)[i] for i in range(n)] + [-np.eye(n)[i] for i in range(n)]
    rhs = list(lower) + [-u for u in upper]
    if lin is not None:
        rows.append(np.asarray(lin[0], dtype=float))
        rhs.append(float(lin[1]))
    rows = np.array(rows)
    rhs = np.array(rhs)
    best = None
    for size in range(0, n + 1):
        for active in itertools.combinations(range(len(rows)), size):
            a_w = rows[list(active)].reshape(size, n)
            if size and np.linalg.matrix_rank(a_w) < size:
                continue
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = hess
            kkt[:n, n:] = -a_w.T
            kkt[n:, :n] = a_w
            try:
                sol = np.linalg.solve(kkt, np.concatenate([-grad, rhs[list(active)]]))
            except np.linalg.LinAlgError:
                continue
            p, lam = sol[:n], sol[n:]
            if np.any(lam < -1e-12) or np.any(rows @ p - rhs < -1e-10):
                continue
            val = 0.5 * p @ hess @ p + grad @ p
            if best is None or val < best[0] - 1e-15:
                best = (val, p, dict(zip(active, lam)))
    if best is None:
        return None
    return best[1], best[2]


@dataclass
class OptResult:
    d_star: tuple
    objective_history: list
    kkt_residual: float
    iterations: int
    constraint_values: list
    status: str
    per_iteration: list = field(default_factory=list)
    problem: dict = field(default_factory=dict)
    evaluations: int = 0

    def to_dict(self):
        return {
            "problem": self.problem,
            "d_star": list(self.d_star),
            "objective_history": list(self.objective_history),
            "constraint_values": list(self.constraint_values),
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "status": self.status,
            "evaluations": self.evaluations,
            "per_iteration": self.per_iteration,
        }

    def dumps(self):
        return _jsonio.dumps(self.to_dict())


class _Cached:
    """Memoized scalar function of a design; keys are exact coordinates."""

    def __init__(self, f, scale=1.0):
        self.f = f
        self.scale = scale
        self.cache = {}

    def __call__(self, d):
        key = tuple(float(x) for x in d)
        if key not in self.cache:
            self.cache[key] = self.f(np.array(key))
        return self.cache[key] / self.scale


def _bfgs_update(hess, s, y):
    # Powell damping keeps the update positive definite
    hs = hess @ s
    shs = s @ hs
    if shs <= 0:
        return hess
    sy = s @ y
    theta = 1.0 if sy >= 0.2 * shs else 0.8 * shs / (shs - sy)
    r = theta * y + (1 - theta) * hs
    return hess - np.outer(hs, hs) / shs + np.outer(r, r) / (s @ r)


def _projected_residual(grad_l, d, lo, hi, tol=1e-9):
    res = grad_l.copy()
    at_lo = d <= lo + tol
    at_hi = d >= hi - tol
    # minimization form: at a lower bound only negative components are admissible
    res[at_lo] = np.minimum(res[at_lo], 0.0)
    res[at_hi] = np.maximum(res[at_hi], 0.0)
    return res


class _Sqp:
    def __init__(self, objective, constraint, bounds, h, executor):
        self.lo = np.array([b[0] for b in bounds], dtype=float)
        self.hi = np.array([b[1] for b in bounds], dtype=float)
        self.bounds = bounds
        self.phi = objective  # minimized
        self.con = constraint
        self.h = h
        self.executor = executor

    def snap(self, d):
        # d + (hi - d) can miss hi by an ulp; land exactly on the bound
        d = np.clip(d, self.lo, self.hi)
        d = np.where(np.abs(d - self.lo) < 1e-12, self.lo, d)
        return np.where(np.abs(d - self.hi) < 1e-12, self.hi, d)

    def grad(self, f, d):
        return fd_gradient(f, d, self.h, self.bounds, f0=f(d), executor=self.executor)

    def kkt(self, d, g_phi, g_con, con_val):
        lam = 0.0
        if self.con is not None and abs(con_val) < 1e-6:
            free = (d > self.lo + 1e-9) & (d < self.hi - 1e-9)
            if np.any(free) and np.any(g_con[free]):
                lam = max(0.0, float(g_phi[free] @ g_con[free] / (g_con[free] @ g_con[free])))
        res = _projected_residual(g_phi - lam * g_con if self.con else g_phi, d, self.lo, self.hi)
        return float(np.max(np.abs(res))), lam

    def run(self, d, max_iter, log, stop=None, mu=0.0):
        """Iterate from d; returns (d, status, iterations, mu, last kkt residual)."""
        con = self.con
        hess = np.eye(len(d))
        f = self.phi(d)
        g_phi = self.grad(self.phi, d)
        c = con(d) if con else 0.0
        g_con = self.grad(con, d) if con else np.zeros_like(d)
        status = "max_iter"
        log.append({"d": d.tolist(), "step": 0.0, "merit_before": None, "merit_after": None,
                    "mu": mu, "start": True})
        it = 0
        for it in range(1, max_iter + 1):
            lin = (g_con, -c) if con else None
            sol = solve_box_qp(hess, g_phi, self.lo - d, self.hi - d, lin)
            if sol is None:
                # linearized constraint cannot be met inside the box: drop it this step
                sol = solve_box_qp(hess, g_phi - 1e3 * g_con, self.lo - d, self.hi - d)
            p, mults = sol
            lam = mults.get(4, 0.0)
            mu = max(mu, 1.5 * abs(lam) + 1e-8) if con else 0.0

            def merit(fv, cv):
                return fv + mu * max(0.0, -cv)

            m0 = merit(f, c)
            slope = g_phi @ p - mu * max(0.0, -c)
            if np.max(np.abs(p)) < 1e-12:
                status = "converged"
                it -= 1
                break
            step = 1.0
            for _ in range(LS_MAX):
                d_new = self.snap(d + step * p)
                f_new = self.phi(d_new)
                c_new = con(d_new) if con else 0.0
                if merit(f_new, c_new) <= m0 + ARMIJO * step * min(slope, 0.0):
                    break
                step *= LS_FACTOR
            else:
                status = "line_search_failure"
                break
            g_phi_new = self.grad(self.phi, d_new)
            g_con_new = self.grad(con, d_new) if con else np.zeros_like(d)
            s = d_new - d
            y = (g_phi_new - lam * g_con_new) - (g_phi - lam * g_con)
            hess = _bfgs_update(hess, s, y)
            df = abs(f_new - f) / max(abs(f_new), 1e-12)
            log.append({"d": d_new.tolist(), "step": step, "merit_before": m0,
                        "merit_after": merit(f_new, c_new), "mu": mu, "start": False})
            d, f, c, g_phi, g_con = d_new, f_new, c_new, g_phi_new, g_con_new
            if stop is not None and stop(d, f, c):
                status = "converged"
                break
            if np.max(np.abs(s)) < STEP_TOL or df < REL_F_TOL:
                status = "converged"
                break
        kkt, _ = self.kkt(d, g_phi, g_con, c)
        return d, status, it, mu, kkt


def solve(problem, evaluators=None, h=FD_STEP, max_iter=MAX_ITER):
    """Maximize the problem's objective over the design box with SQP.

    For VMDC starts that violate the projection floor, a restoration phase
    first maximizes the constraint until it is satisfied.
    """
    if evaluators is None:
        evaluators = make_evaluators(problem)
    bounds = problem.bounds
    d0 = np.array(problem.d0, dtype=float)

    def wrap(fun):
        def inner(d):
            try:
                return float(fun(d))
            except ObjectiveEvaluationError:
                raise
            except NumericalError as exc:
                raise ObjectiveEvaluationError(str(exc), design=tuple(d), cause=exc) from exc
        return inner

    obj_raw = wrap(evaluators.objective)
    f_scale = max(abs(obj_raw(d0)), 1e-12)
    objective = _Cached(obj_raw, f_scale)
    phi = _Cached(lambda d: -objective(d), 1.0)
    constraint = None
    if evaluators.constraint is not None:
        con_raw = wrap(evaluators.constraint)
        c_scale = max(abs(con_raw(d0)), 1e-12)
        constraint = _Cached(con_raw, c_scale)

    workers = thread_count()
    executor = ThreadPoolExecutor(workers) if workers > 1 else None
    log = []
    try:
        d = d0
        iterations = 0
        status = "converged"
        if constraint is not None and constraint(d) < 0:
            restore = _Sqp(_Cached(lambda x: -constraint(x)), None, bounds, h, executor)
            d, status, it, _, _ = restore.run(d, max_iter, log, stop=lambda x, fx, cx: fx <= 0)
            iterations += it
            for entry in log:
                entry["phase"] = "restoration"
            if constraint(d) < 0:
                status = "line_search_failure" if status != "max_iter" else status
        if constraint is None or constraint(d) >= 0:
            main = _Sqp(phi, constraint, bounds, h, executor)
            n_before = len(log)
            d, status, it, _, kkt = main.run(d, max_iter - iterations, log)
            iterations += it
            for entry in log[n_before:]:
                entry["phase"] = "optimality"
        else:
            kkt = float("nan")
    finally:
        if executor:
            executor.shutdown()

    per_iteration = []
    for entry in log:
        x = entry["d"]
        per_iteration.append({
            "d": x,
            "f": objective(x) * f_scale,
            "g": constraint(x) * constraint.scale if constraint else None,
            "phase": entry["phase"],
            "start": entry["start"],
            "step": entry["step"],
            "merit_before": entry["merit_before"],
            "merit_after": entry["merit_after"],
        })
    history = [e["f"] for e in per_iteration if e["phase"] == "optimality"]
    con_values = [e["g"] for e in per_iteration if e["g"] is not None]
    evals = len(objective.cache) + (len(constraint.cache) if constraint else 0)
    return OptResult(
        d_star=tuple(float(x) for x in d),
        objective_history=history,
        kkt_residual=kkt,
        iterations=iterations,
        constraint_values=con_values,
        status=status,
        per_iteration=per_iteration,
        problem=problem.to_dict(),
        evaluations=evals,
    )
