"""Reachable sets of LTI systems under box-bounded inputs.

Exposed points of the reachable set R(T) from x(t0) = 0 are endpoints of
bang-bang trajectories: for a direction c, each input channel sits at its
upper bound where the switching function psi(t; c) = c^T e^{A(T-t)} B is
nonnegative and at its lower bound elsewhere.  Sampling k directions and
taking the convex hull of the resulting endpoints gives an inner
approximation of R(T) whose vertices are exact points of the set.
"""

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from . import _jsonio
from .errors import InvalidArgumentError, NumericalError
from .lti import TimeGrid, discretize, expm, propagate_pwc

DEFAULT_DIRECTIONS = 256
DEFAULT_HORIZON = 2.0
MIN_DIRECTIONS = 5
RANK_TOL = 1e-10


class DegenerateHullWarning(UserWarning):
    """Raised (as a warning) when a point cloud spans fewer than n dimensions."""


@dataclass(frozen=True)
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise InvalidArgumentError("lower and upper bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidArgumentError("input bounds must be finite")
        if np.any(lo > hi):
            raise InvalidArgumentError(f"lower bound exceeds upper bound: {lo} > {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        return 0.5 * (self.upper - self.lower)

    def clip(self, u):
        return np.clip(u, self.lower, self.upper)

    def contains_origin_strictly(self):
        return bool(np.all(self.lower < 0) and np.all(self.upper > 0))

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class ReachSet:
    vertices: np.ndarray
    directions: np.ndarray
    horizon: TimeGrid
    system_fingerprint: str
    seed: int

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        d = np.array(self.directions, dtype=float)
        if v.ndim != 2 or d.shape != v.shape:
            raise InvalidArgumentError("vertices and directions must be matching (k, n) arrays")
        if len(v) < MIN_DIRECTIONS:
            raise InvalidArgumentError(f"a reach set needs at least {MIN_DIRECTIONS} vertices")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-12):
            raise InvalidArgumentError("directions must have unit norm")
        v.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "directions", d)

    @property
    def k(self):
        return len(self.vertices)

    def volume(self):
        return hull_volume(self.vertices)

    def interval_length(self, v):
        """Extent of the stored vertices along ``v`` (max - min of v^T x)."""
        proj = self.vertices @ _unit(v)
        return float(proj.max() - proj.min())

    def to_dict(self):
        return {
            "seed": int(self.seed),
            "horizon": self.horizon.to_dict(),
            "directions": self.directions.tolist(),
            "vertices": self.vertices.tolist(),
            "system_fingerprint": self.system_fingerprint,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            h = data["horizon"]
            return cls(
                vertices=np.asarray(data["vertices"], dtype=float),
                directions=np.asarray(data["directions"], dtype=float),
                horizon=TimeGrid(float(h["t0"]), float(h["t_final"]), int(h["n_steps"])),
                system_fingerprint=str(data["system_fingerprint"]),
                seed=int(data["seed"]),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"malformed reach-set record: {exc}") from exc

    def dumps(self, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        return _jsonio.dumps(payload)


def _unit(v, tol=1e-9):
    v = np.asarray(v, dtype=float).reshape(-1)
    if abs(np.linalg.norm(v) - 1.0) > tol:
        raise InvalidArgumentError(f"direction must be a unit vector, |v| = {np.linalg.norm(v)}")
    return v


def _direction(c, n):
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape != (n,):
        raise InvalidArgumentError(f"direction must have length {n}")
    if not np.any(c):
        raise InvalidArgumentError("direction must be nonzero")
    return c


def system_fingerprint(sys, box):
    h = hashlib.sha256()
    for arr in (sys.a, sys.b, box.lower, box.upper):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def _kernels(sys, grid):
    """Per-step switching kernels e^{A(T - t_mid)} B and forcing maps.

    Returns (psi_kernel, forcing) of shape (N, n, m): psi_kernel[j] is the
    matrix whose c-projection is psi at the j-th step midpoint; forcing[j] is
    the map from the (constant) input on step j to its contribution to x(T).
    """
    n, m = sys.n_states, sys.n_inputs
    N = grid.n_steps
    a_d, b_d = discretize(sys, grid.dt)
    half = expm(sys.a, 0.5 * grid.dt)
    psi_kernel = np.empty((N, n, m))
    forcing = np.empty((N, n, m))
    psi_kernel[-1] = half @ sys.b
    forcing[-1] = b_d
    for j in range(N - 2, -1, -1):
        psi_kernel[j] = a_d @ psi_kernel[j + 1]
        forcing[j] = a_d @ forcing[j + 1]
    return psi_kernel, forcing


def switching_function(sys, c, grid):
    """psi(t_k; c) = c^T e^{A(T - t_k)} B at every step midpoint t_k.

    Returns:
        array of shape (n_steps, m)
    """
    c = _direction(c, sys.n_states)
    psi_kernel, _ = _kernels(sys, grid)
    return np.einsum("n,jnm->jm", c, psi_kernel)


def _select(psi, box):
    # ties (psi == 0) go to the upper bound
    return np.where(psi >= 0, box.upper, box.lower)


def bangbang_control(sys, box, c, grid):
    """Per-step extremal input for direction ``c``: upper where psi >= 0."""
    if box.lower.shape != (sys.n_inputs,):
        raise InvalidArgumentError("input box dimension does not match B")
    return _select(switching_function(sys, c, grid), box)


def extreme_point(sys, box, c, grid):
    """State at T reached from the origin under the bang-bang input for ``c``."""
    u = bangbang_control(sys, box, c, grid)
    traj = propagate_pwc(sys, np.zeros(sys.n_states), u, grid)
    return traj.final_state


def extreme_points(sys, box, directions, grid):
    """Vectorized ``extreme_point`` over the rows of ``directions``."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if directions.shape[1] != sys.n_states:
        raise InvalidArgumentError(f"directions must have {sys.n_states} columns")
    if np.any(~directions.any(axis=1)):
        raise InvalidArgumentError("direction must be nonzero")
    if box.lower.shape != (sys.n_inputs,):
        raise InvalidArgumentError("input box dimension does not match B")
    psi_kernel, forcing = _kernels(sys, grid)
    psi = np.einsum("kn,jnm->kjm", directions, psi_kernel)
    u = _select(psi, box)
    return np.einsum("jnm,kjm->kn", forcing, u)


def support_length(sys, box, v, grid):
    """h(v) + h(-v): length of the projection of R(T) onto span(v)."""
    v = _unit(v)
    if v.shape != (sys.n_states,):
        raise InvalidArgumentError(f"direction must have length {sys.n_states}")
    pts = extreme_points(sys, box, np.vstack([v, -v]), grid)
    return float(max(v @ pts[0] - v @ pts[1], 0.0))


def sample_directions(k, n, seed):
    """k unit vectors uniform on S^{n-1} from a Philox stream.

    The stream is consumed row by row, so the first k rows for a larger k are
    the same directions.
    """
    rng = np.random.Generator(np.random.Philox(int(seed)))
    g = rng.standard_normal((k, n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


def sample_reach_set(sys, box, k=DEFAULT_DIRECTIONS, grid=None, seed=0, directions=None):
    """Sample k exposed points of R(T).

    Args:
        k: number of directions (>= 5)
        grid: horizon; defaults to [0, 2] s with 200 steps
        seed: Philox seed for the directions
        directions: optional explicit (k, n) directions, normalized here;
            overrides ``k``/``seed`` sampling
    """
    if grid is None:
        grid = TimeGrid(0.0, DEFAULT_HORIZON)
    if directions is None:
        if int(k) != k or k < MIN_DIRECTIONS:
            raise InvalidArgumentError(f"need k >= {MIN_DIRECTIONS} directions, got {k}")
        if seed < 0:
            raise InvalidArgumentError("seed must be unsigned")
        directions = sample_directions(int(k), sys.n_states, seed)
    else:
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        if len(directions) < MIN_DIRECTIONS:
            raise InvalidArgumentError(f"need at least {MIN_DIRECTIONS} directions")
        directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    vertices = extreme_points(sys, box, directions, grid)
    return ReachSet(vertices, directions, grid, system_fingerprint(sys, box), int(seed))


def affine_rank(points, tol=RANK_TOL):
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def hull_volume(points):
    """Euclidean volume of conv(points) in R^n.

    Facets come from Qhull (triangulated); the volume is summed over the
    simplices formed by each facet and an interior reference point.
    Degenerate clouds (fewer than n + 1 points, or affine rank < n) give 0
    with a DegenerateHullWarning.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise InvalidArgumentError("points must be a 2-d array")
    n = pts.shape[1]
    if len(pts) < n + 1:
        warnings.warn(f"{len(pts)} points cannot span {n} dimensions", DegenerateHullWarning)
        return 0.0
    if affine_rank(pts) < n:
        warnings.warn("point cloud is rank deficient; volume is zero", DegenerateHullWarning)
        return 0.0
    # scale each coordinate to unit spread; volume rescales by the product
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    scaled = (pts - lo) / span
    try:
        hull = ConvexHull(scaled)
    except QhullError:
        warnings.warn("qhull rejected the point cloud as degenerate", DegenerateHullWarning)
        return 0.0
    ref = scaled[hull.vertices].mean(axis=0)
    edges = scaled[hull.simplices] - ref
    dets = np.abs(np.linalg.det(edges))
    fact = float(np.prod(np.arange(1, n + 1)))
    return float(dets.sum() / fact * np.prod(span))


def hull_distance(vertices, x):
    """Smallest L-inf distance from x to conv(vertices), by linear programming."""
    V = np.asarray(vertices, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    k, n = V.shape
    # variables: k weights, 1 slack s; minimize s
    cost = np.zeros(k + 1)
    cost[-1] = 1.0
    a_ub = np.block([[V.T, -np.ones((n, 1))], [-V.T, -np.ones((n, 1))]])
    b_ub = np.concatenate([x, -x])
    a_eq = np.concatenate([np.ones(k), [0.0]]).reshape(1, -1)
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (k + 1), method="highs")
    if res.status != 0:
        raise NumericalError(f"membership LP failed: {res.message}")
    return float(res.x[-1])


def contains(reach_set, x, tol=1e-9):
    """True iff x lies within ``tol`` (L-inf) of the hull of the vertices."""
    verts = reach_set.vertices if isinstance(reach_set, ReachSet) else reach_set
    return hull_distance(verts, x) <= tol
