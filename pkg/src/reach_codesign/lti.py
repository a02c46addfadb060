"""Linear time-invariant systems: matrix exponential, exact zero-order-hold
discretization and propagation under piecewise-constant inputs."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError

STATE_LABELS = ("V", "alpha", "Q", "theta")
INPUT_LABELS = ("delta_th", "delta_e")

DEFAULT_STEPS = 200


def _frozen(m, ndim=2):
    arr = np.array(m, dtype=float)
    if arr.ndim != ndim:
        raise InvalidArgumentError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("array has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LtiSystem:
    """x' = A x + B u.

    The labels default to the aircraft longitudinal states and inputs, but any
    (n, m) pair is accepted so the same code serves toy systems in tests.
    """

    a: np.ndarray
    b: np.ndarray
    state_labels: tuple = STATE_LABELS
    input_labels: tuple = INPUT_LABELS

    def __post_init__(self):
        a = _frozen(self.a)
        b = np.array(self.b, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        b = _frozen(b)
        n = a.shape[0]
        if a.shape != (n, n):
            raise InvalidArgumentError(f"A must be square, got {a.shape}")
        if b.shape[0] != n:
            raise InvalidArgumentError(f"B has {b.shape[0]} rows, A has {n}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if len(self.state_labels) != n:
            object.__setattr__(self, "state_labels", tuple(f"x{i}" for i in range(n)))
        if len(self.input_labels) != b.shape[1]:
            object.__setattr__(self, "input_labels", tuple(f"u{i}" for i in range(b.shape[1])))

    @property
    def n_states(self):
        return self.a.shape[0]

    @property
    def n_inputs(self):
        return self.b.shape[1]


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_final: float
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.t_final)):
            raise InvalidArgumentError("grid endpoints must be finite")
        if not self.t_final > self.t0:
            raise InvalidArgumentError("t_final must exceed t0")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgumentError("n_steps must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self):
        return (self.t_final - self.t0) / self.n_steps

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def midpoints(self):
        return self.t0 + self.dt * (np.arange(self.n_steps) + 0.5)

    def to_dict(self):
        return {"t0": float(self.t0), "t_final": float(self.t_final), "n_steps": self.n_steps}


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.states) != len(self.times) or len(self.inputs) != len(self.times) - 1:
            raise InvalidArgumentError("trajectory arrays have inconsistent lengths")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError("trajectory times must be strictly increasing")

    @property
    def final_state(self):
        return self.states[-1]


def expm(m, t=1.0):
    """Return e^{m t}.

    Scaling-and-squaring with Pade approximants (scipy); t == 0 short-circuits
    to an exact identity.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError(f"expm needs a square matrix, got shape {m.shape}")
    if not np.isfinite(t) or not np.all(np.isfinite(m)):
        raise InvalidArgumentError("expm argument has non-finite entries")
    if t == 0:
        return np.eye(m.shape[0])
    return scipy.linalg.expm(m * t)


def discretize(sys, dt):
    """Exact zero-order-hold discretization.

    Exponentiates the augmented block matrix [[A, B], [0, 0]] * dt; the upper
    blocks of the result are e^{A dt} and (int_0^dt e^{As} ds) B.

    Returns:
        (a_d, b_d)
    """
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    n, m = sys.n_states, sys.n_inputs
    block = np.zeros((n + m, n + m))
    block[:n, :n] = sys.a
    block[:n, n:] = sys.b
    e = expm(block, dt)
    return e[:n, :n], e[:n, n:]


def propagate_pwc(sys, x0, inputs, grid):
    """Propagate x_{k+1} = a_d x_k + b_d u_k over ``grid``.

    ``inputs[k]`` is held constant on [t_k, t_{k+1}).
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs.reshape(-1, sys.n_inputs)
    if inputs.shape != (grid.n_steps, sys.n_inputs):
        raise InvalidArgumentError(
            f"inputs shape {inputs.shape} does not match ({grid.n_steps}, {sys.n_inputs})"
        )
    x0 = np.asarray(x0, dtype=float).reshape(sys.n_states)
    a_d, b_d = discretize(sys, grid.dt)
    states = np.empty((grid.n_steps + 1, sys.n_states))
    states[0] = x0
    forced = inputs @ b_d.T
    for k in range(grid.n_steps):
        states[k + 1] = a_d @ states[k] + forced[k]
    return Trajectory(grid.times, states, inputs)
