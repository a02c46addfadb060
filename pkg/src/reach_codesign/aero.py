"""Aerodynamic lookup tables over (V, alpha, c, w, delta_e).

No panel-method data ships with this package. Tables are generated from
a closed-form surrogate with the same five-axis layout:

    span             b    = 2 (c + w)
    reference area   S    = 2 (c * chord_center + w * chord_wing)
    aspect ratio     AR   = b^2 / S
    mean chord       cbar = S / b
    lift slope       CLa  = 2 pi AR / (AR + 2)
    CL = cl0 + CLa * alpha + cl_de * delta_e
    CD = cd0 + CL^2 / (pi AR oswald)
    Cm = cm0 - SM(c) * CLa * alpha + Cm_de(c) * delta_e
    SM(c)    = sm0 + sm1 (c - 5)
    Cm_de(c) = cm_de_ref * c / c_ref

Forces are dimensionalized by qbar = rho V^2 / 2: L = qbar S CL,
D = qbar S CD, M = qbar S cbar Cm.  The pitching moment is taken about the
center of gravity, positive nose-up.
"""

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _jsonio
from .errors import InvalidArgumentError, OutOfDomainError

AXIS_NAMES = ("V", "alpha", "c", "w", "delta_e")
LAYOUT = "row-major V,alpha,c,w,delta_e"

DEFAULT_RANGES = {
    "V": (100.0, 295.0),
    "alpha": (-0.0873, 0.2618),
    "c": (3.0, 7.0),
    "w": (10.0, 20.0),
    "delta_e": (-0.523, 0.523),
}

# generation refuses axes outside these limits
PHYSICAL_LIMITS = {
    "V": (30.0, 350.0),
    "alpha": (-0.35, 0.35),
    "c": (1.0, 12.0),
    "w": (4.0, 30.0),
    "delta_e": (-0.6, 0.6),
}

ELEVATOR_LIMIT = 0.523


@dataclass(frozen=True)
class AircraftParams:
    mass: float = 158_757.0  # 350,000 lb
    j_y: float = 1.5e7
    g: float = 9.80665
    max_thrust: float = 427_000.0  # 2 x 48,000 lbf
    rho: float = 0.4135  # ~10 km
    thrust_moment_arm: float = 0.0

    def __post_init__(self):
        for name in ("mass", "j_y", "g", "max_thrust", "rho"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if not np.isfinite(self.thrust_moment_arm):
            raise InvalidArgumentError("thrust_moment_arm must be finite")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SurrogateConfig:
    chord_center: float = 20.0
    chord_wing: float = 10.0
    cl0: float = 0.1
    cl_de: float = 0.3
    cd0: float = 0.008
    oswald: float = 0.9
    cm0: float = 0.005
    sm0: float = 0.05
    sm1: float = 0.01
    cm_de_ref: float = -0.08
    c_ref: float = 5.0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AeroAxes:
    v: np.ndarray
    alpha: np.ndarray
    c: np.ndarray
    w: np.ndarray
    delta_e: np.ndarray

    def __post_init__(self):
        for name, attr in zip(AXIS_NAMES, ("v", "alpha", "c", "w", "delta_e")):
            arr = np.array(getattr(self, attr), dtype=float).reshape(-1)
            if len(arr) < 2:
                raise InvalidArgumentError(f"axis {name} needs at least 2 points")
            if not np.all(np.isfinite(arr)) or np.any(np.diff(arr) <= 0):
                raise InvalidArgumentError(f"axis {name} must be finite and strictly increasing")
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    def as_tuple(self):
        return (self.v, self.alpha, self.c, self.w, self.delta_e)

    @property
    def shape(self):
        return tuple(len(a) for a in self.as_tuple())

    def bounds(self, name):
        arr = self.as_tuple()[AXIS_NAMES.index(name)]
        return float(arr[0]), float(arr[-1])

    def to_dict(self):
        return {name: arr.tolist() for name, arr in zip(AXIS_NAMES, self.as_tuple())}


def default_axes(resolution=6, ranges=None):
    if int(resolution) != resolution or resolution < 2:
        raise InvalidArgumentError(f"resolution must be an integer >= 2, got {resolution}")
    ranges = {**DEFAULT_RANGES, **(ranges or {})}
    return AeroAxes(*(np.linspace(*ranges[name], int(resolution)) for name in AXIS_NAMES))


def _planform(c, w, config):
    span = 2.0 * (c + w)
    area = 2.0 * (c * config.chord_center + w * config.chord_wing)
    return span, area


def surrogate_forces(v, alpha, c, w, delta_e, params=None, config=None):
    """Closed-form lift, drag and pitching moment (broadcasts over inputs)."""
    params = params or AircraftParams()
    config = config or SurrogateConfig()
    span, area = _planform(c, w, config)
    ar = span**2 / area
    cbar = area / span
    cla = 2.0 * np.pi * ar / (ar + 2.0)
    cl = config.cl0 + cla * alpha + config.cl_de * delta_e
    cd = config.cd0 + cl**2 / (np.pi * ar * config.oswald)
    static_margin = config.sm0 + config.sm1 * (c - 5.0)
    cm_de = config.cm_de_ref * c / config.c_ref
    cm = config.cm0 - static_margin * cla * alpha + cm_de * delta_e
    qbar = 0.5 * params.rho * v**2
    return qbar * area * cl, qbar * area * cd, qbar * area * cbar * cm


@dataclass(frozen=True)
class AeroTable:
    axes: AeroAxes
    lift: np.ndarray
    drag: np.ndarray
    moment: np.ndarray
    surrogate_config: dict = field(default_factory=dict, compare=False)
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        size = int(np.prod(self.axes.shape))
        stacked = []
        for name in ("lift", "drag", "moment"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != size:
                raise InvalidArgumentError(f"{name} has {arr.size} entries, axes need {size}")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            stacked.append(arr.reshape(self.axes.shape))
        grid = np.stack(stacked, axis=-1)
        grid.setflags(write=False)
        object.__setattr__(self, "_grid", grid)

    def to_dict(self):
        return {
            "axes": self.axes.to_dict(),
            "layout": LAYOUT,
            "lift": self.lift.tolist(),
            "drag": self.drag.tolist(),
            "moment": self.moment.tolist(),
            "surrogate_config": dict(self.surrogate_config),
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            ax = data["axes"]
            axes = AeroAxes(*(ax[name] for name in AXIS_NAMES))
            if data.get("layout", LAYOUT) != LAYOUT:
                raise InvalidArgumentError(f"unsupported layout {data['layout']!r}")
            return cls(axes, data["lift"], data["drag"], data["moment"],
                       dict(data.get("surrogate_config", {})), dict(data.get("params", {})))
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"malformed aero table: {exc}") from exc

    def save(self, path):
        _jsonio.dump(self.to_dict(), path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(_jsonio.load(path))


def generate_table(axes=None, params=None, surrogate_config=None):
    """Fill a table from the closed-form surrogate."""
    axes = axes or default_axes()
    params = params or AircraftParams()
    config = surrogate_config or SurrogateConfig()
    for name, arr in zip(AXIS_NAMES, axes.as_tuple()):
        lo, hi = PHYSICAL_LIMITS[name]
        if arr[0] < lo or arr[-1] > hi:
            raise InvalidArgumentError(
                f"axis {name} spans [{arr[0]}, {arr[-1]}], outside physical range [{lo}, {hi}]"
            )
    mesh = np.meshgrid(*axes.as_tuple(), indexing="ij")
    lift, drag, moment = surrogate_forces(*mesh, params=params, config=config)
    return AeroTable(axes, lift.ravel(), drag.ravel(), moment.ravel(),
                     config.to_dict(), params.to_dict())


_DEFAULT_TABLE = None


def default_table():
    """The shipped surrogate: default axes at resolution 6, default constants."""
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = generate_table()
    return _DEFAULT_TABLE


def _cell(axis, x, name):
    lo, hi = axis[0], axis[-1]
    if not (lo <= x <= hi):
        raise OutOfDomainError(f"{name} = {x} outside table range [{lo}, {hi}]", axis=name)
    i = int(np.searchsorted(axis, x, side="right")) - 1
    i = min(max(i, 0), len(axis) - 2)
    t = (x - axis[i]) / (axis[i + 1] - axis[i])
    return i, t


def interpolate(table, q):
    """5-linear interpolation of (lift, drag, moment) at q = (V, alpha, c, w, delta_e)."""
    if len(q) != 5:
        raise InvalidArgumentError("query needs 5 coordinates (V, alpha, c, w, delta_e)")
    cells = [_cell(ax, float(x), name) for ax, x, name in zip(table.axes.as_tuple(), q, AXIS_NAMES)]
    block = table._grid[tuple(slice(i, i + 2) for i, _ in cells)]
    for _, t in cells:
        block = (1.0 - t) * block[0] + t * block[1]
    return float(block[0]), float(block[1]), float(block[2])


@dataclass(frozen=True)
class StabilityDerivatives:
    """Dimensional derivatives in the layout of the linear longitudinal model.

    x_* are d(Vdot)/d(.), z_* are V0 * d(alphadot)/d(.), m_* are d(Qdot)/d(.).
    Pitch-rate derivatives are fixed at zero.
    """

    x_v: float
    x_alpha: float
    z_v: float
    z_alpha: float
    m_v: float
    m_alpha: float
    x_dth: float
    x_de: float
    z_de: float
    m_dth: float
    m_de: float
    z_q: float = 0.0
    m_q: float = 0.0

    def to_dict(self):
        return asdict(self)


DEFAULT_STEPS = {"V": 0.1, "alpha": 1e-3, "delta_e": 1e-3}


def force_derivatives(table, v, alpha, c, w, delta_e, steps=None, stencil=3):
    """Partial derivatives of (L, D, M) w.r.t. V, alpha, delta_e.

    ``stencil`` = 3 is the central difference; 5 is the fourth-order
    five-point stencil.

    Returns:
        dict axis -> array (dL, dD, dM)
    """
    steps = {**DEFAULT_STEPS, **(steps or {})}
    base = {"V": v, "alpha": alpha, "c": c, "w": w, "delta_e": delta_e}
    reach = 1 if stencil == 3 else 2
    out = {}
    for name in ("V", "alpha", "delta_e"):
        h = steps[name]
        lo, hi = table.axes.bounds(name)
        if base[name] - reach * h < lo or base[name] + reach * h > hi:
            raise OutOfDomainError(
                f"{name} = {base[name]} is within {reach} finite-difference step(s) of the table edge",
                axis=name,
            )

        def at(offset):
            q = dict(base)
            q[name] = base[name] + offset
            return np.array(interpolate(table, [q[a] for a in AXIS_NAMES]))

        if stencil == 3:
            out[name] = (at(h) - at(-h)) / (2 * h)
        elif stencil == 5:
            out[name] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
        else:
            raise InvalidArgumentError("stencil must be 3 or 5")
    return out


def stability_derivatives(table, design, trim, params=None, steps=None, stencil=3):
    """Finite-difference stability derivatives at a trim point.

    Args:
        design: (c, w) or an object with ``c`` and ``w``
        trim: object with v0, alpha0, theta0, dth0, de0, gamma0
    """
    params = params or AircraftParams()
    c, w = (design.c, design.w) if hasattr(design, "c") else design
    v0, a0, g0 = trim.v0, trim.alpha0, trim.gamma0
    m, jy, g = params.mass, params.j_y, params.g
    d = force_derivatives(table, v0, a0, c, w, trim.de0, steps, stencil)
    lift, _, _ = interpolate(table, (v0, a0, c, w, trim.de0))
    thrust = trim.dth0 * params.max_thrust
    l_v, d_v, m_v = d["V"]
    l_a, d_a, m_a = d["alpha"]
    l_e, d_e, m_e = d["delta_e"]
    return StabilityDerivatives(
        x_v=-d_v / m,
        x_alpha=(-thrust * np.sin(a0) - d_a) / m + g * np.cos(g0),
        z_v=thrust * np.sin(a0) / (m * v0) - l_v / m + lift / (m * v0) - g * np.cos(g0) / v0,
        z_alpha=-thrust * np.cos(a0) / m - l_a / m + g * np.sin(g0),
        m_v=m_v / jy,
        m_alpha=m_a / jy,
        x_dth=params.max_thrust / m,
        x_de=-d_e / m,
        z_de=-l_e / m,
        m_dth=params.max_thrust * params.thrust_moment_arm / jy,
        m_de=m_e / jy,
    )


def grid_lines(table, name):
    """Iterate over 1-D slices of each output along axis ``name``."""
    ax = AXIS_NAMES.index(name)
    grid = table._grid
    others = [range(s) for i, s in enumerate(table.axes.shape) if i != ax]
    for idx in itertools.product(*others):
        full = list(idx)
        full.insert(ax, slice(None))
        yield grid[tuple(full)]
