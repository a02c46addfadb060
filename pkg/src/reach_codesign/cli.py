"""Command-line entry point: reach-codesign <subcommand> [flags].

Exit codes: 0 success, 1 usage or validation error, 2 numerical failure
(trim, Riccati, optimizer) or an unwritable output file.
"""

import argparse
import json
import sys

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import _jsonio
from .aero import AeroTable, AircraftParams, default_axes, default_table, generate_table
from .control import (
    REFERENCE_PRESETS,
    WEIGHT_PRESETS,
    PerformanceReport,
    TrackingTask,
    simulate_linear_tracking,
    simulate_nonlinear_tracking,
    trajectory_csv,
)
from .errors import InvalidArgumentError, NumericalError, OutOfDomainError, TrimFailureError
from .flight import Design, check_trim_regularity, linearize, trim, trim_jacobian
from .lti import STATE_LABELS, TimeGrid
from .optim import DEFAULT_KAPPA, DEFAULT_V, MAX_ITER, OptProblem, ReachContext, solve
from .reach import (
    DEFAULT_DIRECTIONS,
    DEFAULT_HORIZON,
    ReachSet,
    hull_volume,
    sample_reach_set,
    support_length,
    system_fingerprint,
)

BUILTIN_TABLE = "<builtin surrogate>"
PLOT_PAIRS = (("V", "alpha"), ("Q", "theta"))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text, n=None, name="value"):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise InvalidArgumentError(f"{name} must be comma-separated numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise InvalidArgumentError(f"{name} needs {n} values, got {len(vals)}")
    if not all(np.isfinite(vals)):
        raise InvalidArgumentError(f"{name} must be finite")
    return vals


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise InvalidArgumentError(f"cannot read {what} {path!r}: {exc}") from exc


def _load_table(path):
    if path is None:
        return default_table()
    return AeroTable.from_dict(_read_json(path, "aero table"))


def _params(table):
    return AircraftParams(**table.params) if table.params else AircraftParams()


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _emit(text, path):
    if path:
        _write(path, text)
    else:
        sys.stdout.write(text)


def _add_table(p):
    p.add_argument("--table", default=None, help="aero table JSON (default: built-in surrogate)")


def _add_flight(p, design_default="5,12"):
    p.add_argument("--design", default=design_default, help="c,w in meters")
    p.add_argument("--airspeed", type=float, default=200.0, help="trim airspeed V0 in m/s")
    p.add_argument("--gamma", type=float, default=0.0, help="flight path angle in rad")


def _add_reach(p):
    p.add_argument("--horizon", type=float, default=DEFAULT_HORIZON, help="reach horizon T in s")
    p.add_argument("--directions", type=int, default=DEFAULT_DIRECTIONS, help="sampled directions k")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-steps", type=int, default=200, help="time steps over the horizon")


def _base_config(args, table_path):
    return {"command": args.command, "table": table_path or BUILTIN_TABLE}


def _plot_pairs(points):
    """2-D projections of a point cloud with their convex-hull outlines."""
    out = {}
    for a, b in PLOT_PAIRS:
        ia, ib = STATE_LABELS.index(a), STATE_LABELS.index(b)
        pts = np.asarray(points)[:, [ia, ib]]
        try:
            hull = [int(i) for i in ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            hull = []
        out[f"{a}-{b}"] = {"x": a, "y": b, "points": pts.tolist(),
                           "hull_indices": hull}
    return out


def cmd_gen_aero(args):
    axes = default_axes(args.resolution)
    table = generate_table(axes)
    text = _jsonio.dumps(table.to_dict())
    try:
        _write(args.out, text)
    except OSError as exc:
        print(f"cannot write {args.out}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out} ({int(np.prod(axes.shape))} entries per output)")
    return 0


def cmd_trim(args):
    table = _load_table(args.table)
    params = _params(table)
    design = Design(*_floats(args.design, 2, "--design"))
    tp = trim(design, table, params, args.airspeed, args.gamma)
    reg = check_trim_regularity(trim_jacobian(design, table, params, tp))
    config = _base_config(args, args.table)
    config.update({"design": [design.c, design.w], "airspeed": args.airspeed, "gamma": args.gamma,
                   "params": params.to_dict()})
    _emit(_jsonio.dumps({"config": config, "trim": tp.to_dict(), "regularity": reg.to_dict()}),
          args.out)
    return 0


def _reach_setup(args):
    table = _load_table(args.table)
    params = _params(table)
    design = Design(*_floats(args.design, 2, "--design"))
    tp = trim(design, table, params, args.airspeed, args.gamma)
    sys_, box = linearize(design, table, params, tp)
    return table, params, design, tp, sys_, box


def cmd_reach(args):
    if args.directions < 5:
        raise InvalidArgumentError("--directions must be at least 5")
    if args.horizon <= 0 or args.n_steps < 1:
        raise InvalidArgumentError("--horizon and --n-steps must be positive")
    if args.seed < 0:
        raise InvalidArgumentError("--seed must be unsigned")
    _, params, design, tp, sys_, box = _reach_setup(args)
    grid = TimeGrid(0.0, args.horizon, args.n_steps)
    rs = sample_reach_set(sys_, box, args.directions, grid, args.seed)
    volume = rs.volume()
    config = _base_config(args, args.table)
    config.update({"design": [design.c, design.w], "airspeed": args.airspeed, "gamma": args.gamma,
                   "horizon": args.horizon, "n_steps": args.n_steps,
                   "directions": args.directions, "seed": args.seed, "params": params.to_dict()})
    extra = {"config": config, "trim": tp.to_dict(), "input_box": box.to_dict(), "volume": volume}
    _emit(rs.dumps(extra), args.out)
    if args.emit_plot_data:
        _write(args.emit_plot_data, _jsonio.dumps({"config": config, "pairs": _plot_pairs(rs.vertices)}))
    if args.out:
        print(_jsonio.dumps({"volume": volume}), end="")
    return 0


def cmd_metrics(args):
    data = _read_json(args.reach_set, "reach set")
    rs = ReachSet.from_dict(data)
    if not (args.volume or args.projection):
        raise InvalidArgumentError("nothing to do: pass --volume and/or --projection")
    out = {"reach_set": args.reach_set}
    if args.volume:
        out["volume"] = hull_volume(rs.vertices)
    if args.projection:
        v = np.asarray(_floats(args.projection, rs.vertices.shape[1], "--projection"))
        if not np.linalg.norm(v) > 0:
            raise InvalidArgumentError("--projection must be nonzero")
        v = v / np.linalg.norm(v)
        out["projection_direction"] = v.tolist()
        if args.from_vertices:
            out["projection"] = rs.interval_length(v)
            out["projection_source"] = "vertices"
        else:
            if args.design is None:
                raise InvalidArgumentError("synthesis-based projection needs --design "
                                           "(or pass --from-vertices)")
            _, _, _, _, sys_, box = _reach_setup(args)
            if system_fingerprint(sys_, box) != rs.system_fingerprint:
                raise InvalidArgumentError("--table/--design/--airspeed/--gamma do not reproduce "
                                           "the system stored in the reach set")
            out["projection"] = support_length(sys_, box, v, rs.horizon)
            out["projection_source"] = "synthesis"
    print(_jsonio.dumps(out), end="")
    return 0


def cmd_optimize(args):
    table = _load_table(args.table)
    params = _params(table)
    ctx = ReachContext(table=table, params=params, airspeed=args.airspeed, gamma=args.gamma,
                       horizon=args.horizon, n_steps=args.n_steps, directions=args.directions,
                       seed=args.seed)
    kind = args.problem.upper()
    v = _floats(args.v, 4, "--v") if args.v else None
    if v is not None:
        v = tuple(np.asarray(v) / np.linalg.norm(v)) if np.linalg.norm(v) > 0 else v
    problem = OptProblem(
        kind=kind,
        d0=_floats(args.d0, 2, "--d0"),
        v=v if kind != "VM" else None,
        kappa=args.kappa if kind == "VMDC" else None,
        context=ctx,
    )
    Design(*problem.d0)
    result = solve(problem, max_iter=args.max_iter)
    payload = result.to_dict()
    config = _base_config(args, args.table)
    config.update({"problem": kind, "d0": list(problem.d0), "v": list(problem.v) if problem.v else None,
                   "kappa": problem.kappa, "max_iter": args.max_iter, "reach": ctx.to_dict()})
    payload["config"] = config
    _emit(_jsonio.dumps(payload), args.out)
    if args.out:
        print(f"{result.status}: d* = ({result.d_star[0]:.6g}, {result.d_star[1]:.6g}), "
              f"KKT residual {result.kkt_residual:.3g}")
    return 0


def _parse_ref(text):
    try:
        name, value = text.split("=")
        channel = REFERENCE_PRESETS[name.strip()][0]
        return name.strip(), channel, float(value)
    except (ValueError, KeyError) as exc:
        raise InvalidArgumentError(
            f"--ref must look like velocity=4 or pitch=0.5, got {text!r}") from exc


def cmd_track(args):
    table = _load_table(args.table)
    params = _params(table)
    design = Design(*_floats(args.design, 2, "--design"))
    config = _base_config(args, args.table)
    config.update({"design": [design.c, design.w], "mode": args.mode, "params": params.to_dict()})
    if args.mode == "nonlinear":
        if args.ref is not None:
            raise InvalidArgumentError("--ref does not apply to the nonlinear maneuver")
        preset = args.weights or "paper-nonlinear"
        weights = WEIGHT_PRESETS[preset]
        if weights.q.shape != (5, 5):
            raise InvalidArgumentError(f"preset {preset} does not fit the augmented pitch model")
        traj, report = simulate_nonlinear_tracking(design, table, params, weights=weights)
    else:
        ref_name, channel, value = _parse_ref(args.ref or "velocity=4")
        preset = args.weights or f"paper-{args.mode}-{ref_name}"
        weights = WEIGHT_PRESETS[preset]
        expected = 4 if args.mode == "lq" else 5
        if weights.q.shape != (expected, expected):
            raise InvalidArgumentError(f"preset {preset} does not fit mode {args.mode}")
        tp = trim(design, table, params, args.airspeed, args.gamma)
        sys_, box = linearize(design, table, params, tp)
        task = TrackingTask("lq_finite" if args.mode == "lq" else "lqi", channel, value,
                            args.duration, args.n_steps)
        traj, report = simulate_linear_tracking(sys_, box, task, weights)
        config.update({"ref": f"{ref_name}={value!r}", "airspeed": args.airspeed,
                       "gamma": args.gamma, "trim": tp.to_dict()})
    config["weights_preset"] = preset
    if args.baseline:
        base = PerformanceReport.from_dict(_read_json(args.baseline, "baseline report"))
        report = report.with_baseline(base)
        config["baseline"] = args.baseline
    report.config = {**report.config, "cli": config}
    _write(args.out_csv, trajectory_csv(traj))
    _write(args.out_report, report.dumps())
    if args.emit_plot_data:
        _write(args.emit_plot_data, _jsonio.dumps({"config": config, "pairs": _plot_pairs(traj.states)}))
    print(f"tracking L2 error {report.tracking_error_l2:.6g}, control L2 cost {report.control_cost_l2:.6g}")
    return 0


def build_parser():
    parser = _Parser(prog="reach-codesign",
                     description="Reachability-based co-design of a blended-wing-body aircraft")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-aero", help="generate an aero table from the surrogate")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=6, help="points per axis")
    p.set_defaults(func=cmd_gen_aero)

    p = sub.add_parser("trim", help="trim the aircraft and report regularity")
    _add_table(p)
    _add_flight(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_trim)

    p = sub.add_parser("reach", help="sample the reachable set of the trimmed linear model")
    _add_table(p)
    _add_flight(p)
    _add_reach(p)
    p.add_argument("--out", default=None)
    p.add_argument("--emit-plot-data", default=None, metavar="PATH",
                   help="write V-alpha and Q-theta projections of the vertices")
    p.set_defaults(func=cmd_reach)

    p = sub.add_parser("metrics", help="volume and projection metrics of a stored reach set")
    p.add_argument("reach_set")
    p.add_argument("--volume", action="store_true")
    p.add_argument("--projection", default=None, metavar="a,b,c,d")
    p.add_argument("--from-vertices", action="store_true",
                   help="measure the projection on the stored vertices")
    _add_table(p)
    _add_flight(p, design_default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("optimize", help="run the VM, DM or VMDC design optimization")
    _add_table(p)
    p.add_argument("--problem", choices=("vm", "dm", "vmdc"), required=True)
    p.add_argument("--v", default=None, metavar="a,b,c,d",
                   help="projection direction (default: cos 110deg, sin 110deg on Q, theta)")
    p.add_argument("--kappa", type=float, default=DEFAULT_KAPPA)
    p.add_argument("--d0", default="5,12")
    p.add_argument("--airspeed", type=float, default=200.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--max-iter", type=int, default=MAX_ITER)
    _add_reach(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("track", help="closed-loop tracking simulation")
    _add_table(p)
    p.add_argument("--mode", choices=("lq", "lqi", "nonlinear"), required=True)
    p.add_argument("--ref", default=None, help="velocity=4 or pitch=0.5 (linear modes)")
    _add_flight(p)
    p.add_argument("--weights", choices=sorted(WEIGHT_PRESETS), default=None)
    p.add_argument("--baseline", default=None, help="report JSON to compare against")
    p.add_argument("--duration", type=float, default=30.0, help="linear modes only")
    p.add_argument("--n-steps", type=int, default=3000, help="linear modes only")
    p.add_argument("--out-csv", default="track.csv")
    p.add_argument("--out-report", default="track.json")
    p.add_argument("--emit-plot-data", default=None, metavar="PATH")
    p.set_defaults(func=cmd_track)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except TrimFailureError as exc:
        print(f"trim failed: {exc}", file=sys.stderr)
        if exc.residual is not None:
            print(f"residual: {np.asarray(exc.residual).tolist()}", file=sys.stderr)
            print(f"iterate: {np.asarray(exc.iterate).tolist()}", file=sys.stderr)
        return 2
    except (NumericalError, OutOfDomainError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except InvalidArgumentError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
