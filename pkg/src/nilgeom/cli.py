"""Batch entry points: `nil flow|stability|round|lattice|develop|selftest`.

Exit codes: 0 all checks pass, 1 computation failure (with stage
identification), 2 usage error (no output files written).  Parameter
precedence: CLI flags > JSON config file > built-in defaults; environment
variables are never consulted.
"""

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, core, develop as dev_mod, flow, hodge, io as io_mod
from . import lattice as lattice_mod, mesh as mesh_mod, plots, rounding
from .core import G_NIL, LeftInvariantMetric, NotPositiveDefinite
from .develop import DevelopError
from .flow import FlowError
from .hodge import HodgeError
from .lattice import LatticeError
from .mesh import MeshError
from .rounding import RoundingError

__all__ = ["main"]


class UsageError(ValueError):
    pass


_COMPUTE_ERRORS = (
    FlowError,
    LatticeError,
    MeshError,
    HodgeError,
    RoundingError,
    DevelopError,
    NotPositiveDefinite,
    io_mod.FormatError,
)


DEFAULTS = {
    "flow": {
        "g0": "identity",
        "t_end": 2.0,
        "tol": 1e-10,
        "samples": 65,
        "lattice": "gamma1",
        "out": "traj.csv",
    },
    "stability": {
        "catalog": "",
        "eps": 1.0,
        "eps0": 0.0,
        "steps": 6,
        "lattice": "gamma1",
        "diam_grid": 6,
        "out": "schedule.csv",
    },
    "lattice": {
        "catalog": "",
        "out": "lattices.csv",
    },
    "round": {
        "infile": "",
        "lattice": "",
        "tau": 0.0,
        "out": "rounded.nmf",
        "report": "report.json",
    },
    "develop": {
        "infile": "",
        "out": "dev.csv",
        "report": "",
    },
    "selftest": {
        "seed": 0,
        "out": "selftest.json",
    },
}


# ---------------------------------------------------------------------------
# plumbing


def _merge_params(command: str, args: argparse.Namespace) -> dict:
    params = dict(DEFAULTS[command])
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(params)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        params.update(loaded)
    for key in params:
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    return params


def _require_positive(params: dict, keys) -> None:
    for key in keys:
        if not params[key] > 0:
            raise UsageError(f"{key} must be > 0, got {params[key]}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _figure_path(out) -> Path:
    return Path(out).with_suffix(".png")


def _builtin_lattice(label: str):
    for lat in lattice_mod.builtin_catalog():
        if lat.label == label:
            return lat
    raise UsageError(f"unknown lattice label {label!r}")


def _load_metric(spec: str) -> LeftInvariantMetric:
    if spec == "identity":
        return G_NIL
    try:
        with open(spec) as fh:
            return LeftInvariantMetric.from_json(json.load(fh))
    except OSError as exc:
        raise UsageError(f"cannot read metric {spec}: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def _cmd_flow(params: dict) -> int:
    _require_positive(params, ["t_end", "tol", "samples"])
    g0 = _load_metric(params["g0"])
    lat = _builtin_lattice(params["lattice"])
    traj = flow.integrate(
        g0,
        float(params["t_end"]),
        tol=float(params["tol"]),
        n_samples=int(params["samples"]),
        lattice=lat,
    )
    comp_names = ["G11", "G12", "G13", "G22", "G23", "G33"]
    rows = []
    for idx, state in enumerate(traj.states):
        G = state.metric.G
        comps = [G[0, 0], G[0, 1], G[0, 2], G[1, 1], G[1, 2], G[2, 2]]
        rows.append([state.t] + comps + [traj.sup_rm[idx], traj.ratios[idx]])
    _write_csv(params["out"], ["t"] + comp_names + ["sup_rm", "ratio"], rows)
    ts = [s.t for s in traj.states]
    plots.line_figure(
        _figure_path(params["out"]),
        ts,
        [("sup_rm", list(traj.sup_rm)), ("ratio", list(traj.ratios))],
        "t",
        "value",
        "homogeneous flow diagnostics",
        logy=True,
    )
    return 0


def _load_metric_catalog(path: str):
    if not path:
        return [
            ("identity", G_NIL),
            ("squeezed", LeftInvariantMetric.diagonal(1.2, 0.9, 1.1)),
            ("fat-fiber", LeftInvariantMetric.diagonal(0.9, 1.1, 1.25)),
        ]
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read metric catalog {path}: {exc}") from None
    return [
        (obj.get("label", f"metric{i}"), LeftInvariantMetric.from_json(obj))
        for i, obj in enumerate(data["metrics"])
    ]


def _cmd_stability(params: dict) -> int:
    _require_positive(params, ["eps", "steps", "diam_grid"])
    lat = _builtin_lattice(params["lattice"])
    metrics = _load_metric_catalog(params["catalog"])
    eps0 = float(params["eps0"]) or None
    rows = []
    series = []
    for label, g0 in metrics:
        sched = flow.stability_run(
            g0,
            lat,
            eps=float(params["eps"]),
            eps0=eps0,
            n_steps=int(params["steps"]),
            diam_grid=int(params["diam_grid"]),
        )
        intervals = (0.0,) + sched.intervals
        for j, t in enumerate(sched.times):
            rows.append(
                [
                    label,
                    j,
                    t,
                    intervals[j],
                    sched.sup_rm[j],
                    sched.ratios[j],
                    sched.A,
                    sched.C,
                    len(sched.violations),
                ]
            )
        series.append((label, list(sched.sup_rm)))
    _write_csv(
        params["out"],
        ["label", "step", "t", "interval", "sup_rm", "ratio", "A", "C", "violations"],
        rows,
    )
    steps = list(range(len(series[0][1])))
    plots.line_figure(
        _figure_path(params["out"]),
        steps,
        series,
        "step",
        "sup_rm",
        "curvature halving schedule",
        logy=True,
    )
    return 0


def _cmd_lattice(params: dict) -> int:
    if params["catalog"]:
        try:
            lattices = lattice_mod.load_catalog(params["catalog"])
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise UsageError(
                f"cannot read lattice catalog {params['catalog']}: {exc}"
            ) from None
    else:
        lattices = lattice_mod.builtin_catalog()
    rows = []
    orders = []
    labels = []
    for lat in lattices:
        base = lattice_mod.base_orbifold(lat)
        order = lattice_mod.point_group_order(lat)
        _, _, factor = lattice_mod.normalize_unit_volume(lat)
        rows.append(
            [
                lat.label,
                order,
                base.kind,
                ";".join(str(c) for c in base.cone_orders),
                lattice_mod.is_non_haken(lat),
                factor,
            ]
        )
        labels.append(lat.label)
        orders.append(order)
    _write_csv(
        params["out"],
        [
            "label",
            "covering_order",
            "base_kind",
            "cone_orders",
            "non_haken",
            "dilation_factor",
        ],
        rows,
    )
    plots.line_figure(
        _figure_path(params["out"]),
        list(range(len(labels))),
        [("covering order", orders)],
        "catalog index",
        "covering order",
        "point group orders (" + ", ".join(labels) + ")",
    )
    return 0


def _cmd_round(params: dict) -> int:
    if not params["infile"]:
        raise UsageError("round requires --in <field.nmf>")
    values, header = io_mod.load_field(params["infile"])
    label = params["lattice"] or header.get("lattice", "")
    lat = _builtin_lattice(label)
    tau = float(params["tau"]) or None
    report = rounding.StageReport()
    out = rounding.round_field(values, lat, tau=tau, report=report)
    io_mod.save_field(params["out"], out, label, int(header["k"]))
    doc = {
        "command": "round",
        "code_version": __version__,
        "input": str(params["infile"]),
        "input_sha256": _sha256(params["infile"]),
        "lattice": label,
        "dims": list(out.shape[:3]),
        "sup_change": float(np.max(np.abs(out - values))),
        **report.to_json(),
    }
    _write_json(params["report"], doc)
    dets = np.sqrt(np.linalg.det(out[:, :, 0]))
    plots.heatmap_figure(
        _figure_path(params["report"]),
        dets,
        "i",
        "j",
        "rounded field: sqrt(det g) on the base slice",
    )
    return 0


def _cmd_develop(params: dict) -> int:
    if not params["infile"]:
        raise UsageError("develop requires --in <patch.nmf>")
    patch = io_mod.load_patch(params["infile"])
    frame = dev_mod.find_frame(patch)
    result = dev_mod.develop(patch, frame)
    residual = dev_mod.metric_residual(patch, result)
    n1, n2, n3 = patch.dims
    rows = []
    for i in range(n1):
        for j in range(n2):
            for l in range(n3):
                y = result.points[i, j, l]
                rows.append([i, j, l, y[0], y[1], y[2]])
    _write_csv(params["out"], ["i", "j", "l", "y1", "y2", "y3"], rows)
    report_path = params["report"] or str(Path(params["out"]).with_suffix(".json"))
    _write_json(
        report_path,
        {
            "command": "develop",
            "code_version": __version__,
            "input": str(params["infile"]),
            "input_sha256": _sha256(params["infile"]),
            "lam": frame.lam,
            "bracket_component": frame.bracket_component,
            "max_defect": result.max_defect,
            "defect_threshold": result.defect_threshold,
            "metric_residual": residual,
        },
    )
    pts = result.points.reshape(-1, 3)
    plots.scatter_figure(
        _figure_path(params["out"]),
        pts[:, 0],
        pts[:, 1],
        pts[:, 2],
        "y1",
        "y2",
        "developed patch (abelianized view)",
        clabel="y3",
    )
    return 0


def _selftest_checks(seed: int):
    rng = np.random.default_rng(seed)
    checks = []

    def add(name, value, bound):
        checks.append(
            {
                "check": name,
                "value": value,
                "bound": bound,
                "pass": bool(value <= bound),
            }
        )

    # group algebra round trips
    worst = 0.0
    for _ in range(500):
        p = core.NilPoint(*rng.uniform(-2, 2, 3))
        q = core.NilPoint(*rng.uniform(-2, 2, 3))
        lhs = core.mul(p, q).as_matrix()
        worst = max(worst, float(np.max(np.abs(lhs - p.as_matrix() @ q.as_matrix()))))
        back = core.exp(core.log(p)).as_array()
        worst = max(worst, float(np.max(np.abs(back - p.as_array()))))
    add("algebra", worst, 1e-12)

    # flow vs closed form
    worst = 0.0
    for _ in range(3):
        g0 = LeftInvariantMetric.diagonal(*rng.uniform(0.6, 1.6, 3))
        traj = flow.integrate(g0, 10.0, tol=1e-12, n_samples=3)
        expect = flow.closed_form_diagonal(g0, 10.0).G
        worst = max(
            worst,
            float(np.max(np.abs(traj.final().G - expect)) / np.max(np.abs(expect))),
        )
    add("flow-closed-form", worst, 1e-8)

    # classification of the builtin catalog
    expected_nh = {"screw3", "screw4", "screw6"}
    got = {
        lat.label
        for lat in lattice_mod.builtin_catalog()
        if lattice_mod.is_non_haken(lat)
    }
    add("non-haken-set", float(len(got ^ expected_nh)), 0.0)

    # rounding fidelity on the homogeneous fixed point at 8^3
    lat = _builtin_lattice("gamma1")
    m = mesh_mod.build_mesh(lat, (8, 8, 8))
    fld = mesh_mod.pullback_homogeneous(G_NIL, m)
    out = rounding.round_field(fld, lat)
    add("round-fixed-point", float(np.max(np.abs(out - fld))), 1e-8)

    # developing map on a chart pullback
    n = 9
    axes = [np.linspace(c - 0.2, c + 0.2, n) for c in (0.3, -0.2, 0.1)]
    h = axes[0][1] - axes[0][0]
    vals = np.zeros((n, n, n, 3, 3))
    for i, x1 in enumerate(axes[0]):
        J = mesh_mod.coframe_matrix(np.array(x1))
        vals[i, :, :] = J.T @ G_NIL.G @ J
    patch = dev_mod.MetricPatch(
        values=vals, spacings=(h, h, h), marked=(n // 2,) * 3
    )
    frame = dev_mod.find_frame(patch)
    result = dev_mod.develop(patch, frame)
    add("develop-residual", dev_mod.metric_residual(patch, result), 1e-3)
    return checks


def _cmd_selftest(params: dict) -> int:
    checks = _selftest_checks(int(params["seed"]))
    ok = all(c["pass"] for c in checks)
    _write_json(
        params["out"],
        {
            "command": "selftest",
            "code_version": __version__,
            "seed": int(params["seed"]),
            "checks": checks,
            "pass": ok,
        },
    )
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nil", description="Nil geometry batch toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default="", help="JSON config file")
        p.add_argument("--out", default=None)

    p = sub.add_parser("flow", help="integrate the homogeneous Ricci flow")
    common(p)
    p.add_argument("--g0", default=None, help="'identity' or metric JSON path")
    p.add_argument("--t-end", dest="t_end", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--lattice", default=None)

    p = sub.add_parser("stability", help="curvature-halving schedule")
    common(p)
    p.add_argument("--catalog", default=None, help="metric catalog JSON")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--eps0", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lattice", default=None)
    p.add_argument("--diam-grid", dest="diam_grid", type=int, default=None)

    p = sub.add_parser("lattice", help="classify lattice catalogs")
    p.add_argument("action", choices=["classify"])
    p.add_argument("catalog", nargs="?", default=None)
    common(p)

    p = sub.add_parser("round", help="round a metric field to a Nil structure")
    common(p)
    p.add_argument("--in", dest="infile", default=None)
    p.add_argument("--lattice", default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--report", default=None)

    p = sub.add_parser("develop", help="developing map of a locally Nil patch")
    common(p)
    p.add_argument("--in", dest="infile", default=None)
    p.add_argument("--report", default=None)

    p = sub.add_parser("selftest", help="deterministic verification battery")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    return parser


_DISPATCH = {
    "flow": _cmd_flow,
    "stability": _cmd_stability,
    "lattice": _cmd_lattice,
    "round": _cmd_round,
    "develop": _cmd_develop,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        params = _merge_params(args.command, args)
        if args.command == "round" and not params["tau"] >= 0:
            raise UsageError(f"tau must be >= 0, got {params['tau']}")
    except UsageError as exc:
        print(f"nil: usage error: {exc}", file=sys.stderr)
        return 2
    try:
        return _DISPATCH[args.command](params)
    except UsageError as exc:
        print(f"nil: usage error: {exc}", file=sys.stderr)
        return 2
    except RoundingError as exc:
        print(f"nil: computation failed at stage [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except _COMPUTE_ERRORS as exc:
        stage = type(exc).__name__
        print(f"nil: computation failed [{stage}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
