"""Command-line front end.

Every subcommand prints (or writes to ``--output``) a JSON report with the
top-level keys ``config``, ``results`` and ``pass``; the exit status is 0
exactly when ``pass`` is true. Errors produce a report with an ``error``
record and exit status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .connection import connection_at, nonmetricity_from_connection, ricci_scalar
from .dynamics import (
    el_residual,
    generalized_proper_time,
    h_along,
    integrate_curve,
    norm_drift,
)
from .expr import ExpressionError
from .geometry import BUNDLED, GeometryError, SchemaError, bundled_geometry, fields_at, read_geometry
from .helmholtz import DEFAULT_TOLERANCE, helmholtz_batch, sample_states
from .transport import (
    christoffel_of_h,
    covariant_derivative_h,
    degeneracy_check,
    h_at,
    holonomy_convergence,
)

log = logging.getLogger("varpath")

SUBCOMMANDS = ("inspect", "connection", "solve-h", "holonomy", "integrate", "verify-action", "check-helmholtz")

# per-subcommand defaults for flags whose meaning depends on the subcommand
_DEFAULTS = {
    "tol": {
        "solve-h": 1e-9, "holonomy": 1e-8, "verify-action": 1e-6,
        "check-helmholtz": DEFAULT_TOLERANCE, "connection": 1e-9,
    },
    "steps": {"holonomy": 16, "integrate": 1000, "verify-action": 1000},
}
_CONFIG_KEYS = ("geometry", "x0", "v0", "lambda_span", "steps", "tol", "samples", "seed",
                "output", "format", "kind", "method", "side", "box_radius", "speed",
                "multiplier", "drift_tol")


class UsageError(ValueError):
    pass


def _vector(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varpath", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"varpath {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--geometry", help=f"geometry JSON file or a bundled name ({', '.join(BUNDLED)})")
        s.add_argument("--config", help="JSON run configuration; its values win over flags")
        s.add_argument("--x0", type=_vector, help="point / initial position (default: base point)")
        s.add_argument("--v0", type=_vector, help="initial velocity")
        s.add_argument("--lambda-span", dest="lambda_span", type=_vector)
        s.add_argument("--steps", type=int)
        s.add_argument("--tol", type=float)
        s.add_argument("--samples", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--output")
        s.add_argument("--format", choices=("csv", "json"))
        s.add_argument("--method", choices=("rk4", "rkf45"))
        if name == "integrate":
            s.add_argument("--kind", choices=("autoparallel", "geodesic"))
        if name == "holonomy":
            s.add_argument("--side", type=float, help="side of the square loop at x0 (default 0.1)")
        if name == "check-helmholtz":
            s.add_argument("--box-radius", dest="box_radius", type=float,
                           help="half-width of the sampling box around x0 (default 0.5)")
            s.add_argument("--speed", type=float, help="velocity components in [-speed, speed]")
            s.add_argument("--multiplier", choices=("solved", "metric"))
        if name == "verify-action":
            s.add_argument("--drift-tol", dest="drift_tol", type=float)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge flags with an optional config file (file wins) and fill defaults."""
    cfg = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    cfg["subcommand"] = args.subcommand
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            from_file = json.load(fh)
        for key, value in from_file.items():
            key = key.replace("-", "_")
            if key not in _CONFIG_KEYS:
                raise SchemaError(f"config.{key}", "unknown run configuration key")
            if cfg.get(key) is not None and cfg[key] != value:
                log.warning("config file overrides --%s (%r -> %r)", key.replace("_", "-"), cfg[key], value)
            cfg[key] = value
    if not cfg.get("geometry"):
        raise UsageError("--geometry is required")
    sc = args.subcommand
    for key, table in _DEFAULTS.items():
        if cfg.get(key) is None and sc in table:
            cfg[key] = table[sc]
    defaults = {
        "lambda_span": [0.0, 1.0],
        "samples": 100,
        "seed": 0,
        "format": "json",
        "method": "rk4",
        "kind": "autoparallel" if sc == "integrate" else None,
        "side": 0.1 if sc == "holonomy" else None,
        "box_radius": 0.5 if sc == "check-helmholtz" else None,
        "speed": 1.0 if sc == "check-helmholtz" else None,
        "multiplier": "solved" if sc == "check-helmholtz" else None,
        "drift_tol": 1e-7 if sc == "verify-action" else None,
    }
    for key, value in defaults.items():
        if cfg.get(key) is None:
            cfg[key] = value
    return {k: v for k, v in sorted(cfg.items()) if v is not None}


def _load(cfg):
    geo = cfg["geometry"]
    if not Path(geo).exists() and geo in BUNDLED:
        return bundled_geometry(geo)
    return read_geometry(geo)


def _vec(cfg, key, n, default=None):
    val = cfg.get(key)
    if val is None:
        if default is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
        return np.asarray(default, dtype=float)
    arr = np.asarray(val, dtype=float)
    if arr.shape != (n,):
        raise UsageError(f"--{key.replace('_', '-')} needs {n} components")
    return arr


def _num(a):
    return np.asarray(a).tolist()


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_inspect(spec, cfg):
    pf = fields_at(spec, spec.base_point)
    return {
        "geometry": spec.to_document(),
        "mode": spec.mode,
        "base_point": {"g": _num(pf.g), "det_g": pf.det, "Q": _num(pf.Q)},
        "h0": _num(spec.h0_matrix()),
    }, True


def cmd_connection(spec, cfg):
    x = _vec(cfg, "x0", spec.dim, spec.base_point)
    cp = connection_at(spec, x)
    compat = float(np.max(np.abs(nonmetricity_from_connection(cp.fields, cp.gamma) - cp.fields.Q)))
    torsion = float(np.max(np.abs(cp.gamma - np.swapaxes(cp.gamma, -1, -2))))
    results = {
        "x": _num(x),
        "christoffel": _num(cp.christoffel),
        "disformation": _num(cp.disformation),
        "gamma": _num(cp.gamma),
        "riemann": _num(cp.riemann),
        "ricci_scalar": float(ricci_scalar(cp)),
        "torsion_max": torsion,
        "nonmetricity_residual": compat,
    }
    return results, compat <= cfg["tol"] and torsion == 0.0


def cmd_solve_h(spec, cfg):
    x = _vec(cfg, "x0", spec.dim, spec.base_point)
    hs = h_at(spec, x, steps=cfg.get("steps"), method=cfg["method"])
    report = degeneracy_check(hs)
    cp = connection_at(spec, x)
    compat = float(np.max(np.abs(covariant_derivative_h(cp.gamma, hs.H, hs.dH))))
    eq14 = float(np.max(np.abs(christoffel_of_h(hs.H, hs.dH) - cp.gamma)))
    results = {
        "state": hs.to_dict(),
        "degeneracy": report.to_dict(),
        "christoffel_of_h_residual": eq14,
    }
    ok = (not report.degenerate) and compat <= cfg["tol"] and eq14 <= 10 * cfg["tol"]
    return results, ok


def cmd_holonomy(spec, cfg):
    x = _vec(cfg, "x0", spec.dim, spec.base_point)
    if spec.dim < 2:
        raise UsageError("holonomy needs dim >= 2")
    side = float(cfg["side"])
    e0 = np.eye(spec.dim)[0] * side
    e1 = np.eye(spec.dim)[1] * side
    loop = np.array([x, x + e0, x + e0 + e1, x + e1, x])
    base = int(cfg["steps"])
    table = holonomy_convergence(spec, loop, steps=[base * 2 ** k for k in range(5)], method=cfg["method"])
    final = table[-1]["defect"]
    return {"loop": _num(loop), "table": table, "defect": final}, final <= cfg["tol"]


def _trajectory(spec, cfg, kind):
    x0 = _vec(cfg, "x0", spec.dim, spec.base_point)
    v0 = _vec(cfg, "v0", spec.dim)
    span = cfg["lambda_span"]
    if len(span) != 2:
        raise UsageError("--lambda-span needs two values a,b")
    return integrate_curve(spec, kind, x0, v0, tuple(span), steps=int(cfg["steps"]), method=cfg["method"])


def cmd_integrate(spec, cfg):
    traj = _trajectory(spec, cfg, cfg["kind"])
    return {"trajectory": traj.to_dict()}, True, traj


def cmd_verify_action(spec, cfg):
    traj = _trajectory(spec, cfg, "autoparallel")
    hs = h_along(spec, traj)
    report = el_residual(spec, traj, hs=hs)
    drift = norm_drift(spec, traj, hs)
    gpt = generalized_proper_time(spec, traj)
    results = {
        "action": report.to_dict(),
        "norm_drift": drift,
        "generalized_proper_time": gpt,
        "proper_time_minus_action": gpt - report.value,
        "h_degenerate": bool(np.any(hs.degenerate)),
        "trajectory_stats": traj.stats,
    }
    ok = report.el_residual_max <= cfg["tol"] and drift <= cfg["drift_tol"] and not results["h_degenerate"]
    return results, ok


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("VARPATH_THREADS", "1")))
    except ValueError:
        return 1


def cmd_check_helmholtz(spec, cfg):
    rng = np.random.default_rng(int(cfg["seed"]))
    centre = _vec(cfg, "x0", spec.dim, spec.base_point)
    r = float(cfg["box_radius"])
    box = np.stack([centre - r, centre + r], axis=1)
    xs, vs = sample_states(rng, box, int(cfg["samples"]), float(cfg["speed"]))

    reports = helmholtz_batch(spec, xs, vs, cfg["multiplier"], tolerance=cfg["tol"], threads=_threads())
    summary = {}
    for key in ("h1", "h2_generic", "h2_connection", "h3_generic", "h3_simplified"):
        vals = np.array([rep.residuals[key] for rep in reports])
        summary[key] = {"max": float(vals.max()), "mean": float(vals.mean())}
    ok = all(s["max"] <= cfg["tol"] for s in summary.values())
    worst = max(range(len(reports)), key=lambda i: max(reports[i].residuals.values()))
    return {"summary": summary, "worst_state": reports[worst].to_dict(), "samples": len(reports)}, ok


_COMMANDS = {
    "inspect": cmd_inspect,
    "connection": cmd_connection,
    "solve-h": cmd_solve_h,
    "holonomy": cmd_holonomy,
    "integrate": cmd_integrate,
    "verify-action": cmd_verify_action,
    "check-helmholtz": cmd_check_helmholtz,
}


def _dump(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _emit(text: str, path: str | None):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def execute(cfg: dict) -> int:
    """Run one resolved configuration; returns the exit status."""
    sc = cfg["subcommand"]
    try:
        spec = _load(cfg)
        out = _COMMANDS[sc](spec, cfg)
    except (GeometryError, ExpressionError, UsageError, ValueError, OSError, ArithmeticError) as exc:
        error = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SchemaError):
            error["key"] = exc.key
        _emit(_dump({"config": cfg, "error": error, "pass": False}), cfg.get("output"))
        return 2
    results, ok = out[0], out[1]
    if sc == "integrate" and cfg["format"] == "csv":
        traj = out[2]
        if cfg.get("output"):
            Path(cfg["output"]).write_text(traj.to_csv(), encoding="utf-8")
            results = {"output": cfg["output"], "stats": traj.stats, "samples": len(traj)}
            sys.stdout.write(_dump({"config": cfg, "results": results, "pass": ok}))
        else:
            sys.stdout.write(traj.to_csv())
        return 0 if ok else 1
    _emit(_dump({"config": cfg, "results": results, "pass": bool(ok)}), cfg.get("output"))
    return 0 if ok else 1


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (UsageError, SchemaError, OSError, json.JSONDecodeError) as exc:
        error = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SchemaError):
            error["key"] = exc.key
        sys.stdout.write(_dump({"config": {"subcommand": args.subcommand}, "error": error, "pass": False}))
        return 2
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
