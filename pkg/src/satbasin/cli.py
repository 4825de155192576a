"""Command-line interface.

Exit codes: 0 success, 1 a check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import basin, degree, dynamics, equilibria, model
from .errors import SatBasinError

SCHEMA_DIR = Path(__file__).parent / "schemas"
COMMANDS = ("validate", "equilibria", "degree", "fate", "scan", "convexity", "reproduce-paper")
TRAJECTORY_T_END = 8.0


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    system_path: str | None = None
    seed: int = 0
    tol: float = 1e-3
    t_max: float = 100.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    radius: float | None = None
    rays: int | None = None
    pairs: int = 0
    x: list | None = None
    output_path: str | None = None


def _schema(name):
    return json.loads((SCHEMA_DIR / name).read_text())


def parse_system(text: str, source: str = "<system>") -> model.SystemSpec:
    """Parse and validate a system file, with positions in every error message."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    try:
        jsonschema.validate(data, _schema("system.schema.json"))
    except jsonschema.ValidationError as exc:
        raise UsageError(f"{source}: at {exc.json_path}: {exc.message}") from exc
    try:
        return model.SystemSpec.from_dict(data)
    except SatBasinError as exc:
        raise UsageError(f"{source}: {exc}") from exc


def load_system_file(path) -> model.SystemSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read system file {path}: {exc}") from exc
    return parse_system(text, str(path))


def _vector(text: str) -> list:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text!r}")


def _complex_list(vals):
    return [[float(np.real(v)), float(np.imag(v))] for v in vals]


def _validation_dict(rep: model.ValidationReport) -> dict:
    return {
        "anti_stable": rep.anti_stable,
        "controllable": rep.controllable,
        "closed_loop_hurwitz": rep.closed_loop_hurwitz,
        "eig_A": _complex_list(rep.eig_A),
        "eig_closed_loop": _complex_list(rep.eig_closed_loop),
        "controllability_rank": rep.controllability_rank,
    }


def _classifier(spec, cfg):
    return dynamics.FateClassifier(spec, cfg.t_max, cfg.rel_tol, cfg.abs_tol)


def _state(spec, cfg, what="--x"):
    if cfg.x is None:
        raise UsageError(f"{what} is required for this command")
    if len(cfg.x) != spec.n:
        raise UsageError(f"{what} has {len(cfg.x)} entries, system has n = {spec.n}")
    return np.array(cfg.x)


def cmd_validate(spec, cfg):
    rep = model.validate_spec(spec)
    return rep.ok, _validation_dict(rep)


def _equilibria_result(spec):
    eqs = equilibria.enumerate_equilibria(spec)
    result = {
        "equilibria": [e.to_dict() for e in eqs],
        "degenerate_regions": [str(s) for s in eqs.degenerate_regions],
    }
    ok = True
    if spec.m == 1:
        parity = equilibria.parity_check(spec)
        result["parity"] = parity.to_dict()
        ok = parity.passed
    return ok, result


def cmd_equilibria(spec, cfg):
    return _equilibria_result(spec)


def cmd_degree(spec, cfg):
    check = degree.index_sum_check(spec, cfg.radius, seed=cfg.seed)
    result = {
        "value": check.rhs,
        "index_sum": check.to_dict(),
        "safe_radius": degree.safe_radius(spec),
    }
    if spec.n == 2:
        result["winding_number"] = degree.winding_number_2d(spec, check.radius)
        return check.passed and result["winding_number"] == check.rhs, result
    return check.passed, result


def cmd_fate(spec, cfg):
    rep = _classifier(spec, cfg)(_state(spec, cfg))
    return True, rep.to_dict()


def cmd_scan(spec, cfg):
    clf = _classifier(spec, cfg)
    if cfg.x is not None:
        r = basin.boundary_ray_scan(spec, _state(spec, cfg), cfg.tol, clf)
        return r.flag == "ok", r.to_dict()
    if not cfg.rays:
        raise UsageError("scan needs --x DIRECTION or --rays N")
    cloud = basin.basin_point_cloud(spec, cfg.rays, cfg.seed, cfg.tol, clf)
    if cfg.output_path and cfg.output_path.endswith(".csv"):
        Path(cfg.output_path).write_text(cloud.to_csv())
    flags = cloud.flags
    return all(f == "ok" for f in flags), {
        "rays": len(flags),
        "flags": {f: flags.count(f) for f in sorted(set(flags))},
        "records": [s.to_dict() if s is not None else None for s in cloud.scans],
    }


def cmd_convexity(spec, cfg):
    rep = basin.convexity_probe(spec, count=cfg.pairs, seed=cfg.seed, classifier=_classifier(spec, cfg))
    return True, rep.to_dict()


def _check(name, expected, observed, passed):
    return {"name": name, "expected": expected, "observed": observed, "pass": bool(passed)}


def cmd_reproduce_paper(spec, cfg):
    """Run every reproduction step for the counterexample and write a bundle."""
    out = Path(cfg.output_path or "reproduction")
    out.mkdir(parents=True, exist_ok=True)
    checks = []

    val = model.validate_spec(spec)
    eig_cl = sorted(np.real(val.eig_closed_loop))
    eig_err = max(
        float(np.max(np.abs(np.imag(val.eig_closed_loop)))),
        float(np.max(np.abs(np.array(eig_cl) - [-3.0, -2.0, -1.0]))),
    )
    checks.append(_check("validate", True, val.ok, val.ok))
    checks.append(_check("closed-loop eigenvalues", [-3.0, -2.0, -1.0], eig_cl, eig_err <= 1e-9))

    eq_ok, eq_result = _equilibria_result(spec)
    indices = [e["index"] for e in eq_result["equilibria"]]
    checks.append(_check("equilibrium count", 3, len(indices), len(indices) == 3))
    checks.append(_check("equilibrium indices", [-1, 1, 1], indices, indices == [-1, 1, 1]))
    checks.append(_check("parity law", True, eq_ok, eq_ok))

    isc = degree.index_sum_check(spec, seed=cfg.seed)
    checks.append(_check("index sum = degree", [1, 1], [isc.lhs, isc.rhs], isc.passed and isc.rhs == 1))

    clf = _classifier(spec, cfg)
    fates = {}
    for name, p, want in (("p1", basin.CX_P1, "In"), ("p2", basin.CX_P2, "In"), ("p3", basin.CX_P3, "Out")):
        rep = clf(p)
        got = basin._FROM_VERDICT[rep.verdict].value
        fates[name] = {"x": p.tolist(), "membership": got, **rep.to_dict()}
        checks.append(_check(f"fate {name}", want, got, got == want))
        traj = dynamics.integrate_adaptive(spec, p, TRAJECTORY_T_END, cfg.rel_tol, cfg.abs_tol)
        (out / f"trajectory_{name}.csv").write_text(traj.to_csv())

    conv = basin.convexity_probe(spec, classifier=clf)
    mid_ok = any(np.allclose(v[2], basin.CX_P3, atol=5e-7) for v in conv.violations)
    checks.append(_check("convexity violation (p1, p2)", True, conv.contains_reference_pair,
                         conv.contains_reference_pair and mid_ok))

    rays = cfg.rays or 500
    cloud = basin.basin_point_cloud(spec, rays, cfg.seed, cfg.tol, clf)
    (out / "boundary_cloud.csv").write_text(cloud.to_csv())
    flags = cloud.flags
    widths_ok = all(
        f != "ok" or s.width <= cfg.tol for s, f in zip(cloud.scans, flags)
    )
    checks.append(_check("boundary cloud", f"{rays} rays, widths <= {cfg.tol} or flagged",
                         {f: flags.count(f) for f in sorted(set(flags))}, len(flags) == rays and widths_ok))

    # exploratory: is the saturated equilibrium on the basin boundary?
    x_plus = np.array([-0.7, 0.1, -1.0])
    ray = basin.boundary_ray_scan(spec, x_plus, cfg.tol, clf)
    dist = float(np.linalg.norm(x_plus))
    exploratory = {
        "equilibrium_norm": dist,
        "bracket": [ray.r_lo, ray.r_hi],
        "within_0.1": bool(ray.r_lo - 0.1 <= dist <= ray.r_hi + 0.1),
    }

    ok = all(c["pass"] for c in checks)
    summary = {
        "ok": ok,
        "checks": checks,
        "validation": _validation_dict(val),
        "equilibria": eq_result,
        "index_sum": isc.to_dict(),
        "fates": fates,
        "convexity": conv.to_dict(),
        "boundary_equilibrium_check": exploratory,
        "certificates": {
            "lyapunov_level": clf.inner.c,
            "escape_radius": clf.outer.R_div,
            "escape_level": clf.outer.W_max,
        },
        "integration": {"rel_tol": cfg.rel_tol, "abs_tol": cfg.abs_tol, "t_max": cfg.t_max,
                        "method": "Dormand-Prince 5(4), error per unit step"},
    }
    # bundle-relative output path keeps reruns into other directories byte-identical
    bundle_cfg = {**asdict(cfg), "output_path": "."}
    (out / "summary.json").write_text(_dumps({"command": cfg.command, "config": bundle_cfg,
                                              "ok": ok, "result": summary}))
    if not ok:
        for c in checks:
            if not c["pass"]:
                print(f"--- {c['name']}\n-  expected: {c['expected']}\n+  observed: {c['observed']}", file=sys.stderr)
    return ok, {"bundle": str(out), "checks": checks, "boundary_equilibrium_check": exploratory}


HANDLERS = {
    "validate": cmd_validate,
    "equilibria": cmd_equilibria,
    "degree": cmd_degree,
    "fate": cmd_fate,
    "scan": cmd_scan,
    "convexity": cmd_convexity,
    "reproduce-paper": cmd_reproduce_paper,
}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satbasin", description="Equilibria, degree and basin analysis for x' = Ax + B sat(Kx).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name != "reproduce-paper":
            p.add_argument("--system", required=True, metavar="PATH")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=1e-3)
        p.add_argument("--t-max", type=float, default=100.0)
        p.add_argument("--rel-tol", type=float, default=1e-8)
        p.add_argument("--abs-tol", type=float, default=1e-10)
        p.add_argument("--out", metavar="PATH")
        if name == "degree":
            p.add_argument("--radius", type=float)
        if name in ("scan", "reproduce-paper"):
            p.add_argument("--rays", type=int)
        if name in ("fate", "scan"):
            p.add_argument("--x", type=_vector, metavar="CSV-VECTOR")
        if name == "convexity":
            p.add_argument("--pairs", type=int, default=0, help="random pairs to test")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        command=args.command,
        system_path=getattr(args, "system", None),
        seed=args.seed,
        tol=args.tol,
        t_max=args.t_max,
        rel_tol=args.rel_tol,
        abs_tol=args.abs_tol,
        radius=getattr(args, "radius", None),
        rays=getattr(args, "rays", None),
        pairs=getattr(args, "pairs", 0),
        x=getattr(args, "x", None),
        output_path=args.out,
    )
    try:
        spec = model.counterexample_system(1.0) if cfg.command == "reproduce-paper" else load_system_file(cfg.system_path)
        ok, result = HANDLERS[cfg.command](spec, cfg)
    except UsageError as exc:
        print(f"satbasin: error: {exc}", file=sys.stderr)
        return 2
    except SatBasinError as exc:
        print(f"satbasin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    text = _dumps({"command": cfg.command, "config": asdict(cfg), "ok": ok, "result": result})
    if cfg.output_path and cfg.command != "reproduce-paper" and not cfg.output_path.endswith(".csv"):
        Path(cfg.output_path).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
