"""``csim`` command line: load a config, run one analysis, write report.json (and sigma.csv)."""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .certify import certify, may_leonard_degree, may_leonard_gap_checks
from .config import CommandParams, ConfigError, RunConfig, SystemSpec, _check_may_leonard, load_config, parse_config
from .errors import CsimError, InvalidStateError, NumericalFailure
from .flow import IntegratorConfig
from .simplex import (
    export_graph,
    face_consistency_check,
    invariance_residual,
    reconstruct_sigma,
    unorderedness_check,
)
from .spectrum import (
    benaim_gap_check,
    default_ergodic_samples,
    exponents_at_rest_point,
    exponents_for_sample,
    external_nonnegativity_check,
    find_rest_points,
    permanence_probe,
)
from .sysmodel import LotkaVolterraSystem, all_faces, check_hypothesis_A, check_hypothesis_A_lv

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
COMMANDS = ("check", "rest-points", "exponents", "simplex", "certify", "permanence", "demo")


def _complex_list(values):
    return [[float(np.real(v)), float(np.imag(v))] for v in values]


def _rest_point_entry(system, p):
    rep = exponents_at_rest_point(system, p)
    return {
        "location": [float(v) for v in p.location],
        "face": list(p.face),
        "eigenvalues": _complex_list(p.eigenvalues),
        "residual": float(p.residual),
        "internal": [float(v) for v in rep.internal],
        "external": {str(i): v for i, v in rep.external.items()},
        "provenance": "closed-form",
    }


# ------------------------------------------------------------------ commands

def cmd_check(cfg: RunConfig, system, out_dir):
    rep = check_hypothesis_A(system)
    payload = {"hypothesis_A": {**rep.as_dict(), "provenance": "closed-form" if rep.method == "closed-form" else "computed"}}
    if isinstance(system, LotkaVolterraSystem):
        lv = check_hypothesis_A_lv(system)
        payload["hypothesis_A_lv"] = {**lv.as_dict(), "provenance": "closed-form"}
    return payload, rep.holds


def cmd_rest_points(cfg, system, out_dir):
    return {"rest_points": [_rest_point_entry(system, p) for p in find_rest_points(system)]}, True


def cmd_exponents(cfg, system, out_dir):
    c = cfg.command
    samples = default_ergodic_samples(system, T=c.T_exponents, seed=cfg.seed, cfg=cfg.integrator)
    measures = []
    for s in samples:
        entry = {"measure": s.label, "valid": s.valid}
        if s.valid:
            rep = exponents_for_sample(system, s, cfg.integrator)
            gap = benaim_gap_check(rep, c.k, c.eta) if rep.all_exponents().size >= 2 else None
            entry.update(rep.as_dict())
            entry["provenance"] = "closed-form" if rep.kind == "dirac" else "sample-based"
            if gap is not None:
                entry["gap"] = {"k": c.k, "eta": c.eta, "margin": gap.margin, "holds": gap.holds}
        measures.append(entry)
    nonneg = external_nonnegativity_check(system, samples, cfg.integrator)
    return {"measures": measures, "external_nonnegativity": nonneg.as_dict()}, nonneg.holds


def cmd_simplex(cfg, system, out_dir):
    c = cfg.command
    graph = reconstruct_sigma(system, c.m, T_sweep=c.T_sweep, tol_hausdorff=c.tol_hausdorff,
                              cfg=cfg.integrator, dt_sweep=c.dt_sweep, polish=c.polish)
    export_graph(graph, out_dir / "sigma.csv")
    inv = invariance_residual(graph, system, c.dt_probe, cfg.integrator)
    pairs = unorderedness_check(graph)
    faces = face_consistency_check(graph, system)
    meta = {k: v for k, v in graph.metadata.items() if k != "width_history"}
    worst_face = max((f.max_discrepancy for f in faces), default=0.0)
    bound_ok = all(f.face_bound_holds is not False for f in faces)
    payload = {
        "graph": {**meta, "rows": len(graph.radii), "csv": "sigma.csv"},
        "invariance_residual": {"dt": c.dt_probe, "max": inv.max},
        "unorderedness_violations": [list(p) for p in pairs],
        "face_consistency": [
            {"face": list(f.face), "max_discrepancy": f.max_discrepancy,
             "face_bound_holds": f.face_bound_holds, "face_bound_excess": f.face_bound_excess}
            for f in faces
        ],
    }
    ok = not pairs and bound_ok and worst_face < max(1e-3, 3 * c.tol_hausdorff)
    return payload, ok


def cmd_certify(cfg, system, out_dir):
    c = cfg.command
    rep = certify(system, c.k, c.eta, n_starts=c.n_starts, T_transient=c.T_transient, T_sample=c.T_sample,
                  seed=cfg.seed, cfg=cfg.integrator, T_gap=c.T_exponents)
    target = "C1" if c.k == 0 else f"C{c.k + 1}"
    return {"certificate": rep.as_dict()}, rep.verdict == target


def cmd_permanence(cfg, system, out_dir):
    c = cfg.command
    results = []
    for face in all_faces(system.n):
        res = permanence_probe(system, face, c.permanence_starts, c.permanence_T, cfg.integrator, cfg.seed)
        entry = res.as_dict()
        del entry["per_start"]
        results.append({**entry, "starts": c.permanence_starts, "holds": res.summary >= c.permanence_floor})
    return {"floor": c.permanence_floor, "faces": results}, all(r["holds"] for r in results)


def cmd_demo(cfg, system, out_dir):
    alpha, beta = float(system.alpha), float(system.beta)
    rests = [_rest_point_entry(system, p) for p in find_rest_points(system)]
    axial = [r for r in rests if len(r["face"]) == system.n - 1]
    interior = [r for r in rests if not r["face"]]
    l = may_leonard_degree(alpha)
    gaps = []
    if l is not None:
        gaps = [{"measure": lab, "margin": g.margin, "holds": g.holds, "k": l - 1}
                for lab, g in may_leonard_gap_checks(alpha, beta, l)]
    payload = {
        "alpha": alpha,
        "beta": beta,
        "axial_spectra": [r["eigenvalues"] for r in axial],
        "interior_spectrum": interior[0]["eigenvalues"] if interior else None,
        "interior_point": interior[0]["location"] if interior else None,
        "degree": l,
        "degree_provenance": "closed-form",
        "gap_checks": gaps,
        "hypothesis_A": check_hypothesis_A(system).as_dict(),
        "rest_points": rests,
    }
    return payload, True


HANDLERS = {
    "check": cmd_check,
    "rest-points": cmd_rest_points,
    "exponents": cmd_exponents,
    "simplex": cmd_simplex,
    "certify": cmd_certify,
    "permanence": cmd_permanence,
    "demo": cmd_demo,
}


def run_command(cfg: RunConfig, command: str) -> tuple[dict, int]:
    """Run one command; returns (report, exit code).  Writes nothing except sigma.csv for ``simplex``."""
    if command not in HANDLERS:
        raise ConfigError("command", f"unknown command {command!r}")
    out_dir = Path(cfg.out)
    report = {
        "tool": "csim",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "payload": None,
        "warnings": [],
        "status": "ok",
        "exit_code": EXIT_OK,
    }
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            system = cfg.system.build()
            payload, ok = HANDLERS[command](cfg, system, out_dir)
            report["payload"] = payload
            code = EXIT_OK if ok else EXIT_FAILED
            report["status"] = "ok" if ok else "check_failed"
        except InvalidStateError as exc:
            report["status"], report["error"] = "config_error", str(exc)
            code = EXIT_CONFIG
        except (NumericalFailure, CsimError, OSError, FloatingPointError) as exc:
            report["status"], report["error"] = "numerical_failure", f"{type(exc).__name__}: {exc}"
            code = EXIT_NUMERICAL
    report["warnings"] = sorted({str(w.message) for w in caught})
    report["exit_code"] = code
    return report, code


def write_report(report: dict, out_dir) -> Path:
    path = Path(out_dir) / "report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=False) + "\n")
    return path


# ------------------------------------------------------------------ argparse

def _flags(name: str) -> list[str]:
    flag = "--" + name.replace("_", "-")
    return [flag] if flag == flag.lower() else [flag, flag.lower()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csim", description="Carrying simplex and smoothness-certificate analysis.")
    parser.add_argument("--version", action="version", version=f"csim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory for report.json / sigma.csv")
        p.add_argument("--seed", type=int, help="seed for the quasi-random sequences")
        for f in fields(CommandParams):
            if isinstance(f.default, bool):
                p.add_argument(*_flags(f.name), dest=f"cmd_{f.name}", type=lambda s: s.lower() in ("1", "true", "yes"),
                               metavar="BOOL")
            else:
                p.add_argument(*_flags(f.name), dest=f"cmd_{f.name}", type=type(f.default))
        for f in fields(IntegratorConfig):
            p.add_argument(*_flags("integrator_" + f.name), dest=f"int_{f.name}", type=type(f.default))

    for name in COMMANDS[:-1]:
        common(sub.add_parser(name))
    demo = sub.add_parser("demo", help="built-in demonstrations")
    demo.add_argument("which", choices=["may-leonard"])
    demo.add_argument("--alpha", type=float, default=1.4)
    demo.add_argument("--beta", type=float, default=0.9)
    common(demo)
    return parser


def _resolve(args) -> RunConfig:
    if args.command == "demo":
        _check_may_leonard("demo", args.alpha, args.beta)
        cfg = RunConfig(SystemSpec("builtin_demo", alpha=args.alpha, beta=args.beta, name="may_leonard"))
        if args.config:
            base = load_config(args.config)
            cfg = replace(base, system=cfg.system)
    else:
        if not args.config:
            raise ConfigError("--config", "a configuration file is required")
        cfg = load_config(args.config)
    cmd = {f.name: getattr(args, f"cmd_{f.name}") for f in fields(CommandParams)
           if getattr(args, f"cmd_{f.name}") is not None}
    integ = {f.name: getattr(args, f"int_{f.name}") for f in fields(IntegratorConfig)
             if getattr(args, f"int_{f.name}") is not None}
    data = cfg.to_dict()
    data["command"].update(cmd)
    data["integrator"].update(integ)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out"] = args.out
    return parse_config(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
    except (ConfigError, ValueError) as exc:
        print(f"csim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report, code = run_command(cfg, args.command)
    try:
        path = write_report(report, cfg.out)
    except OSError as exc:
        print(f"csim: cannot write report: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    status = {EXIT_OK: "ok", EXIT_FAILED: "check failed", EXIT_CONFIG: "config error",
              EXIT_NUMERICAL: "numerical failure"}[code]
    print(f"csim {args.command}: {status}; report written to {path}")
    if "error" in report:
        print(f"csim: {report['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
