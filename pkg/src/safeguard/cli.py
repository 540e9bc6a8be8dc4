"""Command-line front end.

Loads a JSON model file (or the bundled case study), runs verification,
synthesis, or simulation, and writes JSON reports, CSV trajectories, and
plot-ready ellipsoid data.  Exit codes: 0 success / certificate found,
2 no certificate found on the grid, 1 errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import lmi_engine, matcore, simkit, synth, sysmodel, verify

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_CERTIFICATE = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise CliError(message)


def _round12(obj):
    """Round floats to 12 significant digits for stable report bytes."""
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round12(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return _round12(float(obj))
    return obj


def _emit(report: dict, out_dir: str | None, filename: str):
    report = dict(report)
    report["schema"] = SCHEMA_VERSION
    report["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    body = json.dumps(_round12(report), indent=1, sort_keys=True)
    print(body)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / filename).write_text(body + "\n")


def _load_bundle(args) -> sysmodel.SystemBundle:
    if getattr(args, "model", None):
        bundle = sysmodel.load_model(args.model)
    else:
        raise CliError("--model is required for this command")
    if getattr(args, "safe", None) is not None:
        bundle = bundle.with_safe_scale(args.safe)
    return bundle


def _alphas(args):
    if not getattr(args, "alphas", None):
        return None
    parts = [float(p) for p in args.alphas.split(",")]
    if len(parts) != 4:
        raise CliError("--alphas expects four comma-separated values")
    return tuple(parts)


def _grid_from_file(args) -> verify.AlphaGrid | None:
    if not getattr(args, "grid", None):
        return None
    with open(args.grid) as fh:
        doc = json.load(fh)
    return verify.AlphaGrid(
        alpha1_values=tuple(doc.get("alpha1", verify.AlphaGrid().alpha1_values)),
        alpha4_values=tuple(doc.get("alpha4", verify.AlphaGrid().alpha4_values)),
        alpha2=tuple(doc["alpha2"]) if "alpha2" in doc else "variable",
        alpha3=tuple(doc["alpha3"]) if "alpha3" in doc else "variable")


def _cert_report(outcome: verify.VerificationOutcome) -> dict:
    report = {
        "command": "verify",
        "found": outcome.found,
        "grid": [{"alpha1": c.alpha1, "alpha4": c.alpha4, "status": c.status}
                 for c in outcome.table],
    }
    if outcome.found:
        report["certificate"] = outcome.certificate.as_dict()
    else:
        report["note"] = verify.NOT_A_PROOF
    return report


def _synth_report(result: synth.SynthResult, command: str) -> dict:
    report = result.as_dict()
    report["command"] = command
    report["gain_norm"] = result.gain_norm
    return report


def cmd_validate(args) -> int:
    try:
        bundle = sysmodel.load_model(args.model)
    except sysmodel.ModelError as exc:
        _emit({"command": "validate", "ok": False,
               "errors": str(exc).split("; ")}, args.out, "validate.json")
        return EXIT_ERROR
    errors = sysmodel.validate_bundle(bundle)
    attack_report = sysmodel.validate_attack_model(bundle.attack)
    report = {
        "command": "validate", "ok": not errors,
        "errors": errors,
        "attack": {k: v for k, v in attack_report.items() if k != "reasons"},
    }
    if bundle.phi is not None and bundle.sector.S1.size:
        H = bundle.stacked_H()
        sec = sysmodel.validate_sector(bundle.sector, bundle.phi, H,
                                       samples=args.sector_samples,
                                       radius=args.sector_radius)
        report["sector"] = {"max_violation": sec["max_violation"],
                            "ok": sec["ok"]}
    _emit(report, args.out, "validate.json")
    return EXIT_OK if not errors else EXIT_ERROR


def cmd_verify(args) -> int:
    bundle = _load_bundle(args)
    outcome = verify.verify_safety(bundle, _grid_from_file(args))
    _emit(_cert_report(outcome), args.out, "verify.json")
    if outcome.found and args.out:
        simkit.export_ellipsoid_json(outcome.certificate.ellipsoid(),
                                     Path(args.out) / "rpi_ellipsoid.json",
                                     surface_points=args.surface_points,
                                     seed=args.seed)
        simkit.export_ellipsoid_json(bundle.safe.ellipsoid(),
                                     Path(args.out) / "safe_ellipsoid.json",
                                     surface_points=args.surface_points,
                                     seed=args.seed)
    return EXIT_OK if outcome.found else EXIT_NO_CERTIFICATE


def _run_synth(args, command: str) -> int:
    bundle = _load_bundle(args)
    opts = synth.SynthOptions(alphas=_alphas(args))
    try:
        if command == "synth":
            result = synth.synthesize_nonlinear(bundle, options=opts)
        elif command == "synth-linear":
            result = synth.synthesize_linear(bundle, options=opts)
        elif command == "synth-l2":
            result = synth.synthesize_l2(bundle, options=opts)
        else:  # optimize-rpi
            result = synth.optimize_rpi(bundle, objective=args.objective,
                                        options=opts)
    except synth.SynthesisError as exc:
        _emit({"command": command, "found": False, "error": str(exc)},
              args.out, f"{command}.json")
        return EXIT_NO_CERTIFICATE
    _emit(_synth_report(result, command), args.out, f"{command}.json")
    if args.out:
        simkit.export_ellipsoid_json(result.projection,
                                     Path(args.out) / "projection_ellipsoid.json",
                                     surface_points=args.surface_points,
                                     seed=args.seed)
        simkit.export_ellipsoid_json(bundle.safe.ellipsoid(),
                                     Path(args.out) / "safe_ellipsoid.json",
                                     surface_points=args.surface_points,
                                     seed=args.seed)
    return EXIT_OK


def cmd_worst_attack(args) -> int:
    bundle = _load_bundle(args)
    try:
        result = synth.worst_attack(bundle, mode=args.mode)
    except synth.SynthesisError as exc:
        _emit({"command": "worst-attack", "found": False, "error": str(exc)},
              args.out, "worst-attack.json")
        return EXIT_NO_CERTIFICATE
    _emit({"command": "worst-attack", "found": True,
           "Q3": result.Q3.tolist(), "trace": result.trace,
           "alphas": list(result.alphas), "reverified": result.reverified},
          args.out, "worst-attack.json")
    return EXIT_OK


def cmd_simulate(args) -> int:
    bundle = _load_bundle(args)
    loop = sysmodel.assemble_primary_loop(bundle.plant, bundle.primary)
    loop = sysmodel.PrimaryLoop(loop.A, loop.G, loop.H,
                                bundle.attack_input())
    gen = simkit.AttackGenerator(bundle.attack, strategy=args.attack,
                                 seed=args.seed)
    x0 = (np.array([float(v) for v in args.x0.split(",")])
          if args.x0 else np.zeros(bundle.n_loop))
    traj = simkit.simulate(loop, bundle.phi, gen, x0,
                           horizon=args.horizon, dt=args.dt,
                           n_loop=bundle.n_loop)
    report = simkit.monitor_safety(traj, bundle.safe)
    _emit({"command": "simulate", **report}, args.out, "simulate.json")
    if args.out:
        simkit.export_trajectory_csv(traj, Path(args.out) / "trajectory.csv",
                                     safe=bundle.safe)
    return EXIT_OK


def cmd_case_study(args) -> int:
    scale = args.safe if args.safe is not None else 50.0
    bundle = simkit.josephson_case_study(safe_scale=scale)
    args.model = None
    if args.stage == "verify":
        outcome = verify.verify_safety(bundle, _grid_from_file(args))
        report = _cert_report(outcome)
        report["command"] = "case-study"
        report["stage"] = "verify"
        report["safe_scale"] = scale
        _emit(report, args.out, "case-study-verify.json")
        if outcome.found and args.out:
            simkit.export_ellipsoid_json(outcome.certificate.ellipsoid(),
                                         Path(args.out) / "rpi_ellipsoid.json",
                                         surface_points=args.surface_points,
                                         seed=args.seed)
        return EXIT_OK if outcome.found else EXIT_NO_CERTIFICATE
    if args.stage == "synth":
        opts = synth.SynthOptions(alphas=_alphas(args))
        try:
            result = synth.synthesize_nonlinear(bundle, options=opts)
        except synth.SynthesisError as exc:
            _emit({"command": "case-study", "stage": "synth", "found": False,
                   "error": str(exc)}, args.out, "case-study-synth.json")
            return EXIT_NO_CERTIFICATE
        report = _synth_report(result, "case-study")
        report["stage"] = "synth"
        report["safe_scale"] = scale
        _emit(report, args.out, "case-study-synth.json")
        if args.out:
            simkit.export_ellipsoid_json(
                result.projection, Path(args.out) / "projection_ellipsoid.json",
                surface_points=args.surface_points, seed=args.seed)
            simkit.export_ellipsoid_json(
                bundle.safe.ellipsoid(), Path(args.out) / "safe_ellipsoid.json",
                surface_points=args.surface_points, seed=args.seed)
        return EXIT_OK
    if args.stage == "simulate":
        loop = sysmodel.assemble_primary_loop(bundle.plant, bundle.primary)
        loop = sysmodel.PrimaryLoop(loop.A, loop.G, loop.H,
                                    bundle.attack_input())
        gen = simkit.AttackGenerator(bundle.attack,
                                     strategy="random-admissible",
                                     seed=args.seed)
        traj = simkit.simulate(loop, bundle.phi, gen,
                               np.zeros(bundle.n_loop),
                               horizon=args.horizon, dt=args.dt)
        report = simkit.monitor_safety(traj, bundle.safe)
        _emit({"command": "case-study", "stage": "simulate", **report},
              args.out, "case-study-simulate.json")
        if args.out:
            simkit.export_trajectory_csv(
                traj, Path(args.out) / "trajectory.csv", safe=bundle.safe)
        return EXIT_OK
    raise CliError(f"unknown case-study stage {args.stage!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="safeguard",
                     description="verify and synthesize safety controllers "
                                 "under sensor/actuator attacks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_required=True):
        if model_required:
            p.add_argument("--model", help="JSON model file")
        p.add_argument("--out", help="output directory for reports")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--safe", type=float, default=None,
                       help="override the safe set with scale * I")
        p.add_argument("--surface-points", type=int, default=0,
                       help="sampled surface points in ellipsoid exports")

    p = sub.add_parser("validate", help="check a model file")
    common(p)
    p.add_argument("--sector-samples", type=int, default=20000)
    p.add_argument("--sector-radius", type=float, default=10.0)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("verify", help="primary-loop safety verification")
    common(p)
    p.add_argument("--grid", help="JSON multiplier-grid override")
    p.set_defaults(fn=cmd_verify)

    for name in ("synth", "synth-linear", "synth-l2"):
        p = sub.add_parser(name, help=f"secondary controller synthesis ({name})")
        common(p)
        p.add_argument("--alphas", help="a1,a2,a3,a4 multiplier point")
        p.set_defaults(fn=lambda a, _n=name: _run_synth(a, _n))

    p = sub.add_parser("optimize-rpi", help="shape the certified ellipsoid")
    common(p)
    p.add_argument("--alphas")
    p.add_argument("--objective", choices=["min-trace-X", "max-logdet-X"],
                   default="min-trace-X")
    p.set_defaults(fn=lambda a: _run_synth(a, "optimize-rpi"))

    p = sub.add_parser("worst-attack", help="largest tolerated attack set")
    common(p)
    p.add_argument("--mode", choices=["verify", "synthesize"],
                   default="verify")
    p.set_defaults(fn=cmd_worst_attack)

    p = sub.add_parser("simulate", help="integrate the primary loop under attack")
    common(p)
    p.add_argument("--attack", default="random-admissible",
                   choices=["zero", "constant-boundary", "sinusoid-boundary",
                            "random-admissible"])
    p.add_argument("--x0", help="comma-separated initial state")
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("case-study", help="bundled Josephson-junction instance")
    common(p, model_required=False)
    p.add_argument("--stage", choices=["verify", "synth", "simulate"],
                   default="verify")
    p.add_argument("--alphas")
    p.add_argument("--grid")
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.set_defaults(fn=cmd_case_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (sysmodel.ModelError, matcore.DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
