"""Command-line entry point for the fuplab laboratory."""

import argparse
import asyncio
import json
import logging
import math
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import extension, gridset, porosity, spectral, weights
from .const import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, MIN_RESOLVED_CELLS, STAGE_TIMEOUT, SUMMARY_NAME, TERM_EXTENSION
from .exceptions import FupLabConfigError, FupLabError
from .experiment import cantor_spec, emit_report, load_config, load_manifest, run_experiment
from .modification import ModifiedWeight, load_any_weight, modify_weight, save_any_weight
from .models import ComplexPoint, SampleSpec

_LOGGER = logging.getLogger("fuplab")


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from err


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from err


def _paths(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _constant(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"C must be a number or 'auto', got {text!r}") from err


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, default=str))


def _add_cantor_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dim", type=int, default=2, help="ambient dimension")
    parser.add_argument("--base", type=int, default=3, help="Cantor base L")
    parser.add_argument("--digits", type=_ints, default=[0, 2], metavar="D,D,...", help="kept digits on every axis")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    manifest = asyncio.run(run_experiment(cfg, args.timeout))
    emit_report(manifest, cfg.output_dir)
    with open(os.path.join(cfg.output_dir, SUMMARY_NAME)) as fp:
        sys.stdout.write(fp.read())
    return EXIT_OK if manifest.all_passed else EXIT_FAILURE


def cmd_report(args) -> int:
    manifest = load_manifest(args.manifest)
    output_dir = os.path.dirname(os.path.abspath(args.manifest))
    for path in emit_report(manifest, output_dir):
        print(path)
    return EXIT_OK if manifest.all_passed else EXIT_FAILURE


def cmd_generate(args) -> int:
    if args.family == "sierpinski":
        s = gridset.gen_sierpinski(args.depth)
    elif args.family == "box-porous":
        s = gridset.gen_box_porous(args.dim, args.base, args.depth, args.seed, args.removed)
    else:
        spec = cantor_spec({"dim": args.dim, "base": args.base, "digits": args.digits, "depth": args.depth})
        s = gridset.gen_cantor_product(spec, frequency=args.frequency)
    gridset.save_gridset(s, args.output)
    print(f"{args.output}: {s.count} cells on a {s.side}^{s.dim} grid")
    return EXIT_OK


def _write_json(data, path: Optional[str]) -> None:
    if path:
        with open(path, "w") as fp:
            json.dump(data, fp, indent=2, default=str)
        print(path)
    else:
        _print_json(data)


def cmd_porosity(args) -> int:
    s = gridset.load_gridset(args.input)
    if args.kind == "box":
        levels = porosity.box_porosity_levels(s, args.L)
        _write_json({"kind": "box", "L": args.L, "levels": levels}, args.out)
        return EXIT_OK if all(levels.values()) else EXIT_FAILURE

    a0 = args.a0 if args.a0 is not None else MIN_RESOLVED_CELLS * s.scale
    a1 = args.a1 if args.a1 is not None else s.scale * s.side
    if args.kind == "ball":
        report = porosity.analyze_ball_porosity(s, a0, a1, args.nu, seed=args.seed)
    else:
        report = porosity.analyze_line_porosity(s, a0, a1, args.dirs, args.nu, seed=args.seed)
    _write_json(report.as_dict(), args.out)
    passed = report.nu_max >= args.nu if args.nu is not None else report.nu_max > 0
    return EXIT_OK if passed else EXIT_FAILURE


def _scan_family(args):
    if args.family == "file":
        if not args.input:
            raise FupLabConfigError("--family file needs --input with one .gset per grid size")
        sets = [gridset.load_gridset(path) for path in args.input]
        N_list = args.N or sorted(s.side for s in sets)
        return spectral.gridset_family(sets), N_list
    if not args.N:
        raise FupLabConfigError("--family cantor needs --N")
    return cantor_spec({"dim": args.dim, "base": args.base, "digits": args.digits, "depth": 1}), args.N


def cmd_fup_scan(args) -> int:
    family, N_list = _scan_family(args)
    scan = spectral.fup_scan(family, N_list, tuple(args.window) if args.window else None, seed=args.seed)
    if args.out:
        spectral.write_scan_csv(scan, args.out)
    for entry in scan.entries:
        print(f"N={entry.N:<8} norm={entry.norm:.10f} iterations={entry.iterations}")
    print(f"beta={scan.beta:.6f} C={scan.C_fit:.6f} residual={scan.fit_residual:.3g}")
    return EXIT_OK if scan.beta >= args.min_beta else EXIT_FAILURE


def _build_weight(args):
    Y = gridset.load_gridset(args.input)
    w = weights.build_damping_weight(Y, args.nu, args.mu, args.alpha, args.s)
    passed, worst, checked = weights.damping_lower_bound_check(w, Y)
    _LOGGER.info("Shells %s, lower bound margin %.6g over %s points", w.shells, worst, checked)
    return (modify_weight(w, samples=args.samples) if args.modify else w), passed


def cmd_weight_build(args) -> int:
    w, passed = _build_weight(args)
    save_any_weight(w, args.out)
    print(args.out)
    return EXIT_OK if passed else EXIT_FAILURE


def cmd_weight_check(args) -> int:
    if args.weight:
        w, passed = load_any_weight(args.weight), True
    else:
        if args.alpha is None:
            raise FupLabConfigError("--input needs --alpha to build the weight")
        w, passed = _build_weight(args)
    growth = weights.growth_report(w, args.dirs)
    regularity = [weights.regularity_scan(w, a) for a in (1, 2, 3)]
    data = {
        "growth_integral": growth.integral_value,
        "tail_bound": growth.tail_bound,
        "diverged": growth.diverged,
        "increments": growth.increments,
        "regularity": {str(report.order): report.c_reg for report in regularity},
    }
    if isinstance(w, ModifiedWeight):
        data["q"] = {str(k): v for k, v in sorted(w.q.items())}
    _write_json(data, args.out)
    return EXIT_FAILURE if growth.diverged or not passed else EXIT_OK


def _sample_spec(args) -> SampleSpec:
    return SampleSpec(count=args.samples, seed=args.seed, hilbert_lines=args.hilbert_lines,
                      extra_lines=args.extra_lines)


def cmd_psh_check(args) -> int:
    w = load_any_weight(args.weight)
    spec = _sample_spec(args)
    C = args.C
    if C == "auto":
        scan = extension.scan_constants(w, spec)
        C = max(scan.C1, scan.C2)
        print(f"C1={scan.C1:.6g} C2={scan.C2:.6g}")
    cert = extension.psh_certificate(w, C, spec)
    if args.out:
        with open(args.out, "w") as fp:
            json.dump(cert.as_dict(), fp, indent=2)
    print(f"C={C:.6g} min eigenvalue {cert.global_min:.6g} over {len(cert.sample_points)} points, "
          f"real-locus margin {cert.real_locus_margin:.6g}")
    if cert.witness is not None:
        print(f"witness x={list(cert.witness.x)} y={list(cert.witness.y)}")
    return EXIT_OK if cert.passed else EXIT_FAILURE


def _finite(data):
    return {k: (repr(v) if isinstance(v, float) and not math.isfinite(v) else v) for k, v in data.items()}


def _evaluate_at(w, z: ComplexPoint, args):
    data = {"x": [float(v) for v in z.x], "y": [float(v) for v in z.y], "Ew": extension.poisson_extend(w, z)}
    data["u"] = data["Ew"] + args.C * z.y_norm
    if args.hessian and z.y_norm:
        form = extension.complex_hessian([extension.Term(TERM_EXTENSION, 1.0, w)], z)
        data["hessian_min_eig"] = form.min_eig()
        data["hessian"] = np.real(form.entries).tolist()
    if args.phi is not None:
        data["phi"], data["kappa"] = extension.phi_kappa(z, w, args.phi, w.dim, args.C)
    return _finite(data)


def cmd_extend_eval(args) -> int:
    w = load_any_weight(args.weight)
    if args.x is not None or args.y is not None:
        if args.x is None or args.y is None or len(args.x) != w.dim or len(args.y) != w.dim:
            raise FupLabConfigError(f"x and y need {w.dim} coordinates")
        _write_json(_evaluate_at(w, ComplexPoint.of(args.x, args.y), args), args.out)
        return EXIT_OK
    points = extension.sample_points(w, SampleSpec(count=args.samples, seed=args.seed, adversarial=False))
    _write_json({"C": args.C, "points": [_evaluate_at(w, z, args) for z in points]}, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuplab", description="Numerical laboratory for fractal uncertainty bounds")
    parser.add_argument("--debug", dest="debug", help="log every stage and iteration", action="store_true")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    p = commands.add_parser("run", help="run an experiment config")
    p.add_argument("config", help="TOML experiment file")
    p.add_argument("--timeout", type=float, default=STAGE_TIMEOUT, help="seconds allowed per stage")
    p.set_defaults(func=cmd_run)

    p = commands.add_parser("report", help="rewrite the report of an existing manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_report)

    p = commands.add_parser("generate", help="write a .gset file")
    p.add_argument("--family", choices=("cantor", "sierpinski", "box-porous"), default="cantor")
    _add_cantor_options(p)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--frequency", action="store_true", help="embed with unit cells around the origin")
    p.add_argument("--removed", type=int, default=1, help="subcubes dropped per cube (box-porous)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = commands.add_parser("porosity", help="certify porosity of a .gset file")
    p.add_argument("--input", required=True, metavar="GSET")
    p.add_argument("--kind", choices=("ball", "line", "box"), default="line")
    p.add_argument("--a0", type=float, default=None)
    p.add_argument("--a1", type=float, default=None)
    p.add_argument("--nu", type=float, default=None, help="porosity to confirm")
    p.add_argument("--dirs", type=int, default=8, help="directions sampled for line porosity")
    p.add_argument("--L", type=int, default=3, help="box porosity base")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, metavar="REPORT_JSON")
    p.set_defaults(func=cmd_porosity)

    p = commands.add_parser("fup-scan", help="scan the FUP norm of a family of sets over grid sizes")
    p.add_argument("--family", choices=("cantor", "file"), default="cantor")
    _add_cantor_options(p)
    p.add_argument("--input", type=_paths, default=None, metavar="GSET,GSET,...", help="one set per grid size")
    p.add_argument("--N", type=_ints, default=None, metavar="N,N,...", help="grid sizes")
    p.add_argument("--window", type=_ints, default=None, metavar="START,STOP")
    p.add_argument("--min-beta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, metavar="SCAN_CSV")
    p.set_defaults(func=cmd_fup_scan)

    for name, func, text in (("weight-build", cmd_weight_build, "build a damping weight adapted to a frequency set"),
                             ("weight-check", cmd_weight_check, "growth and regularity diagnostics of a weight")):
        p = commands.add_parser(name, help=text)
        if name == "weight-check":
            source = p.add_mutually_exclusive_group(required=True)
            source.add_argument("--input", metavar="GSET", help="frequency set")
            source.add_argument("--weight", metavar="WEIGHT_JSON", help="stored weight")
        else:
            p.add_argument("--input", required=True, metavar="GSET", help="frequency set")
        p.add_argument("--nu", type=float, default=0.1)
        p.add_argument("--mu", type=float, default=10 * math.sqrt(2))
        p.add_argument("--alpha", type=float, required=name == "weight-build")
        p.add_argument("--s", type=float, default=weights.DEFAULT_S)
        p.add_argument("--modify", action="store_true", help="also apply the shell modification")
        p.add_argument("--samples", type=int, default=512, help="initial circle sample for the modification")
        if name == "weight-check":
            p.add_argument("--dirs", type=int, default=64, help="directions for the growth integral")
        p.add_argument("--out", required=name == "weight-build", default=None, metavar="JSON")
        p.set_defaults(func=func)

    p = commands.add_parser("psh-check", help="sample the complex Hessian of Ew + C|y|")
    p.add_argument("--weight", required=True, metavar="WEIGHT_JSON")
    p.add_argument("--C", type=_constant, default="auto")
    p.add_argument("--samples", type=int, default=SampleSpec().count)
    p.add_argument("--hilbert-lines", type=int, default=SampleSpec().hilbert_lines)
    p.add_argument("--extra-lines", type=int, default=0)
    p.add_argument("--seed", type=int, default=SampleSpec().seed)
    p.add_argument("--out", default=None, metavar="CERT_JSON")
    p.set_defaults(func=cmd_psh_check)

    p = commands.add_parser("extend-eval", help="evaluate the extension of a weight at x + iy")
    p.add_argument("--weight", required=True, metavar="WEIGHT_JSON")
    p.add_argument("--x", type=_floats, default=None)
    p.add_argument("--y", type=_floats, default=None)
    p.add_argument("--samples", type=int, default=16, help="sample points used when no point is given")
    p.add_argument("--seed", type=int, default=SampleSpec().seed)
    p.add_argument("--hessian", action="store_true")
    p.add_argument("--phi", type=float, default=None, metavar="RHO", help="also evaluate phi and kappa")
    p.add_argument("--C", type=float, default=0.0)
    p.add_argument("--out", default=None, metavar="JSON")
    p.set_defaults(func=cmd_extend_eval)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO)
    _LOGGER.debug("Running %s", args.command)
    try:
        return args.func(args)
    except FupLabConfigError as err:
        print(f"Configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FupLabError as err:
        print(f"Error: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(run())
