#!/usr/bin/env python
import argparse
import asyncio
import logging
import os
import sys

from fuplab import experiment
from fuplab.const import MIN_RESOLVED_CELLS
from fuplab.exceptions import FupLabConfigError, FupLabError
from fuplab.gridset import gen_cantor_product
from fuplab.models import CantorSpec
from fuplab.porosity import analyze_line_porosity
from fuplab.spectral import fup_scan


def help():
    print("fuplab demo app")
    print("syntax: main.py [options]")
    print("options:")
    print("   --depth <n>        ... deepest Cantor level to scan (at least 3)")
    print("   --config <file>    ... run a TOML experiment instead of the built-in demo")
    print("   --debug            ... log every stage and power iteration")
    print()
    print("examples:")
    print("    main.py --depth 4 --debug")
    print("    main.py --config rehearsal.toml")


async def run_config(path):
    cfg = experiment.load_config(path)
    manifest = await experiment.run_experiment(cfg)
    experiment.emit_report(manifest, cfg.output_dir)
    for record in manifest.stages:
        print(f"{record.name}: {record.status} {record.values}")


async def run_demo(depth):
    spec = CantorSpec.uniform(2, 3, (0, 2), depth)
    s = gen_cantor_product(spec)
    print(f"Mid-third Cantor square at depth {depth}: {s.count} cells of {spec.side ** 2}")

    report = analyze_line_porosity(s, MIN_RESOLVED_CELLS * s.scale, s.scale * s.side)
    print(f"Line porosity: nu={report.nu_max:.4f} over {report.directions_tested} directions")

    scan = fup_scan(spec, [3 ** n for n in range(1, depth + 1)])
    for entry in scan.entries:
        print(f"N={entry.N:>5} norm={entry.norm:.8f}")
    print(f"Decay exponent beta={scan.beta:.4f} (C={scan.C_fit:.4f}, residual {scan.fit_residual:.2g})")


async def main():
    parser = argparse.ArgumentParser(description="fuplab demo")
    parser.add_argument("--depth", type=int, dest="depth", metavar="N", default=None)
    parser.add_argument("--config", type=str, dest="config", metavar="FILE", default=None)
    parser.add_argument("--debug", dest="debug", help="Debug mode which logs every stage", action="store_true")
    args = parser.parse_args()

    logging.basicConfig(level=logging.DEBUG if args.debug else logging.INFO)

    if args.config is None and (args.depth is None or args.depth < 3):
        help()
        sys.exit(0)

    try:
        if args.config is not None:
            await run_config(os.path.abspath(args.config))
        else:
            await run_demo(args.depth)
    except FupLabConfigError as err:
        print(f"Configuration error: {err}", file=sys.stderr)
        sys.exit(2)
    except FupLabError as err:
        print(f"Error: {err}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    asyncio.run(main())
