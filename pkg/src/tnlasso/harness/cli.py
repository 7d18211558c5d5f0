"""Command line entry point.

    tnlasso sweep    --config sweep.json --seed 3 --out runs/sweep
    tnlasso solve    --config one.json              # also writes traces.csv
    tnlasso norms    --config norms.json
    tnlasso minimax  --config minimax.json
    tnlasso packing  --config packing.json
    tnlasso geometry --config geometry.json

Exit status: 0 on success, 2 on a configuration error, 3 when at least one
row failed.
"""

import argparse
import json
import sys

from ..errors import ConfigError
from .config import load_config
from .output import emit
from .experiments import run

VERBS = {
    "norms": "norm-check",
    "solve": "recovery-sweep",
    "sweep": "recovery-sweep",
    "minimax": "minimax",
    "packing": "packing-verify",
    "geometry": "theta-gamma",
}

EXIT_OK, EXIT_CONFIG, EXIT_ROWS = 0, 2, 3


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _jobs(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("jobs must be >= 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tnlasso", description="Run seeded recovery and norm experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, exp in VERBS.items():
        p = sub.add_parser(verb, help=f"run a {exp} experiment")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--jobs", type=_jobs, default=1, help="worker processes")
        p.add_argument("--timing", action="store_true",
                       help="fill the wall_ms column (makes output run-dependent)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    experiment = VERBS[args.verb]
    try:
        spec = load_config(args.config, seed=args.seed, out=args.out, experiment=experiment)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    report = run(spec, jobs=args.jobs, timing=args.timing, keep_traces=args.verb == "solve")
    paths = emit(report, ["csv", "json", "plotdata"], spec.out)
    for path in paths:
        print(path)
    for fit in report.fits:
        print(f"slope {fit['slope']:.4f} (r2 {fit['r2']:.3f}) for {fit['series']}")
    if report.failures:
        print(f"{report.failed} of {len(report.rows)} rows failed:", file=sys.stderr)
        for f in report.failures:
            print("  " + json.dumps(f), file=sys.stderr)
        return EXIT_ROWS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
