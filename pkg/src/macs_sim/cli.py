"""Command-line entry point.

Exit status: 0 on success, 1 on a validation error, 2 on an I/O error.
"""

from __future__ import annotations

import argparse
import sys

from . import report
from .config import SWEEP_AXES, load_config
from .errors import MacsError


def _values(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise MacsError(f"--values must be a comma-separated list of numbers, got {text!r}")


def _run(args):
    cfg = load_config(args.config)
    outcome = report.cmd_run(cfg)
    for m in outcome.metrics.values():
        print(f"{m.policy.value:>15}  drop={m.drop_rate:.4f}  reroute={m.reroute_rate:.4f}  "
              f"max_load={m.imbalance.max:g}  total={m.latency.total:.4f}  "
              f"speedup={m.speedup_vs_vanilla:.4f}")
    print(f"reports written to {cfg.output.dir}")


def _sweep(args):
    cfg = load_config(args.config)
    sys.stdout.write(report.cmd_sweep(cfg, args.axis, _values(args.values)))


def _calibrate(args):
    cfg = load_config(args.config)
    report.cmd_calibrate(cfg)
    print(report.memory_line(cfg))
    print(f"calibration written to {cfg.output.dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="macs-sim",
        description="Capacity-managed MoE routing simulator under expert parallelism.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every configured policy once and write reports")
    p.add_argument("--config", required=True, help="path to a JSON run config")
    p.set_defaults(func=_run)

    p = sub.add_parser("sweep", help="sweep one parameter and emit a metrics CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated values, at least two")
    p.set_defaults(func=_sweep)

    p = sub.add_parser("calibrate", help="classify experts and compute centroids")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_calibrate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors are validation errors here, not I/O errors
        return 0 if exc.code in (0, None) else 1
    try:
        args.func(args)
    except MacsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
