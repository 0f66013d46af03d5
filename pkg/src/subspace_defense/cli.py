"""Command-line entry point: ``subspace-defense <command> CONFIG [--out DIR]``.

Exit status is 0 when every enabled check passes, 1 when any fails and 2 for
an invalid config.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfgmod
from . import experiment
from .errors import ConfigError

COMMANDS = {
    "spectrum": "eigenvalue spectrum CSV of the empirical clean covariance",
    "sweep-n": "clean, triggered and sanitized values across sample sizes",
    "sweep-d": "sanitized value across safe-subspace dimensions plus the spectrum",
    "verify-lemmas": "Davis-Kahan, sin-Theta identity, scaling and performance-difference suites",
    "theorem1": "value gap against the approximation + estimation bound per seed",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subspace-defense", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path, help="JSON config file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    return parser


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def run(command: str, config: dict, out: Path) -> experiment.ExperimentReport:
    stem = command.replace("-", "_")
    if command == "spectrum":
        report = experiment.spectrum(config)
        _write(out, "spectrum.csv", experiment.spectrum_csv(report))
    elif command == "sweep-n":
        report = experiment.sweep_n(config)
    elif command == "sweep-d":
        report = experiment.sweep_d(config)
        mean = report.extra["spectrum_mean"]
        spec_report = experiment.ExperimentReport(
            "spectrum", config, [{"index": i + 1, "eigenvalue": v} for i, v in enumerate(mean)], report.seeds
        )
        _write(out, "spectrum.csv", experiment.spectrum_csv(spec_report))
    elif command == "verify-lemmas":
        report = experiment.verify_lemmas(config)
    elif command == "theorem1":
        report = experiment.theorem1(config)
    else:
        raise ValueError(f"unknown command {command!r}")
    for name in report.curves:
        _write(out, f"{stem}_{name}.csv", report.curve_csv(name))
    _write(out, f"{stem}_report.json", report.to_json() + "\n")
    return report


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = cfgmod.load(args.config)
        report = run(args.command, config, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, check in sorted(report.checks.items()):
        print(f"{'PASS' if check['passed'] else 'FAIL'} {name}")
    print(f"{args.command}: {len(report.rows)} rows in {report.wall_clock:.1f}s, written to {args.out}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
