"""Command-line entry points: calibrate once, run experiments, read reports.

Exit codes: 0 all verdicts pass, 2 a verdict failed (or the configuration
was unusable), 3 the resolution guard refused an under-resolved run.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import jsonschema

from .blocks import ResolutionGuardError
from .calibration import (
    calibrate,
    default_calibration_path,
    load_calibration,
    save_calibration,
)
from .experiments import EXPERIMENTS, ExperimentError, run_experiment

EXIT_OK = 0
EXIT_VERDICT = 2
EXIT_RESOLUTION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lab",
        description="numerical laboratory for transport, mixing, and "
                    "log-regularity experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate",
                         help="measure all verdict constants on the frozen "
                              "corpus and store them")
    cal.add_argument("--out", type=Path, default=None,
                     help="target JSON path (default: the packaged "
                          "calibration file)")
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--quick", action="store_true",
                     help="small grids and short horizons (smoke testing "
                          "only, not for stored calibrations)")

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--config", type=Path, required=True,
                     help="JSON config file")
    run.add_argument("--out", type=Path, required=True,
                     help="output directory for report.json, "
                          "timeseries.csv, plotdata.csv")
    run.add_argument("--calibration", type=Path, default=None,
                     help="calibration file (default: the packaged one)")

    rep = sub.add_parser("report", help="print a stored report")
    rep.add_argument("dir", type=Path, help="directory holding report.json")
    rep.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def _cmd_calibrate(args) -> int:
    payload = calibrate(seed=args.seed, quick=args.quick)
    path = save_calibration(payload, args.out)
    print(f"calibration version {payload['version']} written to {path}")
    for name, value in sorted(payload["constants"].items()):
        print(f"  {name:>20s} = {value:.6g}")
    decay = payload["block_decay"]
    print(f"  {'block decay rate':>20s} = {decay['c_hat']:.6g} "
          f"(R^2 = {decay['r_squared']:.4f})")
    return EXIT_OK


def _cmd_run(args) -> int:
    raw = json.loads(args.config.read_text())
    if raw.setdefault("experiment", args.experiment) != args.experiment:
        print(f"config names experiment {raw['experiment']!r} but the "
              f"command line says {args.experiment!r}", file=sys.stderr)
        return EXIT_VERDICT
    calibration = load_calibration(args.calibration)
    try:
        report = run_experiment(raw, calibration)
    except ResolutionGuardError as err:
        print(f"resolution guard: {err}", file=sys.stderr)
        return EXIT_RESOLUTION
    except (ExperimentError, jsonschema.ValidationError) as err:
        print(f"experiment failed: {err}", file=sys.stderr)
        return EXIT_VERDICT
    report.save(args.out)
    for name, verdict in report.verdicts.items():
        state = "PASS" if verdict["passed"] else "FAIL"
        print(f"[{state}] {report.experiment}/{name}: {verdict['detail']}")
    for note in report.notes:
        print(f"note: {note}")
    print(f"report written to {args.out / 'report.json'}")
    return EXIT_OK if report.passed else EXIT_VERDICT


def _cmd_report(args) -> int:
    payload = json.loads((args.dir / "report.json").read_text())
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["experiment", "verdict", "passed", "value",
                         "bound", "detail"])
        for name, v in sorted(payload["verdicts"].items()):
            writer.writerow([payload["experiment"], name, v["passed"],
                             v["value"], v["bound"], v["detail"]])
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "calibrate":
        return _cmd_calibrate(args)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
