"""Command-line interface.

Exit codes: 0 success, 1 validation/trend failure, 2 bad input,
3 internal numerical failure.
"""

import argparse
import json
import sys

from . import harness, optimizer, scene
from .conic import NumericalError


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read scenario {path}: {exc}", file=sys.stderr)
        sys.exit(2)


def _cmd_solve(args) -> int:
    blob = _load_config(args.config)
    try:
        cfg = harness.ScenarioConfig.from_dict(blob)
        dump = [] if args.dump_solutions else None
        rows = harness.run_scenario(cfg, constraint_modes=("both",), dump_solutions=dump)
    except harness.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, scene.LocalizabilityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    if args.out:
        harness.write_csv(rows, args.out)
    else:
        print(harness.CSV_HEADER)
        for r in rows:
            print(r.as_csv())
    if args.dump_solutions:
        with open(args.dump_solutions, "w") as fh:
            json.dump(dump, fh)
    return 0


def _cmd_reproduce(args) -> int:
    try:
        rows, verdicts = harness.reproduce(args.figure_id)
    except harness.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    if args.out:
        import os
        os.makedirs(args.out, exist_ok=True)
        harness.write_csv(rows, os.path.join(args.out, f"{args.figure_id}.csv"))
        with open(os.path.join(args.out, f"{args.figure_id}_verdicts.json"), "w") as fh:
            json.dump(verdicts, fh, indent=2)
    for name, ok in verdicts.items():
        print(f"{args.figure_id}.{name}: {'PASS' if ok else 'FAIL'}")
    return 0 if all(verdicts.values()) else 1


def _cmd_validate(args) -> int:
    try:
        report = harness.validate(args.suite)
    except harness.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, section in report.items():
        if isinstance(section, dict):
            for key, value in section.items():
                print(f"{name}.{key}: {value}")
    print(f"passed: {report['passed']}")
    return 0 if report["passed"] else 1


def _cmd_crb(args) -> int:
    blob = _load_config(args.config)
    try:
        beams = None
        if "beamformers" in blob:
            beams = harness.beams_from_json(blob["beamformers"],
                                            blocked=blob.get("mode") == "ofdm_toa")
        result = harness.evaluate_crb(blob, beams)
    except harness.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="locbeam",
        description="Transmit beamforming under data-rate and localization constraints")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run a scenario (with optional sweep) and emit CSV")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    p.add_argument("--dump-solutions", default=None,
                   help="sidecar JSON with the final beamformers per row")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("reproduce", help="rerun a paper experiment at desk scale")
    p.add_argument("figure_id",
                   choices=["fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "table1"])
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=_cmd_reproduce)

    p = sub.add_parser("validate", help="randomized oracle/property suites")
    p.add_argument("--suite", default="all", choices=["oracles", "properties", "all"])
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("crb", help="evaluate CRB/rates for given beamformers")
    p.add_argument("config")
    p.set_defaults(func=_cmd_crb)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
