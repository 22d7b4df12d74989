"""Command-line front end.

Exit codes: 0 success, 2 usage/configuration error, 3 numerical failure
(detector divergence budget exceeded). Set TBMA_LOG=INFO (or DEBUG) for
progress logging.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .amp import AmpSettings
from .errors import ConfigError, EnumerationBudgetError, SweepDivergenceError, TbmaError
from .harness import (
    CSV_COLUMNS,
    SweepSpec,
    compare_detectors,
    format_cell,
    run_point,
    run_sweep,
    write_manifest,
    write_rows_csv,
)
from .model import ScenarioConfig

log = logging.getLogger("tbma")


def _apply_sets(doc: dict, sets: list[str]) -> dict:
    """Apply --set key=value overrides (they win over file values).

    Dotted keys address the amp settings (amp.damping=0.5); setting G
    replaces any explicit group assignment by the disjoint constructor.
    """
    doc = dict(doc)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        key = key.strip()
        value = _parse_literal(text.strip())
        if key.startswith("amp."):
            doc.setdefault("amp", {})
            doc["amp"] = dict(doc["amp"])
            doc["amp"][key[4:]] = value
            continue
        if key == "G":
            doc.pop("group_assignment", None)
            doc.pop("K", None)
        doc[key] = value
    return doc


def _parse_literal(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None


def _emit_csv(header: list[str], rows: list[list], out: str | None) -> None:
    text = "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n"
    if out:
        tmp = out + ".tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    else:
        sys.stdout.write(text)


def _pop_run_params(doc: dict, args) -> tuple[int, int, AmpSettings]:
    file_trials = doc.pop("trials", 1000)
    file_seed = doc.pop("master_seed", 0)
    trials = args.trials if args.trials is not None else int(file_trials)
    seed = args.seed if args.seed is not None else int(file_seed)
    return trials, seed, AmpSettings.from_json_dict(doc.pop("amp", {}))


def cmd_run(args) -> int:
    doc = _apply_sets(_load_json(args.config), args.set or [])
    trials, seed, settings = _pop_run_params(doc, args)
    config = ScenarioConfig.from_json_dict(doc)
    row, _ = run_point(
        config,
        trials=trials,
        master_seed=seed,
        settings=settings,
        workers=args.workers,
    )
    d = dataclasses.asdict(row)
    _emit_csv(CSV_COLUMNS, [[format_cell(d[c]) for c in CSV_COLUMNS]], args.out)
    return 0


def cmd_sweep(args) -> int:
    spec = SweepSpec.from_json_dict(_apply_sets(_load_json(args.spec), args.set or []))
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.spec))[0]
    results = run_sweep(spec, workers=args.workers)
    for coding, rows in results.items():
        path = os.path.join(args.out, f"{stem}_{coding.value.lower()}.csv")
        write_rows_csv(path, rows)
        log.info("wrote %s", path)
    write_manifest(os.path.join(args.out, f"{stem}_manifest.json"), spec, results,
                   workers=args.workers)
    return 0


def cmd_oracle_compare(args) -> int:
    doc = _apply_sets(_load_json(args.config), args.set or [])
    trials, seed, settings = _pop_run_params(doc, args)
    config = ScenarioConfig.from_json_dict(doc)
    stats = compare_detectors(
        config,
        trials=trials,
        master_seed=seed,
        settings=settings,
        workers=args.workers,
        budget=args.budget,
    )
    header = list(stats.keys())
    _emit_csv(header, [[format_cell(stats[k]) for k in header]], args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tbma",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config value; --set beats the file "
            "(amp.* addresses detector settings, G rebuilds disjoint groups)",
        )
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="trial-level parallelism (default: all cores)")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--trials", type=int, help="trial count override")

    p_run = sub.add_parser("run", help="single-point experiment, one CSV row")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="parameter sweep, one CSV per coding")
    p_sweep.add_argument("--spec", required=True, help="sweep spec JSON file")
    p_sweep.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a spec value; --set beats the file",
    )
    p_sweep.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_cmp = sub.add_parser(
        "oracle-compare", help="AMP vs exact MAP on identical trials"
    )
    p_cmp.add_argument("--config", required=True, help="scenario JSON file")
    p_cmp.add_argument("--budget", type=int, default=10**6,
                       help="hypothesis enumeration budget (default 1e6)")
    common(p_cmp)
    p_cmp.set_defaults(fn=cmd_oracle_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("TBMA_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, EnumerationBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SweepDivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except TbmaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
