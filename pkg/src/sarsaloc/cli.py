"""``sarsaloc`` command line: simulate, sweep, replay, report.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or input.
Every subcommand writes CSV; without ``--out`` the CSV goes to stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .loop import (
    RECORD_COLUMNS, SUMMARY_COLUMNS, aggregate_curves, format_records, run_experiment,
    summarize_settings,
)
from .replay import (
    SUMMARY_COLUMNS as CHECKPOINT_COLUMNS, DatasetError, FixtureSpec, load_dataset,
    make_fixture, run_replay, summarize_checkpoints,
)
from .sarsa_agent import POLICIES

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2

CURVE_COLUMNS = ("policy", "grid", "aps", "coverage", "curve", "play", "n", "mean", "std")
CURVES = ("err_control", "err_reinforced", "err_underlying", "dependence")


class InputError(ValueError):
    pass


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _overrides(args, **extra) -> dict:
    o = {"seed": args.seed, "replications": getattr(args, "replications", None),
         "n_plays": getattr(args, "plays", None),
         "play_length": getattr(args, "play_length", None),
         "workers": getattr(args, "workers", None)}
    o.update(extra)
    return o


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _overrides(args, policy=args.policy, coverage=args.coverage))
    rows = run_experiment(cfg.single_experiment(), cfg.replications, cfg.seed, cfg.workers)
    _emit(format_records(rows), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    extra = {}
    if args.policy is not None:
        extra["policies"] = (args.policy,)
    if args.coverage is not None:
        extra["coverages"] = (args.coverage,)
    cfg = load_config(args.config, _overrides(args, **extra))
    rows = run_experiment(cfg.sweep_experiment(), cfg.replications, cfg.seed, cfg.workers)
    if args.records:
        _emit(format_records(rows), args.records)
    _emit(format_records(summarize_settings(rows, args.final_fraction), SUMMARY_COLUMNS),
          args.out)
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = load_config(args.config, _overrides(args, repeats=args.repeats))
    dataset = load_dataset(args.data_dir, args.rooms)
    policies = (args.policy,) if args.policy else tuple(cfg.policies)
    rows = []
    for policy in policies:
        rows += run_replay(dataset, cfg.loop_config(policy), cfg.repeats, cfg.seed)
    out = Path(args.out)
    _emit(format_records(rows), out / "records.csv")
    _emit(format_records(summarize_checkpoints(rows), CHECKPOINT_COLUMNS),
          out / "checkpoints.csv")
    return EXIT_OK


def parse_records(text: str, source: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not set(RECORD_COLUMNS) <= set(reader.fieldnames):
        raise InputError(f"{source}: header must contain {', '.join(RECORD_COLUMNS)}")
    rows = []
    for row_no, row in enumerate(reader, start=2):
        try:
            rec = {"policy": row["policy"], "grid": int(row["grid"]), "aps": int(row["aps"]),
                   "coverage": float(row["coverage"]),
                   "replication": int(row["replication"]), "play": int(row["play"])}
            for c in CURVES:
                v = row[c]
                rec[c] = math.nan if v is None or v.strip() == "" else float(v)
        except (TypeError, ValueError):
            raise InputError(f"{source} row {row_no}: malformed record") from None
        rows.append(rec)
    if not rows:
        raise InputError(f"{source}: no records")
    return rows


def curves_long(rows) -> list[dict]:
    """Tidy curve data: one row per setting, curve and play."""
    agg = aggregate_curves(rows)
    out = []
    for curve in CURVES:
        for a in agg:
            out.append({"policy": a["policy"], "grid": a["grid"], "aps": a["aps"],
                        "coverage": a["coverage"], "curve": curve, "play": a["play"],
                        "n": a["n"], "mean": a[curve + "_mean"], "std": a[curve + "_std"]})
    return out


def cmd_report(args) -> int:
    if args.make_fixture:
        try:
            spec = FixtureSpec(n_sessions=args.sessions, ticks=args.ticks)
        except ValueError as exc:
            raise InputError(f"fixture: {exc}") from None
        make_fixture(args.make_fixture, spec, seed=args.seed or 0)
        if args.records is None:
            return EXIT_OK
    if args.records is None:
        raise InputError("report needs a records CSV or --make-fixture DIR")
    path = Path(args.records)
    if not path.is_file():
        raise InputError(f"records file not found: {path}")
    rows = parse_records(path.read_text(), str(path))
    _emit(format_records(curves_long(rows), CURVE_COLUMNS), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sarsaloc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=True, coverage=True, out_help="output CSV (stdout when omitted)"):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--seed", type=int, help="base seed (overrides the file)")
        sp.add_argument("--out", help=out_help)
        if policy:
            sp.add_argument("--policy", choices=POLICIES)
        if coverage:
            sp.add_argument("--coverage", type=float)

    def runs(sp):
        sp.add_argument("--replications", type=int)
        sp.add_argument("--plays", type=int, help="plays per replication")
        sp.add_argument("--play-length", type=int, help="ticks per play")
        sp.add_argument("--workers", type=int, help="worker processes")

    s = sub.add_parser("simulate", help="one setting, per-play record CSV")
    common(s)
    runs(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="policies x coverages (x grids x APs) summary CSV")
    common(s)
    runs(s)
    s.add_argument("--records", help="also write the per-play record CSV here")
    s.add_argument("--final-fraction", type=float, default=0.2,
                   help="trailing share of plays averaged in the summary (default 0.2)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("replay", help="replay protocol on a recorded dataset")
    common(s, coverage=False,
           out_help="output directory for records.csv and checkpoints.csv (default replay_out)")
    s.add_argument("data_dir", help="directory of session CSVs and rooms.csv")
    s.add_argument("--rooms", help="room table (default DATA_DIR/rooms.csv)")
    s.add_argument("--repeats", type=int)
    s.set_defaults(func=cmd_replay, out="replay_out")

    s = sub.add_parser("report", help="per-play curve CSV from records, or export a fixture")
    s.add_argument("records", nargs="?", help="record CSV written by simulate or sweep")
    s.add_argument("--out", help="output CSV (stdout when omitted)")
    s.add_argument("--seed", type=int)
    s.add_argument("--make-fixture", metavar="DIR", help="write a synthetic replay dataset")
    s.add_argument("--sessions", type=int, default=19)
    s.add_argument("--ticks", type=int, default=200)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (ConfigError, DatasetError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
