"""Command-line runner: ``intercloud {migrate,bench,attack}``.

Exit codes: 0 success, 1 protocol or assertion failure, 2 usage or config
error.  Every output file is a pure function of the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .adversary import load_scenarios, run_scenario
from .baselines import calibrate, run_variant
from .config import RunConfig, load_config
from .core import ACKED_DELETED
from .errors import ConfigError, MigrationError
from .metrics import VARIANTS, emit_report
from .protocol import USER, CustodyViolation, MigrationEngine, prepare_engine

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="intercloud", description="Secure inter-cloud migration simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (
        ("migrate", "run one migration end to end"),
        ("bench", "calibrate the cost models and produce the comparison tables"),
        ("attack", "run attacker scenarios and check their expected outcomes"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, default=None, help="YAML or JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", type=Path, default=Path("out"), help="where outputs are written")
        p.add_argument("--format", choices=("csv", "structured"), default="csv")
        if name == "attack":
            p.add_argument("--scenario", action="append", default=None, help="run only this scenario (repeatable)")
    return parser


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _ext(fmt: str) -> str:
    return "csv" if fmt == "csv" else "json"


def _engine(cfg: RunConfig, seed: int) -> MigrationEngine:
    return MigrationEngine(
        seed=seed,
        link=cfg.link.model(),
        reverse_link=cfg.reverse_link.model() if cfg.reverse_link else None,
        protocol=cfg.protocol.model(),
        source_datanodes=cfg.clusters.source_datanodes,
        target_datanodes=cfg.clusters.target_datanodes,
        block_size=cfg.clusters.block_size,
    )


# ---------------------------------------------------------------------------


def cmd_migrate(cfg: RunConfig, out_dir: Path, fmt: str, seed: int) -> int:
    engine = prepare_engine(_engine(cfg, seed), file_size=cfg.file_size)
    failure = None
    session = None
    try:
        session = engine.key_setup(USER)
        engine.migrate(USER, session, "f")
    except CustodyViolation as exc:
        failure = {"reason": "custody-violation", "detail": str(exc)}
    except MigrationError as exc:
        failure = {"reason": type(exc).__name__, "detail": str(exc)}
    (out_dir / "trace.jsonl").write_text(engine.trace.to_jsonl())
    outcome = engine.outcome(session) if session else {}
    if failure is None and not (outcome.get("complete") and outcome.get("custody_holds")):
        failure = {"reason": "incomplete", "detail": "not every block was acknowledged and deleted"}
    ledger = engine.ledger_for(session) if session else None
    blocks = []
    if ledger is not None:
        for bid, status in sorted(ledger.status.items()):
            blocks.append(
                {
                    "block": str(bid),
                    "status": status,
                    "transmissions": ledger.transmissions[bid],
                    "duplicates": ledger.duplicates[bid],
                    "at_source": engine.source.locate(bid) is not None,
                    "at_target": engine.target.locate(bid) is not None,
                }
            )
    if fmt == "csv":
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["block", "status", "transmissions", "duplicates", "at_source", "at_target"])
        for b in blocks:
            w.writerow([b["block"], b["status"], b["transmissions"], b["duplicates"], int(b["at_source"]), int(b["at_target"])])
        report = out.getvalue()
    else:
        report = _dump({"outcome": outcome, "blocks": blocks, "seed": seed})
    (out_dir / f"migrate.{_ext(fmt)}").write_text(report)
    deleted = sum(1 for b in blocks if b["status"] == ACKED_DELETED)
    print(f"migrate: {deleted}/{len(blocks)} blocks migrated, alerts={len(outcome.get('alerts', []))}")
    if failure is not None:
        record = {"command": "migrate", "exit": EXIT_FAILURE, **failure, "outcome": outcome}
        (out_dir / "failure.json").write_text(_dump(record))
        print(f"migrate: FAILED ({failure['reason']})", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_bench(cfg: RunConfig, out_dir: Path, fmt: str, seed: int) -> int:
    calibration = calibrate(environment=cfg.bench.environment())
    records = [run_variant(calibration, v, s, seed=seed) for v in cfg.variants for s in cfg.file_sizes]
    times = {(r.method, r.file_size): r.migration_time for r in records}
    order = [v for v in VARIANTS[:1] + ("proposed", "secdm3", "secured2") if v in cfg.variants]
    ordering_ok = all(
        times[(a, s)] < times[(b, s)] for s in cfg.file_sizes for a, b in zip(order, order[1:])
    )
    extra = {"calibration": calibration.to_dict(), "ordering_holds": ordering_ok, "seed": seed}
    text = emit_report(records, fmt, extra=extra)
    (out_dir / f"bench.{_ext(fmt)}").write_text(text)
    (out_dir / "calibration.json").write_text(_dump(calibration.to_dict()))
    print(f"bench: {len(records)} records, max calibration residual {calibration.max_abs_residual:.2%}")
    if not ordering_ok:
        (out_dir / "failure.json").write_text(_dump({"command": "bench", "exit": EXIT_FAILURE, "reason": "ordering"}))
        print("bench: FAILED (variant ordering violated)", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


ATTACK_COLUMNS = (
    "scenario",
    "passed",
    "complete",
    "custody_holds",
    "blocks_total",
    "blocks_transferred",
    "blocks_deleted",
    "data_transmissions",
    "alerts",
    "derived_plaintexts",
    "key_exposed",
    "failures",
)


def cmd_attack(cfg: RunConfig, out_dir: Path, fmt: str, seed: int, only: Optional[Sequence[str]] = None) -> int:
    entries = list(only) if only else (cfg.scenario_entries() or sorted(_all_scenarios()))
    scenarios = load_scenarios(entries)
    reports = []
    for sc in scenarios:
        engine = prepare_engine(_engine(cfg, seed), file_size=cfg.file_size)
        report = run_scenario(engine, sc)
        (out_dir / f"trace-{sc.name}.jsonl").write_text(engine.trace.to_jsonl())
        reports.append(report)
        print(f"{'PASS' if report.passed else 'FAIL'} {sc.name}" + (f": {', '.join(report.failures)}" if report.failures else ""))
    reports.sort(key=lambda r: r.name)
    if fmt == "csv":
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(ATTACK_COLUMNS)
        for r in reports:
            w.writerow(
                [
                    r.name,
                    int(r.passed),
                    int(r.complete),
                    int(r.custody_holds),
                    r.blocks_total,
                    r.blocks_transferred,
                    r.blocks_deleted,
                    r.data_transmissions,
                    ";".join(r.alert_kinds()),
                    len(r.derived_plaintexts),
                    int(r.key_exposed),
                    ";".join(r.failures),
                ]
            )
        text = out.getvalue()
    else:
        text = _dump({"seed": seed, "scenarios": [r.to_dict() for r in reports]})
    (out_dir / f"attack.{_ext(fmt)}").write_text(text)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        (out_dir / "failure.json").write_text(_dump({"command": "attack", "exit": EXIT_FAILURE, "failed": failed}))
        return EXIT_FAILURE
    return EXIT_OK


def _all_scenarios():
    from .adversary import SCENARIOS

    return SCENARIOS


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if args.command == "attack" and args.scenario:
            load_scenarios(args.scenario)  # validate names before running anything
    except (UsageError, ConfigError) as exc:
        print(json.dumps({"error": "usage", "detail": str(exc), "exit": EXIT_USAGE}, sort_keys=True), file=sys.stderr)
        return EXIT_USAGE
    seed = cfg.seed if args.seed is None else args.seed
    if not 0 <= seed < 2**64:
        print(json.dumps({"error": "usage", "detail": "seed out of range", "exit": EXIT_USAGE}), file=sys.stderr)
        return EXIT_USAGE
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.command == "migrate":
        return cmd_migrate(cfg, args.out_dir, args.format, seed)
    if args.command == "bench":
        return cmd_bench(cfg, args.out_dir, args.format, seed)
    return cmd_attack(cfg, args.out_dir, args.format, seed, args.scenario)


if __name__ == "__main__":
    sys.exit(main())
