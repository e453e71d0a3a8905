"""Command-line entry point: ``atmguard {run,table1,verify,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, load_config
from .eventlog import atomic_write_text
from .experiment import (
    CASES,
    CaseId,
    build_report,
    read_replications_csv,
    render_report,
    run_case,
    run_table1,
    write_replications_csv,
)

log = logging.getLogger("atmguard")


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["master_seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        updates["replications"] = args.reps
    if getattr(args, "jobs", None) is not None:
        updates["jobs"] = args.jobs
    if updates:
        # re-validate rather than model_copy so overrides obey the same rules
        cfg = ScenarioConfig.model_validate({**cfg.model_dump(), **updates})
    return cfg


def _write_outputs(out: Path, cfg: ScenarioConfig, results, report=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", cfg.to_json() + "\n")
    write_replications_csv(out / "replications.csv", results)
    if report is not None:
        atomic_write_text(out / "report.json", json.dumps(report.to_dict(), indent=2) + "\n")
        atomic_write_text(out / "report.txt", render_report(report))


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out_dir)
    log_dir = None if args.no_events else out / "events"
    case = CaseId(args.case)
    log.info("running %s: %d replications, seed %d", case.value, cfg.replications, cfg.master_seed)
    results = run_case(cfg, case, cfg.replications, jobs=cfg.workers, log_dir=log_dir)
    _write_outputs(out, cfg, results)
    print(f"{case.value}: {len(results)} replications -> {out / 'replications.csv'}")
    return 0


def cmd_table1(args) -> int:
    base = _load(args)
    demands = args.demand or [None]
    for demand in demands:
        cfg = base if demand is None else ScenarioConfig.model_validate({**base.model_dump(), "demand_vph": demand})
        out = Path(args.out_dir)
        if len(demands) > 1:
            out = out / f"demand_{demand:g}"
        log_dir = None if args.no_events else out / "events"
        log.info("table1 at %g veh/h: %d replications per case", cfg.demand_vph, cfg.replications)
        results, report = run_table1(cfg, jobs=cfg.workers, log_dir=log_dir)
        _write_outputs(out, cfg, results, report)
        print(f"demand {cfg.demand_vph:g} veh/h, {cfg.replications} replications per case")
        print(render_report(report), end="")
    return 0


def cmd_report(args) -> int:
    src = Path(args.input)
    grouped = read_replications_csv(src)
    report = build_report(grouped)
    out = Path(args.out_dir) if args.out_dir else src.parent
    atomic_write_text(out / "report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    atomic_write_text(out / "report.txt", render_report(report))
    print(render_report(report), end="")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(policy_path=args.policy)
    for r in results:
        print(f"[{'PASS' if r.ok else 'FAIL'}] {r.name}: {r.detail}")
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atmguard", description="Lane-control ATM attack/monitoring experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, reps=True):
        sp.add_argument("--config", help="scenario JSON (defaults if omitted)")
        sp.add_argument("--seed", type=int, help="master seed override")
        if reps:
            sp.add_argument("--reps", type=int, help="replications per case")
        sp.add_argument("--jobs", type=int, help="worker processes (default: one per CPU)")
        sp.add_argument("--out-dir", default="out", help="output directory (default: out)")
        sp.add_argument("--no-events", action="store_true", help="skip per-replication event logs")

    sp = sub.add_parser("run", help="run one case")
    common(sp)
    sp.add_argument("--case", required=True, choices=[c.value for c in CASES])
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("table1", help="run all four cases and compare them")
    common(sp)
    sp.add_argument("--demand", type=float, nargs="+", metavar="VPH",
                    help="demand level(s); several values give one report each")
    sp.set_defaults(func=cmd_table1)

    sp = sub.add_parser("report", help="rebuild the comparison report from replications.csv")
    sp.add_argument("--input", required=True, help="replications.csv from table1")
    sp.add_argument("--out-dir", help="where to write report.json/report.txt (default: next to input)")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("verify", help="run the built-in oracle checks")
    sp.add_argument("--policy", help="policy table to check instead of the packaged default")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, LookupError) as err:
        print(f"atmguard: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
