"""Command-line harness: gen | run | recover | soak.

Exit codes: 0 success, 2 precondition/storage violation, 42 injected
crash (the armed fault point kills the process; run `recover` next).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import bench
from .dfs import DfsCluster
from .engine import Database, EngineConfig
from .errors import StorageError
from .faults import ALL_FAULT_POINTS, FaultInjector
from .locks import LockService

DB_NAME = "db"
DBCONFIG_FILE = "db.json"

CONFIG_KEYS = {
    "page_size": int,
    "block_size": int,
    "replication": int,
    "num_nodes": int,
    "placement_seed": int,
    "post_commit_threshold": int,
    "deferred": bool,
    "latency": float,
    "total_pages": int,
}


def load_config(path: str | None) -> dict:
    values = {
        "page_size": 4096,
        "block_size": 64 * 1024,
        "replication": 3,
        "num_nodes": 4,
        "placement_seed": 0,
        "post_commit_threshold": 64,
        "deferred": True,
        "latency": 0.0,
        "total_pages": 8192,
    }
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            given = json.load(fh)
        for key, value in given.items():
            if key not in CONFIG_KEYS:
                raise ValueError(f"unknown config key: {key}")
            values[key] = CONFIG_KEYS[key](value)
    return values


def _engine_config(values: dict) -> EngineConfig:
    return EngineConfig(
        page_size=values["page_size"],
        block_size=values["block_size"],
        replication=values["replication"],
        num_nodes=values["num_nodes"],
        placement_seed=values["placement_seed"],
        post_commit_threshold=values["post_commit_threshold"],
        deferred=values["deferred"],
        latency=values["latency"],
    )


def _open_existing(root: str, faults: FaultInjector,
                   recover: bool) -> tuple[Database, dict]:
    cfg_path = os.path.join(root, DBCONFIG_FILE)
    if not os.path.exists(cfg_path):
        raise StorageError(f"no database at {root} (missing {DBCONFIG_FILE})")
    with open(cfg_path, "r", encoding="utf-8") as fh:
        values = json.load(fh)
    cfg = _engine_config(values)
    cluster = DfsCluster(cfg.dfs_config(), cfg.num_nodes, root)
    db = Database.open(cluster, DB_NAME, cfg.page_size,
                       cfg.post_commit_threshold, cfg.deferred,
                       LockService(), faults, recover=recover)
    return db, values


def emit(report: dict, out: str) -> None:
    if out == "json":
        print(json.dumps(report, sort_keys=True))
    else:
        keys = sorted(report)
        print(",".join(keys))
        print(",".join(str(report[k]) for k in keys))


def cmd_gen(args, faults: FaultInjector) -> int:
    values = load_config(args.config)
    os.makedirs(args.root, exist_ok=True)
    cfg_path = os.path.join(args.root, DBCONFIG_FILE)
    if os.path.exists(cfg_path):
        raise StorageError(f"database already exists at {args.root}")
    cfg = _engine_config(values)
    cluster = DfsCluster(cfg.dfs_config(), cfg.num_nodes, args.root)
    db = Database.create(cluster, DB_NAME, values["total_pages"],
                         cfg.page_size, cfg.post_commit_threshold,
                         cfg.deferred, LockService(), faults)
    key_count = min(args.key_count, args.tuples)
    bench.generate(db, args.tuples, args.seed, args.key, key_count)
    with open(cfg_path, "w", encoding="utf-8") as fh:
        json.dump(values, fh, indent=2)
    emit({"generated": args.tuples, "probe_key": args.key,
          "probe_count": key_count, "root": args.root}, args.out)
    return 0


def cmd_run(args, faults: FaultInjector) -> int:
    db, _ = _open_existing(args.root, faults, recover=False)
    needed = db.needs_recovery()
    if needed:
        print(f"error: database needs recovery ({needed}); "
              f"run `wormdb recover` first", file=sys.stderr)
        return 2
    spec = bench.WorkloadSpec(
        kind=args.workload,
        limit=args.limit,
        repeat=args.repeat,
        key=args.key,
        use_index=args.index,
        crash_point=args.crash_point,
        seed=args.seed,
    )
    reports = []
    for _ in range(args.repeat_runs):
        reports.append(bench.run_workload(db, spec, faults).as_dict())
    for report in reports:
        emit(report, args.out)
    return 0


def cmd_recover(args, faults: FaultInjector) -> int:
    cfg_path = os.path.join(args.root, DBCONFIG_FILE)
    if not os.path.exists(cfg_path):
        raise StorageError(f"no database at {args.root}")
    db, _ = _open_existing(args.root, faults, recover=False)
    path = db.recover()
    emit({"recovery": path}, args.out)
    return 0


def cmd_soak(args, faults: FaultInjector) -> int:
    db, _ = _open_existing(args.root, faults, recover=True)
    result = bench.soak(db, args.sessions, args.events, args.seed)
    emit({
        "events": result.events,
        "baseline": result.baseline,
        "committed_inserts": result.committed_inserts,
        "aborted": result.aborted,
        "upgrade_conflicts": result.upgrade_conflicts,
        "final_count": result.final_count,
        "ok": result.ok,
        "errors": len(result.errors),
    }, args.out)
    return 0 if result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wormdb",
        description="Transactional page store on a simulated write-once DFS")
    parser.add_argument("--root", default="./wormdb-data",
                        help="directory for the persistent DFS state")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", choices=("json", "csv"), default="json")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="create and populate a database")
    gen.add_argument("--tuples", type=int, default=100_000)
    gen.add_argument("--seed", type=int, default=42)
    gen.add_argument("--key", default=bench.DEFAULT_PROBE_KEY)
    gen.add_argument("--key-count", type=int, default=bench.DEFAULT_PROBE_COUNT)

    run = sub.add_parser("run", help="run one workload")
    run.add_argument("--workload", required=True,
                     choices=("scan", "insert", "select", "update"))
    run.add_argument("--limit", type=int, default=100_000)
    run.add_argument("--repeat", type=int, default=10_000)
    run.add_argument("--key", default=bench.DEFAULT_PROBE_KEY)
    index = run.add_mutually_exclusive_group()
    index.add_argument("--index", dest="index", action="store_true",
                       default=True)
    index.add_argument("--no-index", dest="index", action="store_false")
    run.add_argument("--crash-point", choices=ALL_FAULT_POINTS)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--repeat-runs", type=int, default=1,
                     help="repeat the workload and report each run")

    sub.add_parser("recover", help="run restart processing")

    soak_cmd = sub.add_parser("soak", help="concurrent-session property run")
    soak_cmd.add_argument("--sessions", type=int, default=8)
    soak_cmd.add_argument("--events", type=int, default=1000)
    soak_cmd.add_argument("--seed", type=int, default=0)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    faults = FaultInjector()
    handlers = {
        "gen": cmd_gen,
        "run": cmd_run,
        "recover": cmd_recover,
        "soak": cmd_soak,
    }
    try:
        return handlers[args.command](args, faults)
    except StorageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
