"""Command-line front end tying the pipeline together.

Subcommands: gen-trace, build-store, run-baseline, run-primary, run-backup,
cachesim, proto, compare. Every run emits a CSV report plus a ``.meta.json``
sidecar carrying the config hash and cost-model snapshot; ``compare`` refuses
to join reports whose hashes disagree.

Exit codes: 0 ok, 2 config/input error, 3 completeness violation (replay
touched a key outside its hint), 4 digest mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import backup as backup_mod
from . import cachesim as cachesim_mod
from . import config as config_mod
from . import protocol as protocol_mod
from . import workload as workload_mod
from .backup import CacheMissError
from .primary import DigestLog, HintDb, run_primary_block
from .store import ArchivalStore
from .workload import iter_trace, iter_trace_file, read_trace_params

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPLETENESS = 3
EXIT_DIGEST = 4


def _out(args: argparse.Namespace, path: str) -> Path:
    """Resolve an output path under --out-dir (inputs are never rewritten)."""
    p = Path(path)
    if args.out_dir and not p.is_absolute():
        base = Path(args.out_dir)
        base.mkdir(parents=True, exist_ok=True)
        return base / p
    return p


def _write_sidecar(report_path: Path, payload: Dict) -> None:
    side = report_path.with_suffix(report_path.suffix + ".meta.json")
    with open(side, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _sidecar_for(report_path: Path) -> Dict:
    side = report_path.with_suffix(report_path.suffix + ".meta.json")
    try:
        with open(side, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise config_mod.ConfigError(f"missing report sidecar: {side}") from None


def _config_fingerprints(cfg: Dict) -> Dict[str, str]:
    return {
        "config_hash": config_mod.content_hash(cfg),
        "cost_model_hash": config_mod.content_hash(cfg["cost_model"]),
    }


def cmd_gen_trace(args: argparse.Namespace) -> int:
    cfg = config_mod.load_config(args.config)
    params = config_mod.generator_params(cfg, seed=args.seed)
    out = _out(args, args.out)
    count = workload_mod.save_trace(out, params, iter_trace(params))
    print(f"gen-trace: wrote {count} blocks to {out} (params hash {params.content_hash()[:12]})")
    return EXIT_OK


def cmd_build_store(args: argparse.Namespace) -> int:
    cfg = config_mod.load_config(args.config)
    model = config_mod.cost_model(cfg)
    trace_path = Path(args.trace)
    params, count = read_trace_params(trace_path)
    storage_keys = None
    if params.seed_trace_keys:
        storage_keys = workload_mod.collect_storage_keys(iter_trace_file(trace_path))
    genesis = workload_mod.derive_genesis(params, storage_keys)
    store = workload_mod.build_store(iter_trace_file(trace_path), genesis, model)
    store.save(_out(args, args.out))
    print(f"build-store: applied {count} blocks, head={store.head_block}, saved to {args.out}")
    return EXIT_OK


def _load_store(args: argparse.Namespace) -> ArchivalStore:
    return ArchivalStore.load(Path(args.store))


def cmd_run_baseline(args: argparse.Namespace) -> int:
    cfg = config_mod.load_config(args.config)
    store = _load_store(args)
    cache_cfg = config_mod.baseline_cache(cfg)
    metrics = backup_mod.run_baseline(iter_trace_file(Path(args.trace)), store, cache_cfg)
    report = _out(args, args.report)
    metrics.write_csv(report)
    _write_sidecar(
        report,
        {
            "subcommand": "run-baseline",
            **_config_fingerprints(cfg),
            "cost_model": cfg["cost_model"],
            "rows": len(metrics.rows),
            "total_cost": metrics.total_cost,
            "io_fraction": round(metrics.io_fraction, 6),
        },
    )
    print(
        f"run-baseline: {len(metrics.rows)} blocks, total cost {metrics.total_cost}, "
        f"io fraction {metrics.io_fraction:.4f}"
    )
    return EXIT_OK


def cmd_run_primary(args: argparse.Namespace) -> int:
    cfg = config_mod.load_config(args.config)
    store = _load_store(args)
    codec = cfg["hint_codec"]
    hint_db = HintDb(_out(args, args.hints_out))
    digest_log = DigestLog(_out(args, args.digests_out)) if args.digests_out else None
    report = _out(args, args.report)
    rows = 0
    with open(report, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["block", "exec_cost", "hint_construct_cost", "serialize_cost", "raw_bytes", "compressed_bytes"])
        for block in iter_trace_file(Path(args.trace)):
            result = run_primary_block(block, store, mode="archival", codec=codec)
            hint_db.write_hint(block.number, result.compressed_bytes)
            if digest_log is not None:
                digest_log.write(block.number, result.digest)
            writer.writerow(
                [
                    block.number,
                    result.exec_cost,
                    result.hint_construct_cost,
                    result.serialize_cost,
                    len(result.raw_bytes),
                    len(result.compressed_bytes),
                ]
            )
            rows += 1
    hint_db.close()
    _write_sidecar(
        report,
        {
            "subcommand": "run-primary",
            **_config_fingerprints(cfg),
            "cost_model": cfg["cost_model"],
            "rows": rows,
            "hint_codec": codec,
        },
    )
    print(f"run-primary: {rows} blocks, hints -> {args.hints_out}")
    return EXIT_OK


def cmd_run_backup(args: argparse.Namespace) -> int:
    cfg = config_mod.load_config(args.config)
    store = _load_store(args)
    pipeline_cfg = config_mod.pipeline_config(
        cfg, workers=args.workers, batch_size=args.batch, channel_capacity=args.channel
    )
    hint_db = HintDb(Path(args.hints), create=False) if args.hints else None
    try:
        metrics = backup_mod.pipeline_run(iter_trace_file(Path(args.trace)), store, hint_db, pipeline_cfg)
    except CacheMissError as exc:
        print(f"run-backup: completeness violation: {exc}", file=sys.stderr)
        return EXIT_COMPLETENESS
    finally:
        if hint_db is not None:
            hint_db.close()
    report = _out(args, args.report)
    metrics.write_csv(report)
    _write_sidecar(
        report,
        {
            "subcommand": "run-backup",
            **_config_fingerprints(cfg),
            "cost_model": cfg["cost_model"],
            "rows": len(metrics.rows),
            "wall_cost": metrics.wall_cost,
            "prefetch_total": metrics.prefetch_total,
            "exec_total": metrics.exec_total,
            "wait_total": metrics.wait_total,
            "fallback_blocks": metrics.fallback_blocks,
            "corrupt_hints": metrics.corrupt_hints,
            "workers": pipeline_cfg.workers,
        },
    )
    print(
        f"run-backup: {len(metrics.rows)} blocks, wall {metrics.wall_cost}, "
        f"prefetch {metrics.prefetch_total}, exec {metrics.exec_total}, "
        f"fallbacks {metrics.fallback_blocks}"
    )
    if args.digests:
        expected = DigestLog(Path(args.digests)).read_all()
        for row in metrics.rows:
            want = expected.get(row.block)
            if want is not None and want != row.digest:
                print(f"run-backup: digest mismatch at block {row.block}", file=sys.stderr)
                return EXIT_DIGEST
        print(f"run-backup: digests verified against {args.digests}")
    return EXIT_OK


def cmd_cachesim(args: argparse.Namespace) -> int:
    if args.trace_file:
        keys: List[str] = []
        with open(args.trace_file, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    keys.append(line)
        trace: Sequence = keys
    elif args.access_log:
        log = workload_mod.load_access_log(Path(args.access_log))
        domain = args.domain
        trace = [key for tag, key in log if domain == "all" or tag == domain[0].upper()]
    elif args.trace and args.block is not None:
        sim_block = None
        for blk in iter_trace_file(Path(args.trace)):
            if blk.number == args.block:
                sim_block = blk
                break
        if sim_block is None:
            print(f"cachesim: block {args.block} not in trace", file=sys.stderr)
            return EXIT_CONFIG
        # execution over an empty view: the op stream fixes the access pattern
        class _ZeroView:
            def get_storage(self, key):
                return b"\x00" * 32

            def get_account(self, addr):
                return None

            def get_code(self, addr):
                return None

        result = workload_mod.execute_block(sim_block, _ZeroView(), collect_log=True)
        domain = args.domain
        trace = [key for tag, key in result.access_log if domain == "all" or tag == domain[0].upper()]
    else:
        print("cachesim: need --trace-file, --access-log, or --trace with --block", file=sys.stderr)
        return EXIT_CONFIG

    init = args.init.split(",") if args.init else None
    if args.policy == "both":
        table = cachesim_mod.compare_policies(trace, args.capacity, init)
        print(f"accesses            {table['accesses']}")
        print(f"lru_misses          {table['lru_misses']}")
        print(f"belady_misses       {table['belady_misses']}")
        ratio = table["miss_ratio_lru_over_belady"]
        print(f"lru_over_belady     {ratio if ratio != float('inf') else 'inf'}")
    elif args.policy == "lru":
        res = cachesim_mod.simulate_lru(trace, args.capacity, init)
        print(f"lru: {res.misses} misses, {res.hits} hits")
    else:
        res = cachesim_mod.simulate_belady(trace, args.capacity, init)
        print(f"belady: {res.misses} misses, {res.hits} hits")
    return EXIT_OK


def cmd_proto(args: argparse.Namespace) -> int:
    try:
        with open(args.scenario, "r", encoding="utf-8") as f:
            scenario = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"proto: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    import random as _random

    rng = _random.Random(int(scenario.get("seed", 0)))
    n_batches = int(scenario.get("batches", 20))
    ops_per_batch = int(scenario.get("ops_per_batch", 50))
    key_space = int(scenario.get("key_space", 200))
    write_fraction = float(scenario.get("write_fraction", 0.3))
    encoding = scenario.get("encoding", "exact")
    strategy = scenario.get("strategy", "inline")
    fpr = float(scenario.get("target_fpr", 0.01))
    link = protocol_mod.LinkModel(
        latency=float(scenario.get("latency", 0.001)),
        bandwidth=float(scenario.get("bandwidth", 125_000_000)),
        loss_probability=float(scenario.get("loss_probability", 0.0)),
        seed=int(scenario.get("seed", 0)),
    )
    n_backups = int(scenario.get("backups", 1))
    latency_reduction = float(scenario.get("latency_reduction", 0.01))
    batch_bytes = int(scenario.get("batch_bytes", 2_000_000))

    universe = [b"key:%06d" % i for i in range(key_space)]
    state = {k: b"v0" for k in universe}
    primary = protocol_mod.GenericStore(dict(state))
    backup_store = protocol_mod.GenericStore(dict(state))

    out_rows = []
    for i in range(n_batches):
        batch = []
        for _ in range(ops_per_batch):
            key = universe[int(rng.random() * key_space)]
            if rng.random() < write_fraction:
                batch.append(protocol_mod.write_op(key, b"v%d" % i))
            else:
                batch.append(protocol_mod.read_op(key))
        access, _ = protocol_mod.generic_generate(batch, primary)
        if encoding == "range":
            lo, hi = min(access), max(access)
            hint = protocol_mod.encode_hint(access, "range", intervals=[(lo, hi)])
        else:
            hint = protocol_mod.encode_hint(access, encoding, target_fpr=fpr)
        stats = protocol_mod.generic_replay(batch, hint, backup_store, candidates=universe)
        timeline = protocol_mod.simulate_transmission(
            strategy,
            hint.size(),
            batch_bytes,
            link,
            miss_rate=float(scenario.get("miss_rate", 0.1)),
            miss_rate_threshold=float(scenario.get("miss_rate_threshold", 0.05)),
            rng=rng,
        )
        ok = protocol_mod.benefit_check(hint.size(), link.bandwidth, latency_reduction, n_backups)
        out_rows.append(
            {
                "batch": i,
                "encoding": encoding,
                "strategy": strategy,
                "hint_bytes": hint.size(),
                "prefetched": stats.prefetched,
                "extra_prefetches": stats.extra_prefetches,
                "hint_ready": "" if timeline.hint_ready is None else f"{timeline.hint_ready:.9f}",
                "batch_ready": f"{timeline.batch_ready:.9f}",
                "prefetch_window": f"{timeline.prefetch_window:.9f}",
                "beneficial": int(ok),
            }
        )

    match = primary.state() == backup_store.state()
    report = _out(args, args.report)
    with open(report, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(out_rows[0].keys()))
        writer.writeheader()
        writer.writerows(out_rows)
    _write_sidecar(
        report,
        {
            "subcommand": "proto",
            "scenario": scenario,
            "states_match": match,
        },
    )
    verdict = "beneficial" if all(r["beneficial"] for r in out_rows) else "not-always-beneficial"
    print(f"proto: {n_batches} batches, states_match={match}, hint transmission {verdict}")
    return EXIT_OK if match else EXIT_DIGEST


def cmd_compare(args: argparse.Namespace) -> int:
    base_path = Path(args.baseline)
    back_path = Path(args.backup)
    base_meta = _sidecar_for(base_path)
    back_meta = _sidecar_for(back_path)
    for key in ("config_hash", "cost_model_hash"):
        if base_meta.get(key) != back_meta.get(key):
            print(f"compare: refusing to join reports with different {key}", file=sys.stderr)
            return EXIT_CONFIG

    baseline: Dict[int, Dict[str, str]] = {}
    with open(base_path, newline="") as f:
        for row in csv.DictReader(f):
            baseline[int(row["block"])] = row
    rows = []
    digests_match = True
    with open(back_path, newline="") as f:
        for row in csv.DictReader(f):
            block = int(row["block"])
            base = baseline.get(block)
            if base is None:
                print(f"compare: block {block} missing from baseline report", file=sys.stderr)
                return EXIT_CONFIG
            t_baseline = int(base["t_baseline"])
            t_wait = int(row["t_wait"])
            t_exec = int(row["t_exec"])
            denom = t_wait + t_exec
            speedup = t_baseline / denom if denom else float("inf")
            if base.get("digest") and row.get("digest") and base["digest"] != row["digest"]:
                digests_match = False
            rows.append(
                {
                    "block": block,
                    "t_baseline": t_baseline,
                    "t_wait": t_wait,
                    "t_exec": t_exec,
                    "speedup": repr(speedup),
                }
            )

    out = _out(args, args.out)
    with open(out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["block", "t_baseline", "t_wait", "t_exec", "speedup"])
        writer.writeheader()
        writer.writerows(rows)

    speedups = sorted(float(r["speedup"]) for r in rows)
    n = len(speedups)

    def pct(q: float) -> float:
        if not speedups:
            return 0.0
        idx = min(n - 1, max(0, int(q * n)))
        return speedups[idx]

    waited = [r for r in rows if r["t_wait"] > 0]
    wall_waited = sum(r["t_wait"] + r["t_exec"] for r in waited)
    wall_all = sum(r["t_wait"] + r["t_exec"] for r in rows) or 1
    total_baseline = sum(r["t_baseline"] for r in rows)
    aggregate = total_baseline / wall_all

    summary = {
        "blocks": n,
        "speedup_median": pct(0.50),
        "speedup_p90": pct(0.90),
        "speedup_p99": pct(0.99),
        "aggregate_speedup": aggregate,
        "blocks_with_wait": len(waited),
        "wait_share_of_wall": wall_waited / wall_all,
        "digests_match": digests_match,
    }
    _write_sidecar(out, {"subcommand": "compare", **base_meta | back_meta, "summary": summary})
    print(
        f"compare: {n} blocks, median speedup {summary['speedup_median']:.2f}x, "
        f"P90 {summary['speedup_p90']:.2f}x, P99 {summary['speedup_p99']:.2f}x, "
        f"aggregate {aggregate:.2f}x, wait share {summary['wait_share_of_wall']:.3f}, "
        f"digests_match={digests_match}"
    )
    return EXIT_OK if digests_match else EXIT_DIGEST



def cmd_analyze(args: argparse.Namespace) -> int:
    per_block: Optional[List[Dict[str, int]]] = [] if args.per_block else None
    report = workload_mod.analyze_trace(iter_trace_file(Path(args.trace)), per_block)
    for key, value in report.to_flat().items():
        print(f"{key}={value}")
    if args.per_block:
        out = _out(args, args.per_block)
        with open(out, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["block", "txs", "storage_ops", "unique_keys"])
            writer.writeheader()
            writer.writerows(per_block or [])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ira", description="hint-based replay pipeline")
    parser.add_argument("--config", type=Path, default=None, help="JSON run config (defaults apply otherwise)")
    parser.add_argument("--seed", type=int, default=None, help="override the generator seed")
    parser.add_argument("--out-dir", default=None, help="directory for output files (created if missing)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a synthetic block trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("build-store", help="build the archival store from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_store)

    p = sub.add_parser("run-baseline", aliases=["baseline"], help="unhinted replay with a cross-block LRU")
    p.add_argument("--trace", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_run_baseline)

    p = sub.add_parser("run-primary", aliases=["primary"], help="instrumented execution producing hints")
    p.add_argument("--trace", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--hints-out", required=True)
    p.add_argument("--digests-out", default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_run_primary)

    p = sub.add_parser("run-backup", aliases=["backup"], help="hinted pipelined replay")
    p.add_argument("--trace", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--hints", default=None, help="hint database (omit to force fallback)")
    p.add_argument("--digests", default=None, help="verify against a primary digest log")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--channel", type=int, default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_run_backup)

    p = sub.add_parser("analyze", help="workload statistics of a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--per-block", default=None, help="also write per-block stats CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cachesim", help="LRU vs optimal replacement on an access trace")
    p.add_argument("--trace-file", default=None, help="text file, one key per line")
    p.add_argument("--trace", default=None, help="binary block trace")
    p.add_argument("--block", type=int, default=None, help="block number inside --trace")
    p.add_argument("--domain", choices=["storage", "account", "code", "all"], default="storage")
    p.add_argument("--capacity", type=int, required=True)
    p.add_argument("--policy", choices=["lru", "belady", "both"], default="both")
    p.add_argument("--init", default=None, help="comma-separated warm cache contents")
    p.set_defaults(func=cmd_cachesim)

    p = sub.add_parser("proto", help="generalized protocol scenario")
    p.add_argument("--scenario", required=True, help="JSON scenario description")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_proto)

    p = sub.add_parser("compare", help="join baseline and backup reports")
    p.add_argument("--baseline", required=True)
    p.add_argument("--backup", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CacheMissError as exc:
        print(f"completeness violation: {exc}", file=sys.stderr)
        return EXIT_COMPLETENESS


def console_entry() -> None:
    sys.exit(main())
