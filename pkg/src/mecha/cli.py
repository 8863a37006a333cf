"""Command-line entry points: ``mecha-bench`` and ``mecha-brokerd``."""

from __future__ import annotations

import argparse
import logging
import signal
import sys

from .bench import CorrectnessError, emit_csv, run_benchmark, run_sweep
from .client import ensure_broker
from .config import ConfigError, load_config


def _instances(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad instance list {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("instance counts must be >= 1")
    return values


def bench_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="mecha-bench", description="Benchmark MECHA against the context-switching baseline.")
    p.add_argument("--mode", choices=["mecha", "baseline", "sweep"], default="sweep")
    p.add_argument("--instances", type=_instances, default=[5, 10, 20, 40, 80])
    p.add_argument("--total-bytes", type=int, default=65536)
    p.add_argument("--pdu-len", type=int, default=1024)
    p.add_argument("--config", help="broker config file; its latency keys drive the emulator")
    p.add_argument("--csv", help="write records to this CSV file")
    p.add_argument("--processes", action="store_true", help="run mecha workers as separate OS processes")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    try:
        latency = load_config(args.config).latency_model
    except (OSError, ConfigError) as exc:
        print(f"mecha-bench: {exc}", file=sys.stderr)
        return 2

    try:
        if args.mode == "sweep":
            pairs = run_sweep(sorted(args.instances), args.total_bytes, args.pdu_len, latency,
                              args.processes, args.seed)
            records = [r for pair in pairs for r in pair]
        else:
            records = [run_benchmark(args.mode, n, args.total_bytes, args.pdu_len, latency,
                                     args.processes, args.seed) for n in args.instances]
    except CorrectnessError as exc:
        print(f"mecha-bench: correctness failure, no timing reported: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"mecha-bench: {exc}", file=sys.stderr)
        return 2

    print(f"{'mode':<9}{'inst':>6}{'requests':>10}{'MB':>8}{'seconds':>10}{'speedup%':>10}")
    for r in records:
        sp = "" if r.speedup_pct is None else f"{r.speedup_pct:.1f}"
        print(f"{r.mode:<9}{r.instances:>6}{r.requests:>10}{r.aggregate_bytes / 1e6:>8.2f}"
              f"{r.duration_s:>10.3f}{sp:>10}")
    if args.csv:
        emit_csv(records, args.csv)
    return 0


def brokerd_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="mecha-brokerd", description="Host the MECHA broker unless one is running.")
    p.add_argument("--config")
    p.add_argument("--socket", help="overrides config and MECHA_SOCKET")
    p.add_argument("--name", default="mecha-brokerd", help="application name used for election")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"mecha-brokerd: {exc}", file=sys.stderr)
        return 2
    handle = ensure_broker(args.socket, config, args.name)
    broker = handle.broker
    handle.close()
    if broker is None:
        print(f"mecha-brokerd: broker already running at {args.socket or config.socket_path}")
        return 0
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: broker.stop())
    print(f"mecha-brokerd: serving on {broker.config.socket_path}", flush=True)
    broker.serve_forever()
    return 1 if broker.fatal is not None else 0


if __name__ == "__main__":
    sys.exit(bench_main())
