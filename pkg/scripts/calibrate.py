"""Solve a LatencyModel that hits two reference points of the benchmark.

Targets: baseline minus mecha duration at a small instance count, and the
speedup percentage at a large one. Context open and close costs are kept
equal and the per-byte cost is held fixed; the per-op cost absorbs the rest.

    python scripts/calibrate.py --delta-s 1.91 --small 5 --speedup 82.8 --large 80 > paper.conf
"""

import argparse

from mecha.bench import predict_duration
from mecha.device import LatencyModel


def solve(delta_s, small, speedup, large, total_bytes=65536, pdu_len=1024, per_byte_ns=100.0):
    unit = LatencyModel(ctx_open_us=1, ctx_close_us=1, per_byte_ns=0, per_op_us=0)
    # both durations are linear in the context cost c (per microsecond)
    per_c = predict_duration("baseline", small, total_bytes, pdu_len, unit) - \
        predict_duration("mecha", small, total_bytes, pdu_len, unit)
    ctx_us = delta_s / per_c

    bytes_only = LatencyModel(0, 0, per_byte_ns, 0)
    ops_only = LatencyModel(0, 0, 0, 1)
    byte_s = predict_duration("mecha", large, total_bytes, pdu_len, bytes_only)
    op_s = predict_duration("mecha", large, total_bytes, pdu_len, ops_only)  # per microsecond of per_op
    requests = op_s / 1e-6
    ctx_s = ctx_us * 1e-6
    frac = 1 - speedup / 100
    # mecha = work + ctx_open ; baseline = work + requests * 2 * ctx ; mecha = frac * baseline
    work = (frac * requests * 2 * ctx_s - ctx_s) / (1 - frac)
    per_op_us = (work - byte_s) / op_s
    if per_op_us < 0:
        raise SystemExit("targets unreachable with this per_byte_ns")
    return LatencyModel(round(ctx_us, 1), round(ctx_us, 1), per_byte_ns, round(per_op_us, 1))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--delta-s", type=float, default=1.91)
    p.add_argument("--small", type=int, default=5)
    p.add_argument("--speedup", type=float, default=82.8)
    p.add_argument("--large", type=int, default=80)
    p.add_argument("--per-byte-ns", type=float, default=100.0)
    args = p.parse_args()
    lat = solve(args.delta_s, args.small, args.speedup, args.large, per_byte_ns=args.per_byte_ns)
    print(f"# solved for delta {args.delta_s}s at {args.small} instances, {args.speedup}% at {args.large}")
    for key in ("ctx_open_us", "ctx_close_us", "per_byte_ns", "per_op_us"):
        print(f"{key} = {getattr(lat, key)}")


if __name__ == "__main__":
    main()
