"""Run both arms over an instance sweep, write CSV and summarise the trend.

    python scripts/run_sweep.py --csv sweep.csv
    python scripts/run_sweep.py --config scripts/paper_calibrated.conf --instances 5,80
"""

import argparse

from mecha.bench import emit_csv, linear_r2, run_sweep
from mecha.config import load_config


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--instances", default="5,10,20,40,80")
    p.add_argument("--total-bytes", type=int, default=65536)
    p.add_argument("--pdu-len", type=int, default=1024)
    p.add_argument("--config")
    p.add_argument("--csv", default="sweep.csv")
    p.add_argument("--processes", action="store_true")
    args = p.parse_args()

    counts = [int(x) for x in args.instances.split(",")]
    latency = load_config(args.config).latency_model
    print(f"latency model: {latency}")
    pairs = run_sweep(counts, args.total_bytes, args.pdu_len, latency, args.processes)
    emit_csv([r for pair in pairs for r in pair], args.csv)

    print(f"{'instances':>9} {'mecha_s':>9} {'baseline_s':>11} {'delta_s':>8} {'speedup%':>9}")
    for m, b in pairs:
        print(f"{m.instances:>9} {m.duration_s:>9.3f} {b.duration_s:>11.3f} "
              f"{b.duration_s - m.duration_s:>8.3f} {m.speedup_pct:>9.2f}")
    if len(pairs) > 1:
        r2 = linear_r2(counts, [b.duration_s for _, b in pairs])
        print(f"baseline linear fit R^2 = {r2:.4f}")
    print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
