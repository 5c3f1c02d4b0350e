#!/usr/bin/env python3
"""Sweep upsample modes x skip counts on the synthetic task, write a CSV.

Usage: python scripts/run_ablation.py [out.csv]
"""

import sys

from swinseg.benchmark import run_ablation_benchmark
from swinseg.train import write_ablation_csv


def main() -> int:
    out = sys.argv[1] if len(sys.argv) > 1 else "ablation.csv"
    rows = run_ablation_benchmark(log=print)
    write_ablation_csv(out, rows)
    print(f"\n{'upsample':<16} {'skips':>5} {'mean_dsc':>9}")
    for r in rows:
        print(f"{r['upsample_mode']:<16} {r['skip_count']:>5} "
              f"{r['mean_dsc']:>9.4f}")
    print(f"\nwrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
