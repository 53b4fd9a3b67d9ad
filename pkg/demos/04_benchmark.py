"""
The mechanism benchmark
=======================

Six variants times three seeds on the 4x4 synthetic city, plus the
historical average.  Takes up to 45 minutes on one core; pass a directory
to keep the per-run records.
"""

import logging
import sys
import time

from stdn.benchmark import BenchmarkConfig, efficacy_checks, run_benchmark

logging.basicConfig(level=logging.INFO, format="%(message)s")

out = sys.argv[1] if len(sys.argv) > 1 else None
t0 = time.perf_counter()
report = run_benchmark(BenchmarkConfig(), out_dir=out)
print(report.to_text())
for name, (ok, detail) in efficacy_checks(report).items():
    print(f"{name:12s} {'ok' if ok else 'NO'}  {detail}")
print(f"{(time.perf_counter() - t0) / 60:.1f} min")
