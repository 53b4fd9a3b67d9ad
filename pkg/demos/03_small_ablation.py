"""
A quick ablation
================

Trains three variants for three epochs on a small synthetic city and
compares them with the historical average.  At this budget the networks
have barely started learning, and HA can still win on some columns;
``04_benchmark.py`` runs the full sweep.
"""

import logging
from dataclasses import replace

from stdn.benchmark import BenchmarkConfig, run_benchmark
from stdn.training import TrainConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")

base = BenchmarkConfig()
cfg = replace(base,
              synth=replace(base.synth, days=20),
              train_days=15,
              model=replace(base.model, S=3, filters=4, hidden=16, T_s=4, P=2),
              train=TrainConfig(max_epochs=3, batch_size=64),
              seeds=(1,))

report = run_benchmark(cfg, variants=["LSTN", "LSTN-PSAM", "STDN"],
                       progress=lambda variant, seed: print(f"  finished {variant}, seed {seed}"))
print(report.to_text())
