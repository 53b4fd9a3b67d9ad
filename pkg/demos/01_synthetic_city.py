"""
A synthetic city, from trips to training samples
=================================================

Generates a small city, checks that flows add up to volumes, and shows how
the day-to-day peak shift moves the morning rush.
"""

import numpy as np

from stdn.data import SampleConfig, SynthConfig, build_flows, build_volume, fit_normalizer, make_samples, synthesize_city

# %% a 4x4 city over 10 days, 48 half-hour intervals per day
cfg = SynthConfig(rows=4, cols=4, days=10, rate=[20.0])
trips = synthesize_city(cfg, seed=3)
print(f"{len(trips.origin)} trips, {trips.meta['dropped_horizon']} dropped past the horizon")
print("injected peak shift per day:", trips.meta["shifts"])

# %% volumes and flows
volume = build_volume(trips, cfg.grid, cfg.time)
flows = build_flows(trips, cfg.grid, cfg.time)
n, m = cfg.grid.n, cfg.time.m
print("start volume tensor:", volume.start.shape)

# every trip is counted once as outflow and once as inflow, so the
# region-pair maps collapse back onto the volumes
assert np.array_equal(flows.outflow.marginal(n, m), volume.start)
assert np.array_equal(flows.inflow.marginal(n, m), volume.end)
print("flow marginals match volumes")

# %% the morning peak wanders by one interval from day to day
ipd = cfg.time.intervals_per_day
city = volume.start.sum(axis=0).reshape(cfg.days, ipd)
morning = slice(12, 22)
for d, (row, s) in enumerate(zip(city, trips.meta["shifts"])):
    peak = morning.start + int(np.argmax(row[morning]))
    print(f"day {d}: shift {s:+d}, busiest morning interval {peak} ({peak / 2:.1f}h)")

# %% windowed samples: the short-term window plus P previous days, Q shifts each
normalizer = fit_normalizer(volume, flows, (0, 7 * ipd))
samples = make_samples(volume, flows, normalizer, SampleConfig(S=5, l=2, T_s=7, P=3, Q=3, intervals_per_day=ipd))
batch = samples.batch(np.arange(4))
for key in ("short_patches", "short_flows", "long_patches", "long_flows", "target"):
    print(f"{key:14s} {batch[key].shape}")
print(f"{len(samples)} samples; first target interval {samples.targets.min()}")
