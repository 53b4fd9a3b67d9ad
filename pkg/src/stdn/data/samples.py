"""Sliding-window training samples over (region, target interval) pairs.

A :class:`SampleSet` keeps the normalised volume grid and per-region flow
images once and materialises patches on demand, so the memory cost does
not grow with ``T_s + P * Q``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import container
from .grid import GridSpec
from .tensors import ConfigError, Normalizer, flow_images, padded_volume, patch_windows


@dataclass(frozen=True)
class SampleConfig:
    S: int = 7
    l: int = 2
    T_s: int = 7
    P: int = 3
    Q: int = 3
    intervals_per_day: int = 48

    def __post_init__(self):
        if self.S < 1 or self.S % 2 == 0:
            raise ConfigError(f"S must be odd, got {self.S}")
        if self.Q < 1 or self.Q % 2 == 0:
            raise ConfigError(f"Q must be odd, got {self.Q}")
        if min(self.l, self.T_s, self.P, self.intervals_per_day) < 1:
            raise ConfigError("l, T_s, P and intervals_per_day must be positive")
        if (self.Q - 1) // 2 >= self.intervals_per_day:
            raise ConfigError("shift window wider than a day")

    @property
    def shifts(self):
        h = (self.Q - 1) // 2
        return np.arange(-h, h + 1)

    def first_target(self):
        """Smallest target interval whose every referenced volume slice is >= 0.

        The short-term window also keeps its full flow lookback; the oldest
        long-term slices may look back before interval 0, which reads as no flow.
        """
        short = self.T_s + self.l - 1
        long = self.P * self.intervals_per_day + (self.Q - 1) // 2
        return max(short, long)


@dataclass
class TrainingSample:
    region: int
    target_interval: int
    short_patches: np.ndarray   # [T_s, S, S, 2]
    short_flows: np.ndarray     # [T_s, S, S, 2l]
    long_patches: np.ndarray    # [P, Q, S, S, 2]; axis 0 is day offset p = 1..P
    long_flows: np.ndarray      # [P, Q, S, S, 2l]
    target: np.ndarray          # normalised (start, end)
    target_raw: np.ndarray      # counts (start, end)
    externals: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def short_intervals(target, cfg):
    return np.asarray(target)[..., None] - np.arange(cfg.T_s, 0, -1)


def long_intervals(target, cfg):
    """``[..., P, Q]`` interval indices; ``p`` runs 1..P (yesterday first), ``q`` ascending."""
    days = np.arange(1, cfg.P + 1) * cfg.intervals_per_day
    return np.asarray(target)[..., None, None] - days[:, None] + cfg.shifts[None, :]


class SampleSet:
    """Index of (region, target) pairs over shared normalised sources."""

    def __init__(self, config, grid, normalizer, vol_padded, flow_img, raw_start, raw_end,
                 regions, targets, externals=None):
        self.config = config
        self.grid = grid
        self.normalizer = normalizer
        self.vol_padded = vol_padded
        self.flow_img = flow_img
        self.raw_start = raw_start
        self.raw_end = raw_end
        self.regions = np.asarray(regions, dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.int64)
        # [m, E] shared by all regions or [n, m, E]
        self.externals = externals
        self._windows = patch_windows(vol_padded, config.S)

    def __len__(self):
        return len(self.targets)

    @property
    def m(self):
        return self.vol_padded.shape[0]

    @property
    def external_dim(self):
        return 0 if self.externals is None else self.externals.shape[-1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return SampleSet(self.config, self.grid, self.normalizer, self.vol_padded, self.flow_img,
                         self.raw_start, self.raw_end, self.regions[idx], self.targets[idx],
                         self.externals)

    # -- materialisation
    def _patches(self, regions, intervals):
        rows, cols = np.divmod(regions, self.grid.cols)
        w = self._windows[intervals, rows, cols]          # [..., 2, S, S]
        return np.moveaxis(w, -3, -1)

    def _flows(self, regions, intervals):
        l = self.config.l
        lags = intervals[..., None] - np.arange(l - 1, -1, -1)   # oldest first
        img = self.flow_img[np.maximum(lags, 0), regions[..., None]]  # [..., l, S, S, 2]
        before = lags < 0
        if before.any():
            img = img.copy()
            img[before] = self.normalizer.normalize_flow(0.0)
        img = np.moveaxis(img, -4, -2)                             # [..., S, S, l, 2]
        return img.reshape(img.shape[:-2] + (2 * l,))

    def _externals(self, regions, intervals):
        if self.externals is None:
            return np.zeros(intervals.shape + (0,))
        if self.externals.ndim == 2:
            return self.externals[intervals]
        return self.externals[regions, intervals]

    def batch(self, idx=None):
        """Dict of stacked arrays for samples ``idx`` (all when omitted)."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        reg, tgt = self.regions[idx], self.targets[idx]
        cfg = self.config
        si = short_intervals(tgt, cfg)
        li = long_intervals(tgt, cfg)
        rs = np.broadcast_to(reg[:, None], si.shape)
        rl = np.broadcast_to(reg[:, None, None], li.shape)
        raw = np.stack([self.raw_start[reg, tgt], self.raw_end[reg, tgt]], axis=-1).astype(np.float64)
        return {
            "region": reg,
            "target_interval": tgt,
            "short_patches": self._patches(rs, si),
            "short_flows": self._flows(rs, si),
            "long_patches": self._patches(rl, li),
            "long_flows": self._flows(rl, li),
            "short_ext": self._externals(rs, si),
            "long_ext": self._externals(rl, li),
            "target": self.normalizer.normalize(raw),
            "target_raw": raw,
        }

    def __getitem__(self, k):
        b = self.batch([k])
        return TrainingSample(int(b["region"][0]), int(b["target_interval"][0]),
                              b["short_patches"][0], b["short_flows"][0],
                              b["long_patches"][0], b["long_flows"][0],
                              b["target"][0], b["target_raw"][0], b["short_ext"][0])

    def iter_batches(self, batch_size, order=None):
        order = np.arange(len(self)) if order is None else order
        for s in range(0, len(order), batch_size):
            yield self.batch(order[s:s + batch_size])

    # -- persistence
    def _payload(self):
        tensors = {
            "vol_padded": self.vol_padded,
            "flow_img": self.flow_img,
            "raw_start": self.raw_start.astype(np.int64),
            "raw_end": self.raw_end.astype(np.int64),
            "regions": self.regions,
            "targets": self.targets,
        }
        if self.externals is not None:
            tensors["externals"] = np.asarray(self.externals, dtype=np.float64)
        meta = {"kind": "sampleset", "config": asdict(self.config), "grid": self.grid.to_dict(),
                "normalizer": self.normalizer.to_dict()}
        return tensors, meta

    def to_bytes(self):
        return container.encode(container.MAGIC_SAMPLES, *self._payload())

    def save(self, path):
        container.write(path, container.MAGIC_SAMPLES, *self._payload())

    @classmethod
    def load(cls, path):
        t, meta = container.read(path, container.MAGIC_SAMPLES)
        return cls(SampleConfig(**meta["config"]), GridSpec.from_dict(meta["grid"]),
                   Normalizer.from_dict(meta["normalizer"]), t["vol_padded"], t["flow_img"],
                   t["raw_start"], t["raw_end"], t["regions"], t["targets"], t.get("externals"))


def make_samples(volume, flows, normalizer, config, target_range=None, externals=None):
    """One sample per (region, target interval), stride 1, regions fastest.

    ``target_range`` is an optional ``[lo, hi)`` window of target intervals;
    targets without full history are dropped.
    """
    m = volume.m
    if config.P * config.intervals_per_day + config.T_s >= m:
        raise ConfigError(
            f"horizon too short: P*intervals_per_day + T_s = "
            f"{config.P * config.intervals_per_day + config.T_s} >= m = {m}")
    lo, hi = (0, m) if target_range is None else target_range
    lo = max(lo, config.first_target())
    hi = min(hi, m)
    targets = np.arange(lo, max(hi, lo))
    n = volume.n
    regions = np.tile(np.arange(n), len(targets))
    targets = np.repeat(targets, n)
    if externals is not None:
        externals = np.asarray(externals, dtype=np.float64)
    return SampleSet(config, volume.grid, normalizer,
                     padded_volume(volume, normalizer, config.S),
                     flow_images(flows, normalizer, config.S),
                     volume.start, volume.end, regions, targets, externals)


def split_train_val(samples, fraction=0.8):
    """Temporal split: the last ``1 - fraction`` of distinct target intervals go to validation."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    uniq = np.unique(samples.targets)
    cut = int(round(len(uniq) * fraction))
    cut = min(max(cut, 1), len(uniq) - 1) if len(uniq) > 1 else len(uniq)
    boundary = uniq[cut] if cut < len(uniq) else uniq[-1] + 1
    train = np.flatnonzero(samples.targets < boundary)
    val = np.flatnonzero(samples.targets >= boundary)
    return samples.subset(train), samples.subset(val)
