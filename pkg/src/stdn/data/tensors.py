"""Volume and flow tensors, min-max normalisation, and local patch extraction."""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class VolumeTensor:
    """Start/end trip counts, each ``[n, m]``."""

    start: np.ndarray
    end: np.ndarray
    grid: object = None
    time: object = None

    @property
    def n(self):
        return self.start.shape[0]

    @property
    def m(self):
        return self.start.shape[1]


@dataclass
class SparseFlow:
    """Aggregated ``(region, interval, other) -> count`` entries, sorted by key."""

    region: np.ndarray
    interval: np.ndarray
    other: np.ndarray
    count: np.ndarray

    def __len__(self):
        return len(self.count)

    def as_dict(self):
        return {(int(i), int(t), int(j)): int(c)
                for i, t, j, c in zip(self.region, self.interval, self.other, self.count)}

    def dense(self, n, m):
        out = np.zeros((n, m, n), dtype=np.int64)
        out[self.region, self.interval, self.other] = self.count
        return out

    def marginal(self, n, m):
        """Sum over ``other``; ``[n, m]``."""
        out = np.zeros((n, m), dtype=np.int64)
        np.add.at(out, (self.region, self.interval), self.count)
        return out


@dataclass
class FlowTensor:
    """``outflow``: (origin, depart interval, dest); ``inflow``: (dest, arrive interval, origin)."""

    outflow: SparseFlow
    inflow: SparseFlow
    grid: object = None
    time: object = None


def build_volume(trips, grid_spec, time_spec):
    n, m = grid_spec.n, time_spec.m
    start = np.zeros((n, m), dtype=np.int64)
    end = np.zeros((n, m), dtype=np.int64)
    ok = trips.depart < m
    np.add.at(start, (trips.origin[ok], trips.depart[ok]), 1)
    ok = trips.arrive < m
    np.add.at(end, (trips.dest[ok], trips.arrive[ok]), 1)
    return VolumeTensor(start, end, grid_spec, time_spec)


def _aggregate(region, interval, other, n, m):
    key = (region * m + interval) * n + other
    uniq, count = np.unique(key, return_counts=True)
    rest, j = np.divmod(uniq, n)
    i, t = np.divmod(rest, m)
    return SparseFlow(i, t, j, count.astype(np.int64))


def build_flows(trips, grid_spec, time_spec):
    n, m = grid_spec.n, time_spec.m
    ok = trips.depart < m
    out = _aggregate(trips.origin[ok], trips.depart[ok], trips.dest[ok], n, m)
    ok = trips.arrive < m
    inn = _aggregate(trips.dest[ok], trips.arrive[ok], trips.origin[ok], n, m)
    return FlowTensor(out, inn, grid_spec, time_spec)


# ---------------------------------------------------------------- normalisation

@dataclass(frozen=True)
class Normalizer:
    """Affine maps of volume and flow counts onto ``[-1, 1]``.

    Values outside the fitted range extrapolate linearly.  A channel whose
    fitted range is degenerate maps everything to 0.
    """

    vol_min: float
    vol_max: float
    flow_min: float
    flow_max: float

    @staticmethod
    def _fwd(x, lo, hi):
        x = np.asarray(x, dtype=np.float64)
        if hi <= lo:
            return np.zeros_like(x)
        return 2.0 * (x - lo) / (hi - lo) - 1.0

    @staticmethod
    def _inv(y, lo, hi):
        y = np.asarray(y, dtype=np.float64)
        if hi <= lo:
            return np.full_like(y, lo)
        return (y + 1.0) * 0.5 * (hi - lo) + lo

    def normalize(self, x):
        return self._fwd(x, self.vol_min, self.vol_max)

    def denormalize(self, y):
        return self._inv(y, self.vol_min, self.vol_max)

    def normalize_flow(self, x):
        return self._fwd(x, self.flow_min, self.flow_max)

    def denormalize_flow(self, y):
        return self._inv(y, self.flow_min, self.flow_max)

    def to_dict(self):
        return {"vol_min": self.vol_min, "vol_max": self.vol_max,
                "flow_min": self.flow_min, "flow_max": self.flow_max}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["vol_min"]), float(d["vol_max"]), float(d["flow_min"]), float(d["flow_max"]))


def fit_normalizer(volume, flows, train_range):
    """Fit min/max on intervals ``[lo, hi)`` only."""
    lo, hi = train_range
    vols = np.concatenate([volume.start[:, lo:hi].ravel(), volume.end[:, lo:hi].ravel()])
    vmin, vmax = (float(vols.min()), float(vols.max())) if vols.size else (0.0, 0.0)

    n = volume.n
    cells = n * n * max(hi - lo, 0)
    fmin, fmax = np.inf, -np.inf
    for sf in (flows.outflow, flows.inflow):
        sel = (sf.interval >= lo) & (sf.interval < hi)
        c = sf.count[sel]
        if c.size:
            fmax = max(fmax, float(c.max()))
            fmin = min(fmin, float(c.min()) if c.size == cells else 0.0)
        elif cells:
            fmin = min(fmin, 0.0)
            fmax = max(fmax, 0.0)
    if not np.isfinite(fmin):
        fmin = fmax = 0.0
    for name, a, b in (("volume", vmin, vmax), ("flow", fmin, fmax)):
        if b <= a:
            log.warning("%s channel is constant on the training range; it normalises to 0", name)
    return Normalizer(vmin, vmax, fmin, fmax)


# ---------------------------------------------------------------- patches

def _check_size(S):
    if S < 1 or S % 2 == 0:
        raise ConfigError(f"patch size must be odd and positive, got {S}")


def extract_patch(volume, normalizer, region, interval, S):
    """``[S, S, 2]`` normalised neighbourhood (start, end) centred on ``region``."""
    _check_size(S)
    grid = volume.grid
    if not 0 <= interval < volume.m:
        raise IndexError(f"interval {interval} outside [0, {volume.m})")
    r = S // 2
    row, col = grid.cell(region)
    out = np.full((S, S, 2), normalizer.normalize(0.0), dtype=np.float64)
    for dr in range(S):
        for dc in range(S):
            rr, cc = row + dr - r, col + dc - r
            if 0 <= rr < grid.rows and 0 <= cc < grid.cols:
                j = grid.region(rr, cc)
                out[dr, dc, 0] = normalizer.normalize(volume.start[j, interval])
                out[dr, dc, 1] = normalizer.normalize(volume.end[j, interval])
    return out


def extract_flow_stack(flows, normalizer, region, interval, S, l):
    """``[S, S, 2l]`` normalised inflow/outflow matrices for ``interval-l+1 .. interval``.

    Channels run oldest to newest as (inflow, outflow) pairs; cell (dr, dc)
    holds the flow between ``region`` and the neighbour at that offset.
    Intervals before the horizon start carry no flow.
    """
    _check_size(S)
    if not 0 <= interval < flows.time.m:
        raise IndexError(f"interval {interval} outside [0, {flows.time.m})")
    grid = flows.grid
    r = S // 2
    row, col = grid.cell(region)
    inflow, outflow = flows.inflow.as_dict(), flows.outflow.as_dict()
    out = np.full((S, S, 2 * l), normalizer.normalize_flow(0.0), dtype=np.float64)
    for k, t in enumerate(range(interval - l + 1, interval + 1)):
        for dr in range(S):
            for dc in range(S):
                rr, cc = row + dr - r, col + dc - r
                if 0 <= rr < grid.rows and 0 <= cc < grid.cols:
                    j = grid.region(rr, cc)
                    out[dr, dc, 2 * k] = normalizer.normalize_flow(inflow.get((region, t, j), 0))
                    out[dr, dc, 2 * k + 1] = normalizer.normalize_flow(outflow.get((region, t, j), 0))
    return out


def padded_volume(volume, normalizer, S):
    """Normalised ``[m, rows+S-1, cols+S-1, 2]`` grids padded with normalised zero."""
    grid = volume.grid
    r = S // 2
    img = np.stack([volume.start.T.reshape(volume.m, grid.rows, grid.cols),
                    volume.end.T.reshape(volume.m, grid.rows, grid.cols)], axis=-1)
    img = normalizer.normalize(img)
    return np.pad(img, ((0, 0), (r, r), (r, r), (0, 0)), constant_values=normalizer.normalize(0.0))


def flow_images(flows, normalizer, S):
    """Normalised ``[m, n, S, S, 2]`` (inflow, outflow) neighbourhood images for every region."""
    grid, m = flows.grid, flows.time.m
    r = S // 2
    out = np.full((m, grid.n, S, S, 2), normalizer.normalize_flow(0.0), dtype=np.float64)
    for ch, sf in enumerate((flows.inflow, flows.outflow)):
        ri, ci = np.divmod(sf.region, grid.cols)
        rj, cj = np.divmod(sf.other, grid.cols)
        dr, dc = rj - ri + r, cj - ci + r
        ok = (dr >= 0) & (dr < S) & (dc >= 0) & (dc < S)
        out[sf.interval[ok], sf.region[ok], dr[ok], dc[ok], ch] = normalizer.normalize_flow(sf.count[ok])
    return out


def patch_windows(vol_padded, S):
    """View of ``vol_padded`` as ``[m, rows, cols, 2, S, S]`` sliding windows."""
    return sliding_window_view(vol_padded, (S, S), axis=(1, 2))
