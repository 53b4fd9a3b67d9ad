"""Desk-scale synthetic city.

Each region emits Poisson trips whose rate follows a daily template of
Gaussian peaks.  Every day draws one peak shift (in intervals) that moves
the whole template, so the series is periodic but not strictly so.
Destinations come from one of several coupling matrices; which matrix is
active depends on the (shifted) time of day.  An optional per-day jitter
moves the regime switches independently of the peaks, so the active
coupling can only be read off recent flows.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .grid import GridSpec, TimeSpec, TripTable


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    rows: int = 4
    cols: int = 4
    days: int = 40
    interval_minutes: int = 30
    start_epoch: float = 1420070400.0  # 2015-01-01T00:00:00Z
    # mean trips per region per interval, scalar or one value per region
    rate: list = field(default_factory=lambda: [20.0])
    # spread of per-region rate multipliers (log-normal sigma)
    rate_spread: float = 0.3
    baseline: float = 0.25
    # peaks as hour:width_intervals:amplitude
    peaks: list = field(default_factory=lambda: ["8.0:1.5:2.0", "18.0:1.5:2.5"])
    # per-region jitter of each peak amplitude, as a fraction
    peak_spread: float = 0.5
    shift_values: list = field(default_factory=lambda: [-1, 0, 1])
    shift_probs: list = field(default_factory=lambda: [1 / 3, 1 / 3, 1 / 3])
    # clock hours at which each coupling regime starts
    regime_hours: list = field(default_factory=lambda: [0.0, 6.0, 11.0, 16.0, 21.0])
    # per-day offset of the regime switch times, uniform on [-J, J] intervals
    # and independent of the peak shift; 0 ties the regimes to the peaks
    regime_jitter: int = 0
    coupling_radius: int = 2
    coupling_concentration: float = 0.3
    # optional .npy file with a [regimes, n, n] row-stochastic array
    coupling_path: str = ""
    trip_minutes_min: float = 25.0
    trip_minutes_max: float = 45.0

    @property
    def grid(self):
        return GridSpec(self.rows, self.cols)

    @property
    def time(self):
        return TimeSpec.for_days(self.days, self.interval_minutes, self.start_epoch)

    def validate(self):
        if self.rows < 1 or self.cols < 1 or self.days < 1:
            raise SynthConfigError("rows, cols and days must be positive")
        rates = np.asarray(self.rate, dtype=float)
        if rates.size not in (1, self.rows * self.cols):
            raise SynthConfigError(f"rate needs 1 or {self.rows * self.cols} values, got {rates.size}")
        if np.any(rates < 0) or self.baseline < 0:
            raise SynthConfigError("rates must be non-negative")
        if len(self.shift_values) != len(self.shift_probs):
            raise SynthConfigError("shift_values and shift_probs differ in length")
        p = np.asarray(self.shift_probs, dtype=float)
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise SynthConfigError("shift_probs must be a probability vector")
        if self.regime_jitter < 0:
            raise SynthConfigError("regime_jitter must be non-negative")
        if not 0 < self.trip_minutes_min <= self.trip_minutes_max:
            raise SynthConfigError("trip duration bounds are invalid")
        for spec in self.peaks:
            _parse_peak(spec)


def _parse_peak(spec):
    try:
        hour, width, amp = (float(x) for x in str(spec).split(":"))
    except ValueError:
        raise SynthConfigError(f"peak {spec!r} is not hour:width:amplitude") from None
    if width <= 0 or amp < 0:
        raise SynthConfigError(f"peak {spec!r} needs positive width and non-negative amplitude")
    return hour, width, amp


_LISTS = {"rate": float, "peaks": str, "shift_values": int, "shift_probs": float, "regime_hours": float}


def parse_synth_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    cfg = SynthConfig()
    known = {f.name: f for f in fields(SynthConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SynthConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise SynthConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _LISTS:
                conv = _LISTS[key]
                parsed = [conv(v.strip()) for v in value.split(",") if v.strip()]
            else:
                conv = type(getattr(cfg, key))
                parsed = conv(value)
        except ValueError:
            raise SynthConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
        setattr(cfg, key, parsed)
    try:
        cfg.validate()
    except SynthConfigError as exc:
        raise SynthConfigError(f"invalid config: {exc}") from None
    return cfg


def load_synth_config(path):
    with open(path) as fh:
        return parse_synth_config(fh.read())


def daily_template(cfg, region_amps):
    """``[n, intervals_per_day]`` rate multipliers, each row with mean 1."""
    ipd = cfg.time.intervals_per_day
    clock = np.arange(ipd)
    rows = np.full((len(region_amps), ipd), cfg.baseline)
    for k, spec in enumerate(cfg.peaks):
        hour, width, amp = _parse_peak(spec)
        centre = hour * 60.0 / cfg.interval_minutes
        d = (clock - centre + ipd / 2) % ipd - ipd / 2   # circular distance
        rows += amp * region_amps[:, k:k + 1] * np.exp(-0.5 * (d / width) ** 2)
    return rows / rows.mean(axis=1, keepdims=True)


def coupling_matrices(cfg, rng):
    """``[regimes, n, n]`` destination distributions, local within ``coupling_radius``."""
    grid = cfg.grid
    if cfg.coupling_path:
        mats = np.load(cfg.coupling_path)
        if mats.ndim != 3 or mats.shape[1:] != (grid.n, grid.n):
            raise SynthConfigError(f"coupling array has shape {mats.shape}, need [R, {grid.n}, {grid.n}]")
        if len(mats) != len(cfg.regime_hours):
            raise SynthConfigError("coupling array needs one matrix per regime hour")
        return mats / mats.sum(axis=2, keepdims=True)
    rc = np.array([grid.cell(i) for i in range(grid.n)])
    cheb = np.abs(rc[:, None, :] - rc[None, :, :]).max(axis=2)
    near = cheb <= cfg.coupling_radius
    mats = np.zeros((len(cfg.regime_hours), grid.n, grid.n))
    for r in range(len(cfg.regime_hours)):
        w = rng.gamma(cfg.coupling_concentration, size=(grid.n, grid.n)) * near
        w[w.sum(axis=1) == 0, :] = near[w.sum(axis=1) == 0, :]
        mats[r] = w / w.sum(axis=1, keepdims=True)
    return mats


def regime_of(cfg, clock, shift):
    """Active regime per clock interval given the day's shift (in intervals)."""
    ipd = cfg.time.intervals_per_day
    starts = np.asarray(cfg.regime_hours) * 60.0 / cfg.interval_minutes
    pos = (np.asarray(clock) - shift) % ipd
    return (np.searchsorted(starts, pos, side="right") - 1) % len(starts)


def synthesize_city(cfg, seed):
    """Generate a :class:`TripTable`; ``table.meta`` records the injected shifts.

    Trips whose arrival falls beyond the horizon are dropped and counted in
    ``meta["dropped_horizon"]``.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    grid, time = cfg.grid, cfg.time
    n, ipd, days = grid.n, time.intervals_per_day, cfg.days

    base = np.broadcast_to(np.asarray(cfg.rate, dtype=float), (n,)).copy()
    base *= np.exp(cfg.rate_spread * rng.standard_normal(n) - 0.5 * cfg.rate_spread ** 2)
    amps = 1.0 + cfg.peak_spread * rng.uniform(-1, 1, size=(n, len(cfg.peaks)))
    template = daily_template(cfg, amps)
    mats = coupling_matrices(cfg, rng)
    shifts = rng.choice(np.asarray(cfg.shift_values), size=days, p=np.asarray(cfg.shift_probs))
    J = cfg.regime_jitter
    offsets = rng.integers(-J, J + 1, size=days) if J else np.zeros(days, dtype=np.int64)

    clock = np.arange(ipd)
    rate = np.empty((n, days * ipd))
    regime = np.empty(days * ipd, dtype=np.int64)
    for d, (s, o) in enumerate(zip(shifts, offsets)):
        rate[:, d * ipd:(d + 1) * ipd] = base[:, None] * np.roll(template, s, axis=1)
        regime[d * ipd:(d + 1) * ipd] = regime_of(cfg, clock, s + o)
    counts = rng.poisson(rate)

    origin = np.repeat(np.tile(np.arange(n), days * ipd), counts.T.ravel())
    depart = np.repeat(np.repeat(np.arange(days * ipd), n), counts.T.ravel())
    cdf = np.cumsum(mats, axis=2)
    cdf[..., -1] = 1.0
    row_cdf = cdf[regime[depart], origin]
    dest = (rng.random(len(origin))[:, None] > row_cdf).sum(axis=1)

    isec = time.interval_seconds
    depart_ts = np.round(time.start_epoch + (depart + rng.random(len(origin))) * isec, 3)
    minutes = rng.uniform(cfg.trip_minutes_min, cfg.trip_minutes_max, size=len(origin))
    arrive_ts = np.round(depart_ts + minutes * 60.0, 3)
    depart = np.floor((depart_ts - time.start_epoch) / isec).astype(np.int64)
    arrive = np.floor((arrive_ts - time.start_epoch) / isec).astype(np.int64)

    keep = arrive < time.m
    table = TripTable(origin[keep], dest[keep], depart[keep], arrive[keep])
    table.meta = {
        "shifts": [int(s) for s in shifts],
        "regime_offsets": [int(o) for o in offsets],
        "dropped_horizon": int((~keep).sum()),
        "depart_ts": depart_ts[keep],
        "arrive_ts": arrive_ts[keep],
        "expected_rate": rate,
    }
    return table
