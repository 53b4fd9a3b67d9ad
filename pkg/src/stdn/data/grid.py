"""City grid, interval calendar, and trip-record ingestion."""

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

log = logging.getLogger(__name__)


class IngestError(ValueError):
    """Fatal ingestion problem (unreadable header, bad configuration)."""


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    region_edge_m: float = 1000.0
    # (lat_min, lon_min, lat_max, lon_max); only needed for coordinate CSVs
    bbox: tuple = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")

    @property
    def n(self):
        return self.rows * self.cols

    def cell(self, region):
        return divmod(int(region), self.cols)

    def region(self, row, col):
        return row * self.cols + col

    def locate(self, lat, lon):
        """Region index for a coordinate, or ``None`` outside the bounding box."""
        if self.bbox is None:
            raise IngestError("coordinate rows need GridSpec.bbox")
        lat0, lon0, lat1, lon1 = self.bbox
        if not (lat0 <= lat <= lat1 and lon0 <= lon <= lon1):
            return None
        row = min(int((lat - lat0) / (lat1 - lat0) * self.rows), self.rows - 1)
        col = min(int((lon - lon0) / (lon1 - lon0) * self.cols), self.cols - 1)
        return self.region(row, col)

    def to_dict(self):
        return {"rows": self.rows, "cols": self.cols, "region_edge_m": self.region_edge_m,
                "bbox": list(self.bbox) if self.bbox is not None else None}

    @classmethod
    def from_dict(cls, d):
        bbox = tuple(d["bbox"]) if d.get("bbox") is not None else None
        return cls(int(d["rows"]), int(d["cols"]), float(d.get("region_edge_m", 1000.0)), bbox)


@dataclass(frozen=True)
class TimeSpec:
    interval_minutes: int
    start_epoch: float
    m: int

    def __post_init__(self):
        if self.interval_minutes <= 0:
            raise ValueError("interval_minutes must be positive")
        if self.m < 1:
            raise ValueError("m must be at least 1")

    @property
    def intervals_per_day(self):
        if (24 * 60) % self.interval_minutes:
            raise ValueError(f"{self.interval_minutes}-minute intervals do not tile a day")
        return (24 * 60) // self.interval_minutes

    @property
    def interval_seconds(self):
        return self.interval_minutes * 60

    def interval_of(self, ts):
        """Interval index of an epoch-seconds timestamp (may fall outside ``[0, m)``)."""
        return math.floor((ts - self.start_epoch) / self.interval_seconds)

    def to_dict(self):
        return {"interval_minutes": self.interval_minutes, "start_epoch": self.start_epoch, "m": self.m}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["interval_minutes"]), float(d["start_epoch"]), int(d["m"]))

    @classmethod
    def for_days(cls, days, interval_minutes=30, start_epoch=0.0):
        return cls(interval_minutes, start_epoch, days * (24 * 60 // interval_minutes))


@dataclass(frozen=True)
class TripRecord:
    origin_region: int
    dest_region: int
    depart_interval: int
    arrive_interval: int


@dataclass
class TripTable:
    """Column-oriented trip records plus ingestion bookkeeping."""

    origin: np.ndarray
    dest: np.ndarray
    depart: np.ndarray
    arrive: np.ndarray
    skipped_bounds: int = 0
    skipped_horizon: int = 0
    diagnostics: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("origin", "dest", "depart", "arrive"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if np.any(self.arrive < self.depart):
            raise ValueError("trip arrives before it departs")

    def __len__(self):
        return len(self.origin)

    def __getitem__(self, k):
        return TripRecord(int(self.origin[k]), int(self.dest[k]), int(self.depart[k]), int(self.arrive[k]))

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    @property
    def skipped(self):
        return self.skipped_bounds + self.skipped_horizon + len(self.diagnostics)

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z)

    @classmethod
    def from_records(cls, records):
        records = list(records)
        cols = list(zip(*[(r.origin_region, r.dest_region, r.depart_interval, r.arrive_interval)
                          for r in records])) or [[], [], [], []]
        return cls(*cols)


def parse_timestamp(value):
    """Epoch seconds from a number or an ISO-8601 string (naive means UTC)."""
    value = value.strip()
    try:
        return float(value)
    except ValueError:
        pass
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    dt = datetime.fromisoformat(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


COORD_HEADER = ("origin_lat", "origin_lon", "dest_lat", "dest_lon", "depart_ts", "arrive_ts")
REGION_HEADER = ("origin_region", "dest_region", "depart_ts", "arrive_ts")


def ingest_trips(csv_source, grid_spec, time_spec):
    """Read a trip CSV into a :class:`TripTable`.

    ``csv_source`` is a path, an open text stream, or the CSV text itself.
    Rows outside the grid or the horizon are counted and skipped; malformed
    rows are skipped with a ``(line_number, message)`` diagnostic.
    """
    if hasattr(csv_source, "read"):
        text = csv_source.read()
    elif isinstance(csv_source, (str, os.PathLike)) and os.path.exists(csv_source):
        with open(csv_source, newline="") as fh:
            text = fh.read()
    else:
        text = str(csv_source)

    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(h.strip() for h in next(reader))
    except StopIteration:
        raise IngestError("empty trip file: no header") from None
    if set(header) >= set(REGION_HEADER):
        mode = "region"
    elif set(header) >= set(COORD_HEADER):
        mode = "coord"
        if grid_spec.bbox is None:
            raise IngestError("coordinate CSV needs a grid bounding box")
    else:
        raise IngestError(f"unrecognised trip header {list(header)}")
    col = {name: k for k, name in enumerate(header)}

    origin, dest, depart, arrive = [], [], [], []
    skipped_bounds = skipped_horizon = 0
    diagnostics = []
    n, m = grid_spec.n, time_spec.m
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(row)}")
            if mode == "region":
                o = int(row[col["origin_region"]])
                d = int(row[col["dest_region"]])
                if not (0 <= o < n and 0 <= d < n):
                    o = d = None
            else:
                o = grid_spec.locate(float(row[col["origin_lat"]]), float(row[col["origin_lon"]]))
                d = grid_spec.locate(float(row[col["dest_lat"]]), float(row[col["dest_lon"]]))
            ts0 = parse_timestamp(row[col["depart_ts"]])
            ts1 = parse_timestamp(row[col["arrive_ts"]])
            if ts1 < ts0:
                raise ValueError("arrival precedes departure")
            t0, t1 = time_spec.interval_of(ts0), time_spec.interval_of(ts1)
        except ValueError as exc:
            diagnostics.append((lineno, str(exc)))
            continue
        if o is None or d is None:
            skipped_bounds += 1
            continue
        if not (0 <= t0 < m and 0 <= t1 < m):
            skipped_horizon += 1
            continue
        origin.append(o)
        dest.append(d)
        depart.append(t0)
        arrive.append(t1)

    for lineno, msg in diagnostics:
        log.warning("trip row %d skipped: %s", lineno, msg)
    return TripTable(origin, dest, depart, arrive, skipped_bounds, skipped_horizon, diagnostics)


def write_trips_csv(path_or_stream, trips, time_spec, depart_ts=None, arrive_ts=None):
    """Write a pre-gridded trip CSV with epoch-second timestamps.

    Without explicit timestamps each trip is placed at the start of its
    interval, which re-ingests to the same interval indices.
    """
    if depart_ts is None:
        depart_ts = time_spec.start_epoch + trips.depart * time_spec.interval_seconds
    if arrive_ts is None:
        arrive_ts = time_spec.start_epoch + trips.arrive * time_spec.interval_seconds
    buf = io.StringIO()
    buf.write(",".join(REGION_HEADER) + "\n")
    for o, d, a, b in zip(trips.origin, trips.dest, depart_ts, arrive_ts):
        buf.write(f"{o},{d},{a:.3f},{b:.3f}\n")
    text = buf.getvalue()
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(text)
    else:
        from ..container import atomic_write
        atomic_write(path_or_stream, text)
    return text
