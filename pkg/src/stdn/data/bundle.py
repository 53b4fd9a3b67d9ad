"""Tensor bundle: volume + flow tensors and their grid/calendar metadata in one file."""

import numpy as np

from .. import container
from .grid import GridSpec, TimeSpec
from .tensors import FlowTensor, SparseFlow, VolumeTensor


def save_bundle(path, volume, flows, extra_meta=None):
    tensors = {"start": volume.start, "end": volume.end}
    for prefix, sf in (("outflow", flows.outflow), ("inflow", flows.inflow)):
        tensors[f"{prefix}.region"] = sf.region
        tensors[f"{prefix}.interval"] = sf.interval
        tensors[f"{prefix}.other"] = sf.other
        tensors[f"{prefix}.count"] = sf.count
    meta = {"kind": "bundle", "grid": volume.grid.to_dict(), "time": volume.time.to_dict()}
    meta.update(extra_meta or {})
    container.write(path, container.MAGIC_BUNDLE, tensors, meta)


def load_bundle(path):
    """Returns ``(volume, flows, meta)``."""
    t, meta = container.read(path, container.MAGIC_BUNDLE)
    grid = GridSpec.from_dict(meta["grid"])
    time = TimeSpec.from_dict(meta["time"])
    volume = VolumeTensor(t["start"].astype(np.int64), t["end"].astype(np.int64), grid, time)
    sparse = {p: SparseFlow(t[f"{p}.region"], t[f"{p}.interval"], t[f"{p}.other"], t[f"{p}.count"])
              for p in ("outflow", "inflow")}
    return volume, FlowTensor(sparse["outflow"], sparse["inflow"], grid, time), meta
