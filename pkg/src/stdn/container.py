"""Versioned binary container for named tensors.

Layout (all integers little-endian)::

    magic        8 bytes   identifies the payload kind, e.g. b"STDNCKPT"
    version      u32
    header_len   u32
    header       header_len bytes of UTF-8 JSON (sorted keys, no spaces)
    payload      raw little-endian tensor bytes, concatenated in header order

The header is ``{"meta": {...}, "tensors": [{"name", "dtype", "shape",
"offset", "nbytes"}, ...]}`` where ``offset`` counts from the start of the
payload.  Identical inputs always produce identical bytes.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

VERSION = 1

MAGIC_CHECKPOINT = b"STDNCKPT"
MAGIC_SAMPLES = b"STDNSMPL"
MAGIC_BUNDLE = b"STDNBNDL"

_DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8", "i4": "<i4", "u1": "|u1", "b1": "|b1"}


class ContainerError(ValueError):
    pass


def _code(arr):
    code = arr.dtype.str.lstrip("<>|=")
    if code not in _DTYPES:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    return code


def encode(magic, tensors, meta=None):
    """Serialize an ordered mapping ``name -> ndarray`` to bytes."""
    if len(magic) != 8:
        raise ContainerError("magic must be 8 bytes")
    index, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        code = _code(arr)
        raw = arr.astype(_DTYPES[code], copy=False).tobytes()
        index.append({"name": name, "dtype": code, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": index},
                        sort_keys=True, separators=(",", ":")).encode()
    return b"".join([magic, struct.pack("<II", VERSION, len(header)), header, *chunks])


def decode(blob, magic=None):
    """Inverse of :func:`encode`; returns ``(tensors, meta)``."""
    if len(blob) < 16:
        raise ContainerError("truncated container")
    if magic is not None and blob[:8] != magic:
        raise ContainerError(f"bad magic {blob[:8]!r}, expected {magic!r}")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = json.loads(blob[16:16 + hlen].decode())
    base = 16 + hlen
    tensors = {}
    for item in header["tensors"]:
        start = base + item["offset"]
        raw = blob[start:start + item["nbytes"]]
        if len(raw) != item["nbytes"]:
            raise ContainerError(f"truncated tensor {item['name']!r}")
        arr = np.frombuffer(raw, dtype=_DTYPES[item["dtype"]]).reshape(item["shape"])
        tensors[item["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return tensors, header["meta"]


def atomic_write(path, data):
    """Write bytes or text via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write(path, magic, tensors, meta=None):
    atomic_write(path, encode(magic, tensors, meta))


def read(path, magic=None):
    with open(path, "rb") as fh:
        return decode(fh.read(), magic)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
