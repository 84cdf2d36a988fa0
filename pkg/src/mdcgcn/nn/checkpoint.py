"""Versioned binary checkpoint: JSON header followed by raw little-endian arrays.

Layout::

    b"MDCGCNCK"  (8 bytes magic)
    uint32       format version
    uint64       header length in bytes
    header       UTF-8 JSON: metadata plus an ordered array table
    payload      concatenated array bytes, in table order

The file contains no timestamps, so identical inputs give identical bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError

MAGIC = b"MDCGCNCK"
VERSION = 1


def _le(a):
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(path, arrays, meta):
    """Write ``arrays`` (ordered name -> ndarray) with the JSON-serializable ``meta``."""
    table = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = _le(arr)
        raw = arr.tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": table}, sort_keys=True, separators=(",", ":")).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Return ``(arrays, meta)``."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ConfigError(f"{path}: not an mdcgcn checkpoint")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[20 : 20 + hlen])
    base = 20 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        arr = np.frombuffer(blob[start : start + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.dtype(entry["dtype"]).newbyteorder("="))
    return arrays, header["meta"]
