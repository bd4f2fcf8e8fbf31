"""Versioned binary checkpoint container.

Layout (documented byte-exactly so round-trips are reproducible):

    offset 0   : magic line  b"LAPSEGEN-CKPT v1\\n"
    next 8     : little-endian uint64, byte length of the header JSON
    header     : UTF-8 JSON, sorted keys, no whitespace:
                 {"meta": {...}, "tensors": [{"name": str, "shape": [int...],
                  "dtype": "float32"|"float64", "offset": int, "nbytes": int}, ...]}
    payload    : raw little-endian buffers, concatenated in header order

Tensor entries are sorted by name and offsets are relative to the start
of the payload, so save -> load -> save is byte-identical.
"""
import json

import numpy as np

from .errors import InvalidArgument

MAGIC = b"LAPSEGEN-CKPT v1\n"
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def save(path, arrays, meta=None):
    """Write a name->ndarray mapping (plus JSON-able metadata) to ``path``."""
    entries = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise InvalidArgument(f"checkpoint tensor {name!r} has dtype {dtype_name}")
        buf = arr.astype(_DTYPES[dtype_name], copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": dtype_name, "offset": len(payload),
                        "nbytes": len(buf)})
        payload.extend(buf)
    header = json.dumps({"meta": meta or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(payload)


def load(path):
    """Read a checkpoint; returns (dict name->ndarray, meta dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise InvalidArgument(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    hlen = int.from_bytes(blob[pos:pos + 8], "little")
    pos += 8
    header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
    base = pos + hlen
    arrays = {}
    for ent in header["tensors"]:
        dt = _DTYPES[ent["dtype"]]
        start = base + ent["offset"]
        arr = np.frombuffer(blob[start:start + ent["nbytes"]], dtype=dt)
        arrays[ent["name"]] = arr.reshape(ent["shape"]).astype(ent["dtype"], copy=True)
    return arrays, header["meta"]
