"""Flat binary checkpoints.

Layout::

    b"M2LBCKPT"                 8-byte magic
    header length               unsigned 64-bit little-endian
    header                      UTF-8 JSON: {"format", "config", "arrays": [{name, shape, offset, nbytes}]}
    payload                     float64 little-endian arrays back to back, offsets relative to payload start

The JSON is written with sorted keys and fixed separators, so saving the same
parameters always yields the same bytes.
"""

import json
import struct

import numpy as np

from .encoder import EncoderConfig, EncoderModel
from .errors import DataError

MAGIC = b"M2LBCKPT"
FORMAT_VERSION = 1


def to_bytes(model):
    entries, chunks, offset = [], [], 0
    for name, values in model.arrays().items():
        data = np.ascontiguousarray(values, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(values.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"format": FORMAT_VERSION, "config": model.config.to_dict(), "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def from_bytes(blob):
    if blob[:8] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {header.get('format')!r}")
    payload = memoryview(blob)[16 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise DataError(f"truncated checkpoint while reading {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(float)
    return EncoderModel.from_arrays(EncoderConfig(**header["config"]), arrays)


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(model))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
