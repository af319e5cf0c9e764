"""Checkpoint files: a JSON header followed by little-endian float64 parameters.

Layout::

    b"AVCK" | uint32 schema version | uint32 header length | header (UTF-8 JSON)
    | parameter records, in header order, each shape-product float64 values

The header records the model kind, dimensions, the ordered parameter names
and shapes, frozen components and free-form training metadata.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from avmask.nn.graph import ModelDims, ModelGraph

MAGIC = b"AVCK"
SCHEMA_VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    model: ModelGraph
    metadata: dict = field(default_factory=dict)

    def header(self):
        return {
            "kind": self.model.kind,
            "dims": self.model.dims_dict(),
            "params": [[k, list(v.shape)] for k, v in self.model.params.items()],
            "frozen": sorted(self.model.frozen),
            "metadata": self.metadata,
            "schema_version": SCHEMA_VERSION,
        }


def to_bytes(ckpt):
    header = json.dumps(ckpt.header(), sort_keys=True).encode("utf-8")
    blob = b"".join(
        np.ascontiguousarray(v, dtype="<f8").tobytes() for v in ckpt.model.params.values()
    )
    return _PREFIX.pack(MAGIC, SCHEMA_VERSION, len(header)) + header + blob


def from_bytes(raw):
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError("not a checkpoint file")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {version}")
    off = _PREFIX.size
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        end = off + 8 * n
        if end > len(raw):
            raise ValueError("truncated checkpoint payload")
        params[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off = end
    if off != len(raw):
        raise ValueError("trailing bytes after checkpoint payload")
    model = ModelGraph(header["kind"], ModelDims(**header["dims"]), params, set(header["frozen"]))
    return Checkpoint(model, header.get("metadata", {}))


def save_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
