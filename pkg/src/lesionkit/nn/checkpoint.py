"""Checkpoint container: network description plus named parameter tensors.

Layout (all integers little-endian):

    bytes 0-7    magic b"LKCKPT\\x00\\x01" (format version 1 in the last byte)
    bytes 8-11   uint32 header length in bytes
    header       UTF-8 JSON: {"version": 1,
                              "network": <declarative text form>,
                              "tensors": [{"name", "shape", "offset", "size"}, ...]}
    data         concatenated raw little-endian float64 values, in header order

Offsets count float64 elements from the start of the data section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import NetworkSpec, Parameters, spec_from_text, spec_to_text

MAGIC = b"LKCKPT\x00\x01"


def save_checkpoint(path: str | Path, net: NetworkSpec, params: Parameters):
    entries = []
    offset = 0
    blobs = []
    for name in sorted(params.tensors):
        t = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "size": t.size})
        offset += t.size
        blobs.append(t.tobytes())
    header = json.dumps(
        {"version": 1, "network": spec_to_text(net), "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[NetworkSpec, Parameters]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a lesionkit checkpoint (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != 1:
            raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    net = spec_from_text(header["network"])
    params = Parameters()
    for e in header["tensors"]:
        chunk = data[e["offset"] : e["offset"] + e["size"]]
        if chunk.size != e["size"]:
            raise ValueError(f"{path}: truncated tensor {e['name']}")
        params[e["name"]] = chunk.reshape(e["shape"]).astype(np.float64)
    return net, params
