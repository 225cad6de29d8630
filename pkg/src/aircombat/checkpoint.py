"""Portable checkpoint container.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"ACQNCKPT"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length H in bytes
    20      H     UTF-8 JSON header, keys sorted, no insignificant whitespace
    20+H    ...   float64 little-endian array data, arrays back to back in
                  the order listed in header["arrays"]

The header holds ``arrays`` (list of ``{"name", "shape"}``), ``layers``
(network layer names and shapes), ``config`` (an echo of the run
configuration), ``step`` (environment steps taken) and free-form ``meta``.
Arrays written by the learner are ``online``, ``target``, ``adam_m`` and
``adam_v``; readers must ignore arrays they do not know.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import ShapeError

MAGIC = b"ACQNCKPT"
VERSION = 1


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, arrays: dict, header: dict) -> None:
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    blob = _dumps(header)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ShapeError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise ShapeError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    offset = 20 + hlen
    arrays = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(np.float64)
        offset += 8 * n
    if offset != len(data):
        raise ShapeError(f"{path}: {len(data) - offset} trailing bytes")
    return header, arrays


def save_network(path, net, config=None, step=0, target=None, optimizer=None,
                 meta=None) -> None:
    arrays = {"online": net.flat}
    if target is not None:
        arrays["target"] = target.flat
    if optimizer is not None:
        arrays["adam_m"] = optimizer.m
        arrays["adam_v"] = optimizer.v
    header = {
        "network": {"n_inputs": net.n_inputs, "hidden": list(net.hidden),
                    "n_actions": net.n_actions, "dtype": net.dtype.name},
        "layers": [{"name": n, "shape": list(s)} for n, s in net.layer_shapes],
        "config": config or {},
        "step": int(step),
        "optimizer_step": int(optimizer.t) if optimizer is not None else 0,
        "meta": meta or {},
    }
    write_container(path, arrays, header)


def load_network(path, expected_inputs=None):
    """Load a checkpoint; returns ``(online_net, header, arrays)``."""
    from .qnet import QNetwork

    header, arrays = read_container(path)
    spec = header["network"]
    if expected_inputs is not None and spec["n_inputs"] != expected_inputs:
        raise ShapeError(
            f"{path}: checkpoint input width {spec['n_inputs']} does not match "
            f"configured width {expected_inputs} (check stack_n)")
    net = QNetwork(spec["n_inputs"], spec["hidden"], spec["n_actions"],
                   flat=arrays["online"], dtype=spec.get("dtype", "float64"))
    return net, header, arrays
