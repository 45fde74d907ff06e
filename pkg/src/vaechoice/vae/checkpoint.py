"""Versioned binary checkpoints and loss-trace files.

Layout: magic line, ``<u4`` format version, ``<u8`` header length, a UTF-8
JSON header (sorted keys) and then every array as little-endian float64 in
header order.  Nothing time-dependent is written, so equal models give equal
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..data import AttributeSchema
from ..errors import CheckpointVersionError
from .hyperparams import VaeHyperparams
from .model import VaeModel

MAGIC = b"VAECHOICE-CHECKPOINT\n"
VERSION = 1


def dumps(model: VaeModel) -> bytes:
    arrays = [("params", k, v) for k, v in model.params.items()]
    arrays += [("bn_state", k, v) for k, v in model.bn_state.items()]
    header = {
        "version": VERSION,
        "n_attributes": model.n_attributes,
        "hyperparams": model.hp.to_dict(),
        "lower": [float(x) for x in model.lower],
        "logvar_bounds": [float(x) for x in model.logvar_bounds],
        "normalization": model.normalization.to_dict() if model.normalization is not None else None,
        "arrays": [{"group": g, "name": k, "shape": list(v.shape)} for g, k, v in arrays],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, _, v in arrays)
    return MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + body


def loads(blob: bytes, n_attributes: int | None = None) -> VaeModel:
    if not blob.startswith(MAGIC):
        raise CheckpointVersionError("not a model checkpoint")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", blob, off)
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {VERSION}")
    off += struct.calcsize("<IQ")
    header = json.loads(blob[off : off + hlen].decode("utf-8"))
    off += hlen
    if n_attributes is not None and header["n_attributes"] != n_attributes:
        raise CheckpointVersionError(
            f"checkpoint expects {header['n_attributes']} attributes, data has {n_attributes}"
        )
    groups: dict = {"params": {}, "bn_state": {}}
    for spec in header["arrays"]:
        size = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(spec["shape"])
        groups[spec["group"]][spec["name"]] = arr.astype(np.float64)
        off += 8 * size
    if off != len(blob):
        raise CheckpointVersionError("checkpoint has trailing or missing bytes")
    norm = header["normalization"]
    return VaeModel(
        header["n_attributes"],
        VaeHyperparams.from_dict(header["hyperparams"]),
        groups["params"],
        groups["bn_state"],
        np.array(header["lower"]),
        tuple(header["logvar_bounds"]),
        AttributeSchema.from_dict(norm) if norm is not None else None,
    )


def save(model: VaeModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def load(path, n_attributes: int | None = None) -> VaeModel:
    return loads(Path(path).read_bytes(), n_attributes)


def write_trace(trace, path) -> None:
    lines = ["iteration,bound"] + [f"{i},{float(v):.17g}" for i, v in enumerate(trace)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path) -> np.ndarray:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    return np.array([float(r.split(",")[1]) for r in rows])
