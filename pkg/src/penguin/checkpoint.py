"""Binary checkpoint format.

Layout::

    b"PNGN" | version: u8 | header_len: u32 LE | header: UTF-8 JSON | blobs

The header holds the model config, the normalization statistics used for the
data, and a manifest of ``{name, shape, offset}`` entries. Offsets are byte
positions inside the blob section; every blob is little-endian float32.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .config import PenguinConfig
from .errors import DataError
from .model import PenguinModel

log = logging.getLogger(__name__)

MAGIC = b"PNGN"
VERSION = 1


def save(path, model: PenguinModel, normalization: dict | None = None,
         extra: dict | None = None) -> None:
    if model.config.precision != "float32":
        log.warning("checkpoint stores float32; %s weights will be rounded",
                    model.config.precision)
    manifest, blobs, offset = [], [], 0
    for name, t in model.parameters().items():
        blob = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "package_version": __version__,
        "config": model.config.to_dict(),
        "normalization": normalization,
        "params": manifest,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<BI", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<BI")
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    base = start + hlen
    params = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        lo = base + entry["offset"]
        hi = lo + 4 * count
        if hi > len(raw):
            raise DataError(f"{path}: truncated blob for {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw[lo:hi], dtype="<f4").reshape(entry["shape"])
    return header, params


def load(path) -> tuple[PenguinModel, dict]:
    """Rebuild the model; returns ``(model, header)``."""
    header, params = read(path)
    config = PenguinConfig.from_dict(header["config"])
    model = PenguinModel(config)
    model.load_state_dict(params)
    return model, header
