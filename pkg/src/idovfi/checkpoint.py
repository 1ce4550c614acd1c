"""Single-file checkpoints: a JSON header followed by raw float32 tensors.

Layout::

    b"IDOVFI-CKPT\\n"            12-byte magic
    uint64 little-endian          header length in bytes
    header                        UTF-8 JSON: {"config": {...}, "tensors": [
                                      {"name", "shape", "offset", "nbytes"}, ...]}
    payload                       concatenated little-endian float32 arrays

Offsets are relative to the start of the payload.  Tensors are written in
sorted name order so identical parameters give byte-identical files.
"""
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"IDOVFI-CKPT\n"


class DependencyError(RuntimeError):
    """A stage needs a checkpoint that has not been produced yet."""


def save_checkpoint(path, module, config=None):
    state = module.state_dict()
    entries, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy().astype("<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config or {}, "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs))
    return path


def read_checkpoint(path):
    """Return ``(config, {name: float32 array})``."""
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"missing checkpoint {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path} is not a checkpoint")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(raw[start:start + hlen])
    base = start + hlen
    tensors = {}
    for e in header["tensors"]:
        buf = raw[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(buf, dtype="<f4").reshape(e["shape"]).copy()
    return header["config"], tensors


def load_into(module, path):
    config, tensors = read_checkpoint(path)
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    module.load_state_dict(state)
    return config


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
