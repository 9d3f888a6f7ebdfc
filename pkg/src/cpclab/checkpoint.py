"""Single-file model checkpoints: JSON header, little-endian float32 payload,
and a trailing CRC-32 over everything before it."""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import CpcConfig, CpcModel

_MAGIC = b"CPCCKPT1"


def save_checkpoint(path, model: CpcModel, seed: int, step: int) -> None:
    """Serialize config, metadata, and all parameters as float32."""
    tensors = []
    chunks = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {
            "config": model.config.to_dict(),
            "seed": int(seed),
            "step": int(step),
            "tensors": tensors,
        },
        sort_keys=True,
    ).encode("utf-8")
    body = _MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


def load_checkpoint(path) -> tuple[CpcModel, dict]:
    """Rebuild the model from a checkpoint; returns (model, metadata)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short")
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a cpclab checkpoint")
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    (header_len,) = struct.unpack_from("<I", raw, len(_MAGIC))
    header_start = len(_MAGIC) + 4
    payload_start = header_start + header_len
    if payload_start > len(raw) - 4:
        raise CheckpointError(f"{path}: header overruns file")
    try:
        header = json.loads(raw[header_start:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc

    config = CpcConfig.from_dict(header["config"])
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(0)
        model = CpcModel(config)
    payload = raw[payload_start:-4]
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} overruns payload")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start).reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: state does not match config: {exc}") from exc
    meta = {"seed": header["seed"], "step": header["step"], "config": header["config"]}
    return model, meta
