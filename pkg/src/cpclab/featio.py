"""Per-utterance feature files: raw little-endian float32 frames plus a JSON
sidecar carrying the frame rate and dimensions."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import AbxError
from .model import FeatureSequence


def write_features(directory, utt_id: str, feats: FeatureSequence) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = np.ascontiguousarray(feats.frames, dtype="<f4")
    (directory / f"{utt_id}.f32").write_bytes(frames.tobytes())
    sidecar = {
        "frame_rate": feats.frame_rate,
        "dim": int(frames.shape[1]),
        "frames": int(frames.shape[0]),
        "level": feats.level,
    }
    (directory / f"{utt_id}.json").write_text(json.dumps(sidecar) + "\n")


def read_features(directory, utt_id: str) -> FeatureSequence:
    directory = Path(directory)
    bin_path = directory / f"{utt_id}.f32"
    sidecar_path = directory / f"{utt_id}.json"
    if not bin_path.exists() or not sidecar_path.exists():
        raise AbxError(f"no features for {utt_id!r} in {directory}")
    sidecar = json.loads(sidecar_path.read_text())
    raw = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
    dim = int(sidecar["dim"])
    if dim <= 0 or raw.size % dim:
        raise AbxError(f"{bin_path}: payload does not divide into dim {dim}")
    frames = raw.reshape(-1, dim)
    return FeatureSequence(frames, float(sidecar["frame_rate"]), sidecar.get("level", "c"))


def feature_ids(directory) -> list[str]:
    return sorted(p.stem for p in Path(directory).glob("*.f32"))


def segment_frames(feats: FeatureSequence, onset: float, offset: float) -> np.ndarray:
    """Slice [round(onset*rate), round(offset*rate)) frames; never empty.

    A slice that rounds to nothing falls back to the single nearest frame.
    """
    total = feats.frames.shape[0]
    a = int(round(onset * feats.frame_rate))
    b = int(round(offset * feats.frame_rate))
    a = max(0, min(a, total))
    b = max(0, min(b, total))
    if b <= a:
        nearest = max(0, min(int(round(onset * feats.frame_rate)), total - 1))
        return feats.frames[nearest : nearest + 1]
    return feats.frames[a:b]
