"""Noise bank: ingest a directory of recordings, pre-filter into a band,
and serve random fixed-length segments for additive-noise augmentation."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import AudioBuffer, read_wav, resample, rms_db, write_wav
from .effects import AddNoiseSpec, EffectChainSpec, band_pass
from .errors import BankError
from .rng import RngStream

SILENCE_FLOOR_DB = -60.0
SEGMENT_TARGET_DB = -25.0

CANONICAL_BANDS = (
    (0.0, 80.0),
    (80.0, 240.0),
    (240.0, 720.0),
    (720.0, 2160.0),
    (2160.0, 8000.0),
)


@dataclass(frozen=True)
class BandSpec:
    low_hz: float
    high_hz: float

    def __post_init__(self):
        if not 0 <= self.low_hz < self.high_hz:
            raise BankError(f"invalid band [{self.low_hz}, {self.high_hz}]")

    def as_tuple(self) -> tuple[float, float]:
        return (self.low_hz, self.high_hz)


@dataclass(frozen=True)
class NoiseBank:
    """Immutable catalog of preprocessed noise segments at one sample rate."""

    segments: tuple[tuple[str, AudioBuffer], ...]
    sample_rate: int
    band: Optional[BandSpec] = None

    def __len__(self) -> int:
        return len(self.segments)

    def draw_params(self, length: int, rng: RngStream) -> tuple[int, int]:
        """Pick (segment index, crop offset) for a draw of ``length`` samples.

        Segments at least as long as the request are cropped without
        wrapping, so an exact-length segment forces offset 0; shorter
        segments loop from an arbitrary start position.
        """
        if not self.segments:
            raise BankError("empty noise bank")
        index = rng.integer(0, len(self.segments) - 1)
        seg_len = len(self.segments[index][1])
        if seg_len >= length:
            offset = rng.integer(0, seg_len - length)
        else:
            offset = rng.integer(0, seg_len - 1)
        return index, offset

    def materialize(self, segment: int, offset: int, length: int) -> AudioBuffer:
        """Deterministically crop (or tile) the stored segment."""
        samples = self.segments[segment][1].samples
        seg_len = samples.shape[0]
        if seg_len >= offset + length:
            out = samples[offset : offset + length]
        else:
            out = samples[(offset + np.arange(length)) % seg_len]
        return AudioBuffer(out, self.sample_rate)

    def draw(self, length: int, rng: RngStream) -> AudioBuffer:
        """A random ``length``-sample noise buffer; deterministic under rng."""
        index, offset = self.draw_params(length, rng)
        return self.materialize(index, offset, length)


def _prepare_segment(path: Path, band, target_rate: int):
    buf = resample(read_wav(path), target_rate)
    if band is not None:
        buf = band_pass(buf, band.low_hz, band.high_hz)
    if len(buf) == 0:
        return None
    level = rms_db(buf)
    if level <= SILENCE_FLOOR_DB:
        return None
    gain = 10.0 ** ((SEGMENT_TARGET_DB - level) / 20.0)
    return (path.name, AudioBuffer(buf.samples * gain, target_rate))


def build_bank(
    directory,
    band: Optional[BandSpec] = None,
    target_rate: int = 16000,
    threads: int = 1,
) -> NoiseBank:
    """Build a bank from every WAV under ``directory``.

    Each file is downmixed, resampled, optionally band-pass filtered, and
    normalized to -25 dBFS RMS; segments below -60 dBFS after filtering are
    dropped.  File order is name-sorted so the result is independent of
    directory enumeration and ingest parallelism.
    """
    directory = Path(directory)
    paths = sorted(p for p in directory.glob("*") if p.suffix.lower() == ".wav")
    if not paths:
        raise BankError(f"no WAV files in {directory}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda p: _prepare_segment(p, band, target_rate), paths))
    else:
        results = [_prepare_segment(p, band, target_rate) for p in paths]
    segments = tuple(r for r in results if r is not None)
    if not segments:
        raise BankError(f"all segments from {directory} are silent after filtering")
    return NoiseBank(segments, target_rate, band)


def save_bank(bank: NoiseBank, out_dir) -> None:
    """Write the filtered segments plus a bank.json manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for name, buf in bank.segments:
        write_wav(out_dir / name, buf, format="float32")
        files.append({"file": name, "rms_db": rms_db(buf)})
    manifest = {
        "sample_rate": bank.sample_rate,
        "band": None if bank.band is None else list(bank.band.as_tuple()),
        "files": files,
    }
    (out_dir / "bank.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_bank(directory) -> NoiseBank:
    """Load a bank previously written by :func:`save_bank`."""
    directory = Path(directory)
    manifest_path = directory / "bank.json"
    if not manifest_path.exists():
        raise BankError(f"{directory} has no bank.json manifest")
    manifest = json.loads(manifest_path.read_text())
    band = manifest.get("band")
    band_spec = None if band is None else BandSpec(float(band[0]), float(band[1]))
    rate = int(manifest["sample_rate"])
    segments = []
    for entry in manifest["files"]:
        buf = read_wav(directory / entry["file"])
        if buf.sample_rate != rate:
            raise BankError(f"{entry['file']}: rate {buf.sample_rate} != manifest rate {rate}")
        segments.append((entry["file"], buf))
    if not segments:
        raise BankError(f"{directory}: manifest lists no files")
    return NoiseBank(tuple(segments), rate, band_spec)


def resolve_chain_banks(
    spec: EffectChainSpec,
    sample_rate: int,
    threads: int = 1,
    bank_dir_override=None,
) -> EffectChainSpec:
    """Bind every add-noise spec entry to a loaded or freshly built bank.

    A directory containing bank.json is loaded as prepared (its band and rate
    must match the request); any other directory is ingested with the entry's
    band.  ``bank_dir_override`` replaces the path recorded in the spec.
    """
    effects = []
    for eff in spec.effects:
        if isinstance(eff, AddNoiseSpec) and eff.bank is None:
            source = bank_dir_override or eff.bank_path
            if source is None:
                raise BankError("add effect needs a noise bank path (or --noise-dir)")
            source = Path(source)
            band = None if eff.band is None else BandSpec(*eff.band)
            if (source / "bank.json").exists():
                bank = load_bank(source)
                if bank.sample_rate != sample_rate:
                    raise BankError(
                        f"prepared bank rate {bank.sample_rate} != required {sample_rate}"
                    )
                want = None if band is None else band.as_tuple()
                have = None if bank.band is None else bank.band.as_tuple()
                if want != have:
                    raise BankError(f"prepared bank band {have} != requested {want}")
            else:
                bank = build_bank(source, band, sample_rate, threads)
            effects.append(replace(eff, bank=bank))
        else:
            effects.append(eff)
    return EffectChainSpec(tuple(effects))
