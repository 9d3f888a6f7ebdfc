"""Synthetic tone-speech corpus: harmonic "phones" spoken by f0-differing
"speakers", plus noise fixtures.  Drives the desk-scale training and ABX
checks without any real speech data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .abx import ItemRecord
from .audio import AudioBuffer, write_wav
from .rng import RngStream


@dataclass(frozen=True)
class ToneWorld:
    """Inventory of synthetic speakers (f0, tilt) and phones (formant pairs)."""

    sample_rate: int = 16000
    speaker_f0: tuple[float, ...] = (110.0, 185.0)
    speaker_tilt: tuple[float, ...] = (0.25, 0.45)
    phone_formants: tuple[tuple[float, float], ...] = (
        (320.0, 2300.0),
        (650.0, 1080.0),
        (450.0, 1900.0),
        (950.0, 1500.0),
    )
    formant_bw: float = 170.0
    phone_duration: float = 0.12

    @property
    def n_speakers(self) -> int:
        return len(self.speaker_f0)

    @property
    def n_phones(self) -> int:
        return len(self.phone_formants)

    def phone_name(self, phone: int) -> str:
        return f"p{phone}"

    def speaker_name(self, speaker: int) -> str:
        return f"s{speaker}"


def _phone_wave(world: ToneWorld, speaker: int, phone: int, rng: RngStream) -> np.ndarray:
    rate = world.sample_rate
    n = int(round(world.phone_duration * rate))
    f0 = world.speaker_f0[speaker] * (1.0 + 0.04 * rng.uniform(-1.0, 1.0))
    tilt = world.speaker_tilt[speaker]
    f1, f2 = world.phone_formants[phone]
    n_harmonics = min(40, int(0.45 * rate / f0))
    h = np.arange(1, n_harmonics + 1, dtype=np.float64)
    freqs = h * f0
    envelope = (
        np.exp(-0.5 * ((freqs - f1) / world.formant_bw) ** 2)
        + np.exp(-0.5 * ((freqs - f2) / world.formant_bw) ** 2)
        + 0.01
    )
    amps = envelope * h ** (-tilt)
    phases = rng.np.uniform(0.0, 2.0 * math.pi, size=n_harmonics)
    t = np.arange(n) / rate
    wave = (amps[:, None] * np.sin(2.0 * math.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)

    edge = min(n // 4, int(0.010 * rate))
    if edge > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(edge) / edge))
        wave[:edge] *= ramp
        wave[-edge:] *= ramp[::-1]

    rms = math.sqrt(float(np.mean(np.square(wave))))
    target_db = -20.0 + 1.5 * rng.uniform(-1.0, 1.0)
    wave *= 10.0 ** (target_db / 20.0) / max(rms, 1e-12)
    return wave


def utterance(world: ToneWorld, speaker: int, phones: Sequence[int], rng: RngStream) -> AudioBuffer:
    """Concatenate phone waves (each edge-faded, so joins are click-free)."""
    parts = [_phone_wave(world, speaker, phone, rng.child(i)) for i, phone in enumerate(phones)]
    return AudioBuffer(np.concatenate(parts), world.sample_rate)


def training_corpus(
    world: ToneWorld, rng: RngStream, per_speaker: int = 8, phones_per_utt: int = 14
) -> list[AudioBuffer]:
    """Random phone sequences per speaker, long enough for 1 s windows."""
    corpus = []
    for speaker in range(world.n_speakers):
        for u in range(per_speaker):
            utt_rng = rng.child(speaker, u)
            phones = [
                utt_rng.integer(0, world.n_phones - 1) for _ in range(phones_per_utt)
            ]
            corpus.append(utterance(world, speaker, phones, utt_rng.child(999)))
    return corpus


def eval_items(
    world: ToneWorld,
    rng: RngStream,
    contexts: tuple[tuple[int, int], ...] = ((0, 1), (2, 3)),
    instances: int = 2,
) -> tuple[dict[str, AudioBuffer], list[ItemRecord]]:
    """Held-out triphone segments for ABX: every center phone in every
    context, ``instances`` fresh takes per speaker."""
    utts: dict[str, AudioBuffer] = {}
    items: list[ItemRecord] = []
    for speaker in range(world.n_speakers):
        for ci, (prev, nxt) in enumerate(contexts):
            for center in range(world.n_phones):
                for take in range(instances):
                    utt_id = f"s{speaker}_c{ci}_p{center}_t{take}"
                    wave = utterance(
                        world, speaker, (prev, center, nxt), rng.child(speaker, ci, center, take)
                    )
                    utts[utt_id] = wave
                    items.append(
                        ItemRecord(
                            file_id=utt_id,
                            onset=0.0,
                            offset=wave.duration_seconds,
                            center=world.phone_name(center),
                            prev=world.phone_name(prev),
                            next=world.phone_name(nxt),
                            speaker=world.speaker_name(speaker),
                        )
                    )
    return utts, items


def write_item_file(path, items: Sequence[ItemRecord]) -> None:
    lines = ["#file onset offset #phone prev-phone next-phone speaker"]
    for rec in items:
        lines.append(
            f"{rec.file_id} {rec.onset:.6f} {rec.offset:.6f} "
            f"{rec.center} {rec.prev} {rec.next} {rec.speaker}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_corpus_dir(directory, utts: dict[str, AudioBuffer]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for utt_id, wave in utts.items():
        write_wav(directory / f"{utt_id}.wav", wave, format="float32")


def noise_fixture_dir(directory, rng: RngStream, sample_rate: int = 16000) -> Path:
    """Write four synthetic noise sources: white, brown, hum, and crackle."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = 3 * sample_rate

    white = rng.child(0).np.standard_normal(n)
    brown = np.cumsum(rng.child(1).np.standard_normal(n))
    brown -= brown.mean()
    t = np.arange(n) / sample_rate
    hum_rng = rng.child(2)
    hum = sum(
        (1.0 / k) * np.sin(2.0 * math.pi * 90.0 * k * t + hum_rng.uniform(0, 2 * math.pi))
        for k in (1, 2, 3)
    )
    crackle = np.zeros(n)
    crackle_rng = rng.child(3)
    positions = crackle_rng.np.integers(0, n, size=400)
    crackle[positions] = crackle_rng.np.uniform(-1.0, 1.0, size=400)

    for name, wave in (("white", white), ("brown", brown), ("hum", hum), ("crackle", crackle)):
        rms = math.sqrt(float(np.mean(np.square(wave))))
        scaled = wave * (10.0 ** (-20.0 / 20.0) / max(rms, 1e-12))
        write_wav(directory / f"{name}.wav", AudioBuffer(scaled, sample_rate), format="float32")
    return directory
