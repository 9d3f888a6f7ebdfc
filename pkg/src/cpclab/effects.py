"""Time-domain augmentation effects, stochastic chain specs, and composition.

The five effects (pitch, add, reverb, bandrej, tdrop) compose in that fixed
order.  A chain is described twice: an :class:`EffectChainSpec` holds the
sampling intervals, and :class:`ConcreteChain` holds one fully instantiated
draw, whose application is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence

import numpy as np
from scipy.signal import cheby2, sosfilt

from ._kernels import freeverb_core, wsola_core
from .audio import AudioBuffer, rms_db, stretch_to_length
from .errors import ChainError
from .rng import RngStream

CANONICAL_ORDER = ("pitch", "add", "reverb", "bandrej", "tdrop")

DEFAULT_PITCH_RANGE = (-300, 300)
DEFAULT_SNR_RANGE = (5.0, 15.0)
DEFAULT_ROOM_RANGE = (0.0, 100.0)
DEFAULT_BANDREJ_MAX_WIDTH = 150.0
DEFAULT_TDROP_MS = 50.0
DEFAULT_NOISE_BAND = (80.0, 240.0)

# Freeverb tuning at its native rate; scaled to the buffer rate on use.
_COMB_DELAYS_44K = (1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617)
_ALLPASS_DELAYS_44K = (556, 441, 341, 225)
_REVERB_DAMP = 0.5
_REVERB_INPUT_GAIN = 0.015

_WSOLA_WINDOW_MS = 25.0
_WSOLA_TOLERANCE_MS = 5.0


# ---------------------------------------------------------------------------
# chain specifications


@dataclass(frozen=True)
class PitchSpec:
    low_cents: int = DEFAULT_PITCH_RANGE[0]
    high_cents: int = DEFAULT_PITCH_RANGE[1]

    def __post_init__(self):
        if self.low_cents > self.high_cents:
            raise ChainError(f"empty pitch interval [{self.low_cents}, {self.high_cents}]")
        if max(abs(self.low_cents), abs(self.high_cents)) > 1200:
            raise ChainError("pitch range limited to +/-1200 cents")


@dataclass(frozen=True)
class AddNoiseSpec:
    """Additive noise drawn from a bank, mixed at a random SNR.

    ``bank`` is the resolved in-memory bank; ``bank_path``/``band`` describe
    how to build it and are what the JSON form carries.
    """

    bank: Any = None
    bank_path: Optional[str] = None
    band: Optional[tuple[float, float]] = DEFAULT_NOISE_BAND
    snr_low_db: float = DEFAULT_SNR_RANGE[0]
    snr_high_db: float = DEFAULT_SNR_RANGE[1]

    def __post_init__(self):
        if self.snr_low_db > self.snr_high_db:
            raise ChainError(f"empty SNR interval [{self.snr_low_db}, {self.snr_high_db}]")
        if self.band is not None:
            low, high = self.band
            if not 0 <= low < high:
                raise ChainError(f"invalid noise band {self.band}")


@dataclass(frozen=True)
class ReverbSpec:
    low_room: float = DEFAULT_ROOM_RANGE[0]
    high_room: float = DEFAULT_ROOM_RANGE[1]

    def __post_init__(self):
        if not 0 <= self.low_room <= self.high_room <= 100:
            raise ChainError(f"room_scale interval [{self.low_room}, {self.high_room}] outside [0, 100]")


@dataclass(frozen=True)
class BandRejectSpec:
    max_width_hz: float = DEFAULT_BANDREJ_MAX_WIDTH

    def __post_init__(self):
        if self.max_width_hz < 0:
            raise ChainError("max_width_hz must be >= 0")


@dataclass(frozen=True)
class TimeDropSpec:
    duration_ms: float = DEFAULT_TDROP_MS

    def __post_init__(self):
        if self.duration_ms < 0:
            raise ChainError("duration_ms must be >= 0")


_SPEC_ORDER = {PitchSpec: 0, AddNoiseSpec: 1, ReverbSpec: 2, BandRejectSpec: 3, TimeDropSpec: 4}


@dataclass(frozen=True)
class EffectChainSpec:
    """Ordered set of effect specs; composition order is always canonical."""

    effects: tuple = ()

    def __post_init__(self):
        ranks = []
        for eff in self.effects:
            rank = _SPEC_ORDER.get(type(eff))
            if rank is None:
                raise ChainError(f"unknown effect spec {type(eff).__name__}")
            ranks.append(rank)
        if len(set(ranks)) != len(ranks):
            raise ChainError("duplicate effect in chain")
        ordered = tuple(e for _, e in sorted(zip(ranks, self.effects), key=lambda t: t[0]))
        object.__setattr__(self, "effects", ordered)

    def get(self, spec_type):
        for eff in self.effects:
            if isinstance(eff, spec_type):
                return eff
        return None


# ---------------------------------------------------------------------------
# concrete (sampled) chains


@dataclass(frozen=True)
class PitchParams:
    cents: int


@dataclass(frozen=True)
class AddNoiseParams:
    bank: Any
    segment: int
    offset: int
    snr_db: float


@dataclass(frozen=True)
class ReverbParams:
    room_scale: float


@dataclass(frozen=True)
class BandRejectParams:
    center_hz: float
    width_hz: float


@dataclass(frozen=True)
class TimeDropParams:
    start: int
    duration_ms: float = DEFAULT_TDROP_MS


@dataclass(frozen=True)
class ConcreteChain:
    params: tuple = ()


def sample_chain(
    spec: EffectChainSpec, seq_len: int, sample_rate: int, rng: RngStream
) -> ConcreteChain:
    """Instantiate every effect in ``spec`` with parameters drawn from ``rng``.

    Draw order follows the canonical effect order, so a given stream state
    always produces the same chain.
    """
    if seq_len <= 0:
        raise ChainError("seq_len must be positive")
    nyquist = sample_rate / 2.0
    params = []
    for eff in spec.effects:
        if isinstance(eff, PitchSpec):
            params.append(PitchParams(rng.integer(eff.low_cents, eff.high_cents)))
        elif isinstance(eff, AddNoiseSpec):
            if eff.bank is None:
                raise ChainError("noise bank not resolved; call resolve_chain_banks first")
            segment, offset = eff.bank.draw_params(seq_len, rng)
            snr = rng.uniform(eff.snr_low_db, eff.snr_high_db)
            params.append(AddNoiseParams(eff.bank, segment, offset, snr))
        elif isinstance(eff, ReverbSpec):
            params.append(ReverbParams(rng.uniform(eff.low_room, eff.high_room)))
        elif isinstance(eff, BandRejectSpec):
            if eff.max_width_hz > nyquist:
                raise ChainError(f"max_width_hz {eff.max_width_hz} exceeds Nyquist {nyquist}")
            width = rng.uniform(0.0, eff.max_width_hz)
            center = rng.uniform(width / 2.0, nyquist - width / 2.0)
            params.append(BandRejectParams(center, width))
        elif isinstance(eff, TimeDropSpec):
            window = int(round(eff.duration_ms * sample_rate / 1000.0))
            if window > seq_len:
                raise ChainError(
                    f"sequence of {seq_len} samples shorter than {eff.duration_ms} ms drop window"
                )
            params.append(TimeDropParams(rng.integer(0, seq_len - window), eff.duration_ms))
    return ConcreteChain(tuple(params))


# ---------------------------------------------------------------------------
# the effects themselves


def pitch_shift(buf: AudioBuffer, cents: int) -> AudioBuffer:
    """Shift dominant frequencies by 2**(cents/1200), preserving duration.

    Resamples to move the pitch, then time-stretches back with a
    waveform-similarity overlap-add; output length equals input length.
    """
    if abs(cents) > 1200:
        raise ValueError(f"|cents| must be <= 1200, got {cents}")
    n = len(buf)
    factor = 2.0 ** (cents / 1200.0)
    shifted = stretch_to_length(buf.samples, int(round(n / factor)))
    restored = _wsola_stretch(shifted, n, buf.sample_rate)
    return AudioBuffer(restored, buf.sample_rate)


def _wsola_stretch(samples: np.ndarray, out_len: int, sample_rate: int) -> np.ndarray:
    if out_len == samples.shape[0]:
        return samples
    width = int(round(_WSOLA_WINDOW_MS * sample_rate / 1000.0))
    width -= width % 2
    width = max(width, 4)
    if samples.shape[0] <= width:
        # too short for overlap-add; fall back to plain interpolation
        return stretch_to_length(samples, out_len)
    win = np.hanning(width)
    hop = width // 2
    tol = int(round(_WSOLA_TOLERANCE_MS * sample_rate / 1000.0))
    return wsola_core(np.ascontiguousarray(samples), out_len, win, hop, tol)


def reverb(buf: AudioBuffer, room_scale: float) -> AudioBuffer:
    """Schroeder/Freeverb reverberator: 8 parallel combs, 4 series allpasses.

    Comb feedback is 0.7 + 0.28 * room_scale / 100, damping 0.5, and the wet
    path is mixed 50/50 with the dry input.  Output length equals input
    length; the tail past the input is discarded.
    """
    if not 0.0 <= room_scale <= 100.0:
        raise ValueError(f"room_scale must be in [0, 100], got {room_scale}")
    feedback = 0.7 + 0.28 * (room_scale / 100.0)
    scale = buf.sample_rate / 44100.0
    combs = np.array([max(1, int(round(d * scale))) for d in _COMB_DELAYS_44K], dtype=np.int64)
    allpasses = np.array(
        [max(1, int(round(d * scale))) for d in _ALLPASS_DELAYS_44K], dtype=np.int64
    )
    wet = freeverb_core(buf.samples, combs, allpasses, feedback, _REVERB_DAMP, _REVERB_INPUT_GAIN)
    return AudioBuffer(0.5 * buf.samples + 0.5 * wet, buf.sample_rate)


def _notch_sos(center_hz: float, width_hz: float, sample_rate: int) -> np.ndarray:
    # Two identical RBJ cookbook notches; per-stage bandwidth width/2 keeps
    # the cascade ripple at 1.5 widths from center below 1 dB.
    w0 = 2.0 * math.pi * center_hz / sample_rate
    q = 2.0 * center_hz / width_hz
    alpha = math.sin(w0) / (2.0 * q)
    cos_w0 = math.cos(w0)
    a0 = 1.0 + alpha
    section = np.array([1.0, -2.0 * cos_w0, 1.0, a0, -2.0 * cos_w0, 1.0 - alpha]) / a0
    return np.vstack([section, section])


def band_reject(buf: AudioBuffer, center_hz: float, width_hz: float) -> AudioBuffer:
    """Notch out ``width_hz`` around ``center_hz`` (>= 20 dB at the center)."""
    nyquist = buf.sample_rate / 2.0
    if width_hz < 0:
        raise ValueError("width_hz must be >= 0")
    if width_hz == 0:
        return buf
    if not 0.0 < center_hz < nyquist:
        raise ValueError(f"center {center_hz} Hz outside (0, {nyquist})")
    if center_hz - width_hz / 2.0 < 0.0 or center_hz + width_hz / 2.0 > nyquist:
        raise ValueError(
            f"band [{center_hz - width_hz / 2}, {center_hz + width_hz / 2}] outside (0, {nyquist})"
        )
    sos = _notch_sos(center_hz, width_hz, buf.sample_rate)
    return AudioBuffer(sosfilt(sos, buf.samples), buf.sample_rate)


def band_pass(buf: AudioBuffer, low_hz: float, high_hz: float) -> AudioBuffer:
    """Sharp band-pass; low_hz = 0 degenerates to a low-pass.

    Chebyshev type II (8th order, 60 dB stopband) with the stopband edges
    placed exactly at the band boundaries, so the transition bands lie
    inside the passband and everything outside [low, high] sits at least
    60 dB down.  [0, Nyquist] is the identity.
    """
    nyquist = buf.sample_rate / 2.0
    if not 0.0 <= low_hz < high_hz <= nyquist:
        raise ValueError(f"invalid band [{low_hz}, {high_hz}] for Nyquist {nyquist}")
    if low_hz <= 0.0 and high_hz >= nyquist:
        return buf
    if low_hz <= 0.0:
        sos = cheby2(8, 60, high_hz, btype="lowpass", fs=buf.sample_rate, output="sos")
    elif high_hz >= nyquist:
        sos = cheby2(8, 60, low_hz, btype="highpass", fs=buf.sample_rate, output="sos")
    else:
        sos = cheby2(8, 60, [low_hz, high_hz], btype="bandpass", fs=buf.sample_rate, output="sos")
    return AudioBuffer(sosfilt(sos, buf.samples), buf.sample_rate)


def time_drop(buf: AudioBuffer, start: int, duration_ms: float = DEFAULT_TDROP_MS) -> AudioBuffer:
    """Zero out one window of ``duration_ms`` starting at sample ``start``."""
    window = int(round(duration_ms * buf.sample_rate / 1000.0))
    if start < 0 or start + window > len(buf):
        raise ValueError(
            f"drop window [{start}, {start + window}) outside buffer of {len(buf)} samples"
        )
    if window == 0:
        return buf
    out = buf.samples.copy()
    out[start : start + window] = 0.0
    return AudioBuffer(out, buf.sample_rate)


def add_noise(buf: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """Mix ``noise`` into ``buf`` at the given signal-to-noise ratio.

    The noise is looped or cropped to the signal length, then scaled so that
    rms_db(signal) - rms_db(scaled noise) = snr_db.  No clipping is applied.
    """
    if noise.sample_rate != buf.sample_rate:
        raise ChainError(
            f"noise rate {noise.sample_rate} != signal rate {buf.sample_rate}"
        )
    if len(noise) == 0:
        raise ChainError("empty noise segment")
    if math.isinf(snr_db) and snr_db > 0:
        return buf
    n = len(buf)
    if len(noise) >= n:
        fit = noise.samples[:n]
    else:
        reps = -(-n // len(noise))
        fit = np.tile(noise.samples, reps)[:n]
    noise_db = rms_db(AudioBuffer(fit, buf.sample_rate))
    if noise_db == float("-inf"):
        raise ChainError("silent noise segment")
    signal_db = rms_db(buf)
    if signal_db == float("-inf"):
        return buf
    gain = 10.0 ** ((signal_db - snr_db - noise_db) / 20.0)
    return AudioBuffer(buf.samples + gain * fit, buf.sample_rate)


def apply_chain(buf: AudioBuffer, chain: ConcreteChain) -> AudioBuffer:
    """Apply a sampled chain in canonical order; output length equals input."""
    n = len(buf)
    out = buf
    for p in chain.params:
        if isinstance(p, PitchParams):
            out = pitch_shift(out, p.cents)
        elif isinstance(p, AddNoiseParams):
            noise = p.bank.materialize(p.segment, p.offset, len(out))
            out = add_noise(out, noise, p.snr_db)
        elif isinstance(p, ReverbParams):
            out = reverb(out, p.room_scale)
        elif isinstance(p, BandRejectParams):
            out = band_reject(out, p.center_hz, p.width_hz)
        elif isinstance(p, TimeDropParams):
            out = time_drop(out, p.start, p.duration_ms)
        else:
            raise ChainError(f"unknown chain parameter {type(p).__name__}")
    if len(out) != n:
        samples = out.samples[:n]
        if len(samples) < n:
            samples = np.concatenate([samples, np.zeros(n - len(samples))])
        out = AudioBuffer(samples, out.sample_rate)
    return out


# ---------------------------------------------------------------------------
# JSON wire format
#
# {"chain": [{"effect": "pitch", "range": [-300, 300]},
#            {"effect": "add", "bank": "noise/", "band": [80, 240], "snr": [5, 15]},
#            {"effect": "reverb", "range": [0, 100]},
#            {"effect": "bandrej", "max_width": 150},
#            {"effect": "tdrop", "duration_ms": 50}]}


def _pair(doc, key, default):
    value = doc.get(key, list(default))
    if value is None:
        return None
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ChainError(f"{key} must be a two-element interval, got {value!r}")
    return value


def chain_spec_from_json(doc: dict) -> EffectChainSpec:
    """Parse the chain JSON document; noise banks stay unresolved paths."""
    if not isinstance(doc, dict) or "chain" not in doc:
        raise ChainError('chain document must be an object with a "chain" list')
    entries = doc["chain"]
    if not isinstance(entries, list):
        raise ChainError('"chain" must be a list')
    effects = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "effect" not in entry:
            raise ChainError(f'chain[{i}] must be an object with an "effect" name')
        name = entry["effect"]
        if name == "pitch":
            lo, hi = _pair(entry, "range", DEFAULT_PITCH_RANGE)
            effects.append(PitchSpec(int(lo), int(hi)))
        elif name == "add":
            band = _pair(entry, "band", DEFAULT_NOISE_BAND)
            snr_lo, snr_hi = _pair(entry, "snr", DEFAULT_SNR_RANGE)
            effects.append(
                AddNoiseSpec(
                    bank=None,
                    bank_path=entry.get("bank"),
                    band=None if band is None else (float(band[0]), float(band[1])),
                    snr_low_db=float(snr_lo),
                    snr_high_db=float(snr_hi),
                )
            )
        elif name == "reverb":
            lo, hi = _pair(entry, "range", DEFAULT_ROOM_RANGE)
            effects.append(ReverbSpec(float(lo), float(hi)))
        elif name == "bandrej":
            effects.append(BandRejectSpec(float(entry.get("max_width", DEFAULT_BANDREJ_MAX_WIDTH))))
        elif name == "tdrop":
            effects.append(TimeDropSpec(float(entry.get("duration_ms", DEFAULT_TDROP_MS))))
        else:
            raise ChainError(f"chain[{i}]: unknown effect {name!r}")
    return EffectChainSpec(tuple(effects))


def chain_spec_to_json(spec: EffectChainSpec) -> dict:
    entries = []
    for eff in spec.effects:
        if isinstance(eff, PitchSpec):
            entries.append({"effect": "pitch", "range": [eff.low_cents, eff.high_cents]})
        elif isinstance(eff, AddNoiseSpec):
            entry = {
                "effect": "add",
                "band": None if eff.band is None else list(eff.band),
                "snr": [eff.snr_low_db, eff.snr_high_db],
            }
            if eff.bank_path is not None:
                entry["bank"] = eff.bank_path
            entries.append(entry)
        elif isinstance(eff, ReverbSpec):
            entries.append({"effect": "reverb", "range": [eff.low_room, eff.high_room]})
        elif isinstance(eff, BandRejectSpec):
            entries.append({"effect": "bandrej", "max_width": eff.max_width_hz})
        elif isinstance(eff, TimeDropSpec):
            entries.append({"effect": "tdrop", "duration_ms": eff.duration_ms})
    return {"chain": entries}


def preset_chain_doc(names: str, bank_path: Optional[str] = None) -> dict:
    """Build a chain document from a '+'-joined effect list like 'pitch+add+reverb'."""
    entries = []
    for name in names.split("+"):
        name = name.strip()
        if name not in CANONICAL_ORDER:
            raise ChainError(f"unknown effect {name!r} in preset {names!r}")
        entry: dict = {"effect": name}
        if name == "add" and bank_path is not None:
            entry["bank"] = bank_path
        entries.append(entry)
    return {"chain": entries}


def attach_bank(spec: EffectChainSpec, bank) -> EffectChainSpec:
    """Return a copy of ``spec`` with every add-noise entry bound to ``bank``."""
    effects = tuple(
        replace(eff, bank=bank) if isinstance(eff, AddNoiseSpec) else eff
        for eff in spec.effects
    )
    return EffectChainSpec(effects)
