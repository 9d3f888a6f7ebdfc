"""Waveform container, WAV file I/O, resampling, and level measurement."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._kernels import resample_core
from .errors import TruncatedWavError, UnsupportedWavError, WavError

_CODEC_NAMES = {
    0: "unknown",
    2: "MS ADPCM",
    6: "A-law",
    7: "mu-law",
    17: "IMA ADPCM",
    80: "MPEG",
    85: "MP3",
}

# Interpolation kernel: 64-tap windowed sinc at unit ratio, stretched by the
# decimation factor when downsampling.  Kaiser beta 10 gives ~100 dB stopband
# with the transition band centered on the target Nyquist.
_HALF_TAPS = 32
_KAISER_BETA = 10.0
_TABLE_GRID = 16384


@dataclass(frozen=True)
class AudioBuffer:
    """Immutable mono waveform: normalized float samples plus a sample rate.

    Samples live in nominal full scale [-1, 1] but are not clamped; effects
    may exceed the range internally and quantization happens only when a file
    is written.  The constructor takes ownership of the array and marks it
    read-only.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {arr.shape}")
        if arr.size and not np.isfinite(arr).all():
            raise ValueError("samples contain NaN or Inf")
        rate = int(self.sample_rate)
        if rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {rate}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate


def read_wav(path) -> AudioBuffer:
    """Read a PCM WAV file (int16 or float32) as a mono buffer.

    Multichannel input is downmixed by per-frame channel averaging; int16 is
    scaled to [-1, 1].  Raises FileNotFoundError for a missing file,
    UnsupportedWavError for any other codec, TruncatedWavError when the data
    chunk is shorter than declared.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data_span = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (csize,) = struct.unpack_from("<I", raw, pos + 4)
        body_start = pos + 8
        if cid == b"fmt ":
            if csize < 16 or body_start + 16 > len(raw):
                raise WavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", raw, body_start)
            if fmt[0] == 0xFFFE:  # WAVE_FORMAT_EXTENSIBLE: real code leads the GUID
                if csize >= 40 and body_start + 26 <= len(raw):
                    (sub,) = struct.unpack_from("<H", raw, body_start + 24)
                    fmt = (sub,) + fmt[1:]
                else:
                    raise WavError(f"{path}: malformed extensible fmt chunk")
        elif cid == b"data":
            data_span = (body_start, csize)
        pos = body_start + csize + (csize & 1)

    if fmt is None:
        raise WavError(f"{path}: missing fmt chunk")
    if data_span is None:
        raise WavError(f"{path}: missing data chunk")

    code, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels < 1:
        raise WavError(f"{path}: channel count {channels}")
    if rate <= 0:
        raise WavError(f"{path}: sample rate {rate}")
    if code == 1:
        if bits != 16:
            raise UnsupportedWavError(
                f"{path}: {bits}-bit PCM not supported (16-bit PCM or 32-bit float)"
            )
        dtype, width = np.dtype("<i2"), 2
    elif code == 3:
        if bits != 32:
            raise UnsupportedWavError(f"{path}: {bits}-bit float not supported")
        dtype, width = np.dtype("<f4"), 4
    else:
        name = _CODEC_NAMES.get(code, "unknown")
        raise UnsupportedWavError(f"{path}: unsupported codec {code} ({name})")

    start, size = data_span
    available = len(raw) - start
    if size > available:
        raise TruncatedWavError(
            f"{path}: data chunk declares {size} bytes, file has {available}"
        )
    frame_bytes = width * channels
    if size % frame_bytes:
        raise TruncatedWavError(f"{path}: data chunk ends mid-frame")

    flat = np.frombuffer(raw, dtype=dtype, count=size // width, offset=start)
    frames = flat.reshape(-1, channels).astype(np.float64)
    mono = frames.mean(axis=1) if channels > 1 else frames[:, 0]
    if code == 1:
        mono = mono / 32768.0
    return AudioBuffer(mono, rate)


def write_wav(path, buf: AudioBuffer, format: str = "float32") -> None:
    """Write a mono WAV file as int16 or float32.

    float32 round-trips bit-exactly for float32-representable samples; int16
    clamps to [-1, 1] and quantizes to within one LSB.
    """
    if format == "int16":
        code, bits = 1, 16
        ints = np.clip(np.rint(buf.samples * 32768.0), -32768, 32767)
        payload = ints.astype("<i2").tobytes()
    elif format == "float32":
        code, bits = 3, 32
        payload = buf.samples.astype("<f4").tobytes()
    else:
        raise ValueError(f"format must be 'int16' or 'float32', got {format!r}")

    block_align = bits // 8
    fmt_chunk = struct.pack(
        "<HHIIHH", code, 1, buf.sample_rate, buf.sample_rate * block_align, block_align, bits
    )
    chunks = [(b"fmt ", fmt_chunk)]
    if code == 3:
        chunks.append((b"fact", struct.pack("<I", len(buf))))
    chunks.append((b"data", payload))

    body = bytearray()
    for cid, cbody in chunks:
        body += cid + struct.pack("<I", len(cbody)) + cbody
        if len(cbody) & 1:
            body += b"\x00"
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + bytes(body))


@lru_cache(maxsize=1)
def _kernel_table() -> np.ndarray:
    u = np.linspace(0.0, 1.0, _TABLE_GRID + 1)
    window = np.i0(_KAISER_BETA * np.sqrt(np.clip(1.0 - u * u, 0.0, None)))
    table = np.sinc(_HALF_TAPS * u) * (window / np.i0(_KAISER_BETA))
    table.setflags(write=False)
    return table


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited resampling to ``target_rate`` (windowed sinc, >= 64 taps).

    Output length is round(len * target / source).  Content below 0.45 times
    the smaller of the two rates passes within 0.5 dB; DC is preserved
    exactly.  Equal rates return the input unchanged.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buf.sample_rate:
        return buf
    n = len(buf)
    q, r = divmod(n * target_rate, buf.sample_rate)
    out_len = q + (1 if 2 * r >= buf.sample_rate else 0)
    if n == 0 or out_len == 0:
        return AudioBuffer(np.zeros(out_len), target_rate)
    step = buf.sample_rate / target_rate
    half_width = _HALF_TAPS * max(1.0, step)
    y = resample_core(buf.samples, out_len, step, half_width, _kernel_table())
    return AudioBuffer(y, target_rate)


def stretch_to_length(samples: np.ndarray, out_len: int) -> np.ndarray:
    """Windowed-sinc interpolation of a raw sample vector to a new length.

    Rate-free variant of :func:`resample` used by the pitch shifter, which
    reinterprets the result at the original rate.
    """
    n = samples.shape[0]
    if out_len == n:
        return samples
    if n == 0 or out_len == 0:
        return np.zeros(out_len)
    step = n / out_len
    half_width = _HALF_TAPS * max(1.0, step)
    return resample_core(samples, out_len, step, half_width, _kernel_table())


def rms_db(buf: AudioBuffer) -> float:
    """Level in dB full scale: 20*log10 of the RMS; silence is -inf."""
    if len(buf) == 0:
        raise ValueError("rms_db of an empty buffer")
    mean_square = float(np.mean(np.square(buf.samples)))
    if mean_square == 0.0:
        return float("-inf")
    return 10.0 * math.log10(mean_square)
