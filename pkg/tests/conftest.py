import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cpclab import AudioBuffer


def sine(freq_hz: float, seconds: float = 1.0, rate: int = 16000, amp: float = 0.5) -> AudioBuffer:
    t = np.arange(int(round(seconds * rate))) / rate
    return AudioBuffer(amp * np.sin(2.0 * np.pi * freq_hz * t), rate)


def wav_bytes(
    frames: np.ndarray,
    rate: int = 16000,
    fmt_code: int = 1,
    bits: int = 16,
    declared_data_size: int | None = None,
) -> bytes:
    """Compose raw WAV bytes, including malformed variants, for parser tests.

    ``frames`` is (samples,) or (samples, channels) in [-1, 1].
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[:, None]
    channels = frames.shape[1]
    if fmt_code == 3 and bits == 32:
        payload = frames.astype("<f4").tobytes()
        width = 4
    else:
        payload = np.clip(np.rint(frames * 32768), -32768, 32767).astype("<i2").tobytes()
        width = 2
    block_align = channels * width
    fmt = struct.pack("<HHIIHH", fmt_code, channels, rate, rate * block_align, block_align, bits)
    data_size = len(payload) if declared_data_size is None else declared_data_size
    body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", data_size) + payload
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


@pytest.fixture
def sine440():
    return sine(440.0)
