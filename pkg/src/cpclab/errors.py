"""Exception hierarchy shared across the package."""


class CpclabError(Exception):
    """Base class for all data and processing errors raised by cpclab."""


class WavError(CpclabError):
    """Malformed or unreadable WAV container."""


class UnsupportedWavError(WavError):
    """WAV codec or sample layout outside PCM int16 / float32."""


class TruncatedWavError(WavError):
    """Data chunk shorter than its declared size."""


class ChainError(CpclabError):
    """Invalid effect chain specification or parameters."""


class BankError(CpclabError):
    """Noise bank construction or draw failure."""


class ItemFileError(CpclabError):
    """Malformed ABX item file."""


class AbxError(CpclabError):
    """ABX scoring failure (missing features, no valid triples)."""


class ModelError(CpclabError):
    """Invalid model configuration or input."""


class TrainingDivergedError(CpclabError):
    """Loss became non-finite during optimization."""


class CheckpointError(CpclabError):
    """Corrupt or incompatible checkpoint file."""
