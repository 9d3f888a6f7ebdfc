"""cpclab: deterministic time-domain speech augmentation, a desk-scale
contrastive predictive coding lab, and an ABX discriminability evaluator."""

__version__ = "0.1.0"

from .audio import AudioBuffer, read_wav, resample, rms_db, write_wav
from .rng import RngStream
from .effects import (
    AddNoiseSpec,
    BandRejectSpec,
    ConcreteChain,
    EffectChainSpec,
    PitchSpec,
    ReverbSpec,
    TimeDropSpec,
    add_noise,
    apply_chain,
    band_pass,
    band_reject,
    chain_spec_from_json,
    chain_spec_to_json,
    pitch_shift,
    reverb,
    sample_chain,
    time_drop,
)
from .bank import BandSpec, NoiseBank, build_bank, load_bank, save_bank
from .views import AugPlacement, ViewPair, make_views
from .model import (
    CpcConfig,
    CpcModel,
    FeatureSequence,
    LossReport,
    build_model,
    cpc_loss,
    extract_features,
    grad_check,
    sample_negatives,
)
from .train import train, train_step
from .checkpoint import load_checkpoint, save_checkpoint
from .abx import (
    AbxReport,
    ItemRecord,
    abx_score,
    dtw_distance,
    frame_angle,
    load_items,
)

__all__ = [
    "AudioBuffer",
    "RngStream",
    "read_wav",
    "write_wav",
    "resample",
    "rms_db",
    "EffectChainSpec",
    "ConcreteChain",
    "PitchSpec",
    "AddNoiseSpec",
    "ReverbSpec",
    "BandRejectSpec",
    "TimeDropSpec",
    "sample_chain",
    "apply_chain",
    "pitch_shift",
    "reverb",
    "band_reject",
    "band_pass",
    "time_drop",
    "add_noise",
    "chain_spec_from_json",
    "chain_spec_to_json",
    "BandSpec",
    "NoiseBank",
    "build_bank",
    "save_bank",
    "load_bank",
    "AugPlacement",
    "ViewPair",
    "make_views",
    "CpcConfig",
    "CpcModel",
    "FeatureSequence",
    "LossReport",
    "build_model",
    "cpc_loss",
    "sample_negatives",
    "extract_features",
    "grad_check",
    "train",
    "train_step",
    "save_checkpoint",
    "load_checkpoint",
    "ItemRecord",
    "AbxReport",
    "load_items",
    "frame_angle",
    "dtw_distance",
    "abx_score",
]
