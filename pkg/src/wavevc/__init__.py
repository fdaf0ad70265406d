"""Voice conversion with a PPG + f0 conditioned WaveNet that emits waveform samples directly."""

from .codec import MuLawConfig, mulaw_decode, mulaw_encode
from .features import ConditioningTrack, F0Stats, transform_f0, upsample_conditioning
from .fileio import DataError, Waveform, read_wav, write_wav
from .generator import generate_fast, generate_naive
from .wavenet import ModelConfig, init_params, load_checkpoint, receptive_field, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ConditioningTrack",
    "DataError",
    "F0Stats",
    "ModelConfig",
    "MuLawConfig",
    "Waveform",
    "generate_fast",
    "generate_naive",
    "init_params",
    "load_checkpoint",
    "mulaw_decode",
    "mulaw_encode",
    "read_wav",
    "receptive_field",
    "save_checkpoint",
    "transform_f0",
    "upsample_conditioning",
    "write_wav",
]
