"""melforge: conditional diffusion enhancement of log-Mel spectrograms.

Paired training data is built by degrading clean speech (reverb, noise,
clipping, band limiting); a variance-preserving diffusion model is trained
to estimate the conditional score given the degraded mel and an average-Mel
text condition; enhancement samples the probability-flow ODE with an
exponential integrator.
"""

__version__ = "0.1.0"

from .diffusion import (
    DiffusionBatch,
    NoiseSchedule,
    forward_sample,
    gaussian_oracle,
    reverse_ode_rhs,
    sample,
    score_matching_loss,
    score_target,
)
from .dsp import (
    AudioBuffer,
    MelFilterbank,
    MelSpectrogram,
    NormalizationStats,
    Spectrogram,
    compute_norm_stats,
    denormalize,
    istft,
    log_mel,
    mel_filterbank,
    normalize,
    read_wav,
    resample,
    stft,
    write_wav,
)

__all__ = [
    "AudioBuffer",
    "DiffusionBatch",
    "MelFilterbank",
    "MelSpectrogram",
    "NoiseSchedule",
    "NormalizationStats",
    "Spectrogram",
    "compute_norm_stats",
    "denormalize",
    "forward_sample",
    "gaussian_oracle",
    "istft",
    "log_mel",
    "mel_filterbank",
    "normalize",
    "read_wav",
    "resample",
    "reverse_ode_rhs",
    "sample",
    "score_matching_loss",
    "score_target",
    "stft",
    "write_wav",
]
