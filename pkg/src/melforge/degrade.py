"""Seeded simulation of audio degradation for paired training data.

Four stages applied independently in a fixed order: reverberation, additive
noise, magnitude clipping, band limiting. Every random draw comes from a
counter-based (Philox) generator keyed on (seed, utterance id), so corpus
builds are reproducible and parallelizable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import cheby2, fftconvolve, sosfiltfilt

from .dsp import AudioBuffer, read_wav, resample
from .errors import ConfigError

STAGE_ORDER = ("reverb", "noise", "clip", "bandlimit")


@dataclass
class DegradationSpec:
    """Parameter ranges and per-stage firing probabilities."""

    snr_db_range: tuple[float, float] = (0.0, 30.0)
    clip_quantile_range: tuple[float, float] = (0.6, 0.98)
    cutoff_hz_range: tuple[float, float] = (2000.0, 8000.0)
    stage_probabilities: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)

    def __post_init__(self) -> None:
        for name in ("snr_db_range", "clip_quantile_range", "cutoff_hz_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: lo {lo} > hi {hi}")
        lo, hi = self.clip_quantile_range
        if not (0.0 < lo and hi <= 1.0):
            raise ConfigError(f"clip_quantile_range must lie in (0, 1], got ({lo}, {hi})")
        if len(self.stage_probabilities) != 4:
            raise ConfigError("stage_probabilities needs exactly 4 values")
        for p in self.stage_probabilities:
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"stage probability {p} outside [0, 1]")


@dataclass
class DegradationSample:
    """Provenance record: the seed and every concrete stage decision."""

    seed: int
    utt_id: str
    stages: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "utt_id": self.utt_id, "stages": self.stages},
            sort_keys=True,
        )


class WavBank:
    """WAV files from a directory, sorted by filename, resampled on load."""

    kind = "wav"

    def __init__(self, entries: list[tuple[str, AudioBuffer]]):
        self.entries = entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_dir(cls, directory: str | Path, sample_rate: int) -> "WavBank":
        paths = sorted(Path(directory).glob("*.wav"))
        entries = []
        for p in paths:
            buf = resample(read_wav(p), sample_rate)
            entries.append((p.stem, buf))
        return cls(entries)


class NoiseBank(WavBank):
    kind = "noise"


class RirBank(WavBank):
    kind = "rir"

    @classmethod
    def from_dir(cls, directory: str | Path, sample_rate: int) -> "RirBank":
        bank = super().from_dir(directory, sample_rate)
        for name, buf in bank.entries:
            if float(np.sum(buf.samples**2)) <= 0.0:
                raise ConfigError(f"RIR {name!r} has zero energy")
        return bank


def apply_reverb(audio: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Convolve with a RIR, truncate to input length, rescale to input peak.

    The RIR is time-aligned so its maximum-magnitude tap sits at lag 0; the
    peak rescaling decouples reverberation from loudness change.
    """
    kernel = rir.samples
    if kernel.size == 0 or not np.any(kernel):
        raise ConfigError("RIR is empty or all-zero")
    kernel = kernel[int(np.argmax(np.abs(kernel))):]
    if kernel.size == 1:
        out = audio.samples.copy()  # scaled identity; peak rescale is exact
    else:
        conv = (
            np.convolve(audio.samples, kernel)
            if kernel.size <= 64
            else fftconvolve(audio.samples, kernel)
        )
        out = conv[: len(audio)]
        peak_in = float(np.abs(audio.samples).max())
        peak_out = float(np.abs(out).max())
        if peak_out > 0.0:
            out = out * (peak_in / peak_out)
    return AudioBuffer(out, audio.sample_rate)


def mix_noise(audio: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """Add noise scaled so 10*log10(P_signal / P_noise_scaled) = snr_db."""
    sig = audio.samples
    p_sig = float(np.mean(sig**2))
    if p_sig <= 0.0:
        raise ConfigError("cannot mix noise into silent audio (SNR undefined)")
    n = noise.samples
    if n.size == 0:
        raise ConfigError("noise clip is empty")
    if n.size < sig.size:
        n = np.tile(n, int(np.ceil(sig.size / n.size)))
    n = n[: sig.size]
    p_noise = float(np.mean(n**2))
    if p_noise <= 0.0:
        raise ConfigError("cannot mix silent noise (SNR undefined)")
    scale = np.sqrt(p_sig / p_noise) * 10.0 ** (-snr_db / 20.0)
    return AudioBuffer(sig + scale * n, audio.sample_rate)


def clip(audio: AudioBuffer, threshold: float) -> AudioBuffer:
    """Hard-limit samples to [-threshold, threshold]."""
    if threshold <= 0.0:
        raise ConfigError(f"clip threshold must be positive, got {threshold}")
    return AudioBuffer(np.clip(audio.samples, -threshold, threshold), audio.sample_rate)


def band_limit(audio: AudioBuffer, cutoff_hz: float) -> AudioBuffer:
    """Zero-phase low-pass: 8th-order Chebyshev-II applied forward-backward.

    Stopband edge at 1.25 * cutoff (clamped below Nyquist) with 25 dB per
    pass, giving > 40 dB total above 1.25 * cutoff and a flat passband.
    """
    nyq = audio.sample_rate / 2.0
    if not (0.0 < cutoff_hz < nyq):
        raise ConfigError(f"cutoff {cutoff_hz} Hz outside (0, {nyq}) Hz")
    ws = min(1.25 * cutoff_hz, 0.99 * nyq)
    sos = cheby2(8, 25.0, ws, btype="lowpass", fs=audio.sample_rate, output="sos")
    out = sosfiltfilt(sos, audio.samples)
    return AudioBuffer(out, audio.sample_rate)


def _rng_for(seed: int, utt_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}\x1f{utt_id}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def degrade(
    audio: AudioBuffer,
    spec: DegradationSpec,
    seed: int,
    utt_id: str = "",
    noise_bank: NoiseBank | None = None,
    rir_bank: RirBank | None = None,
) -> tuple[AudioBuffer, DegradationSample]:
    """Apply the four stages in fixed order, each firing with its probability.

    Returns the degraded audio and a provenance record that, together with
    the same spec and banks, reproduces the output bit-exactly.
    """
    rng = _rng_for(seed, utt_id)
    record = DegradationSample(seed=seed, utt_id=utt_id)
    out = audio

    p_reverb, p_noise, p_clip, p_band = spec.stage_probabilities

    if rng.random() < p_reverb:
        if rir_bank is None or len(rir_bank) == 0:
            raise ConfigError("reverb stage fired but no RIR bank is available")
        idx = int(rng.integers(len(rir_bank)))
        rir_id, rir = rir_bank.entries[idx]
        out = apply_reverb(out, rir)
        record.stages.append({"stage": "reverb", "rir_id": rir_id})

    if rng.random() < p_noise:
        if noise_bank is None or len(noise_bank) == 0:
            raise ConfigError("noise stage fired but no noise bank is available")
        idx = int(rng.integers(len(noise_bank)))
        noise_id, noise = noise_bank.entries[idx]
        snr_db = float(rng.uniform(*spec.snr_db_range))
        out = mix_noise(out, noise, snr_db)
        record.stages.append({"stage": "noise", "noise_id": noise_id, "snr_db": snr_db})

    if rng.random() < p_clip:
        q = float(rng.uniform(*spec.clip_quantile_range))
        threshold = float(np.quantile(np.abs(out.samples), q))
        if threshold > 0.0:
            out = clip(out, threshold)
            record.stages.append({"stage": "clip", "quantile": q, "threshold": threshold})

    if rng.random() < p_band:
        cutoff = float(rng.uniform(*spec.cutoff_hz_range))
        out = band_limit(out, cutoff)
        record.stages.append({"stage": "bandlimit", "cutoff_hz": cutoff})

    return out, record
