"""Mel-domain evaluation: MSE, log-spectral distance, improvement ratio."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ManifestEntry
from .dsp import MelSpectrogram, load_mel
from .errors import DataError


def mel_mse(a: MelSpectrogram, b: MelSpectrogram) -> float:
    """Mean squared difference over all cells of two log-mels."""
    if a.values.shape != b.values.shape:
        raise DataError(f"mel shapes differ: {a.values.shape} vs {b.values.shape}")
    return float(np.mean((a.values - b.values) ** 2))


def log_spectral_distance(a: MelSpectrogram, b: MelSpectrogram) -> float:
    """Mean over frames of sqrt(mean over bands of squared difference)."""
    if a.values.shape != b.values.shape:
        raise DataError(f"mel shapes differ: {a.values.shape} vs {b.values.shape}")
    per_frame = np.sqrt(np.mean((a.values - b.values) ** 2, axis=0))
    return float(np.mean(per_frame))


@dataclass
class UtteranceEval:
    utt_id: str
    mse_enhanced: float
    mse_degraded: float
    lsd_enhanced: float
    ratio: float


@dataclass
class EvalReport:
    """Per-utterance rows plus aggregates.

    MSE and LSD aggregates are means of the per-utterance values. The
    aggregate improvement ratio is the ratio of aggregate MSEs, which stays
    finite when an utterance happens to come through degradation unscathed.
    """

    utterances: list[UtteranceEval] = field(default_factory=list)
    mse_enhanced: float = math.nan
    mse_degraded: float = math.nan
    lsd_enhanced: float = math.nan
    improvement_ratio: float = math.nan

    def to_dict(self) -> dict:
        return {
            "utterances": [u.__dict__ for u in self.utterances],
            "aggregate": {
                "mse_enhanced": self.mse_enhanced,
                "mse_degraded": self.mse_degraded,
                "lsd_enhanced": self.lsd_enhanced,
                "improvement_ratio": self.improvement_ratio,
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _per_utt_ratio(mse_degraded: float, mse_enhanced: float) -> float:
    if mse_enhanced == 0.0:
        return 1.0 if mse_degraded == 0.0 else math.inf
    return mse_degraded / mse_enhanced


def evaluate(entries: list[ManifestEntry]) -> EvalReport:
    """Score enhanced mels against clean references, degraded as baseline."""
    report = EvalReport()
    for entry in entries:
        if entry.enhanced_mel is None:
            continue
        if entry.clean_mel is None or entry.degraded_mel is None:
            raise DataError(f"{entry.utt_id}: need clean and degraded mel caches to evaluate")
        clean = load_mel(entry.clean_mel)
        degraded = load_mel(entry.degraded_mel)
        enhanced = load_mel(entry.enhanced_mel)
        mse_e = mel_mse(enhanced, clean)
        mse_d = mel_mse(degraded, clean)
        report.utterances.append(
            UtteranceEval(
                utt_id=entry.utt_id,
                mse_enhanced=mse_e,
                mse_degraded=mse_d,
                lsd_enhanced=log_spectral_distance(enhanced, clean),
                ratio=_per_utt_ratio(mse_d, mse_e),
            )
        )
    if not report.utterances:
        raise DataError("no utterances with enhanced mels to evaluate")
    report.mse_enhanced = float(np.mean([u.mse_enhanced for u in report.utterances]))
    report.mse_degraded = float(np.mean([u.mse_degraded for u in report.utterances]))
    report.lsd_enhanced = float(np.mean([u.lsd_enhanced for u in report.utterances]))
    report.improvement_ratio = (
        report.mse_degraded / report.mse_enhanced if report.mse_enhanced > 0 else math.inf
    )
    return report
