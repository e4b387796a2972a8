"""Per-utterance enhancement: normalize, sample the reverse ODE, denormalize.

Each utterance gets its own Philox stream keyed on (seed, utt_id), so the
initial noise draw, and therefore the output, is reproducible and independent
of processing order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ManifestEntry
from .degrade import _rng_for
from .diffusion import NoiseSchedule, sample
from .dsp import MelSpectrogram, NormalizationStats, denormalize, load_mel, normalize, save_mel
from .errors import DataError
from .model import ScoreNet, as_score_function
from .textcond import PhoneMelDict, expand_mu, parse_alignment

log = logging.getLogger(__name__)


@dataclass
class EnhanceReport:
    n_steps: int
    solver: str
    seed: int
    text_conditioning: bool
    enhanced: list[str] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)


def enhance_utterance(
    model: ScoreNet,
    sched: NoiseSchedule,
    degraded_mel: MelSpectrogram,
    stats: NormalizationStats,
    mu: MelSpectrogram | None,
    n_steps: int,
    solver: str,
    rng: np.random.Generator,
) -> MelSpectrogram:
    y = normalize(degraded_mel, stats).values
    mu_values = np.zeros_like(y) if mu is None else mu.values
    score_fn = as_score_function(model)
    x0 = sample(sched, score_fn, y, mu_values, n_steps=n_steps, solver=solver, rng=rng)
    return denormalize(
        MelSpectrogram(x0, degraded_mel.frame_hop_seconds), stats
    )


def enhance_corpus(
    model: ScoreNet,
    sched: NoiseSchedule,
    entries: list[ManifestEntry],
    stats: NormalizationStats,
    out_dir: str | Path,
    seed: int,
    n_steps: int = 25,
    solver: str = "expint2",
    phone_dict: PhoneMelDict | None = None,
) -> tuple[list[ManifestEntry], EnhanceReport]:
    """Enhance every entry's degraded mel; per-utterance errors are reported,
    not fatal. Returns updated entries and a report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = EnhanceReport(
        n_steps=n_steps, solver=solver, seed=seed, text_conditioning=phone_dict is not None
    )
    updated = []
    for entry in entries:
        try:
            if entry.degraded_mel is None:
                raise DataError(f"{entry.utt_id}: no degraded mel cache")
            degraded = load_mel(entry.degraded_mel)
            mu = None
            if phone_dict is not None:
                if entry.alignment is None:
                    raise DataError(
                        f"{entry.utt_id}: text conditioning enabled but no alignment file"
                    )
                alignment = parse_alignment(entry.alignment, entry.utt_id)
                mu = expand_mu(
                    alignment, phone_dict, degraded.n_frames, degraded.frame_hop_seconds
                )
            enhanced = enhance_utterance(
                model, sched, degraded, stats, mu, n_steps, solver,
                _rng_for(seed, entry.utt_id),
            )
            path = out_dir / f"{entry.utt_id}.enhanced.mel"
            save_mel(path, enhanced)
            new_entry = ManifestEntry(**{**entry.__dict__, "enhanced_mel": str(path)})
            updated.append(new_entry)
            report.enhanced.append(entry.utt_id)
        except DataError as exc:
            log.warning("enhance failed for %s: %s", entry.utt_id, exc)
            report.errors[entry.utt_id] = str(exc)
            updated.append(entry)
    return updated, report
