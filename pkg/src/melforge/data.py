"""Corpus manifests, paired-sample construction, caching, and batching.

Manifests are JSON-lines, one utterance per line. Mel caches use the binary
format from the dsp module; degradation provenance is one JSON object per
utterance. All sampling is seeded and reproducible.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import FeatureConfig
from .degrade import DegradationSpec, NoiseBank, RirBank, degrade
from .dsp import (
    MelSpectrogram,
    NormalizationStats,
    extract_log_mel,
    load_mel,
    mel_filterbank,
    normalize,
    read_wav,
    resample,
    save_mel,
    write_wav,
)
from .errors import ConfigError, DataError
from .textcond import Alignment, PhoneMelDict, expand_mu, parse_alignment

log = logging.getLogger(__name__)


@dataclass
class ManifestEntry:
    utt_id: str
    clean_wav: str
    degraded_wav: str | None = None
    alignment: str | None = None
    clean_mel: str | None = None
    degraded_mel: str | None = None
    enhanced_mel: str | None = None
    provenance: str | None = None

    def to_json(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(payload, sort_keys=True)


@dataclass
class SegmentBatch:
    """Fixed-length aligned segments: arrays of shape (B, n_mels, L)."""

    x0: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    utt_ids: list[str]
    offsets: list[int]


@dataclass
class SplitSpec:
    validation_ids: list[str] | None = None
    validation_fraction: float = 0.0
    seed: int = 0


def save_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    Path(path).write_text("".join(e.to_json() + "\n" for e in entries))


def load_manifest(path: str | Path, check_files: bool = True) -> list[ManifestEntry]:
    entries = []
    seen = set()
    base = Path(path).parent
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = ManifestEntry(**json.loads(line))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: bad manifest entry: {exc}") from exc
        if entry.utt_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate utt_id {entry.utt_id!r}")
        seen.add(entry.utt_id)
        entries.append(entry)
    if check_files:
        for entry in entries:
            for name in ("clean_wav", "degraded_wav", "alignment", "clean_mel",
                         "degraded_mel", "enhanced_mel", "provenance"):
                value = getattr(entry, name)
                if value is not None and not (base / value).exists() and not Path(value).exists():
                    raise DataError(f"{path}: {entry.utt_id}: missing {name} file {value}")
    return entries


def resolve_path(manifest_path: str | Path, value: str) -> Path:
    """Manifest-relative paths win over cwd-relative ones."""
    candidate = Path(manifest_path).parent / value
    return candidate if candidate.exists() or not Path(value).exists() else Path(value)


def split(entries: list[ManifestEntry], spec: SplitSpec) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Deterministic train/validation partition; explicit ids win over fraction."""
    if spec.validation_ids is not None:
        wanted = set(spec.validation_ids)
        missing = wanted - {e.utt_id for e in entries}
        if missing:
            raise ConfigError(f"validation ids not in manifest: {sorted(missing)}")
        val = [e for e in entries if e.utt_id in wanted]
        train = [e for e in entries if e.utt_id not in wanted]
        return train, val
    if not (0.0 <= spec.validation_fraction < 1.0):
        raise ConfigError(f"validation_fraction must be in [0, 1), got {spec.validation_fraction}")
    n_val = int(round(len(entries) * spec.validation_fraction))
    if n_val == 0:
        return list(entries), []
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(entries))
    val_idx = set(order[:n_val].tolist())
    train = [e for i, e in enumerate(entries) if i not in val_idx]
    val = [e for i, e in enumerate(entries) if i in val_idx]
    return train, val


def build_pairs(
    entries: list[ManifestEntry],
    spec: DegradationSpec,
    seed: int,
    features: FeatureConfig,
    out_dir: str | Path,
    manifest_dir: str | Path,
    noise_bank: NoiseBank | None = None,
    rir_bank: RirBank | None = None,
    jobs: int = 1,
) -> list[ManifestEntry]:
    """Degrade each utterance and cache clean/degraded mels on a shared grid.

    Per-utterance failures are logged and skipped; more than 10% failures
    aborts the build. Deterministic given (spec, seed, banks).
    """
    out_dir = Path(out_dir)
    manifest_dir = Path(manifest_dir)
    for sub in ("degraded", "mels", "provenance"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    fb = mel_filterbank(features.n_fft, features.sample_rate, features.n_mels,
                        features.fmin, features.fmax)

    def process(entry: ManifestEntry) -> ManifestEntry:
        wav_path = resolve_path(manifest_dir / "m", entry.clean_wav)
        clean = resample(read_wav(wav_path), features.sample_rate)
        degraded, record = degrade(
            clean, spec, seed, entry.utt_id, noise_bank=noise_bank, rir_bank=rir_bank
        )
        n = min(len(clean), len(degraded))
        clean.samples, degraded.samples = clean.samples[:n], degraded.samples[:n]

        degraded_wav = out_dir / "degraded" / f"{entry.utt_id}.wav"
        write_wav(degraded_wav, degraded, encoding="float32")
        clean_mel = extract_log_mel(clean, features.n_fft, features.hop, fb, features.log_floor)
        degraded_mel = extract_log_mel(degraded, features.n_fft, features.hop, fb, features.log_floor)
        clean_mel_path = out_dir / "mels" / f"{entry.utt_id}.clean.mel"
        degraded_mel_path = out_dir / "mels" / f"{entry.utt_id}.degraded.mel"
        save_mel(clean_mel_path, clean_mel)
        save_mel(degraded_mel_path, degraded_mel)
        prov_path = out_dir / "provenance" / f"{entry.utt_id}.json"
        prov_path.write_text(record.to_json())
        return ManifestEntry(
            utt_id=entry.utt_id,
            clean_wav=str(wav_path),
            degraded_wav=str(degraded_wav),
            alignment=str(resolve_path(manifest_dir / "m", entry.alignment)) if entry.alignment else None,
            clean_mel=str(clean_mel_path),
            degraded_mel=str(degraded_mel_path),
            provenance=str(prov_path),
        )

    results: list[ManifestEntry | None] = [None] * len(entries)
    failures = []

    def run(i_entry):
        i, entry = i_entry
        try:
            results[i] = process(entry)
        except Exception as exc:  # noqa: BLE001 - per-utterance isolation
            failures.append((entry.utt_id, exc))
            log.warning("skipping %s: %s", entry.utt_id, exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run, enumerate(entries)))
    else:
        for item in enumerate(entries):
            run(item)

    if failures and len(failures) > 0.1 * len(entries):
        raise DataError(
            f"{len(failures)}/{len(entries)} utterances failed degradation; "
            f"first: {failures[0][0]}: {failures[0][1]}"
        )
    return [r for r in results if r is not None]


# Mel caches and alignments are immutable once written; memoize the hot
# per-batch reads (callers never mutate the returned arrays in place).
_cached_mel = lru_cache(maxsize=512)(load_mel)
_cached_alignment = lru_cache(maxsize=512)(parse_alignment)


def load_mel_pair(entry: ManifestEntry) -> tuple[MelSpectrogram, MelSpectrogram]:
    if entry.clean_mel is None or entry.degraded_mel is None:
        raise DataError(f"{entry.utt_id}: mel caches not built yet")
    clean = _cached_mel(entry.clean_mel)
    degraded = _cached_mel(entry.degraded_mel)
    if clean.values.shape != degraded.values.shape:
        raise DataError(
            f"{entry.utt_id}: clean/degraded mel shapes differ: "
            f"{clean.values.shape} vs {degraded.values.shape}"
        )
    return clean, degraded


def _pad_to_length(values: np.ndarray, length: int) -> np.ndarray:
    """Right-pad with the stream's own final frame repeated."""
    t = values.shape[1]
    if t >= length:
        return values[:, :length]
    pad = np.tile(values[:, -1:], (1, length - t))
    return np.concatenate([values, pad], axis=1)


def load_batch(
    entries: list[ManifestEntry],
    batch_size: int,
    segment_frames: int,
    rng: np.random.Generator,
    stats: NormalizationStats,
    phone_dict: PhoneMelDict | None = None,
    hop_seconds: float | None = None,
) -> SegmentBatch:
    """Uniformly sample utterances and frame offsets into aligned segments.

    x0/y are normalized clean/degraded mels; mu is the expanded condition
    (zeros when phone_dict is None). All three streams share offsets, and
    short utterances are right-padded with their own edge frames.
    """
    if not entries:
        raise ConfigError("cannot sample a batch from an empty split")
    x0s, ys, mus, ids, offsets = [], [], [], [], []
    for _ in range(batch_size):
        entry = entries[int(rng.integers(len(entries)))]
        clean, degraded = load_mel_pair(entry)
        t = clean.n_frames
        offset = int(rng.integers(max(t - segment_frames, 0) + 1))
        x0 = normalize(clean, stats).values[:, offset : offset + segment_frames]
        y = normalize(degraded, stats).values[:, offset : offset + segment_frames]
        if phone_dict is not None:
            if entry.alignment is None:
                raise DataError(f"{entry.utt_id}: text conditioning needs an alignment file")
            alignment = _cached_alignment(entry.alignment, entry.utt_id)
            mu_full = expand_mu(
                alignment, phone_dict, t, hop_seconds or clean.frame_hop_seconds
            ).values
            mu = mu_full[:, offset : offset + segment_frames]
        else:
            mu = np.zeros_like(x0)
        x0s.append(_pad_to_length(x0, segment_frames))
        ys.append(_pad_to_length(y, segment_frames))
        mus.append(_pad_to_length(mu, segment_frames))
        ids.append(entry.utt_id)
        offsets.append(offset)
    return SegmentBatch(
        np.stack(x0s), np.stack(ys), np.stack(mus), ids, offsets
    )


def iter_alignments(entries: list[ManifestEntry]) -> list[tuple[MelSpectrogram, Alignment]]:
    """(normalized-ready clean mel, alignment) pairs for dictionary building."""
    out = []
    for entry in entries:
        if entry.alignment is None or entry.clean_mel is None:
            continue
        out.append((load_mel(entry.clean_mel), parse_alignment(entry.alignment, entry.utt_id)))
    return out
