"""Average-Mel text conditioning from time-aligned phone sequences.

Alignments arrive as UTF-8 TSV files, one "phone<TAB>start_s<TAB>end_s" row
per interval. A phone-to-mean-Mel dictionary is accumulated over a corpus of
normalized clean mels, and per-utterance conditions are expanded by looking
up each frame's covering phone; uncovered frames and unseen phones fall back
to the dictionary's global mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import MelSpectrogram
from .errors import ConfigError, FormatError

@dataclass
class PhoneInterval:
    phone: str
    start: float
    end: float


@dataclass
class Alignment:
    utt_id: str
    intervals: list[PhoneInterval]
    duration: float


@dataclass
class PhoneMelDict:
    """phone -> (mean mel vector, frame count), plus the global mean."""

    phones: dict[str, tuple[np.ndarray, int]]
    global_mean: np.ndarray
    n_mels: int


def parse_alignment(path: str | Path, utt_id: str | None = None) -> Alignment:
    """Parse and validate a TSV alignment; errors carry 1-based line numbers."""
    path = Path(path)
    intervals: list[PhoneInterval] = []
    lines = path.read_text(encoding="utf-8").splitlines()
    prev_end = 0.0
    n_rows = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        phone = parts[0]
        try:
            start, end = float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: unparseable time: {exc}") from exc
        if start < 0.0 or not (start < end):
            raise FormatError(f"{path}:{lineno}: need 0 <= start < end, got [{start}, {end})")
        if n_rows and start < prev_end - 1e-9:
            raise FormatError(
                f"{path}:{lineno}: interval [{start}, {end}) overlaps previous end {prev_end}"
            )
        intervals.append(PhoneInterval(phone, start, end))
        prev_end = end
        n_rows += 1
    if not intervals:
        raise FormatError(f"{path}: alignment file has no intervals")
    return Alignment(utt_id or path.stem, intervals, intervals[-1].end)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def interval_to_frames(
    interval: PhoneInterval, hop_seconds: float, n_frames: int
) -> tuple[int, int]:
    """Half-open frame range [first, last) covering the interval.

    Boundaries are round-half-up of time/hop, clamped to [0, n_frames];
    sub-hop intervals may produce empty ranges.
    """
    if hop_seconds <= 0:
        raise ConfigError(f"hop_seconds must be positive, got {hop_seconds}")
    first = min(max(_round_half_up(interval.start / hop_seconds), 0), n_frames)
    last = min(max(_round_half_up(interval.end / hop_seconds), 0), n_frames)
    return first, max(last, first)


def build_dict(corpus) -> PhoneMelDict:
    """Per-phone mean over all assigned frames of (mel, alignment) pairs.

    Accumulation follows corpus iteration order with float64 sums, so
    rebuilding from the same corpus is bit-stable. The global mean is the
    count-weighted mean of all entries.
    """
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    n_mels = None
    total_sum = None
    total_count = 0
    for mel, alignment in corpus:
        if n_mels is None:
            n_mels = mel.n_mels
            total_sum = np.zeros(n_mels)
        elif mel.n_mels != n_mels:
            raise ConfigError(f"mixed n_mels in corpus: {mel.n_mels} != {n_mels}")
        for interval in alignment.intervals:
            first, last = interval_to_frames(
                interval, mel.frame_hop_seconds, mel.n_frames
            )
            if last <= first:
                continue
            seg = mel.values[:, first:last]
            key = interval.phone
            if key not in sums:
                sums[key] = np.zeros(n_mels)
                counts[key] = 0
            sums[key] += seg.sum(axis=1)
            counts[key] += last - first
            total_sum += seg.sum(axis=1)
            total_count += last - first
    if n_mels is None:
        raise ConfigError("cannot build a phone dictionary from an empty corpus")
    if total_count == 0:
        raise ConfigError("no assignable frames in corpus (all intervals empty)")
    phones = {k: (sums[k] / counts[k], counts[k]) for k in sums}
    return PhoneMelDict(phones, total_sum / total_count, n_mels)


def expand_mu(
    alignment: Alignment,
    phone_dict: PhoneMelDict,
    n_frames: int,
    hop_seconds: float,
) -> MelSpectrogram:
    """Frame-level condition: covering phone's mean vector, else global mean."""
    values = np.tile(phone_dict.global_mean[:, None], (1, n_frames))
    for interval in alignment.intervals:
        entry = phone_dict.phones.get(interval.phone)
        if entry is None:
            continue
        first, last = interval_to_frames(interval, hop_seconds, n_frames)
        if last > first:
            values[:, first:last] = entry[0][:, None]
    return MelSpectrogram(values, hop_seconds)


def save_phone_dict(path: str | Path, phone_dict: PhoneMelDict) -> None:
    obj = {
        "phones": {
            k: {"mean": v[0].tolist(), "count": v[1]}
            for k, v in sorted(phone_dict.phones.items())
        },
        "global_mean": phone_dict.global_mean.tolist(),
        "n_mels": phone_dict.n_mels,
    }
    Path(path).write_text(json.dumps(obj))


def load_phone_dict(path: str | Path) -> PhoneMelDict:
    try:
        obj = json.loads(Path(path).read_text())
        phones = {
            k: (np.asarray(v["mean"], dtype=np.float64), int(v["count"]))
            for k, v in obj["phones"].items()
        }
        return PhoneMelDict(
            phones, np.asarray(obj["global_mean"], dtype=np.float64), int(obj["n_mels"])
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid phone dictionary: {exc}") from exc
