"""Procedural desk-scale corpus: harmonic-stack "utterances" with alignments.

Each utterance is a random phone sequence rendered as voiced harmonic stacks
(pitch contour plus formant envelope per phone), unvoiced shaped noise, or
near-silence. Phones have distinct spectral envelopes so the average-Mel text
condition carries real information. Also generates small noise and impulse-
response banks for the degradation stages.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ManifestEntry, save_manifest
from .dsp import AudioBuffer, write_wav

# phone -> (formant centers Hz, voiced); bandwidths scale with center
PHONE_TABLE = {
    "aa": ((750.0, 1250.0), True),
    "eh": ((550.0, 1850.0), True),
    "iy": ((300.0, 2350.0), True),
    "ow": ((480.0, 900.0), True),
    "uw": ((330.0, 780.0), True),
    "nn": ((280.0, 1150.0), True),
    "ss": ((5200.0,), False),
    "ff": ((2600.0,), False),
}
SIL = "sil"


@dataclass
class SynthSettings:
    sample_rate: int = 22050
    n_utterances: int = 50
    min_seconds: float = 3.0
    max_seconds: float = 5.0
    peak: float = 0.5


def _formant_envelope(freqs: np.ndarray, formants: tuple[float, ...]) -> np.ndarray:
    env = np.full_like(freqs, 0.01)
    for center in formants:
        bw = 0.18 * center + 60.0
        env = env + np.exp(-0.5 * ((freqs - center) / bw) ** 2)
    return env


def _render_voiced(
    rng: np.random.Generator, n: int, sr: int, f0_base: float, formants
) -> np.ndarray:
    t = np.arange(n) / sr
    # slow pitch contour: +/- ~2 semitones of drift
    drift = rng.uniform(-0.12, 0.12)
    vibrato = rng.uniform(0.005, 0.02) * np.sin(
        2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi)
    )
    f0 = f0_base * np.exp2(drift * t / max(t[-1], 1e-6) + vibrato)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    f0_mean = float(f0.mean())
    n_harmonics = max(int(8000.0 / f0_mean), 3)
    ks = np.arange(1, n_harmonics + 1)
    amps = _formant_envelope(ks * f0_mean, formants) / np.sqrt(ks)
    out = np.zeros(n)
    for k, a in zip(ks, amps):
        out += a * np.sin(k * phase)
    rms = float(np.sqrt(np.mean(out**2)))
    return out * (0.22 / rms) if rms > 0 else out


def _render_unvoiced(rng: np.random.Generator, n: int, sr: int, formants) -> np.ndarray:
    noise = rng.standard_normal(n)
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    shaped = np.fft.irfft(spectrum * _formant_envelope(freqs, formants), n=n)
    rms = float(np.sqrt(np.mean(shaped**2)))
    return shaped * (0.1 / rms) if rms > 0 else shaped


def _edge_ramp(n: int, sr: int) -> np.ndarray:
    ramp = min(int(0.012 * sr), max(n // 4, 1))
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[n - ramp :] = np.linspace(1.0, 0.0, ramp)
    return env


def synth_utterance(
    rng: np.random.Generator, settings: SynthSettings
) -> tuple[AudioBuffer, list[tuple[str, float, float]]]:
    """One utterance plus its (phone, start, end) alignment."""
    sr = settings.sample_rate
    total = rng.uniform(settings.min_seconds, settings.max_seconds)
    f0_base = rng.uniform(95.0, 220.0)
    phones = list(PHONE_TABLE)

    segments: list[tuple[str, float]] = [(SIL, rng.uniform(0.10, 0.25))]
    elapsed = segments[0][1]
    while elapsed < total:
        if rng.random() < 0.12:
            phone, dur = SIL, rng.uniform(0.08, 0.2)
        else:
            phone = phones[int(rng.integers(len(phones)))]
            dur = rng.uniform(0.09, 0.28)
        segments.append((phone, dur))
        elapsed += dur
    segments.append((SIL, rng.uniform(0.10, 0.25)))

    chunks = []
    alignment = []
    cursor = 0.0
    for phone, dur in segments:
        n = max(int(round(dur * sr)), 8)
        if phone == SIL:
            chunk = 1e-4 * rng.standard_normal(n)
        else:
            formants, voiced = PHONE_TABLE[phone]
            if voiced:
                chunk = _render_voiced(rng, n, sr, f0_base, formants)
            else:
                chunk = _render_unvoiced(rng, n, sr, formants)
            chunk = chunk * _edge_ramp(n, sr)
        chunks.append(chunk)
        alignment.append((phone, cursor, cursor + n / sr))
        cursor += n / sr
    samples = np.concatenate(chunks)
    peak = float(np.abs(samples).max())
    if peak > 0:
        samples = samples * (settings.peak / peak)
    return AudioBuffer(samples, sr), alignment


def make_noise_bank(out_dir: Path, rng: np.random.Generator, sr: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 6 * sr
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    pink = np.fft.irfft(spectrum / np.maximum(np.sqrt(freqs), 1.0), n=n)
    hum = 0.8 * np.sin(2 * np.pi * 50.0 * np.arange(n) / sr) + 0.4 * rng.standard_normal(n)
    for name, sig in (("noise_white", white), ("noise_pink", pink), ("noise_hum", hum)):
        sig = sig / np.abs(sig).max() * 0.5
        write_wav(out_dir / f"{name}.wav", AudioBuffer(sig, sr), encoding="float32")


def make_rir_bank(out_dir: Path, rng: np.random.Generator, sr: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, t60 in enumerate((0.12, 0.25, 0.45)):
        n = int(0.6 * sr)
        t = np.arange(n) / sr
        tail = rng.standard_normal(n) * np.exp(-6.9 * t / t60)
        rir = np.zeros(n)
        rir[0] = 1.0
        rir[1:] = 0.35 * tail[1:]
        write_wav(out_dir / f"rir_{i}.wav", AudioBuffer(rir, sr), encoding="float32")


def make_corpus(out_dir: str | Path, seed: int = 0, settings: SynthSettings | None = None) -> Path:
    """Write wavs, alignments, noise/RIR banks, and a manifest; returns its path."""
    settings = settings or SynthSettings()
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "align").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0x73796E74])
    entries = []
    for i in range(settings.n_utterances):
        utt_id = f"utt{i:04d}"
        audio, alignment = synth_utterance(rng, settings)
        write_wav(out_dir / "wav" / f"{utt_id}.wav", audio, encoding="float32")
        lines = [f"{p}\t{s:.6f}\t{e:.6f}" for p, s, e in alignment]
        (out_dir / "align" / f"{utt_id}.tsv").write_text("\n".join(lines) + "\n")
        entries.append(
            ManifestEntry(
                utt_id=utt_id,
                clean_wav=f"wav/{utt_id}.wav",
                alignment=f"align/{utt_id}.tsv",
            )
        )
    make_noise_bank(out_dir / "noise", rng, settings.sample_rate)
    make_rir_bank(out_dir / "rirs", rng, settings.sample_rate)
    manifest = out_dir / "manifest.jsonl"
    save_manifest(manifest, entries)
    return manifest
