"""Audio I/O, STFT analysis/synthesis, Mel filterbanks, and corpus normalization.

All DSP runs in double precision. The feature configuration follows the
22.05 kHz / 1024-point window / 256-sample hop / 128-band setup used
throughout the pipeline; everything is parameterized.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import firwin, kaiserord, resample_poly

from .errors import ConfigError, FormatError, ShapeError, UnsupportedError

LOG_FLOOR_DEFAULT = 1e-5

MEL_CACHE_MAGIC = b"MELF"
MEL_CACHE_VERSION = 1

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass
class AudioBuffer:
    """Mono audio: float64 samples nominally in [-1, 1] plus a sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"audio must be mono 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ConfigError("audio contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    """One-sided complex STFT, shape (n_fft//2 + 1, T).

    length is the analyzed signal's sample count; istft reconstructs exactly
    that many samples. When None, (T - 1) * hop is assumed.
    """

    frames: np.ndarray
    n_fft: int
    hop: int
    window: np.ndarray
    sample_rate: int
    length: int | None = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]


@dataclass
class MelFilterbank:
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft//2 + 1)."""

    weights: np.ndarray
    n_fft: int
    sample_rate: int
    n_mels: int
    fmin: float
    fmax: float


@dataclass
class MelSpectrogram:
    """Log-amplitude mel grid, shape (n_mels, T)."""

    values: np.ndarray
    frame_hop_seconds: float

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"mel values must be 2-D, got shape {self.values.shape}")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class NormalizationStats:
    """Global mean plus max-abs-deviation scale mapping a corpus into [-1, 1]."""

    mean: float
    scale: float

    def __post_init__(self) -> None:
        if not (self.scale > 0):
            raise ConfigError(f"normalization scale must be positive, got {self.scale}")


# ---------------------------------------------------------------------------
# WAV I/O (RIFF, PCM16 and IEEE float32)

def read_wav(path: str | Path) -> AudioBuffer:
    """Read a PCM16 or float32 RIFF WAV file; stereo is averaged to mono.

    Integer PCM is scaled by 1/32768 into [-1, 1].
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        pos += 8
        body = raw[pos : pos + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 40:
                    raise FormatError(f"{path}: truncated extensible fmt chunk")
                subformat = struct.unpack_from("<H", body, 24)[0]
                fmt = (subformat,) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                raise FormatError(f"{path}: data chunk truncated")
            data = body
        pos += size + (size & 1)
    if fmt is None or data is None:
        raise FormatError(f"{path}: missing fmt or data chunk")

    tag, n_channels, sample_rate, _, _, bits = fmt
    if sample_rate <= 0:
        raise FormatError(f"{path}: invalid sample rate {sample_rate}")
    if n_channels not in (1, 2):
        raise UnsupportedError(f"{path}: {n_channels} channels unsupported (need 1 or 2)")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedError(f"{path}: format tag {tag} with {bits} bits unsupported")
    if n_channels == 2:
        if len(samples) % 2:
            raise FormatError(f"{path}: odd sample count for stereo data")
        samples = samples.reshape(-1, 2).mean(axis=1)
    return AudioBuffer(samples, sample_rate)


def write_wav(path: str | Path, audio: AudioBuffer, encoding: str = "float32") -> None:
    """Write mono WAV. encoding is 'float32' (lossless here) or 'pcm16'."""
    if encoding == "pcm16":
        tag, bits = _WAVE_FORMAT_PCM, 16
        clipped = np.clip(audio.samples, -1.0, 32767.0 / 32768.0)
        payload = (np.round(clipped * 32768.0).astype("<i2")).tobytes()
    elif encoding == "float32":
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        payload = audio.samples.astype("<f4").tobytes()
    else:
        raise ConfigError(f"unknown WAV encoding {encoding!r}")
    block = bits // 8
    fmt = struct.pack(
        "<HHIIHH", tag, 1, audio.sample_rate, audio.sample_rate * block, block, bits
    )
    out = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack("<I", len(fmt)),
            fmt,
            b"data",
            struct.pack("<I", len(payload)),
            payload,
        ]
    )
    Path(path).write_bytes(out)


# ---------------------------------------------------------------------------
# Resampling

def _resample_taps(max_rate: int) -> np.ndarray:
    """Kaiser windowed-sinc anti-alias/anti-image filter for the polyphase.

    Designed so the stopband (>= 75 dB) begins at the lower of the two
    Nyquist frequencies: the transition band sits entirely inside the kept
    band rather than leaking past it.
    """
    f_c = 1.0 / max_rate  # normalized (Nyquist = 1) band edge
    guard = 0.08  # fraction of the band given to the transition
    numtaps, beta = kaiserord(75.0, guard * f_c)
    numtaps |= 1
    # resample_poly scales array windows by `up` itself to offset zero-stuffing
    return firwin(numtaps, (1.0 - guard / 2.0) * f_c, window=("kaiser", beta))


def resample(audio: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling; identity when rates already match.

    Output length is round(len * target / source); the polyphase output is
    trimmed or edge-padded by at most one sample to meet it.
    """
    if target_rate <= 0:
        raise ConfigError(f"target_rate must be positive, got {target_rate}")
    if target_rate == audio.sample_rate:
        return AudioBuffer(audio.samples.copy(), target_rate)
    g = np.gcd(target_rate, audio.sample_rate)
    up, down = target_rate // g, audio.sample_rate // g
    out = resample_poly(audio.samples, up, down, window=_resample_taps(max(up, down)))
    n_target = int(round(len(audio) * target_rate / audio.sample_rate))
    if len(out) > n_target:
        out = out[:n_target]
    elif len(out) < n_target:
        out = np.pad(out, (0, n_target - len(out)), mode="edge")
    return AudioBuffer(out, target_rate)


# ---------------------------------------------------------------------------
# STFT / ISTFT

def periodic_hann(n_fft: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)


def stft(audio: AudioBuffer, n_fft: int = 1024, hop: int = 256) -> Spectrogram:
    """Centered STFT with a periodic Hann window and reflect padding.

    Reflect-pads n_fft//2 samples on each side so T = 1 + len // hop.
    """
    if n_fft < hop:
        raise ConfigError(f"n_fft ({n_fft}) must be >= hop ({hop})")
    x = audio.samples
    if len(x) < 1:
        raise ConfigError("audio shorter than one window after padding")
    pad = n_fft // 2
    xp = np.pad(x, (pad, pad), mode="reflect") if len(x) > 1 else np.full(2 * pad + 1, x[0])
    n_frames = 1 + len(x) // hop
    window = periodic_hann(n_fft)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * window[None, :]
    spec = np.fft.rfft(frames, axis=1).T
    return Spectrogram(spec, n_fft, hop, window, audio.sample_rate, length=len(x))


def istft(spec: Spectrogram) -> AudioBuffer:
    """Inverse STFT via overlap-add with window-square normalization.

    Requires the analysis window/hop to leave no coverage gaps over the
    reconstructed interior; raises ConfigError otherwise.
    """
    n_fft, hop = spec.n_fft, spec.hop
    window = spec.window
    n_frames = spec.n_frames
    total = n_fft + hop * (n_frames - 1)
    acc = np.zeros(total)
    norm = np.zeros(total)
    frames = np.fft.irfft(spec.frames.T, n=n_fft, axis=1)
    wsq = window * window
    for k in range(n_frames):
        start = k * hop
        acc[start : start + n_fft] += frames[k] * window
        norm[start : start + n_fft] += wsq
    pad = n_fft // 2
    out_len = hop * (n_frames - 1) if spec.length is None else spec.length
    interior = norm[pad : pad + out_len]
    if out_len and interior.min() < 1e-10:
        raise ConfigError(
            f"window/hop ({n_fft}/{hop}) leaves gaps in overlap-add coverage"
        )
    out = acc[pad : pad + out_len] / np.maximum(interior, 1e-10)
    return AudioBuffer(out, spec.sample_rate)


# ---------------------------------------------------------------------------
# Mel filterbank and log-mel features

def hz_to_mel(f_hz):
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (np.power(10.0, np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_fft: int = 1024,
    sample_rate: int = 22050,
    n_mels: int = 128,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> MelFilterbank:
    """Triangular filters with centers equally spaced on the mel scale."""
    if fmax is None:
        fmax = sample_rate / 2.0
    if not (0.0 <= fmin < fmax <= sample_rate / 2.0):
        raise ConfigError(
            f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={fmin} fmax={fmax}"
        )
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    lower = (fft_freqs[None, :] - hz_pts[:-2, None]) / (
        hz_pts[1:-1, None] - hz_pts[:-2, None]
    )
    upper = (hz_pts[2:, None] - fft_freqs[None, :]) / (
        hz_pts[2:, None] - hz_pts[1:-1, None]
    )
    weights = np.maximum(0.0, np.minimum(lower, upper))
    if np.any(weights.sum(axis=1) <= 0.0):
        raise ConfigError(
            f"mel filterbank has empty rows for n_fft={n_fft}, n_mels={n_mels}"
        )
    return MelFilterbank(weights, n_fft, sample_rate, n_mels, fmin, fmax)


def log_mel(
    spec: Spectrogram, fb: MelFilterbank, log_floor: float = LOG_FLOOR_DEFAULT
) -> MelSpectrogram:
    """ln(max(filterbank @ |spectrogram|, log_floor))."""
    if fb.n_fft != spec.n_fft:
        raise ShapeError(
            f"filterbank n_fft {fb.n_fft} does not match spectrogram n_fft {spec.n_fft}"
        )
    mel = fb.weights @ np.abs(spec.frames)
    values = np.log(np.maximum(mel, log_floor))
    return MelSpectrogram(values, spec.hop / spec.sample_rate)


def extract_log_mel(
    audio: AudioBuffer,
    n_fft: int = 1024,
    hop: int = 256,
    fb: MelFilterbank | None = None,
    log_floor: float = LOG_FLOOR_DEFAULT,
) -> MelSpectrogram:
    """stft + filterbank + log, with the default feature configuration."""
    if fb is None:
        fb = mel_filterbank(n_fft=n_fft, sample_rate=audio.sample_rate)
    return log_mel(stft(audio, n_fft, hop), fb, log_floor)


# ---------------------------------------------------------------------------
# Corpus normalization

def compute_norm_stats(corpus) -> NormalizationStats:
    """Global mean over all cells; scale = max |value - mean| over the corpus.

    A degenerate scale (< 1e-8, e.g. a constant corpus) is clamped to 1.0.
    """
    mels = list(corpus)
    if not mels:
        raise ConfigError("cannot compute normalization stats on an empty corpus")
    total = 0.0
    count = 0
    for mel in mels:
        total += float(mel.values.sum())
        count += mel.values.size
    mean = total / count
    scale = 0.0
    for mel in mels:
        scale = max(scale, float(np.abs(mel.values - mean).max()))
    if scale < 1e-8:
        scale = 1.0
    return NormalizationStats(mean, scale)


def normalize(mel: MelSpectrogram, stats: NormalizationStats) -> MelSpectrogram:
    return MelSpectrogram((mel.values - stats.mean) / stats.scale, mel.frame_hop_seconds)


def denormalize(mel: MelSpectrogram, stats: NormalizationStats) -> MelSpectrogram:
    return MelSpectrogram(mel.values * stats.scale + stats.mean, mel.frame_hop_seconds)


def save_norm_stats(path: str | Path, stats: NormalizationStats) -> None:
    Path(path).write_text(json.dumps({"mean": stats.mean, "scale": stats.scale}))


def load_norm_stats(path: str | Path) -> NormalizationStats:
    try:
        obj = json.loads(Path(path).read_text())
        return NormalizationStats(float(obj["mean"]), float(obj["scale"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid normalization stats file: {exc}") from exc


# ---------------------------------------------------------------------------
# Mel cache files: magic "MELF", u32 version, u32 n_mels, u32 T,
# f64 hop_seconds, then n_mels*T little-endian f32, mel-band major.

def save_mel(path: str | Path, mel: MelSpectrogram) -> None:
    header = MEL_CACHE_MAGIC + struct.pack(
        "<IIId", MEL_CACHE_VERSION, mel.n_mels, mel.n_frames, mel.frame_hop_seconds
    )
    Path(path).write_bytes(header + mel.values.astype("<f4").tobytes())


def load_mel(path: str | Path) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    head = len(MEL_CACHE_MAGIC) + struct.calcsize("<IIId")
    if len(raw) < head or raw[:4] != MEL_CACHE_MAGIC:
        raise FormatError(f"{path}: not a mel cache file")
    version, n_mels, n_frames, hop_seconds = struct.unpack_from("<IIId", raw, 4)
    if version != MEL_CACHE_VERSION:
        raise FormatError(f"{path}: unsupported mel cache version {version}")
    expected = n_mels * n_frames * 4
    if len(raw) != head + expected:
        raise FormatError(
            f"{path}: mel cache payload is {len(raw) - head} bytes, expected {expected}"
        )
    values = (
        np.frombuffer(raw, dtype="<f4", offset=head)
        .astype(np.float64)
        .reshape(n_mels, n_frames)
    )
    return MelSpectrogram(values, hop_seconds)
