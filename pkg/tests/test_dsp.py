import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import welch

from melforge.dsp import (
    AudioBuffer,
    MelSpectrogram,
    NormalizationStats,
    Spectrogram,
    compute_norm_stats,
    denormalize,
    hz_to_mel,
    istft,
    load_mel,
    log_mel,
    mel_filterbank,
    normalize,
    periodic_hann,
    read_wav,
    resample,
    save_mel,
    stft,
    write_wav,
)
from melforge.errors import ConfigError, FormatError, ShapeError, UnsupportedError


# ---------------------------------------------------------------------------
# WAV I/O

def test_read_pcm16_scaling(tmp_path):
    path = tmp_path / "x.wav"
    payload = np.array([0, 16384, -16384], dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, 22050, 44100, 2, 16)
    raw = (
        b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(payload)) + payload
    )
    path.write_bytes(raw)
    audio = read_wav(path)
    assert audio.sample_rate == 22050
    np.testing.assert_array_equal(audio.samples, [0.0, 0.5, -0.5])


def test_read_stereo_averages(tmp_path):
    path = tmp_path / "st.wav"
    payload = np.array([1.0, 0.0], dtype="<f4").tobytes()  # L=1.0, R=0.0
    fmt = struct.pack("<HHIIHH", 3, 2, 16000, 16000 * 8, 8, 32)
    raw = (
        b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(payload)) + payload
    )
    path.write_bytes(raw)
    np.testing.assert_array_equal(read_wav(path).samples, [0.5])


def test_truncated_header_is_format_error(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"RIFF\x00\x00")
    with pytest.raises(FormatError):
        read_wav(path)


def test_unsupported_bits_rejected(tmp_path):
    path = tmp_path / "u8.wav"
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)
    raw = (
        b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + 1) + b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", 1) + b"\x80"
    )
    path.write_bytes(raw)
    with pytest.raises(UnsupportedError):
        read_wav(path)


@pytest.mark.parametrize("encoding", ["pcm16", "float32"])
def test_wav_round_trip(tmp_path, encoding):
    rng = np.random.default_rng(0)
    audio = AudioBuffer(rng.uniform(-0.9, 0.9, 1000), 22050)
    path = tmp_path / "rt.wav"
    write_wav(path, audio, encoding=encoding)
    back = read_wav(path)
    tol = 1.0 / 32768.0 if encoding == "pcm16" else 1e-7
    assert np.abs(back.samples - audio.samples).max() <= tol


# ---------------------------------------------------------------------------
# Resampling

def test_resample_identity():
    audio = AudioBuffer(np.sin(np.linspace(0, 10, 500)), 22050)
    out = resample(audio, 22050)
    np.testing.assert_array_equal(out.samples, audio.samples)


def test_resample_sine_preserves_frequency():
    sr_in, sr_out, f = 16000, 22050, 440.0
    t = np.arange(sr_in) / sr_in
    audio = AudioBuffer(np.sin(2 * np.pi * f * t), sr_in)
    out = resample(audio, sr_out)
    assert len(out) == 22050
    spectrum = np.abs(np.fft.rfft(out.samples))
    peak_hz = np.argmax(spectrum) * sr_out / len(out)
    assert abs(peak_hz - f) <= sr_out / len(out)  # within one DFT bin


def test_resample_suppresses_images():
    rng = np.random.default_rng(1)
    audio = AudioBuffer(rng.standard_normal(8000), 8000)
    out = resample(audio, 22050)
    freqs, pxx = welch(out.samples, fs=22050, nperseg=2048)
    passband = float(np.mean(pxx[(freqs > 200) & (freqs < 3500)]))
    stop = float(np.max(pxx[freqs > 4000]))
    assert 10 * np.log10(passband / stop) >= 60.0


# ---------------------------------------------------------------------------
# STFT / ISTFT

def test_stft_silence_is_zero():
    spec = stft(AudioBuffer(np.zeros(4096), 22050), 1024, 256)
    assert spec.n_frames == 1 + 4096 // 256
    assert np.abs(spec.frames).max() == 0.0


def test_stft_matches_direct_dft_at_bin_10():
    sr, n_fft, hop = 22050, 1024, 256
    f = 10 * sr / n_fft
    n = 8192
    x = np.sin(2 * np.pi * f * np.arange(n) / sr)
    spec = stft(AudioBuffer(x, sr), n_fft, hop)
    mags = np.abs(spec.frames)
    for frame in range(4, spec.n_frames - 4):
        assert np.argmax(mags[:, frame]) == 10
    # oracle: direct DFT of one windowed frame (frame k starts at k*hop - pad)
    k = spec.n_frames // 2
    pad = n_fft // 2
    seg = x[k * hop - pad : k * hop - pad + n_fft] * periodic_hann(n_fft)
    np.testing.assert_allclose(spec.frames[:, k], np.fft.rfft(seg), atol=1e-9)


def test_stft_istft_round_trip():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(256 * 40)
    audio = AudioBuffer(x, 22050)
    recon = istft(stft(audio, 1024, 256))
    assert len(recon) == len(audio)
    assert np.abs(recon.samples - x).max() < 1e-6


def test_istft_zero_spectrogram():
    spec = stft(AudioBuffer(np.zeros(2560), 22050), 1024, 256)
    out = istft(spec)
    assert np.abs(out.samples).max() == 0.0


def test_istft_single_frame_windowed_impulse():
    # build a one-frame spectrogram of a windowed impulse by hand; the inverse
    # DFT oracle gives back the windowed impulse and synthesis undoes the window
    sr, n_fft, hop = 22050, 1024, 256
    window = periodic_hann(n_fft)
    impulse = np.zeros(n_fft)
    impulse[n_fft // 2 + 100] = 1.0  # padded position of sample 100
    frame = np.fft.rfft(window * impulse)
    np.testing.assert_allclose(np.fft.irfft(frame, n=n_fft), window * impulse, atol=1e-12)
    spec = Spectrogram(frame[:, None], n_fft, hop, window, sr, length=200)
    recon = istft(spec)
    expected = np.zeros(200)
    expected[100] = 1.0
    np.testing.assert_allclose(recon.samples, expected, atol=1e-12)


def test_stft_istft_round_trip_sub_hop_signal():
    # signals shorter than one hop still round-trip through the single frame
    rng = np.random.default_rng(11)
    x = rng.standard_normal(200) * 0.1
    recon = istft(stft(AudioBuffer(x, 22050), 1024, 256))
    np.testing.assert_allclose(recon.samples, x, atol=1e-9)


def test_istft_gap_coverage_is_config_error():
    window = periodic_hann(64)
    frames = np.zeros((33, 4), dtype=complex)
    spec = Spectrogram(frames, 64, 128, window, 22050)  # hop > n_fft: gaps
    with pytest.raises(ConfigError):
        istft(spec)


def test_stft_empty_audio_rejected():
    with pytest.raises((ConfigError, ShapeError)):
        stft(AudioBuffer(np.zeros(0), 22050), 1024, 256)


# ---------------------------------------------------------------------------
# Mel filterbank and log-mel

def test_mel_scale_closed_forms():
    assert hz_to_mel(0.0) == 0.0
    assert abs(hz_to_mel(1000.0) - 1000.0) < 0.5


def test_filterbank_rows_nonempty_and_count():
    fb = mel_filterbank(1024, 22050, 128, 0.0, None)
    assert fb.weights.shape == (128, 513)
    assert np.all(fb.weights.sum(axis=1) > 0)
    assert np.all(fb.weights >= 0)


def test_filterbank_bad_range():
    with pytest.raises(ConfigError):
        mel_filterbank(1024, 22050, 128, 8000.0, 4000.0)


def test_log_mel_silence_hits_floor():
    spec = stft(AudioBuffer(np.zeros(2560), 22050), 1024, 256)
    fb = mel_filterbank(1024, 22050, 128)
    mel = log_mel(spec, fb, log_floor=1e-5)
    assert np.all(mel.values == np.log(1e-5))
    assert mel.values.shape == (128, spec.n_frames)


def test_log_mel_gain_equivariance():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(2560) * 0.2
    fb = mel_filterbank(1024, 22050, 128)
    a = log_mel(stft(AudioBuffer(x, 22050), 1024, 256), fb)
    b = log_mel(stft(AudioBuffer(2.0 * x, 22050), 1024, 256), fb)
    unclamped = a.values > np.log(1e-5)
    np.testing.assert_allclose(
        b.values[unclamped] - a.values[unclamped], np.log(2.0), atol=1e-6
    )


def test_log_mel_nfft_mismatch():
    spec = stft(AudioBuffer(np.zeros(2560), 22050), 512, 128)
    fb = mel_filterbank(1024, 22050, 128)
    with pytest.raises(ShapeError):
        log_mel(spec, fb)


# ---------------------------------------------------------------------------
# Normalization

def test_norm_stats_constant_corpus():
    mel = MelSpectrogram(np.full((4, 6), -3.5), 0.0116)
    stats = compute_norm_stats([mel])
    assert stats.mean == -3.5
    assert stats.scale == 1.0  # degenerate-scale clamp
    assert np.all(normalize(mel, stats).values == 0.0)


def test_norm_stats_two_value_corpus():
    values = np.array([[-8.0, -2.0]] * 3)
    stats = compute_norm_stats([MelSpectrogram(values, 0.01)])
    assert stats.mean == -5.0
    normed = normalize(MelSpectrogram(values, 0.01), stats)
    assert normed.values.min() == -1.0 and normed.values.max() == 1.0


def test_norm_stats_empty_corpus():
    with pytest.raises(ConfigError):
        compute_norm_stats([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-20, max_value=5), min_size=2, max_size=40))
def test_normalize_round_trip_and_bounds(cells):
    values = np.array(cells).reshape(1, -1)
    mel = MelSpectrogram(values, 0.01)
    stats = compute_norm_stats([mel])
    normed = normalize(mel, stats)
    assert np.all(np.abs(normed.values) <= 1.0 + 1e-12)
    back = denormalize(normed, stats)
    assert np.abs(back.values - values).max() < 1e-9


# ---------------------------------------------------------------------------
# Mel cache files

def test_mel_cache_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    mel = MelSpectrogram(rng.standard_normal((16, 9)).astype(np.float32), 0.0116)
    path = tmp_path / "x.mel"
    save_mel(path, mel)
    back = load_mel(path)
    np.testing.assert_array_equal(back.values, mel.values.astype(np.float32))
    assert back.frame_hop_seconds == mel.frame_hop_seconds


def test_mel_cache_bad_magic(tmp_path):
    path = tmp_path / "bad.mel"
    path.write_bytes(b"XXXX" + b"\x00" * 40)
    with pytest.raises(FormatError):
        load_mel(path)


def test_mel_cache_truncated(tmp_path):
    mel = MelSpectrogram(np.zeros((4, 4)), 0.01)
    path = tmp_path / "t.mel"
    save_mel(path, mel)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError):
        load_mel(path)


def test_norm_stats_validation():
    with pytest.raises(ConfigError):
        NormalizationStats(0.0, 0.0)
