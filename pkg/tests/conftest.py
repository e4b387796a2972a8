import numpy as np
import pytest

from melforge.data import ManifestEntry, save_manifest
from melforge.dsp import AudioBuffer, write_wav
from melforge.synthetic import SynthSettings, make_corpus


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """Five short synthetic utterances with alignments and tiny banks."""
    root = tmp_path_factory.mktemp("mini_corpus")
    settings = SynthSettings(n_utterances=5, min_seconds=1.2, max_seconds=2.0)
    manifest = make_corpus(root, seed=123, settings=settings)
    return manifest


@pytest.fixture()
def sine_wav(tmp_path):
    sr = 22050
    t = np.arange(sr) / sr
    audio = AudioBuffer(0.4 * np.sin(2 * np.pi * 440.0 * t), sr)
    path = tmp_path / "sine.wav"
    write_wav(path, audio, encoding="float32")
    return path, audio


@pytest.fixture()
def toy_manifest(tmp_path):
    """Three plain sine utterances without alignments."""
    sr = 22050
    entries = []
    (tmp_path / "wav").mkdir()
    rng = np.random.default_rng(5)
    for i, freq in enumerate((220.0, 330.0, 440.0)):
        n = int(sr * rng.uniform(0.8, 1.2))
        t = np.arange(n) / sr
        samples = 0.3 * np.sin(2 * np.pi * freq * t) + 0.01 * rng.standard_normal(n)
        write_wav(tmp_path / "wav" / f"u{i}.wav", AudioBuffer(samples, sr), encoding="float32")
        entries.append(ManifestEntry(utt_id=f"u{i}", clean_wav=f"wav/u{i}.wav"))
    path = tmp_path / "manifest.jsonl"
    save_manifest(path, entries)
    return path
