import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melforge.dsp import MelSpectrogram
from melforge.errors import ConfigError, FormatError
from melforge.textcond import (
    Alignment,
    PhoneInterval,
    build_dict,
    expand_mu,
    interval_to_frames,
    load_phone_dict,
    parse_alignment,
    save_phone_dict,
)

HOP = 256 / 22050


def mel(values):
    return MelSpectrogram(np.asarray(values, dtype=float), HOP)


# ---------------------------------------------------------------------------
# parsing

def test_parse_two_intervals(tmp_path):
    path = tmp_path / "a.tsv"
    path.write_text("sil\t0.00\t0.20\na\t0.20\t0.45\n")
    alignment = parse_alignment(path)
    assert len(alignment.intervals) == 2
    assert alignment.intervals[1].phone == "a"
    assert alignment.duration == 0.45


def test_parse_overlap_reports_line(tmp_path):
    path = tmp_path / "b.tsv"
    path.write_text("a\t0.00\t0.30\nb\t0.20\t0.50\n")
    with pytest.raises(FormatError, match=":2"):
        parse_alignment(path)


def test_parse_empty_file(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("")
    with pytest.raises(FormatError):
        parse_alignment(path)


def test_parse_negative_time(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("a\t-0.1\t0.2\n")
    with pytest.raises(FormatError, match=":1"):
        parse_alignment(path)


def test_parse_unparseable_row(tmp_path):
    path = tmp_path / "e.tsv"
    path.write_text("a\tzero\t0.2\n")
    with pytest.raises(FormatError, match=":1"):
        parse_alignment(path)


# ---------------------------------------------------------------------------
# frame mapping

def test_interval_rounding_example():
    # start 0.0, end 0.0116 s at hop 256/22050 ~ 0.011610 s -> frames [0, 1)
    first, last = interval_to_frames(PhoneInterval("a", 0.0, 0.0116), HOP, 100)
    assert (first, last) == (0, 1)


def test_interval_beyond_frames_clamps_empty():
    first, last = interval_to_frames(PhoneInterval("a", 10.0, 11.0), HOP, 50)
    assert first == last == 50


def test_sub_hop_interval_may_be_empty():
    first, last = interval_to_frames(PhoneInterval("a", 0.005, 0.0055), HOP, 100)
    assert first == last


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(min_value=0.01, max_value=0.5), min_size=2, max_size=8),
)
def test_adjacent_intervals_map_to_adjacent_ranges(durations):
    bounds = np.concatenate([[0.0], np.cumsum(durations)])
    n_frames = int(bounds[-1] / HOP) + 2
    prev_last = 0
    for i in range(len(durations)):
        first, last = interval_to_frames(
            PhoneInterval("p", bounds[i], bounds[i + 1]), HOP, n_frames
        )
        assert first == prev_last  # no gaps, no overlaps
        prev_last = last


# ---------------------------------------------------------------------------
# dictionary build

def test_single_phone_covers_all_frames():
    values = np.arange(12, dtype=float).reshape(3, 4)
    alignment = Alignment("u", [PhoneInterval("a", 0.0, 4 * HOP)], 4 * HOP)
    d = build_dict([(mel(values), alignment)])
    np.testing.assert_allclose(d.phones["a"][0], values.mean(axis=1))
    assert d.phones["a"][1] == 4
    np.testing.assert_allclose(d.global_mean, values.mean(axis=1))


def test_disjoint_phones_two_entries():
    m1 = mel(np.full((2, 4), 1.0))
    m2 = mel(np.full((2, 4), 3.0))
    a1 = Alignment("u1", [PhoneInterval("a", 0.0, 4 * HOP)], 4 * HOP)
    a2 = Alignment("u2", [PhoneInterval("b", 0.0, 4 * HOP)], 4 * HOP)
    d = build_dict([(m1, a1), (m2, a2)])
    np.testing.assert_allclose(d.phones["a"][0], 1.0)
    np.testing.assert_allclose(d.phones["b"][0], 3.0)
    np.testing.assert_allclose(d.global_mean, 2.0)  # count-weighted mean of entries


def test_constant_frames_recovered_exactly():
    c = np.array([0.5, -1.25, 3.0])
    values = np.tile(c[:, None], (1, 6))
    alignment = Alignment("u", [PhoneInterval("a", 0.0, 6 * HOP)], 6 * HOP)
    d = build_dict([(mel(values), alignment)])
    np.testing.assert_array_equal(d.phones["a"][0], c)


def test_empty_corpus_rejected():
    with pytest.raises(ConfigError):
        build_dict([])


def test_no_assignable_frames_rejected():
    alignment = Alignment("u", [PhoneInterval("a", 0.001, 0.002)], 0.002)
    with pytest.raises(ConfigError):
        build_dict([(mel(np.zeros((2, 5))), alignment)])


def test_rebuild_is_bit_stable():
    rng = np.random.default_rng(0)
    corpus = []
    for i in range(4):
        values = rng.standard_normal((3, 10))
        alignment = Alignment(
            f"u{i}",
            [PhoneInterval("a", 0.0, 5 * HOP), PhoneInterval("b", 5 * HOP, 10 * HOP)],
            10 * HOP,
        )
        corpus.append((mel(values), alignment))
    d1 = build_dict(corpus)
    d2 = build_dict(corpus)
    for k in d1.phones:
        np.testing.assert_array_equal(d1.phones[k][0], d2.phones[k][0])
    np.testing.assert_array_equal(d1.global_mean, d2.global_mean)


# ---------------------------------------------------------------------------
# expansion

def _simple_dict():
    values = np.concatenate([np.full((2, 5), 1.0), np.full((2, 5), 5.0)], axis=1)
    alignment = Alignment(
        "u", [PhoneInterval("a", 0.0, 5 * HOP), PhoneInterval("b", 5 * HOP, 10 * HOP)], 10 * HOP
    )
    return build_dict([(mel(values), alignment)])


def test_expand_known_phone_tiles_vector():
    d = _simple_dict()
    alignment = Alignment("v", [PhoneInterval("a", 0.0, 8 * HOP)], 8 * HOP)
    mu = expand_mu(alignment, d, 8, HOP)
    np.testing.assert_allclose(mu.values, 1.0)


def test_expand_unknown_phone_uses_global_mean():
    d = _simple_dict()
    alignment = Alignment("v", [PhoneInterval("zz", 0.0, 8 * HOP)], 8 * HOP)
    mu = expand_mu(alignment, d, 8, HOP)
    np.testing.assert_allclose(mu.values, np.broadcast_to(d.global_mean[:, None], (2, 8)))


def test_expand_uncovered_frames_use_global_mean():
    d = _simple_dict()
    alignment = Alignment("v", [PhoneInterval("a", 0.0, 4 * HOP)], 4 * HOP)
    mu = expand_mu(alignment, d, 8, HOP)
    np.testing.assert_allclose(mu.values[:, :4], 1.0)
    np.testing.assert_allclose(mu.values[:, 4:], np.broadcast_to(d.global_mean[:, None], (2, 4)))


def test_expand_boundary_at_rounded_frame():
    d = _simple_dict()
    boundary_s = 5.4 * HOP  # rounds to frame 5
    alignment = Alignment(
        "v",
        [PhoneInterval("a", 0.0, boundary_s), PhoneInterval("b", boundary_s, 10 * HOP)],
        10 * HOP,
    )
    mu = expand_mu(alignment, d, 10, HOP)
    np.testing.assert_allclose(mu.values[:, :5], 1.0)
    np.testing.assert_allclose(mu.values[:, 5:], 5.0)


def test_every_mu_frame_is_dictionary_vector_or_global_mean():
    d = _simple_dict()
    alignment = Alignment(
        "v",
        [PhoneInterval("a", 0.0, 3 * HOP), PhoneInterval("qq", 3 * HOP, 6 * HOP)],
        6 * HOP,
    )
    mu = expand_mu(alignment, d, 9, HOP)
    allowed = [d.phones["a"][0], d.phones["b"][0], d.global_mean]
    for frame in mu.values.T:
        assert any(np.array_equal(frame, v) for v in allowed)


# ---------------------------------------------------------------------------
# serialization

def test_dict_json_round_trip(tmp_path):
    d = _simple_dict()
    path = tmp_path / "dict.json"
    save_phone_dict(path, d)
    back = load_phone_dict(path)
    assert back.n_mels == d.n_mels
    assert set(back.phones) == set(d.phones)
    for k in d.phones:
        np.testing.assert_array_equal(back.phones[k][0], d.phones[k][0])
        assert back.phones[k][1] == d.phones[k][1]
    np.testing.assert_array_equal(back.global_mean, d.global_mean)


def test_dict_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{")
    with pytest.raises(FormatError):
        load_phone_dict(path)
