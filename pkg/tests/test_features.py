import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from scorefollow.features import (
    DEFAULT_CQT,
    CqtConfig,
    FeatureError,
    cqt_frame,
    extract_features,
    n_frames,
    normalize_values,
    read_features,
    read_wav,
    stream_frames,
    write_features,
    write_wav,
)

SR = DEFAULT_CQT.sample_rate


def sine(freq, seconds=None, n=None):
    n = n if n is not None else int(round(seconds * SR))
    return np.sin(2 * np.pi * freq * np.arange(n) / SR)


def direct_bin(x, f, cfg=DEFAULT_CQT):
    """Magnitude of one constant-Q bin computed with an explicit sum."""
    n = cfg.frame_len
    width = min(n, math.ceil(cfg.quality * cfg.sample_rate / f))
    start = (n - width) // 2
    acc, wsum = 0j, 0.0
    for t in range(width):
        w = 0.5 - 0.5 * math.cos(2 * math.pi * t / (width - 1))
        acc += w * x[start + t] * complex(math.cos(2 * math.pi * f * t / SR), -math.sin(2 * math.pi * f * t / SR))
        wsum += w
    return abs(acc) / wsum


def test_default_geometry():
    assert DEFAULT_CQT.D == 85
    assert DEFAULT_CQT.frame_len == 2048
    assert DEFAULT_CQT.hop_len == 320
    f = DEFAULT_CQT.frequencies
    assert f[0] == 55.0 and f[-1] == pytest.approx(7040.0)


@pytest.mark.parametrize("freq,bin_", [(440.0, 36), (110.0, 12), (55.0, 0), (880.0, 48)])
def test_pure_tone_peaks_at_its_bin(freq, bin_):
    frame = cqt_frame(sine(freq, n=2048)).values
    assert int(np.argmax(frame)) == bin_


@pytest.mark.parametrize("d", [0, 12, 36, 37, 84])
def test_kernel_matches_direct_sum(d):
    x = np.random.default_rng(d).standard_normal(2048)
    f = DEFAULT_CQT.frequencies[d]
    assert cqt_frame(x).values[d] == pytest.approx(direct_bin(x, f), rel=1e-9)


def test_zero_input_gives_zero_magnitudes_and_uniform_features():
    assert np.all(cqt_frame(np.zeros(2048)).values == 0.0)
    Y = extract_features(np.zeros(3200))
    np.testing.assert_allclose(Y, 1.0 / 85)


def test_normalize_small_cases():
    np.testing.assert_allclose(normalize_values(np.array([2.0, 2.0])), [0.5, 0.5])
    np.testing.assert_allclose(normalize_values(np.array([0.0, 0.0, 0.0, 0.0])), [0.25] * 4)


@given(arrays(np.float64, st.integers(1, 100), elements=st.floats(0, 1e6)))
@settings(max_examples=200)
def test_normalization_is_idempotent_and_sums_to_one(v):
    y = normalize_values(v)
    assert np.all(y >= 0)
    assert abs(y.sum() - 1.0) <= 1e-9
    np.testing.assert_allclose(normalize_values(y), y, rtol=1e-12, atol=1e-15)


@given(st.floats(1e-3, 1e3), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_features_are_scale_invariant(c, seed):
    x = np.random.default_rng(seed).standard_normal(2048 + 320)
    np.testing.assert_allclose(extract_features(c * x), extract_features(x), rtol=1e-9, atol=1e-15)


def test_frame_counts():
    assert n_frames(2 * SR) == 100
    full = [t for t in range(100) if t * 320 + 2048 <= 2 * SR]
    assert len(full) == 94
    assert extract_features(np.zeros(2 * SR)).shape == (100, 85)
    assert n_frames(int(0.1 * SR)) >= 1
    assert extract_features(np.zeros(0)).shape == (0, 85)


@given(st.integers(1, 8000), st.integers(1, 3000))
@settings(max_examples=100, deadline=None)
def test_streaming_matches_batch(n, chunk):
    x = np.random.default_rng(n).standard_normal(n)
    chunks = [x[i : i + chunk] for i in range(0, n, chunk)]
    streamed = np.array([f.values for f in stream_frames(chunks)])
    np.testing.assert_allclose(streamed, extract_features(x), rtol=1e-12, atol=1e-15)
    assert [f.t for f in stream_frames(chunks)] == list(range(n_frames(n)))


def test_sample_rate_mismatch_rejected(tmp_path):
    with pytest.raises(FeatureError, match="sample rate"):
        list(stream_frames(np.zeros(100), sample_rate=44100))
    p = tmp_path / "a.wav"
    write_wav(p, np.zeros(100), sample_rate=44100)
    with pytest.raises(FeatureError, match="sample rate"):
        read_wav(p)


def test_bad_config_rejected():
    with pytest.raises(FeatureError):
        CqtConfig(f_max=9000.0)
    with pytest.raises(FeatureError):
        CqtConfig(f_min=100.0, f_max=50.0)


def test_wrong_frame_length_rejected():
    with pytest.raises(FeatureError):
        cqt_frame(np.zeros(100))


def test_wav_round_trip(tmp_path):
    x = 0.5 * sine(440.0, 0.2)
    p = tmp_path / "a.wav"
    write_wav(p, x)
    np.testing.assert_allclose(read_wav(p), x, atol=1.0 / 32767)


@pytest.mark.parametrize("suffix", [".jsonl", ".csv"])
def test_feature_file_round_trip(tmp_path, suffix):
    Y = extract_features(sine(330.0, 0.3))
    p = tmp_path / f"y{suffix}"
    write_features(p, Y)
    np.testing.assert_array_equal(read_features(p), Y)
