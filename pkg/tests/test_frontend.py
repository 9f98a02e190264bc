import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import mel_triangle_response, regression_delta
from parspeech.errors import DimensionError, EmptyInputError
from parspeech.frontend import (
    LOG_FLOOR,
    AudioBuffer,
    FeatureMatrix,
    GaborFilterSpec,
    StreamBankSpec,
    append_deltas,
    apply_gabor_stream,
    build_stream_set,
    compute_logmel,
    compute_mfcc,
    gabor_kernel,
    log_frame_energy,
    mel_center_frequencies,
    n_frames_for,
)


def _logmel(data):
    return FeatureMatrix(np.asarray(data, dtype=float), 0.01, "logmel")


def test_silence_frames_are_log_floor():
    out = compute_logmel(AudioBuffer(np.zeros(16000), 16000))
    assert out.n_frames == 98
    assert np.all(out.data == np.log(LOG_FLOOR))


def test_mfcc_dimension(rng):
    audio = AudioBuffer(rng.uniform(-0.5, 0.5, 8000))
    assert compute_mfcc(audio, n_coeffs=13).dim == 13


def test_short_audio_rejected():
    with pytest.raises(EmptyInputError):
        compute_mfcc(AudioBuffer(np.zeros(100)))


def test_sine_peaks_in_nearest_channel():
    sr = 16000
    t = np.arange(sr) / sr
    out = compute_logmel(AudioBuffer(np.sin(2 * np.pi * 440.0 * t), sr))
    response, centers = mel_triangle_response(440.0, 26, sr)
    nearest = int(np.argmin(np.abs(np.array(centers) - 440.0)))
    assert int(np.argmax(response)) == nearest
    assert int(np.argmax(out.data.mean(axis=0))) == nearest
    assert np.allclose(mel_center_frequencies(26, sr), centers)


@given(st.integers(1, 5000), st.integers(1, 600), st.integers(1, 300))
def test_framing_formula(n, win, hop):
    expected = 0 if n < win else (n - win) // hop + 1
    assert n_frames_for(n, win, hop) == expected


def test_deltas_of_constant_are_zero():
    feats = FeatureMatrix(np.full((20, 13), 3.5))
    out = append_deltas(feats, 2)
    assert out.dim == 39
    assert np.all(out.data[:, 13:] == 0.0)


def test_ramp_delta_matches_regression():
    ramp = np.arange(10, dtype=float)
    out = append_deltas(FeatureMatrix(ramp[:, None]), 1).data[:, 1]
    expected = [regression_delta(ramp.tolist(), t) for t in range(10)]
    assert np.allclose(out, expected, rtol=0, atol=1e-12)
    interior = out[2:-2]
    assert np.all(interior == interior[0]) and interior[0] > 0


def test_gabor_zero_input():
    spec = GaborFilterSpec(4.0, 0.1, 11, 5)
    assert np.all(apply_gabor_stream(_logmel(np.zeros((30, 26))), spec).data == 0.0)


def test_gabor_impulse_response():
    spec = GaborFilterSpec(6.0, 0.2, 9, 5)
    x = np.zeros((31, 21))
    x[15, 10] = 1.0
    out = apply_gabor_stream(_logmel(x), spec).data
    kernel = gabor_kernel(spec)
    window = out[15 - 4 : 15 + 5, 10 - 2 : 10 + 3]
    assert np.allclose(window, kernel[::-1, ::-1], atol=1e-15)
    window[:] = 0
    assert np.allclose(out, 0.0)


def test_gabor_dc_with_gaussian_kernel():
    spec = GaborFilterSpec(0.0, 0.0, 7, 5)
    kernel = gabor_kernel(spec)
    mass = sum(float(v) for v in kernel.ravel())
    out = apply_gabor_stream(_logmel(np.full((20, 10), 2.5)), spec).data
    assert np.allclose(out, 2.5 * mass, rtol=1e-12)


def test_gabor_extent_too_large():
    with pytest.raises(DimensionError):
        apply_gabor_stream(_logmel(np.zeros((5, 26))), GaborFilterSpec(2.0, 0.0, 7, 1))


def test_gabor_spec_validation():
    with pytest.raises(ValueError):
        GaborFilterSpec(1.0, 0.0, 4, 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_gabor_linearity(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 25, 12))
    spec = GaborFilterSpec(5.0, 0.15, 9, 5)
    lhs = apply_gabor_stream(_logmel(a * x + b * y), spec).data
    rhs = a * apply_gabor_stream(_logmel(x), spec).data + b * apply_gabor_stream(_logmel(y), spec).data
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (abs(a) + abs(b) + 1))


def test_default_bank_has_28_streams(rng):
    bank = StreamBankSpec()
    assert bank.n_streams == 28
    streams = build_stream_set(_logmel(rng.normal(size=(80, 26))), bank)
    assert len(streams) == 28
    assert all(s.n_frames == 80 for s in streams)


def test_singleton_bank_matches_single_filter(rng):
    x = _logmel(rng.normal(size=(60, 26)))
    bank = StreamBankSpec(0, 0, 1)
    (stream,) = build_stream_set(x, bank)
    (spec,) = bank.filter_specs()[0]
    assert np.array_equal(stream.data, apply_gabor_stream(x, spec).data)


def test_stream_set_worker_invariant(rng):
    x = _logmel(rng.normal(size=(80, 26)))
    one = build_stream_set(x, workers=1)
    eight = build_stream_set(x, workers=8)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(one, eight))


def test_posterior_rows_validated():
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[0.5, 0.6]]), kind="posterior")


def test_log_frame_energy():
    out = log_frame_energy(AudioBuffer(np.full(16000, 0.5)))
    assert out.size == 98 and np.allclose(out, np.log(400 * 0.25))
    assert np.all(log_frame_energy(AudioBuffer(np.zeros(800))) == np.log(LOG_FLOOR))
