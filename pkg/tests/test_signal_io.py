import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhotic_mdx.signal_io import (
    AudioBuffer,
    AudioError,
    apply_preemphasis,
    frame_count,
    frame_signal,
    preemphasis_coefficient,
    preemphasize,
    read_wav,
    resample,
    write_wav,
)


def _write_raw(path, data: np.ndarray, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(data.astype("<i2" if width == 2 else "u1").tobytes())


def peak_hz(buf: AudioBuffer) -> float:
    spec = np.abs(np.fft.rfft(buf.samples * np.hanning(len(buf))))
    return np.argmax(spec) * buf.sample_rate / len(buf)


def test_read_one_second_file(tmp_path):
    p = tmp_path / "a.wav"
    _write_raw(p, np.zeros(16000, dtype=np.int16))
    buf = read_wav(p)
    assert len(buf) == 16000 and buf.sample_rate == 16000


def test_read_scaling(tmp_path):
    p = tmp_path / "a.wav"
    _write_raw(p, np.array([32767, -32768, 0], dtype=np.int16))
    buf = read_wav(p)
    assert buf.samples[0] == 32767 / 32768
    assert buf.samples[1] == -1.0


def test_stereo_rejected(tmp_path):
    p = tmp_path / "s.wav"
    _write_raw(p, np.zeros(200, dtype=np.int16), channels=2)
    with pytest.raises(AudioError, match="unsupported channel count"):
        read_wav(p)


def test_8bit_rejected(tmp_path):
    p = tmp_path / "b.wav"
    _write_raw(p, np.full(100, 128, dtype=np.uint8), width=1)
    with pytest.raises(AudioError):
        read_wav(p)


def test_missing_and_non_wav(tmp_path):
    with pytest.raises(AudioError, match="no such file"):
        read_wav(tmp_path / "none.wav")
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a riff file at all")
    with pytest.raises(AudioError):
        read_wav(bad)


def test_write_read_round_trip(tmp_path):
    x = np.round(np.sin(np.arange(800) / 7) * 20000) / 32768
    write_wav(tmp_path / "r.wav", AudioBuffer(x, 8000))
    back = read_wav(tmp_path / "r.wav")
    assert np.array_equal(back.samples, x)


def test_resample_identity():
    buf = AudioBuffer(np.random.default_rng(0).standard_normal(1000) * 0.1, 16000)
    out = resample(buf, 16000)
    assert np.array_equal(out.samples, buf.samples)


def test_resample_sine_peak_and_length():
    fs = 44100
    t = np.arange(fs) / fs
    buf = AudioBuffer(0.5 * np.sin(2 * np.pi * 440 * t), fs)
    out = resample(buf, 12000)
    assert abs(len(out) - 12000) <= 1
    assert abs(peak_hz(out) - 440) <= 2


def test_resample_round_trip_frequency():
    fs = 16000
    t = np.arange(fs) / fs
    buf = AudioBuffer(0.5 * np.sin(2 * np.pi * 1234 * t), fs)
    back = resample(resample(buf, 11025), fs)
    assert abs(peak_hz(back) - 1234) / 1234 < 0.005


def test_resample_bad_rate():
    with pytest.raises(AudioError):
        resample(AudioBuffer(np.zeros(10), 100), 0)


def test_preemphasis_coefficient_value():
    assert preemphasis_coefficient(50, 10000) == pytest.approx(math.exp(-2 * math.pi * 50 / 10000))
    assert preemphasis_coefficient(50, 10000) == pytest.approx(0.96907, abs=1e-5)


def test_preemphasis_zero_coefficient_is_identity():
    x = np.random.default_rng(1).standard_normal(50)
    assert np.array_equal(apply_preemphasis(x, 0.0), x)


def test_preemphasis_dc_response():
    a = preemphasis_coefficient(50, 16000)
    y = preemphasize(AudioBuffer(np.full(100, 0.3), 16000), 50).samples
    assert np.allclose(y, 0.3 * (1 - a))


def test_preemphasis_bounds():
    buf = AudioBuffer(np.zeros(10), 1000)
    with pytest.raises(AudioError):
        preemphasize(buf, 0)
    with pytest.raises(AudioError):
        preemphasize(buf, 500)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.lists(st.floats(-1, 1), min_size=2, max_size=64))
def test_preemphasis_linear(alpha, xs):
    x = np.array(xs)
    buf = AudioBuffer(x, 8000)
    a = preemphasize(AudioBuffer(alpha * x, 8000), 50).samples
    b = alpha * preemphasize(buf, 50).samples
    assert np.max(np.abs(a - b)) <= 1e-12


def test_frame_count_example():
    fs = frame_signal(AudioBuffer(np.zeros(10000), 10000), 0.025, 0.01)
    assert fs.frames.shape == (98, 250)
    assert np.allclose(np.diff(fs.start_times), 0.01)


def test_frame_exact_and_short():
    buf = AudioBuffer(np.ones(250), 10000)
    fs = frame_signal(buf, 0.025, 0.01)
    assert fs.frames.shape[0] == 1
    assert np.allclose(fs.frames[0], np.hamming(250))
    with pytest.raises(AudioError):
        frame_signal(AudioBuffer(np.ones(249), 10000), 0.025, 0.01)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 300), st.integers(1, 299), st.integers(0, 2000))
def test_frame_count_formula(w, h, extra):
    h = min(h, w - 1) or 1
    if h >= w:
        return
    n = w + extra
    assert frame_count(n, w, h) == (n - w) // h + 1
    fs = frame_signal(AudioBuffer(np.zeros(n), 1000), w / 1000, h / 1000)
    assert fs.frames.shape == ((n - w) // h + 1, w)
