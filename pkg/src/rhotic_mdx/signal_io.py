"""Audio loading, resampling, pre-emphasis and framing."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal


class AudioError(ValueError):
    pass


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("audio must be mono (1-D samples)")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("audio contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)


@dataclass
class FrameSet:
    frames: np.ndarray  # (n_frames, window_samples), windowed
    hop_s: float
    window_s: float
    start_times: np.ndarray
    sample_rate: int

    @property
    def center_times(self) -> np.ndarray:
        return self.start_times + self.window_s / 2


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM mono WAV file, scaled to [-1, 1) by 1/32768."""
    path = Path(path)
    if not path.exists():
        raise AudioError(f"no such file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        # the stdlib reader only accepts PCM (format tag 1)
        raise AudioError(f"{path}: unsupported or corrupt WAV ({exc})") from exc
    if channels != 1:
        raise AudioError(f"{path}: unsupported channel count {channels}")
    if width != 2:
        raise AudioError(f"{path}: unsupported sample width {8 * width} bits (need 16-bit PCM)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def write_wav(path, buf: AudioBuffer) -> None:
    pcm = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(buf.sample_rate)
        wf.writeframes(pcm.tobytes())


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited polyphase resampling (Kaiser-windowed sinc FIR).

    Output length is ``round(len * target / source)``.
    """
    if target_rate <= 0:
        raise AudioError(f"target_rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == buf.sample_rate:
        return AudioBuffer(buf.samples.copy(), buf.sample_rate)
    ratio = Fraction(target_rate, buf.sample_rate)
    out = signal.resample_poly(buf.samples, ratio.numerator, ratio.denominator)
    n_out = int(round(len(buf) * target_rate / buf.sample_rate))
    if out.shape[0] >= n_out:
        out = out[:n_out]
    else:
        out = np.concatenate([out, np.zeros(n_out - out.shape[0])])
    return AudioBuffer(out, target_rate)


def preemphasis_coefficient(cutoff_hz: float, sample_rate: int) -> float:
    if not 0 < cutoff_hz < sample_rate / 2:
        raise AudioError(f"pre-emphasis cutoff {cutoff_hz} Hz outside (0, {sample_rate / 2})")
    return float(np.exp(-2.0 * np.pi * cutoff_hz / sample_rate))


def apply_preemphasis(x: np.ndarray, a: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.empty_like(x)
    if x.size == 0:
        return y
    y[0] = x[0] * (1.0 - a)
    y[1:] = x[1:] - a * x[:-1]
    return y


def preemphasize(buf: AudioBuffer, cutoff_hz: float = 50.0) -> AudioBuffer:
    """First-order high-pass ``y[n] = x[n] - a x[n-1]``, ``a = exp(-2 pi fc / fs)``."""
    a = preemphasis_coefficient(cutoff_hz, buf.sample_rate)
    return AudioBuffer(apply_preemphasis(buf.samples, a), buf.sample_rate)


def frame_count(n: int, window: int, hop: int) -> int:
    return (n - window) // hop + 1


def frame_signal(buf: AudioBuffer, window_s: float = 0.025, hop_s: float = 0.01) -> FrameSet:
    """Cut the signal into Hamming-windowed frames of ``window_s`` every ``hop_s``."""
    window = int(round(window_s * buf.sample_rate))
    hop = int(round(hop_s * buf.sample_rate))
    if window < 2:
        raise AudioError("window must span at least 2 samples")
    if hop <= 0 or not window_s > hop_s:
        raise AudioError("need window_s > hop_s > 0")
    if len(buf) < window:
        raise AudioError(f"signal of {len(buf)} samples is shorter than one {window}-sample window")
    n = frame_count(len(buf), window, hop)
    view = np.lib.stride_tricks.sliding_window_view(buf.samples, window)[::hop][:n]
    frames = view * np.hamming(window)
    starts = np.arange(n) * hop / buf.sample_rate
    return FrameSet(frames, hop / buf.sample_rate, window / buf.sample_rate, starts, buf.sample_rate)
