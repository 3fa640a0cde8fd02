"""Tract-variable ingestion, utterance z-normalization and test stand-ins.

The speech-inversion network itself is external; its output reaches this
package as CSV files with one row per 10 ms frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .series import (
    FRAME_RATE,
    HOP_S,
    SOURCE_CHANNELS,
    TV_CHANNELS,
    FrameSeries,
    SeriesError,
    format_float,
)
from .signal_io import AudioBuffer

TV_RANGE_TOL = 1e-6
TIME_TOL = 1e-4
DEGENERATE_SD = 1e-8


class TVFormatError(ValueError):
    pass


@dataclass
class TractVariableFrame:
    time: float
    la: float
    lp: float
    ttcl: float
    ttcd: float
    tbcl: float
    tbcd: float


@dataclass
class SourceFrame:
    time: float
    aperiodicity: float
    periodicity: float
    pitch: float


@dataclass
class SourceConfig:
    window_s: float = 0.04
    hop_s: float = HOP_S
    min_pitch_hz: float = 60.0
    max_pitch_hz: float = 400.0
    voicing_threshold: float = 0.4
    octave_tolerance: float = 0.95


def load_tv_track(path) -> FrameSeries:
    """Read a TV6 or TV9 CSV written by the external inversion system."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TVFormatError(f"{path}: empty file")
    header = tuple(h.strip() for h in rows[0])
    if header == ("time_s",) + TV_CHANNELS:
        feature_set = "TV6"
    elif header == ("time_s",) + TV_CHANNELS + SOURCE_CHANNELS:
        feature_set = "TV9"
    else:
        raise TVFormatError(f"{path}: header {','.join(header)} does not match the TV schema")
    body = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise TVFormatError(f"{path}: non-numeric value ({exc})") from exc
    if any(len(r) != len(header) for r in body):
        raise TVFormatError(f"{path}: ragged rows")
    data = data.reshape(len(body), len(header))
    times, values = data[:, 0], data[:, 1:]
    if not np.all(np.isfinite(values)):
        raise TVFormatError(f"{path}: non-finite value")
    if len(times) > 1:
        steps = np.diff(times)
        if np.any(np.abs(steps - HOP_S) > TIME_TOL):
            bad = int(np.argmax(np.abs(steps - HOP_S) > TIME_TOL)) + 2
            raise TVFormatError(f"{path}: non-uniform timestamps near data row {bad}")
    tv = values[:, :6]
    if np.any(np.abs(tv) > 1.0 + TV_RANGE_TOL):
        r, c = np.argwhere(np.abs(tv) > 1.0 + TV_RANGE_TOL)[0]
        raise TVFormatError(f"{path}: TV out of range: {TV_CHANNELS[c]}={tv[r, c]} in data row {r + 1}")
    if feature_set == "TV9":
        src = values[:, 6:]
        if np.any(src[:, :2] < -TV_RANGE_TOL) or np.any(src[:, :2] > 1 + TV_RANGE_TOL) or np.any(src[:, 2] < 0):
            raise TVFormatError(f"{path}: source feature out of range")
    return FrameSeries(values, header[1:], times, FRAME_RATE, feature_set)


def export_tv_track(series: FrameSeries, path) -> None:
    if series.channels not in (TV_CHANNELS, TV_CHANNELS + SOURCE_CHANNELS):
        raise TVFormatError("series channels do not match the TV schema")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time_s",) + series.channels)
        for t, row in zip(series.times, series.values):
            w.writerow([format_float(t)] + [format_float(v) for v in row])


def znorm_utterance(series: FrameSeries) -> FrameSeries:
    """Per-channel (x - mean) / population SD over the utterance.

    NaN frames are excluded from the statistics and set to 0 afterwards;
    channels with SD below 1e-8 become all zeros.
    """
    if len(series) < 2:
        raise SeriesError("z-normalization needs at least 2 frames")
    x = series.values
    out = np.zeros_like(x)
    for c in range(x.shape[1]):
        col = x[:, c]
        ok = ~np.isnan(col)
        if ok.sum() < 2:
            continue
        mean = col[ok].mean()
        sd = np.sqrt(np.mean((col[ok] - mean) ** 2))
        if sd < DEGENERATE_SD:
            continue
        out[ok, c] = (col[ok] - mean) / sd
    return series.replace(values=out)


def _clamp(x):
    return np.clip(x, -1.0, 1.0)


def pseudo_invert(formants: FrameSeries) -> FrameSeries:
    """Deterministic affine stand-in for the inversion network.

    Maps normalized formants to six pseudo tract variables so the TV code
    paths can run end to end without the external model.
    """
    if formants.n_channels != 5:
        raise SeriesError(f"pseudo_invert needs 5 formant channels, got {formants.n_channels}")
    z = np.nan_to_num(formants.values, nan=0.0)
    zf1, zf2, zf3, zdist = z[:, 0], z[:, 1], z[:, 2], z[:, 3]
    values = np.column_stack(
        [
            _clamp(0.1 * zf1),  # la
            _clamp(-0.1 * zf1),  # lp
            _clamp(0.2 * zdist),  # ttcl
            _clamp(-0.2 * zf3),  # ttcd
            _clamp(-0.4 * zf2),  # tbcl
            _clamp(0.3 * zf3),  # tbcd
        ]
    )
    values = values + 0.0  # no negative zeros in exported text
    return FrameSeries(values, TV_CHANNELS, formants.times.copy(), formants.frame_rate, "TV6")


def estimate_source_features(buf: AudioBuffer, config: SourceConfig | None = None) -> FrameSeries:
    """Autocorrelation voicing and pitch every 10 ms.

    Periodicity is the highest normalized autocorrelation in the pitch lag
    band; pitch is reported only above the voicing threshold.
    """
    cfg = config or SourceConfig()
    fs = buf.sample_rate
    window = int(round(cfg.window_s * fs))
    hop = int(round(cfg.hop_s * fs))
    lag_min = max(1, int(np.floor(fs / cfg.max_pitch_hz)))
    lag_max = min(window - 2, int(np.ceil(fs / cfg.min_pitch_hz)))
    x = buf.samples
    if len(x) < window:
        x = np.concatenate([x, np.zeros(window - len(x))])
    n_frames = (len(x) - window) // hop + 1
    values = np.zeros((n_frames, 3))
    values[:, 0] = 1.0
    lags = np.arange(lag_min, lag_max + 1)
    for i in range(n_frames):
        seg = x[i * hop : i * hop + window]
        seg = seg - seg.mean()
        if not np.any(seg):
            continue
        r = _normalized_autocorr(seg, lags)
        peak = float(r.max())
        if peak <= 0:
            continue
        periodicity = min(peak, 1.0)
        values[i, 0] = 1.0 - periodicity
        values[i, 1] = periodicity
        if periodicity > cfg.voicing_threshold:
            # earliest local maximum close to the global one avoids octave errors
            k = _first_strong_peak(r, cfg.octave_tolerance * peak)
            values[i, 2] = fs / _refine_lag(r, k, lags)
    times = (np.arange(n_frames) * hop + window / 2) / fs
    return FrameSeries(values, SOURCE_CHANNELS, times, FRAME_RATE)


def _normalized_autocorr(seg: np.ndarray, lags: np.ndarray) -> np.ndarray:
    n = len(seg)
    spec = np.fft.rfft(seg, 2 * n)
    ac = np.fft.irfft(spec * np.conj(spec))[:n]
    energy = np.concatenate([[0.0], np.cumsum(seg**2)])
    head = energy[n - lags]  # sum of seg[:n-lag]^2
    tail = energy[n] - energy[lags]  # sum of seg[lag:]^2
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, ac[lags] / denom, 0.0)
    return r


def _first_strong_peak(r: np.ndarray, threshold: float) -> int:
    for k in range(len(r)):
        left = r[k - 1] if k > 0 else -np.inf
        right = r[k + 1] if k + 1 < len(r) else -np.inf
        if r[k] >= threshold and r[k] >= left and r[k] >= right:
            return k
    return int(np.argmax(r))


def _refine_lag(r: np.ndarray, k: int, lags: np.ndarray) -> float:
    if 0 < k < len(r) - 1:
        a, b, c = r[k - 1], r[k], r[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            return float(lags[k] + 0.5 * (a - c) / denom)
    return float(lags[k])
