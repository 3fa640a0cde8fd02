"""Multi-channel frame series shared by the formant, tract-variable and dataset code."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FRAME_RATE = 100.0
HOP_S = 0.01

TV_CHANNELS = ("la", "lp", "ttcl", "ttcd", "tbcl", "tbcd")
SOURCE_CHANNELS = ("aperiodicity", "periodicity", "pitch")
FORMANT_CHANNELS = ("zf1", "zf2", "zf3", "z_f3_minus_f2", "delta_z_f3_minus_f2")

FEATURE_SETS = {
    "FORMANTS5": FORMANT_CHANNELS,
    "TV6": TV_CHANNELS,
    "TV9": TV_CHANNELS + SOURCE_CHANNELS,
    "FUSED14": FORMANT_CHANNELS + TV_CHANNELS + SOURCE_CHANNELS,
}


class SeriesError(ValueError):
    pass


def format_float(value: float) -> str:
    """Shortest text that reads back to the identical double; empty for NaN."""
    value = float(value)
    if np.isnan(value):
        return ""
    return repr(value)


def parse_float(text: str) -> float:
    text = text.strip()
    return float("nan") if text == "" else float(text)


@dataclass
class FrameSeries:
    """Frames x channels matrix with one timestamp per frame.

    NaN marks an absent value.  ``times`` are frame centre times in seconds.
    """

    values: np.ndarray
    channels: tuple
    times: np.ndarray
    frame_rate: float = FRAME_RATE
    feature_set: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.times = np.asarray(self.times, dtype=np.float64)
        self.channels = tuple(self.channels)
        if self.values.ndim != 2:
            raise SeriesError("values must be a frames x channels matrix")
        if self.values.shape[1] != len(self.channels):
            raise SeriesError(
                f"{self.values.shape[1]} value columns but {len(self.channels)} channel names"
            )
        if self.times.shape != (self.values.shape[0],):
            raise SeriesError("one timestamp per frame required")
        if self.frame_rate <= 0:
            raise SeriesError("frame_rate must be positive")
        if self.feature_set is not None:
            expected = FEATURE_SETS.get(self.feature_set)
            if expected is None:
                raise SeriesError(f"unknown feature set {self.feature_set!r}")
            if expected != self.channels:
                raise SeriesError(f"channels do not match feature set {self.feature_set}")

    @classmethod
    def regular(cls, values, channels, t0=0.0, frame_rate=FRAME_RATE, feature_set=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        times = t0 + np.arange(values.shape[0]) / frame_rate
        return cls(values, channels, times, frame_rate, feature_set)

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.channels.index(name)]
        except ValueError:
            raise KeyError(f"no channel {name!r}; have {', '.join(self.channels)}") from None

    def replace(self, values=None, channels=None, feature_set=...):
        return FrameSeries(
            self.values.copy() if values is None else values,
            self.channels if channels is None else channels,
            self.times.copy(),
            self.frame_rate,
            self.feature_set if feature_set is ... else feature_set,
            dict(self.meta),
        )

    def as_feature_set(self, name: str) -> "FrameSeries":
        return self.replace(feature_set=name)

    def slice(self, start: int, stop: int) -> "FrameSeries":
        return FrameSeries(
            self.values[start:stop].copy(),
            self.channels,
            self.times[start:stop].copy(),
            self.frame_rate,
            self.feature_set,
            dict(self.meta),
        )


def align(a: FrameSeries, b: FrameSeries) -> tuple[FrameSeries, FrameSeries]:
    """Trim two series at the same frame rate to their common frames.

    Frames are matched by nearest timestamp; offsets smaller than half a
    frame are treated as the same frame.
    """
    if a.frame_rate != b.frame_rate:
        raise SeriesError("cannot align series with different frame rates")
    if len(a) == 0 or len(b) == 0:
        raise SeriesError("cannot align an empty series")
    offset = int(round((b.times[0] - a.times[0]) * a.frame_rate))
    a_start, b_start = max(offset, 0), max(-offset, 0)
    n = min(len(a) - a_start, len(b) - b_start)
    if n <= 0:
        raise SeriesError("series do not overlap in time")
    return a.slice(a_start, a_start + n), b.slice(b_start, b_start + n)


def concat_channels(parts, feature_set=None) -> FrameSeries:
    """Stack the channels of several time-aligned series."""
    parts = list(parts)
    base = parts[0]
    aligned = [base]
    for other in parts[1:]:
        for i in range(len(aligned)):
            aligned[i], other = align(aligned[i], other)
        aligned.append(other)
    values = np.concatenate([p.values for p in aligned], axis=1)
    channels = sum((p.channels for p in aligned), ())
    return FrameSeries(values, channels, aligned[0].times.copy(), base.frame_rate, feature_set)


def write_series_csv(series: FrameSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("time_s",) + series.channels)
        for t, row in zip(series.times, series.values):
            writer.writerow([format_float(t)] + [format_float(v) for v in row])


def read_series_csv(path, feature_set=None, frame_rate=FRAME_RATE) -> FrameSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "time_s":
        raise SeriesError(f"{path}: expected a header starting with time_s")
    header = tuple(rows[0][1:])
    body = rows[1:]
    times = np.array([parse_float(r[0]) for r in body])
    values = np.array([[parse_float(v) for v in r[1:]] for r in body]).reshape(len(body), len(header))
    return FrameSeries(values, header, times, frame_rate, feature_set)
