"""Praat TextGrid (long text format) parsing and rhotic-segment binning."""

from __future__ import annotations

import codecs
import csv
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .series import FrameSeries, format_float, parse_float

BOUND_TOL = 1e-6
BIN_EPS = 1e-9


class TextGridError(ValueError):
    """Malformed TextGrid; ``line`` is the 1-based source line when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class AnnotationError(ValueError):
    pass


@dataclass
class Interval:
    xmin: float
    xmax: float
    text: str = ""


@dataclass
class IntervalTier:
    name: str
    xmin: float
    xmax: float
    intervals: list = field(default_factory=list)


@dataclass
class TextGrid:
    xmin: float
    xmax: float
    tiers: list = field(default_factory=list)

    def tier(self, name: str) -> IntervalTier:
        for t in self.tiers:
            if t.name == name:
                return t
        names = ", ".join(repr(t.name) for t in self.tiers) or "none"
        raise AnnotationError(f"tier {name!r} not found; available tiers: {names}")

    @property
    def tier_names(self):
        return [t.name for t in self.tiers]


@dataclass
class RhoticInterval:
    start_s: float
    end_s: float
    label: str = ""

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise AnnotationError(f"interval end {self.end_s} must exceed start {self.start_s}")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


# -- parsing ---------------------------------------------------------------

_KV = re.compile(r'^\s*([A-Za-z][A-Za-z ]*?)\s*=\s*(.*?)\s*$', re.S)
_TIERS = re.compile(r"^\s*tiers\?\s*(\S+)\s*$")
_HEADER_ITEM = re.compile(r"^\s*(item|intervals|points)\s*\[(\d*)\]\s*:\s*$")
_SIZE = re.compile(r"^\s*(intervals|points)\s*:\s*size\s*=\s*(\S+)\s*$")


def _logical_lines(text: str):
    """Yield (line_no, line) joining physical lines inside open string literals."""
    lines = text.split("\n")
    i = 0
    while i < len(lines):
        start = i
        buf = lines[i].rstrip("\r")
        while buf.count('"') % 2 == 1:
            i += 1
            if i >= len(lines):
                raise TextGridError("unterminated string literal", start + 1)
            buf += "\n" + lines[i].rstrip("\r")
        i += 1
        if buf.strip():
            yield start + 1, buf


def _unquote(value: str, line: int) -> str:
    if len(value) < 2 or not (value.startswith('"') and value.endswith('"')):
        raise TextGridError(f"expected a quoted string, got {value!r}", line)
    inner = value[1:-1]
    # a lone quote inside means the literal ended early
    if '"' in inner.replace('""', ""):
        raise TextGridError("stray quote in string literal", line)
    return inner.replace('""', '"')


def _quote(text: str) -> str:
    return '"' + text.replace('"', '""') + '"'


class _Cursor:
    def __init__(self, text: str):
        self.lines = list(_logical_lines(text))
        self.pos = 0
        self.last_line = self.lines[-1][0] if self.lines else 1

    def peek(self):
        return self.lines[self.pos] if self.pos < len(self.lines) else (self.last_line, None)

    def take(self):
        line = self.peek()
        if line[1] is None:
            raise TextGridError("unexpected end of file", self.last_line)
        self.pos += 1
        return line

    def kv(self, key: str) -> tuple[int, str]:
        no, line = self.take()
        m = _KV.match(line)
        if not m or m.group(1).strip() != key:
            raise TextGridError(f"expected '{key} = ...', got {line.strip()!r}", no)
        return no, m.group(2)

    def number(self, key: str) -> float:
        no, raw = self.kv(key)
        try:
            value = float(raw)
        except ValueError:
            raise TextGridError(f"{key}: non-numeric value {raw!r}", no) from None
        if not math.isfinite(value):
            raise TextGridError(f"{key}: non-finite value {raw!r}", no)
        return value

    def integer(self, key: str) -> int:
        no, raw = self.kv(key)
        if not re.fullmatch(r"\d+", raw):
            raise TextGridError(f"{key}: expected a non-negative integer, got {raw!r}", no)
        return int(raw)

    def string(self, key: str) -> str:
        no, raw = self.kv(key)
        return _unquote(raw, no)

    def header(self, kind: str, index: str | None) -> int:
        no, line = self.take()
        m = _HEADER_ITEM.match(line)
        if not m or m.group(1) != kind or (index is not None and m.group(2) != index):
            want = f"{kind} [{index}]:" if index is not None else f"{kind} []:"
            raise TextGridError(f"expected {want!r}, got {line.strip()!r}", no)
        return no

    def size(self, kind: str) -> tuple[int, int]:
        no, line = self.take()
        m = _SIZE.match(line)
        if not m or m.group(1) != kind or not m.group(2).isdigit():
            raise TextGridError(f"expected '{kind}: size = N', got {line.strip()!r}", no)
        return no, int(m.group(2))


def parse_textgrid(text: str) -> TextGrid:
    """Parse a long-format TextGrid.  Point tiers are skipped with a warning."""
    if text.startswith("\ufeff"):
        text = text[1:]
    cur = _Cursor(text)
    if cur.string("File type") != "ooTextFile":
        raise TextGridError("File type must be \"ooTextFile\"", cur.lines[0][0])
    no = cur.peek()[0]
    if cur.string("Object class") != "TextGrid":
        raise TextGridError('Object class must be "TextGrid"', no)
    xmin = cur.number("xmin")
    no = cur.peek()[0]
    xmax = cur.number("xmax")
    if xmax < xmin:
        raise TextGridError("grid xmax precedes xmin", no)
    no, line = cur.take()
    m = _TIERS.match(line)
    if not m:
        raise TextGridError(f"expected 'tiers? <exists>', got {line.strip()!r}", no)
    exists = m.group(1)
    if exists == "<absent>":
        return TextGrid(xmin, xmax, [])
    if exists != "<exists>":
        raise TextGridError(f"tiers? must be <exists> or <absent>, got {exists!r}", no)
    size_line = cur.peek()[0]
    n_tiers = cur.integer("size")
    cur.header("item", "")
    tiers = []
    for k in range(1, n_tiers + 1):
        cur.header("item", str(k))
        cls_line = cur.peek()[0]
        cls = cur.string("class")
        name = cur.string("name")
        txmin = cur.number("xmin")
        no = cur.peek()[0]
        txmax = cur.number("xmax")
        if txmin < xmin - BOUND_TOL or txmax > xmax + BOUND_TOL or txmax < txmin:
            raise TextGridError(f"tier {name!r} bounds [{txmin}, {txmax}] outside grid [{xmin}, {xmax}]", no)
        if cls == "IntervalTier":
            tiers.append(IntervalTier(name, txmin, txmax, _parse_intervals(cur, name, txmin, txmax)))
        elif cls == "TextTier":
            _skip_points(cur)
            warnings.warn(f"skipping point tier {name!r}", stacklevel=2)
        else:
            raise TextGridError(f"unknown tier class {cls!r}", cls_line)
    if cur.peek()[1] is not None:
        no, line = cur.peek()
        raise TextGridError(f"unexpected content after {n_tiers} tiers (declared at line {size_line}): {line.strip()!r}", no)
    return TextGrid(xmin, xmax, tiers)


def _parse_intervals(cur: _Cursor, name, txmin, txmax) -> list:
    _, n = cur.size("intervals")
    out = []
    prev_end = txmin
    for j in range(1, n + 1):
        cur.header("intervals", str(j))
        start_line = cur.peek()[0]
        a = cur.number("xmin")
        b = cur.number("xmax")
        text = cur.string("text")
        if a < txmin - BOUND_TOL or b > txmax + BOUND_TOL:
            raise TextGridError(f"interval {j} of tier {name!r} outside tier bounds", start_line)
        if b <= a:
            raise TextGridError(f"interval {j} of tier {name!r} has xmax <= xmin", start_line)
        if a < prev_end - BOUND_TOL:
            raise TextGridError(f"interval {j} of tier {name!r} overlaps the previous interval", start_line)
        if a > prev_end + BOUND_TOL:
            raise TextGridError(f"gap before interval {j} of tier {name!r}", start_line)
        out.append(Interval(a, b, text))
        prev_end = b
    return out


def _skip_points(cur: _Cursor) -> None:
    _, n = cur.size("points")
    for j in range(1, n + 1):
        cur.header("points", str(j))
        no, line = cur.take()
        m = _KV.match(line)
        if not m or m.group(1).strip() not in ("number", "time"):
            raise TextGridError(f"expected point time, got {line.strip()!r}", no)
        cur.string("mark")


def _decode(data: bytes) -> str:
    if data.startswith(codecs.BOM_UTF16_LE) or data.startswith(codecs.BOM_UTF16_BE):
        return data.decode("utf-16")
    return data.decode("utf-8-sig")


def read_textgrid(path) -> TextGrid:
    path = Path(path)
    try:
        text = _decode(path.read_bytes())
    except UnicodeDecodeError as exc:
        raise TextGridError(f"{path}: not valid UTF-8/UTF-16 text ({exc})") from exc
    return parse_textgrid(text)


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def serialize_textgrid(grid: TextGrid) -> str:
    out = [
        'File type = "ooTextFile"',
        'Object class = "TextGrid"',
        "",
        f"xmin = {_num(grid.xmin)} ",
        f"xmax = {_num(grid.xmax)} ",
    ]
    if not grid.tiers:
        out.append("tiers? <absent> ")
        return "\n".join(out) + "\n"
    out += ["tiers? <exists> ", f"size = {len(grid.tiers)} ", "item []: "]
    for k, tier in enumerate(grid.tiers, 1):
        out += [
            f"    item [{k}]:",
            '        class = "IntervalTier" ',
            f"        name = {_quote(tier.name)} ",
            f"        xmin = {_num(tier.xmin)} ",
            f"        xmax = {_num(tier.xmax)} ",
            f"        intervals: size = {len(tier.intervals)} ",
        ]
        for j, iv in enumerate(tier.intervals, 1):
            out += [
                f"        intervals [{j}]:",
                f"            xmin = {_num(iv.xmin)} ",
                f"            xmax = {_num(iv.xmax)} ",
                f"            text = {_quote(iv.text)} ",
            ]
    return "\n".join(out) + "\n"


def write_textgrid(grid: TextGrid, path) -> None:
    Path(path).write_text(serialize_textgrid(grid), encoding="utf-8")


def extract_rhotic_interval(grid: TextGrid, tier_name: str = "rhotic") -> RhoticInterval:
    tier = grid.tier(tier_name)
    labeled = [iv for iv in tier.intervals if iv.text.strip()]
    if not labeled:
        raise AnnotationError(f"tier {tier_name!r} has no labeled interval")
    if len(labeled) > 1:
        spans = ", ".join(f"{iv.xmin}-{iv.xmax} {iv.text!r}" for iv in labeled)
        raise AnnotationError(f"ambiguous annotation on tier {tier_name!r}: {spans}")
    iv = labeled[0]
    return RhoticInterval(iv.xmin, iv.xmax, iv.text)


# -- binning ---------------------------------------------------------------


@dataclass
class BinnedSegment:
    bins: np.ndarray  # (n_bins, C)
    channels: tuple
    interval: RhoticInterval
    occupancy: np.ndarray


def bin_assignment(times: np.ndarray, interval: RhoticInterval, n_bins: int) -> np.ndarray:
    """Bin index per frame time, -1 outside ``[start, end)``."""
    rel = (np.asarray(times, dtype=np.float64) - interval.start_s) / interval.duration
    idx = np.floor(rel * n_bins + BIN_EPS).astype(int)
    idx[(idx < 0) | (idx >= n_bins)] = -1
    return idx


def bin_segment(series: FrameSeries, interval: RhoticInterval, n_bins: int = 10) -> BinnedSegment:
    """Average the frames inside the interval into ``n_bins`` equal-time bins.

    Frames are assigned by timestamp; an empty bin copies the nearest
    non-empty bin (the earlier one on a tie).
    """
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    half = 0.5 / series.frame_rate
    if len(series) == 0 or interval.start_s < series.times[0] - half or interval.end_s > series.times[-1] + half + 1 / series.frame_rate:
        raise AnnotationError(
            f"interval [{interval.start_s}, {interval.end_s}] outside series time range"
        )
    idx = bin_assignment(series.times, interval, n_bins)
    if not np.any(idx >= 0):
        raise AnnotationError("interval contains no frames")
    occupancy = np.bincount(idx[idx >= 0], minlength=n_bins)
    bins = np.zeros((n_bins, series.n_channels))
    filled = np.flatnonzero(occupancy)
    for k in filled:
        bins[k] = series.values[idx == k].mean(axis=0)
    for k in np.flatnonzero(occupancy == 0):
        nearest = filled[np.argmin(np.abs(filled - k))]
        bins[k] = bins[nearest]
    return BinnedSegment(bins, series.channels, interval, occupancy)


def write_binned_csv(seg: BinnedSegment, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("bin",) + tuple(seg.channels))
        for k, row in enumerate(seg.bins):
            w.writerow([k] + [format_float(v) for v in row])


def read_binned_csv(path) -> tuple[tuple, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "bin":
        raise ValueError(f"{path}: not a binned-segment CSV")
    channels = tuple(rows[0][1:])
    values = np.array([[parse_float(v) for v in r[1:]] for r in rows[1:]])
    return channels, values.reshape(len(rows) - 1, len(channels))
