"""Formant tracking by Burg linear prediction, F3-F2 transforms and age/sex norming."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .series import FORMANT_CHANNELS, FrameSeries, format_float
from .signal_io import AudioBuffer, AudioError, frame_signal, preemphasize, resample

log = logging.getLogger(__name__)

SEXES = ("female", "male")


class FormantError(ValueError):
    pass


def parse_sex(value: str) -> str:
    v = str(value).strip().lower()
    if v in ("f", "female", "girl"):
        return "female"
    if v in ("m", "male", "boy"):
        return "male"
    raise FormantError(f"unknown sex {value!r}; expected female or male")


@dataclass(frozen=True)
class ParticipantProfile:
    id: str
    age: float
    sex: str
    formant_ceiling_hz: float

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "sex", parse_sex(self.sex))
        if not self.age > 0:
            raise FormantError(f"participant {self.id}: age must be positive")
        if not 3000 <= self.formant_ceiling_hz <= 8000:
            raise FormantError(
                f"participant {self.id}: formant ceiling {self.formant_ceiling_hz} Hz outside [3000, 8000]"
            )

    @property
    def analysis_rate(self) -> int:
        return int(round(2 * self.formant_ceiling_hz))


@dataclass
class FormantConfig:
    order: int = 10
    window_s: float = 0.025
    hop_s: float = 0.01
    preemphasis_hz: float = 50.0
    min_freq_hz: float = 90.0
    ceiling_margin_hz: float = 50.0
    max_bandwidth_hz: float = 700.0
    max_gap_frames: int = 3


@dataclass
class FormantFrame:
    time: float
    f1: float | None = None
    f2: float | None = None
    f3: float | None = None
    b1: float | None = None
    b2: float | None = None
    b3: float | None = None

    @property
    def present(self) -> bool:
        return self.f1 is not None


@dataclass
class FormantTrack:
    """F1-F3 (Hz) and bandwidths per 10 ms frame; rows of NaN are absent frames."""

    times: np.ndarray
    freqs: np.ndarray  # (T, 3)
    bandwidths: np.ndarray  # (T, 3)
    participant: ParticipantProfile | None = None

    def __len__(self):
        return self.times.shape[0]

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.freqs).any(axis=1)

    def frames(self) -> list[FormantFrame]:
        out = []
        for t, f, b in zip(self.times, self.freqs, self.bandwidths):
            if np.isnan(f).any():
                out.append(FormantFrame(float(t)))
            else:
                out.append(FormantFrame(float(t), *map(float, f), *map(float, b)))
        return out


@dataclass
class TransformTrack:
    f3_minus_f2: np.ndarray
    delta_f3_minus_f2: np.ndarray


@dataclass
class NormRow:
    f1_mean: float
    f1_sd: float
    f2_mean: float
    f2_sd: float
    f3_mean: float
    f3_sd: float


@dataclass
class NormTable:
    rows: dict = field(default_factory=dict)  # (age:int, sex) -> NormRow

    HEADER = ("age", "sex", "f1_mean", "f1_sd", "f2_mean", "f2_sd", "f3_mean", "f3_sd")

    def __post_init__(self):
        for key, row in self.rows.items():
            if min(row.f1_sd, row.f2_sd, row.f3_sd) <= 0:
                raise FormantError(f"norm row {key}: every SD must be positive")
        for sex in SEXES:
            ages = sorted(a for a, s in self.rows if s == sex)
            if ages and ages != list(range(ages[0], ages[-1] + 1)):
                raise FormantError(f"norm table ages for {sex} are not contiguous: {ages}")

    @classmethod
    def read_csv(cls, path) -> "NormTable":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"norm table not found: {path}")
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != cls.HEADER:
                raise FormantError(f"{path}: header must be {','.join(cls.HEADER)}")
            rows = {}
            for rec in reader:
                key = (int(rec["age"]), parse_sex(rec["sex"]))
                rows[key] = NormRow(*(float(rec[k]) for k in cls.HEADER[2:]))
        return cls(rows)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.HEADER)
            for (age, sex), r in sorted(self.rows.items()):
                w.writerow([age, sex, r.f1_mean, r.f1_sd, r.f2_mean, r.f2_sd, r.f3_mean, r.f3_sd])

    def lookup(self, age: float, sex: str, max_distance: float = 2.0) -> tuple[int, NormRow]:
        """Nearest integer-age row for ``sex``; ties go to the younger row."""
        sex = parse_sex(sex)
        ages = sorted(a for a, s in self.rows if s == sex)
        if not ages:
            raise FormantError(f"no norm rows for sex {sex}")
        best = min(ages, key=lambda a: (abs(a - age), a))
        if abs(best - age) > max_distance:
            raise FormantError(f"no norm row within {max_distance} years of age {age} ({sex})")
        return best, self.rows[(best, sex)]


# -- linear prediction -----------------------------------------------------


def _burg(frames: np.ndarray, order: int) -> np.ndarray:
    """Burg recursion on each row of ``frames``; returns A(z) = 1 + sum a_k z^-k."""
    n_frames, n = frames.shape
    f = frames.copy()
    b = frames.copy()
    a = np.zeros((n_frames, order + 1))
    a[:, 0] = 1.0
    for m in range(order):
        ef = f[:, m + 1 :]
        eb = b[:, m : n - 1]
        num = np.einsum("ij,ij->i", ef, eb)
        den = np.einsum("ij,ij->i", ef, ef) + np.einsum("ij,ij->i", eb, eb)
        k = np.where(den > 0, -2.0 * num / np.where(den > 0, den, 1.0), 0.0)
        prev = a[:, : m + 2].copy()
        a[:, : m + 2] = prev + k[:, None] * prev[:, ::-1]
        f_new = ef + k[:, None] * eb
        b_new = eb + k[:, None] * ef
        f[:, m + 1 :] = f_new
        b[:, m + 1 :] = b_new
    return a


def lpc_burg(frame, order: int) -> np.ndarray:
    """Burg LPC predictor coefficients.

    Returns ``a[1..order]`` in predictor form, ``x[n] ~ sum_k a[k] x[n-k]``,
    so the all-pole model is ``1 / (1 - sum_k a[k] z^-k)``.
    """
    x = np.asarray(frame, dtype=np.float64)
    if order < 2:
        raise FormantError("LPC order must be at least 2")
    if x.ndim != 1 or x.shape[0] <= order:
        raise FormantError(f"frame length {x.shape[0]} must exceed order {order}")
    if not np.any(x):
        raise FormantError("degenerate frame (all zeros)")
    return -_burg(x[None, :], order)[0, 1:]


def lpc_to_formants(coeffs, sample_rate: float, max_formants: int | None = None):
    """Resonance (frequency, bandwidth) pairs from predictor coefficients.

    One candidate per complex pole with angle in (0, pi), sorted by frequency.
    Returns two arrays (frequencies Hz, bandwidths Hz).
    """
    poly = np.concatenate([[1.0], -np.asarray(coeffs, dtype=np.float64)])
    try:
        roots = np.roots(poly)
    except np.linalg.LinAlgError as exc:
        raise FormantError(f"root finder did not converge: {exc}") from exc
    return _poles_to_candidates(roots, sample_rate, max_formants)


def _poles_to_candidates(roots, sample_rate, max_formants=None):
    roots = roots[np.imag(roots) > 0]
    theta = np.angle(roots)
    keep = (theta > 0) & (theta < np.pi)
    roots, theta = roots[keep], theta[keep]
    freqs = theta * sample_rate / (2 * np.pi)
    bws = -(sample_rate / np.pi) * np.log(np.abs(roots))
    order = np.argsort(freqs, kind="stable")
    freqs, bws = freqs[order], bws[order]
    if max_formants is not None:
        freqs, bws = freqs[:max_formants], bws[:max_formants]
    return freqs, bws


def _batch_roots(a: np.ndarray) -> np.ndarray:
    """Roots of many monic polynomials via companion-matrix eigenvalues."""
    n_frames, p1 = a.shape
    p = p1 - 1
    comp = np.zeros((n_frames, p, p))
    comp[:, 0, :] = -a[:, 1:]
    comp[:, np.arange(1, p), np.arange(p - 1)] = 1.0
    try:
        return np.linalg.eigvals(comp)
    except np.linalg.LinAlgError as exc:
        raise FormantError(f"root finder did not converge: {exc}") from exc


def _interpolate_gaps(values: np.ndarray, max_gap: int) -> np.ndarray:
    """Linearly fill interior runs of NaN rows no longer than ``max_gap``."""
    out = values.copy()
    missing = np.isnan(out).any(axis=1)
    t = 0
    n = len(out)
    while t < n:
        if not missing[t]:
            t += 1
            continue
        start = t
        while t < n and missing[t]:
            t += 1
        if start > 0 and t < n and t - start <= max_gap:
            left, right = out[start - 1], out[t]
            span = t - start + 1
            for k in range(start, t):
                w = (k - start + 1) / span
                out[k] = (1 - w) * left + w * right
    return out


def track_formants(buf: AudioBuffer, profile: ParticipantProfile, config: FormantConfig | None = None) -> FormantTrack:
    """F1-F3 every 10 ms using the participant's formant ceiling."""
    cfg = config or FormantConfig()
    if len(buf) == 0:
        raise AudioError("empty audio buffer")
    rate = profile.analysis_rate
    x = preemphasize(resample(buf, rate), cfg.preemphasis_hz)
    fs = frame_signal(x, cfg.window_s, cfg.hop_s)
    frames = fs.frames
    n_frames = frames.shape[0]
    freqs = np.full((n_frames, 3), np.nan)
    bws = np.full((n_frames, 3), np.nan)

    energy = np.einsum("ij,ij->i", frames, frames)
    live = np.flatnonzero(energy > 0)
    if live.size:
        a = _burg(frames[live], cfg.order)
        roots = _batch_roots(a)
        roof = profile.formant_ceiling_hz - cfg.ceiling_margin_hz
        for row, idx in enumerate(live):
            f, b = _poles_to_candidates(roots[row], rate)
            ok = (f >= cfg.min_freq_hz) & (f <= roof) & (b < cfg.max_bandwidth_hz)
            f, b = f[ok], b[ok]
            if f.shape[0] >= 3:
                freqs[idx] = f[:3]
                bws[idx] = b[:3]

    both = _interpolate_gaps(np.concatenate([freqs, bws], axis=1), cfg.max_gap_frames)
    return FormantTrack(fs.center_times.copy(), both[:, :3], both[:, 3:], profile)


# -- transforms and norming ------------------------------------------------


def central_difference(x: np.ndarray) -> np.ndarray:
    """``(x[t+1] - x[t-1]) / 2`` with edge replication; NaN neighbours give NaN."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return x.copy()
    padded = np.concatenate([x[:1], x, x[-1:]])
    return (padded[2:] - padded[:-2]) / 2.0


def formant_transforms(track: FormantTrack) -> TransformTrack:
    if len(track) == 0:
        raise FormantError("empty formant track")
    distance = track.freqs[:, 2] - track.freqs[:, 1]
    return TransformTrack(distance, central_difference(distance))


def normalize_formants(
    track: FormantTrack,
    norms: NormTable,
    profile: ParticipantProfile | None = None,
) -> FrameSeries:
    """Age-and-sex z-scores: zF1, zF2, zF3, z(F3-F2) and its central difference.

    The F3-F2 row statistics are mean F3 - mean F2 and sqrt(sd3^2 + sd2^2).
    Absent frames become 0 after normalization.
    """
    profile = profile or track.participant
    if profile is None:
        raise FormantError("a participant profile is required for norming")
    matched_age, row = norms.lookup(profile.age, profile.sex)
    means = np.array([row.f1_mean, row.f2_mean, row.f3_mean])
    sds = np.array([row.f1_sd, row.f2_sd, row.f3_sd])
    z = (track.freqs - means) / sds
    dist_mean = row.f3_mean - row.f2_mean
    dist_sd = float(np.hypot(row.f3_sd, row.f2_sd))
    z_dist = (track.freqs[:, 2] - track.freqs[:, 1] - dist_mean) / dist_sd
    values = np.column_stack([z, z_dist, central_difference(z_dist)])
    values = np.where(np.isnan(values), 0.0, values)
    out = FrameSeries(values, FORMANT_CHANNELS, track.times.copy(), feature_set="FORMANTS5")
    out.meta.update(norm_age=matched_age, norm_sex=profile.sex, delta_order="normalize_then_difference")
    return out


FORMANT_CSV_HEADER = ("time_s", "f1", "f2", "f3", "f3_minus_f2", "delta_f3_minus_f2")


def write_formant_csv(track: FormantTrack, path) -> None:
    tr = formant_transforms(track)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORMANT_CSV_HEADER)
        for i, t in enumerate(track.times):
            row = [t, *track.freqs[i], tr.f3_minus_f2[i], tr.delta_f3_minus_f2[i]]
            w.writerow([format_float(v) for v in row])
