"""Ground-truth labels, fixed-length windows, LOPO folds and class weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formants import ParticipantProfile
from .series import FRAME_RATE, FrameSeries

LABEL_FLOOR = 0.66
WINDOW_FRAMES = 200  # 2 s at 100 Hz

MANIFEST_HEADER = ("utterance_id", "participant_id", "avg_rating", "audio_path", "textgrid_path", "tv_path")
PARTICIPANT_HEADER = ("participant_id", "age", "sex", "formant_ceiling_hz")

# PERCEPT-R speakers with consent for reuse: id -> (study id, age, ceiling Hz, utterances)
PERCEPT_R_SPEAKERS = {
    "33": ("6102", 15.7, 6000, 543),
    "34": ("6103", 14.9, 4500, 638),
    "35": ("6104", 9.3, 6000, 560),
    "36": ("6108", 14.5, 5000, 692),
    "37": ("3101", 9.8, 5500, 337),
    "38": ("3102", 11.8, 5000, 440),
}


class DatasetError(ValueError):
    pass


@dataclass
class UtteranceRecord:
    utterance_id: str
    participant_id: str
    avg_rating: float
    audio_path: str = ""
    textgrid_path: str = ""
    tv_path: str = ""
    features: dict = field(default_factory=dict)
    interval: object = None

    def __post_init__(self):
        self.utterance_id = str(self.utterance_id)
        self.participant_id = str(self.participant_id)
        self.avg_rating = float(self.avg_rating)
        if not 0.0 <= self.avg_rating <= 1.0:
            raise DatasetError(f"{self.utterance_id}: avg_rating {self.avg_rating} outside [0, 1]")

    @property
    def label(self) -> int:
        return derive_label(self.avg_rating)


@dataclass
class LabeledExample:
    features: np.ndarray  # (200, C)
    label: int
    participant_id: str
    utterance_id: str

    def __post_init__(self):
        if self.features.shape[0] != WINDOW_FRAMES:
            raise DatasetError(f"{self.utterance_id}: expected {WINDOW_FRAMES} frames")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError(f"{self.utterance_id}: non-finite feature values")


@dataclass(frozen=True)
class Fold:
    test_participant: str
    train: tuple
    validation: tuple
    test: tuple
    seed: int


def derive_label(avg_rating: float) -> int:
    """1 (fully rhotic) when the listener average reaches 0.66, else 0."""
    if not 0.0 <= avg_rating <= 1.0:
        raise DatasetError(f"rating {avg_rating} outside [0, 1]")
    return 1 if avg_rating >= LABEL_FLOOR else 0


def window_sequence(series, n_frames: int = WINDOW_FRAMES) -> np.ndarray:
    """Center-crop or symmetrically zero-pad to exactly ``n_frames`` rows.

    With odd padding the extra zero frame goes at the end.
    """
    x = series.values if isinstance(series, FrameSeries) else np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    t = x.shape[0]
    if t == 0:
        raise DatasetError("cannot window an empty series")
    if t >= n_frames:
        start = (t - n_frames) // 2
        return x[start : start + n_frames].copy()
    before = (n_frames - t) // 2
    out = np.zeros((n_frames, x.shape[1]))
    out[before : before + t] = x
    return out


def lopo_splits(records, val_fraction: float = 0.15, seed: int = 7) -> list[Fold]:
    """One fold per participant, validation drawn uniformly from the rest.

    Fold ``k`` (participants in sorted order) uses seed ``seed + k``.
    Items may be ``UtteranceRecord`` or anything with ``utterance_id`` and
    ``participant_id``.
    """
    if not 0 < val_fraction < 0.5:
        raise DatasetError("val_fraction must be in (0, 0.5)")
    records = list(records)
    participants = sorted({r.participant_id for r in records})
    if len(participants) < 2:
        raise DatasetError("leave-one-participant-out needs at least 2 participants")
    folds = []
    for k, pid in enumerate(participants):
        test = tuple(r.utterance_id for r in records if r.participant_id == pid)
        rest = [r.utterance_id for r in records if r.participant_id != pid]
        rng = np.random.default_rng(seed + k)
        order = rng.permutation(len(rest))
        n_val = int(np.floor(len(rest) * val_fraction))
        val = tuple(rest[i] for i in sorted(order[:n_val]))
        train = tuple(rest[i] for i in sorted(order[n_val:]))
        folds.append(Fold(pid, train, val, test, seed + k))
    return folds


def class_weights(labels) -> tuple[float, float]:
    """Inverse-frequency weights ``N / (2 N_c)``, mean 1 over the examples."""
    labels = np.asarray(labels).astype(int)
    n = labels.size
    n1 = int(labels.sum())
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise DatasetError("cannot weight single-class data")
    return n / (2.0 * n0), n / (2.0 * n1)


def read_manifest(path) -> list[UtteranceRecord]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [h for h in MANIFEST_HEADER[:3] if h not in (reader.fieldnames or ())]
        if missing:
            raise DatasetError(f"{path}: manifest lacks columns {missing}")
        base = path.parent
        out = []
        for rec in reader:
            def resolve(key):
                v = (rec.get(key) or "").strip()
                return str(base / v) if v and not Path(v).is_absolute() else v

            out.append(
                UtteranceRecord(
                    rec["utterance_id"],
                    rec["participant_id"],
                    float(rec["avg_rating"]),
                    resolve("audio_path"),
                    resolve("textgrid_path"),
                    resolve("tv_path"),
                )
            )
    ids = [r.utterance_id for r in out]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate utterance ids")
    return out


def write_manifest(records, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.utterance_id, r.participant_id, repr(r.avg_rating), r.audio_path, r.textgrid_path, r.tv_path])


def read_participants(path) -> dict[str, ParticipantProfile]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PARTICIPANT_HEADER:
            raise DatasetError(f"{path}: header must be {','.join(PARTICIPANT_HEADER)}")
        return {
            r["participant_id"]: ParticipantProfile(r["participant_id"], float(r["age"]), r["sex"], float(r["formant_ceiling_hz"]))
            for r in reader
        }


def write_participants(profiles, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARTICIPANT_HEADER)
        for p in profiles:
            w.writerow([p.id, p.age, p.sex, p.formant_ceiling_hz])


def make_example(series: FrameSeries, record: UtteranceRecord) -> LabeledExample:
    if series.frame_rate != FRAME_RATE:
        raise DatasetError(f"{record.utterance_id}: expected {FRAME_RATE} Hz frames")
    return LabeledExample(window_sequence(series), record.label, record.participant_id, record.utterance_id)


def stack_examples(examples) -> tuple[np.ndarray, np.ndarray]:
    """(N, 200, C) features and (N,) labels."""
    examples = list(examples)
    x = np.stack([e.features for e in examples]) if examples else np.zeros((0, WINDOW_FRAMES, 0))
    y = np.array([e.label for e in examples], dtype=np.float64)
    return x, y
