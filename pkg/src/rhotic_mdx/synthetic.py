"""Synthetic corpora with known formant targets for closed-loop testing.

Vowels are produced by a cascade of time-varying second-order resonators
driven by a pulse train.  Corpora contain WAV files, TextGrids with a
``rhotic`` tier, a participant registry, a norm table and a manifest; class 1
utterances carry a raised F2 inside the rhotic interval, which narrows F3-F2
by a chosen number of norm-table SDs.

Nothing here is real child speech and the norm table is invented.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter, sosfilt

from .dataset import UtteranceRecord, write_manifest, write_participants
from .formants import NormRow, NormTable, ParticipantProfile
from .segmentation import Interval, IntervalTier, TextGrid, write_textgrid
from .signal_io import AudioBuffer, write_wav

HOP_S = 0.01
WORDS = {"initial": "rake", "medial": "carrot", "final": "car"}


def resonator_sos(freq, bw, fs) -> np.ndarray:
    """Unit-DC-gain second-order all-pole section for one resonance."""
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a1, a2 = -2 * r * np.cos(theta), r * r
    return np.array([1.0 + a1 + a2, 0.0, 0.0, 1.0, a1, a2])


def pulse_train(f0, fs, hop_s=HOP_S) -> np.ndarray:
    """Unit impulses at the glottal period implied by a per-hop F0 contour."""
    f0 = np.atleast_1d(np.asarray(f0, dtype=np.float64))
    hop = int(round(hop_s * fs))
    inst = np.repeat(f0, hop)
    phase = np.cumsum(inst / fs)
    out = np.zeros_like(phase)
    out[np.flatnonzero(np.diff(np.floor(phase), prepend=-1.0) > 0)] = 1.0
    return out


def synthesize_vowel(
    freqs, bws, f0, fs: int, hop_s: float = HOP_S, noise: float = 0.0, rng=None, tilt: float = 0.9
) -> AudioBuffer:
    """All-pole synthesis with formants and bandwidths updated every hop.

    ``freqs`` and ``bws`` are (T, K) arrays (or (K,) for a steady vowel with
    ``f0`` giving the length); filter state carries across hops.  ``tilt`` is
    the one-pole source roll-off; values near 0.97 roughly cancel the 50 Hz
    pre-emphasis used by the tracker.
    """
    freqs = np.atleast_2d(np.asarray(freqs, dtype=np.float64))
    bws = np.atleast_2d(np.asarray(bws, dtype=np.float64))
    f0 = np.atleast_1d(np.asarray(f0, dtype=np.float64))
    t = max(len(freqs), len(f0))
    freqs = np.broadcast_to(freqs, (t, freqs.shape[1]))
    bws = np.broadcast_to(bws, freqs.shape)
    f0 = np.broadcast_to(f0, (t,))
    hop = int(round(hop_s * fs))
    src = pulse_train(f0, fs, hop_s)
    # glottal roll-off
    src = lfilter([1.0], [1.0, -tilt], src)
    if noise > 0:
        rng = rng or np.random.default_rng(0)
        src = src + noise * rng.standard_normal(src.shape)
    k = freqs.shape[1]
    zi = np.zeros((k, 2))
    out = np.empty_like(src)
    for i in range(t):
        sos = np.stack([resonator_sos(freqs[i, j], bws[i, j], fs) for j in range(k)])
        seg, zi = sosfilt(sos, src[i * hop : (i + 1) * hop], zi=zi)
        out[i * hop : (i + 1) * hop] = seg
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    return AudioBuffer(out, fs)


# -- norm table ------------------------------------------------------------


def synthetic_norm_table(ages=range(6, 19)) -> NormTable:
    """Smooth invented age/sex formant statistics (not measured data)."""
    rows = {}
    for age in ages:
        for sex in ("female", "male"):
            drop = (age - 6) * (16.0 if sex == "female" else 24.0)
            rows[(age, sex)] = NormRow(780.0 - 0.3 * drop, 90.0, 1750.0 - drop, 170.0, 3100.0 - 1.2 * drop, 210.0)
    return NormTable(rows)


# -- corpus ----------------------------------------------------------------


@dataclass
class CorpusSpec:
    n_participants: int = 4
    utterances_per_participant: int = 60
    sample_rate: int = 16000
    shift_sd: float = 0.8  # class 1 F3-F2 shift in norm-table SD units (negative direction)
    rhotic_share: float = 0.5
    duration_s: tuple = (1.0, 1.6)
    interval_s: tuple = (0.35, 0.55)
    participant_sd: float = 0.0  # speaker offset from the norm row, norm SD units
    utterance_sd: tuple = (0.15, 0.15, 0.15)  # per-utterance formant offsets, norm SD units
    frame_sd: tuple = (0.08, 0.10, 0.45)  # per-frame jitter, norm SD units
    upper_formant_gaps: tuple = (1000.0, 1900.0)  # F4, F5 above F3 (Hz)
    positions: tuple = ("initial", "medial", "final")  # where /r/ sits in the word, cycled per utterance
    seed: int = 7
    participants: list = field(
        default_factory=lambda: [
            ("S1", 9.3, "female", 6000.0),
            ("S2", 11.8, "male", 5000.0),
            ("S3", 14.5, "female", 5500.0),
            ("S4", 15.7, "male", 4500.0),
            ("S5", 10.4, "female", 5500.0),
            ("S6", 13.1, "male", 5000.0),
        ]
    )


def _smooth_noise(rng, n, sd, rho=0.6):
    e = rng.standard_normal(n) * sd * np.sqrt(1 - rho * rho)
    return lfilter([1.0], [1.0, -rho], e)


def _ramp(times, start, end, edge=0.03):
    """1 inside [start, end] with raised-cosine edges of ``edge`` seconds."""
    up = np.clip((times - start) / edge + 0.5, 0, 1)
    down = np.clip((end - times) / edge + 0.5, 0, 1)
    return 0.5 - 0.5 * np.cos(np.pi * np.minimum(up, down))


def _place_interval(rng, dur, length, position):
    if position == "initial":
        start = rng.uniform(0.05, 0.15)
    elif position == "final":
        start = dur - length - rng.uniform(0.05, 0.15)
    elif position == "medial":
        start = dur / 2 - length / 2 + rng.uniform(-0.1, 0.1)
    else:
        raise ValueError(f"unknown rhotic position {position!r}")
    return round(start, 3), round(start + length, 3)


def utterance_targets(
    rng, row: NormRow, spec: CorpusSpec, label: int, speaker_offset=(0.0, 0.0, 0.0), position: str = "medial"
):
    """Per-hop F1-F5 and bandwidth targets, F0 contour and the rhotic interval."""
    dur = rng.uniform(*spec.duration_s)
    n = int(round(dur / HOP_S))
    times = (np.arange(n) + 0.5) * HOP_S
    start, end = _place_interval(rng, dur, rng.uniform(*spec.interval_s), position)

    means = np.array([row.f1_mean, row.f2_mean, row.f3_mean])
    sds = np.array([row.f1_sd, row.f2_sd, row.f3_sd])
    freqs = means + (np.asarray(speaker_offset) + rng.standard_normal(3) * np.array(spec.utterance_sd)) * sds
    freqs = np.tile(freqs, (n, 1))
    for j in range(3):
        freqs[:, j] += _smooth_noise(rng, n, spec.frame_sd[j] * sds[j])
    if label == 1:
        delta = spec.shift_sd * np.hypot(row.f2_sd, row.f3_sd)
        freqs[:, 1] += delta * _ramp(times, start, end)
    # F4 and F5 sit above F3 as in real vowels, so spare LPC poles have somewhere to go
    upper = freqs[:, 2:3] + np.array(spec.upper_formant_gaps)
    freqs = np.concatenate([freqs, upper], axis=1)
    bws = np.tile([80.0, 100.0, 140.0, 200.0, 260.0], (n, 1)) * np.exp(0.1 * rng.standard_normal((n, 5)))
    f0 = rng.uniform(150, 190) * np.linspace(1.05, 0.95, n)
    return dur, freqs, bws, f0, (start, end)


def make_textgrid(duration: float, interval, word: str = "rake") -> TextGrid:
    start, end = interval
    rhotic = IntervalTier(
        "rhotic",
        0.0,
        duration,
        [Interval(0.0, start, ""), Interval(start, end, "ɹ"), Interval(end, duration, "")],
    )
    words = IntervalTier("word", 0.0, duration, [Interval(0.0, duration, word)])
    return TextGrid(0.0, duration, [words, rhotic])


def generate_corpus(out_dir, spec: CorpusSpec | None = None) -> Path:
    """Write a synthetic corpus and return the manifest path.

    Layout: ``audio/``, ``textgrids/``, ``manifest.csv``, ``participants.csv``,
    ``norms.csv`` and ``corpus.json`` (generation parameters).
    """
    spec = spec or CorpusSpec()
    if not 2 <= spec.n_participants <= len(spec.participants):
        raise ValueError(f"n_participants must be in 2..{len(spec.participants)}")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "textgrids").mkdir(parents=True, exist_ok=True)
    norms = synthetic_norm_table()
    norms.write_csv(out / "norms.csv")
    profiles = [ParticipantProfile(pid, age, sex, ceil) for pid, age, sex, ceil in spec.participants[: spec.n_participants]]
    write_participants(profiles, out / "participants.csv")

    rng = np.random.default_rng(spec.seed)
    records = []
    n_per = spec.utterances_per_participant
    for profile in profiles:
        _, row = norms.lookup(profile.age, profile.sex)
        speaker_offset = rng.standard_normal(3) * spec.participant_sd
        n1 = int(round(n_per * spec.rhotic_share))
        labels = rng.permutation(np.r_[np.ones(n1, int), np.zeros(n_per - n1, int)])
        for i, label in enumerate(labels):
            uid = f"{profile.id}_u{i + 1:03d}"
            position = spec.positions[i % len(spec.positions)]
            dur, freqs, bws, f0, interval = utterance_targets(rng, row, spec, int(label), speaker_offset, position)
            buf = synthesize_vowel(freqs, bws, f0, spec.sample_rate, noise=0.002, rng=rng)
            write_wav(out / "audio" / f"{uid}.wav", buf)
            grid = make_textgrid(len(buf) / spec.sample_rate, interval, WORDS.get(position, "rake"))
            write_textgrid(grid, out / "textgrids" / f"{uid}.TextGrid")
            # ratings are averages of nine binary listener votes
            votes = rng.integers(6, 10) if label else rng.integers(0, 6)
            records.append(
                UtteranceRecord(uid, profile.id, votes / 9.0, f"audio/{uid}.wav", f"textgrids/{uid}.TextGrid", "")
            )
    write_manifest(records, out / "manifest.csv")
    doc = asdict(spec)
    doc["note"] = "synthetic corpus; norm table values are invented"
    (out / "corpus.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return out / "manifest.csv"
