import json
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhotic_mdx.segmentation import (
    AnnotationError,
    Interval,
    IntervalTier,
    RhoticInterval,
    TextGrid,
    TextGridError,
    bin_segment,
    extract_rhotic_interval,
    parse_textgrid,
    read_binned_csv,
    read_textgrid,
    serialize_textgrid,
    write_binned_csv,
)
from rhotic_mdx.series import FrameSeries

SUITE = Path(__file__).parent / "data" / "textgrid"
EXPECTED = json.loads((SUITE / "expected.json").read_text(encoding="utf-8"))


def as_plain(grid: TextGrid) -> dict:
    return {
        "xmin": grid.xmin,
        "xmax": grid.xmax,
        "tiers": [{"name": t.name, "intervals": [[iv.xmin, iv.xmax, iv.text] for iv in t.intervals]} for t in grid.tiers],
    }


def load_quiet(path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return read_textgrid(path)


def test_suite_has_25_files():
    assert len(EXPECTED) == 25
    assert sorted(EXPECTED) == sorted(p.name for p in SUITE.glob("*.TextGrid"))


@pytest.mark.parametrize("name", sorted(n for n in EXPECTED if "error_line" not in EXPECTED[n]))
def test_conformance_valid(name):
    grid = load_quiet(SUITE / name)
    assert as_plain(grid) == EXPECTED[name]
    again = parse_textgrid(serialize_textgrid(grid))
    assert as_plain(again) == as_plain(grid)


@pytest.mark.parametrize("name", sorted(n for n in EXPECTED if "error_line" in EXPECTED[n]))
def test_conformance_malformed(name):
    with pytest.raises(TextGridError) as info:
        load_quiet(SUITE / name)
    assert info.value.line == EXPECTED[name]["error_line"]
    assert str(info.value).startswith(f"line {EXPECTED[name]['error_line']}:")


def test_escaped_quote_label():
    grid = load_quiet(SUITE / "v04_escaped_quotes.TextGrid")
    assert grid.tiers[0].intervals[0].text == 'he said "r"'
    assert 'text = "he said ""r"""' in serialize_textgrid(grid)


def test_point_tier_warns():
    with pytest.warns(UserWarning, match="point tier"):
        read_textgrid(SUITE / "v14_point_tier_skipped.TextGrid")


def test_missing_object_class_positioned():
    with pytest.raises(TextGridError, match=r"^line \d+: expected 'Object class"):
        load_quiet(SUITE / "e01_missing_object_class.TextGrid")


def test_short_format_rejected():
    text = 'File type = "ooTextFile"\nObject class = "TextGrid"\n\n0\n1\n<exists>\n1\n'
    with pytest.raises(TextGridError):
        parse_textgrid(text)


def test_invalid_bytes_rejected(tmp_path):
    p = tmp_path / "bad.TextGrid"
    p.write_bytes(b"\xff\xfe\xff\x00garbage\xc3")
    with pytest.raises(TextGridError):
        read_textgrid(p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=8), min_size=1, max_size=6))
def test_random_labels_round_trip(labels):
    edges = np.round(np.linspace(0, 2, len(labels) + 1), 6)
    tier = IntervalTier("t", 0.0, 2.0, [Interval(float(a), float(b), s) for a, b, s in zip(edges[:-1], edges[1:], labels)])
    grid = TextGrid(0.0, 2.0, [tier])
    assert as_plain(parse_textgrid(serialize_textgrid(grid))) == as_plain(grid)


@settings(max_examples=100, deadline=None)
@given(st.binary(max_size=400))
def test_garbage_never_crashes(data):
    text = data.decode("latin-1")
    try:
        parse_textgrid(text)
    except TextGridError:
        pass


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 2))
def test_truncations_and_edits_give_positioned_errors(cut, mode):
    src = (SUITE / "v03_two_tiers.TextGrid").read_text(encoding="utf-8")
    cut = min(cut, len(src) - 1)
    text = src[:cut] if mode == 0 else src[:cut] + '"' + src[cut:] if mode == 1 else src[:cut] + "x" + src[cut + 1 :]
    try:
        parse_textgrid(text)
    except TextGridError as exc:
        assert exc.line is None or exc.line >= 1


# -- rhotic interval -------------------------------------------------------------


def _rhotic_grid(intervals, name="rhotic"):
    return TextGrid(0.0, 1.2, [IntervalTier(name, 0.0, 1.2, [Interval(*iv) for iv in intervals])])


def test_extract_rhotic_interval():
    grid = _rhotic_grid([(0, 0.5, ""), (0.5, 0.72, "ɹ"), (0.72, 1.2, "")])
    iv = extract_rhotic_interval(grid)
    assert (iv.start_s, iv.end_s, iv.label) == (0.5, 0.72, "ɹ")


def test_ambiguous_annotation():
    grid = _rhotic_grid([(0, 0.5, "ɹ"), (0.5, 0.72, "ɹ"), (0.72, 1.2, "")])
    with pytest.raises(AnnotationError, match="ambiguous annotation"):
        extract_rhotic_interval(grid)


def test_missing_tier_lists_available():
    with pytest.raises(AnnotationError, match="'phones'"):
        extract_rhotic_interval(_rhotic_grid([(0, 1.2, "x")], name="phones"))


def test_blank_only_tier():
    with pytest.raises(AnnotationError):
        extract_rhotic_interval(_rhotic_grid([(0, 0.6, " "), (0.6, 1.2, "")]))


# -- binning -----------------------------------------------------------------------


def _series(values, t0=0.0, times=None):
    values = np.asarray(values, dtype=np.float64)
    if times is None:
        return FrameSeries.regular(values, tuple(f"c{i}" for i in range(np.atleast_2d(values.T).shape[0])), t0=t0)
    return FrameSeries(values, tuple(f"c{i}" for i in range(values.shape[1])), times)


def brute_bins(times, start, end, n_bins):
    """Direct bin membership by comparing against every bin's edges."""
    length = end - start
    out = []
    for t in times:
        k = -1
        for j in range(n_bins):
            lo = start + j * length / n_bins
            hi = start + (j + 1) * length / n_bins
            if lo - 1e-9 <= t < hi - 1e-9:
                k = j
        out.append(k)
    return np.array(out)


def test_twenty_frames_pair_means():
    x = np.arange(20.0)[:, None]
    times = 0.5 + (np.arange(20) + 0.5) * 0.01
    seg = bin_segment(_series(x, times=times), RhoticInterval(0.5, 0.7), 10)
    assert np.allclose(seg.bins[:, 0], [0.5 + 2 * k for k in range(10)])
    assert np.all(seg.occupancy == 2)


def test_constant_channel():
    seg = bin_segment(_series(np.full((40, 1), 3.25)), RhoticInterval(0.05, 0.3), 10)
    assert np.all(seg.bins == 3.25)


def test_fifteen_frames_occupancy():
    start, end = 0.5, 0.65
    times = start + np.arange(15) * 0.01
    x = np.random.default_rng(0).standard_normal((15, 2))
    seg = bin_segment(_series(x, times=times), RhoticInterval(start, end), 10)
    assert list(seg.occupancy) == [2, 1, 2, 1, 2, 1, 2, 1, 2, 1]
    oracle = brute_bins(times, start, end, 10)
    assert list(np.bincount(oracle, minlength=10)) == list(seg.occupancy)
    for k in range(10):
        assert np.allclose(seg.bins[k], x[oracle == k].mean(axis=0))


def test_empty_bins_copy_nearest():
    times = np.array([0.0, 0.01, 0.02, 0.03, 0.04])
    x = np.arange(5.0)[:, None]
    seg = bin_segment(_series(x, times=times), RhoticInterval(0.015, 0.035), 10)
    assert not np.isnan(seg.bins).any()
    assert seg.bins.shape == (10, 1)
    assert seg.occupancy.sum() == 2


def test_uniform_occupancy_mean_of_means():
    x = np.random.default_rng(1).standard_normal((30, 3))
    times = 0.2 + (np.arange(30) + 0.5) * 0.01
    seg = bin_segment(_series(x, times=times), RhoticInterval(0.2, 0.5), 10)
    assert np.allclose(seg.bins.mean(axis=0), x.mean(axis=0), atol=1e-12)


def test_interval_outside_series():
    with pytest.raises(AnnotationError):
        bin_segment(_series(np.zeros((10, 1))), RhoticInterval(0.5, 0.9), 10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 300), st.floats(0.05, 0.3), st.integers(12, 50))
def test_time_shift_equivariance(shift_frames, length, n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal((n + 40, 2))
    a = _series(x)
    start = 0.1
    interval = RhoticInterval(start, min(start + length, a.times[-1]))
    dt = shift_frames * 0.01
    b = FrameSeries(x, a.channels, a.times + dt)
    sa = bin_segment(a, interval, 10)
    sb = bin_segment(b, RhoticInterval(interval.start_s + dt, interval.end_s + dt), 10)
    assert np.array_equal(sa.occupancy, sb.occupancy)
    assert np.allclose(sa.bins, sb.bins)


def test_binned_csv_round_trip(tmp_path):
    x = np.random.default_rng(2).standard_normal((30, 3))
    seg = bin_segment(_series(x), RhoticInterval(0.05, 0.25), 10)
    write_binned_csv(seg, tmp_path / "b.csv")
    channels, values = read_binned_csv(tmp_path / "b.csv")
    assert channels == seg.channels
    assert np.array_equal(values, seg.bins)
