import numpy as np
import pytest

from QTwttToolkit.core.tagstream import (
    D1, D2, D3, D4, DETECTORS, Channel, TimeTagStream,
    by_label, clip_to_span, common_span, covering_span, merge, relabel, shift, slice_window,
)


def stream(tags, span=(0, 100), channel=D1):
    return TimeTagStream(channel, np.asarray(tags, dtype=np.int64), span)


def test_channel_labels_and_indices():
    assert [c.index for c in DETECTORS] == [0, 1, 2, 3]
    assert Channel.from_index(2) == D3
    assert Channel.parse(" D4 ") == D4
    assert Channel.parse(D2) is D2
    assert not Channel("idler").is_detector
    with pytest.raises(ValueError):
        Channel("idler").index
    with pytest.raises(ValueError):
        Channel.from_index(4)
    with pytest.raises(ValueError):
        Channel("")


def test_stream_invariants():
    with pytest.raises(ValueError):
        stream([20, 10])
    with pytest.raises(ValueError):
        stream([10, 100])
    with pytest.raises(ValueError):
        stream([], span=(5, 4))
    s = stream([10, 10, 20])
    assert len(s) == 3
    assert s.is_integer
    with pytest.raises(ValueError):
        s.tags[0] = 0


def test_stream_does_not_freeze_caller_array():
    tags = np.array([1, 2, 3], dtype=np.int64)
    stream(tags)
    tags[0] = 0
    assert tags[0] == 0


def test_slice_window_half_open():
    s = stream([10, 20, 30])
    assert slice_window(s, 15, 30).tags.tolist() == [20]
    assert slice_window(s, 15, 30).span == (15, 30)
    assert slice_window(s, 0, 100).tags.tolist() == [10, 20, 30]
    assert slice_window(s, 40, 50).tags.tolist() == []
    assert s.tags.tolist() == [10, 20, 30]
    with pytest.raises(ValueError):
        slice_window(s, 30, 15)


def test_merge_examples():
    assert merge(stream([1, 3]), stream([2])).tags.tolist() == [1, 2, 3]
    assert merge(stream([1, 2]), stream([])).tags.tolist() == [1, 2]
    assert merge(stream([1]), stream([1])).tags.tolist() == [1, 1]
    with pytest.raises(ValueError):
        merge(stream([1]), stream([2], channel=D2))
    with pytest.raises(ValueError):
        merge(stream([1], span=(0, 10)), stream([50], span=(20, 60)))


def test_merge_span_is_hull():
    merged = merge(stream([1], span=(0, 10)), stream([12], span=(10, 20)))
    assert merged.span == (0, 20)


def test_slices_of_complementary_windows_merge_back():
    rng = np.random.default_rng(3)
    s = stream(np.sort(rng.integers(0, 1000, 500)), span=(0, 1000))
    for cut in (0, 1, 337, 999, 1000):
        back = merge(slice_window(s, 0, cut), slice_window(s, cut, 1000))
        assert np.array_equal(back.tags, s.tags)


def test_merge_random_streams_sorted_and_complete():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = stream(np.sort(rng.integers(0, 100, rng.integers(0, 50))))
        b = stream(np.sort(rng.integers(0, 100, rng.integers(0, 50))))
        m = merge(a, b)
        assert len(m) == len(a) + len(b)
        assert np.all(np.diff(m.tags) >= 0)


def test_float_tags_are_kept_continuous():
    s = TimeTagStream(Channel("signal"), np.array([0.25, 1.5]), (0, 2))
    assert not s.is_integer
    assert s.tags.dtype == np.float64


def test_helpers():
    s = stream([10, 20, 30])
    assert relabel(s, "D3").channel == D3
    assert shift(s, 5).tags.tolist() == [15, 25, 35]
    assert shift(s, 5).span == (5, 105)
    assert clip_to_span(s, 15, 25).tags.tolist() == [20]
    assert common_span([stream([], (0, 50)), stream([], (10, 100))]) == (10, 50)
    with pytest.raises(ValueError):
        common_span([stream([], (0, 5)), stream([], (5, 10))])
    assert covering_span(np.array([-0.5, 99.2]), 0, 50) == (-1, 100)
    assert by_label({"D1": s})[D1] is s
    assert stream([10, 20], span=(0, 10**12)).rate_hz == pytest.approx(2.0)
    assert TimeTagStream("D2", [], (0, 5)).duration_ps == 5
