import numpy as np
import pytest

from QTwttToolkit.core.tag_io import (
    HEADER_DTYPE,
    MAGIC,
    RECORD_DTYPE,
    BadMagicError,
    TagFormatError,
    TruncatedRecordError,
    UnsortedTagsError,
    UnsupportedVersionError,
    parse_source_spec,
    read_tags,
    write_tags,
)
from QTwttToolkit.core.tagstream import D1, D2, D3, D4, TimeTagStream


def random_streams(seed=0, n=200):
    rng = np.random.default_rng(seed)
    out = {}
    for ch in (D1, D2, D3, D4):
        tags = np.sort(rng.integers(-(10**9), 10**12, n))
        out[ch] = TimeTagStream(ch, tags, (-(10**9), 10**12))
    return out


def test_record_layout():
    assert HEADER_DTYPE.itemsize == 16
    assert RECORD_DTYPE.itemsize == 9


def test_binary_round_trip(tmp_path):
    streams = random_streams()
    path = write_tags(streams, tmp_path / "tags.qtts")
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert len(raw) == 16 + 9 * 800
    back = read_tags(path)
    assert set(back) == set(streams)
    for ch, s in streams.items():
        assert np.array_equal(back[ch].tags, s.tags)


def test_csv_and_binary_parse_identically(tmp_path):
    streams = random_streams(seed=4)
    a = read_tags(write_tags(streams, tmp_path / "tags.qtts"))
    b = read_tags(write_tags(streams, tmp_path / "tags.csv"))
    assert (tmp_path / "tags.csv").read_text().splitlines()[0] == "channel,time_ps"
    for ch in streams:
        assert np.array_equal(a[ch].tags, b[ch].tags)
        assert a[ch].span == b[ch].span


def test_span_is_common_hull(tmp_path):
    streams = {
        D1: TimeTagStream(D1, np.array([5, 9]), (0, 100)),
        D2: TimeTagStream(D2, np.array([7, 40]), (0, 100)),
    }
    back = read_tags(write_tags(streams, tmp_path / "t.qtts"))
    assert back[D1].span == back[D2].span == (5, 41)


def test_channel_selection(tmp_path):
    path = write_tags(random_streams(), tmp_path / "tags.qtts")
    only = read_tags(path, ["D3"])
    assert list(only) == [D3]
    streams = {D1: TimeTagStream(D1, np.array([1]), (0, 2))}
    path = write_tags(streams, tmp_path / "one.qtts")
    with pytest.raises(ValueError):
        read_tags(path, [D2])


def test_bad_magic(tmp_path):
    path = write_tags(random_streams(), tmp_path / "tags.qtts")
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_tags(path)


def test_unsupported_version(tmp_path):
    path = write_tags(random_streams(), tmp_path / "tags.qtts")
    raw = bytearray(path.read_bytes())
    raw[4] = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedVersionError):
        read_tags(path)


def test_truncated_record(tmp_path):
    path = write_tags(random_streams(), tmp_path / "tags.qtts")
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(TruncatedRecordError):
        read_tags(path)
    (tmp_path / "short.qtts").write_bytes(b"QTTS")
    with pytest.raises(TruncatedRecordError):
        read_tags(tmp_path / "short.qtts")


def test_unsorted_channel(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("channel,time_ps\nD1,30\nD1,10\n")
    with pytest.raises(UnsortedTagsError):
        read_tags(path)


def test_csv_header_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("chan,t\nD1,30\n")
    with pytest.raises(TagFormatError):
        read_tags(path)


def test_float_tags_rejected(tmp_path):
    streams = {D1: TimeTagStream(D1, np.array([0.5]), (0, 2))}
    with pytest.raises(ValueError):
        write_tags(streams, tmp_path / "f.qtts")


def test_parse_source_spec():
    path, ch = parse_source_spec("data/tags.qtts:D1")
    assert str(path) == "data/tags.qtts"
    assert ch == D1
    assert parse_source_spec("tags.qtts") == (parse_source_spec("tags.qtts")[0], None)
