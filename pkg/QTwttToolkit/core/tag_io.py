"""
core.tag_io - Reading and writing detector timestamp files.

Binary "QTTS" layout (little-endian):
    bytes 0-3   magic b"QTTS"
    bytes 4-5   format version (uint16, 1)
    bytes 6-7   reserved, zero
    bytes 8-15  record count (uint64)
    then 9-byte records: uint8 channel index (0..3 = D1..D4), int64 picoseconds,
    sorted by time across all channels.

CSV alternative: header ``channel,time_ps`` with channel labels.

Spans are not stored; readers give every channel the common hull
``[min tag, max tag + 1)``.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

import numpy as np
import pandas as pd

from QTwttToolkit.core.tagstream import DETECTOR_LABELS, Channel, TimeTagStream

logger = logging.getLogger(__name__)

MAGIC = b"QTTS"
VERSION = 1
HEADER_DTYPE = np.dtype([("magic", "S4"), ("version", "<u2"), ("reserved", "<u2"), ("count", "<u8")])
RECORD_DTYPE = np.dtype([("channel", "u1"), ("time_ps", "<i8")])  # packed, itemsize 9


class TagFormatError(ValueError):
    """Malformed timestamp file."""


class BadMagicError(TagFormatError):
    pass


class UnsupportedVersionError(TagFormatError):
    pass


class TruncatedRecordError(TagFormatError):
    pass


class UnsortedTagsError(TagFormatError):
    pass


def _flatten(streams: Mapping) -> pd.DataFrame:
    frames = []
    for channel, stream in streams.items():
        channel = Channel.parse(channel)
        if stream.channel != channel:
            raise ValueError(f"Stream labelled {stream.channel} stored under key {channel}")
        if not stream.is_integer:
            raise ValueError(f"Channel {channel} carries non-integer tags; timestamp it first")
        frames.append(pd.DataFrame({"channel": channel.label, "time_ps": stream.tags}))
    if not frames:
        return pd.DataFrame({"channel": pd.Series([], dtype=str), "time_ps": pd.Series([], dtype=np.int64)})
    table = pd.concat(frames, ignore_index=True)
    # Global time order; ties broken by channel so the layout is deterministic.
    return table.sort_values(["time_ps", "channel"], kind="stable").reset_index(drop=True)


def _build_streams(labels: Iterable[str], times: np.ndarray, channels: np.ndarray) -> Dict[Channel, TimeTagStream]:
    if times.size:
        hull = (int(times.min()), int(times.max()) + 1)
    else:
        hull = (0, 0)
    streams = {}
    for label in labels:
        tags = times[channels == label]
        if tags.size and np.any(np.diff(tags) < 0):
            raise UnsortedTagsError(f"Channel {label} is not sorted by time")
        streams[Channel(label)] = TimeTagStream(Channel(label), tags, hull)
    return streams


def write_tags(streams: Mapping, path: Union[str, Path]) -> Path:
    """Write streams as QTTS binary (``.qtts``) or CSV (``.csv``)."""
    path = Path(path)
    table = _flatten(streams)
    if path.suffix.lower() == ".csv":
        table.to_csv(path, index=False)
    else:
        unknown = sorted(set(table["channel"]) - set(DETECTOR_LABELS))
        if unknown:
            raise ValueError(f"QTTS stores only D1..D4, got {unknown}")
        header = np.zeros(1, dtype=HEADER_DTYPE)
        header["magic"] = MAGIC
        header["version"] = VERSION
        header["count"] = len(table)
        records = np.empty(len(table), dtype=RECORD_DTYPE)
        records["channel"] = table["channel"].map(DETECTOR_LABELS.index).to_numpy(dtype=np.uint8)
        records["time_ps"] = table["time_ps"].to_numpy(dtype=np.int64)
        with path.open("wb") as fh:
            fh.write(header.tobytes())
            fh.write(records.tobytes())
    logger.info("Wrote %d tags in %d channels to %s", len(table), len(streams), path)
    return path


def _read_binary(path: Path) -> Dict[Channel, TimeTagStream]:
    raw = path.read_bytes()
    if len(raw) < HEADER_DTYPE.itemsize:
        raise TruncatedRecordError(f"{path}: header shorter than {HEADER_DTYPE.itemsize} bytes")
    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise BadMagicError(f"{path}: bad magic {bytes(header['magic'])!r}")
    if int(header["version"]) != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {int(header['version'])}")
    count = int(header["count"])
    body = raw[HEADER_DTYPE.itemsize:]
    expected = count * RECORD_DTYPE.itemsize
    if len(body) != expected:
        raise TruncatedRecordError(
            f"{path}: header announces {count} records ({expected} bytes), found {len(body)} bytes"
        )
    records = np.frombuffer(body, dtype=RECORD_DTYPE, count=count)
    if np.any(records["channel"] >= len(DETECTOR_LABELS)):
        raise TagFormatError(f"{path}: channel index outside 0..3")
    labels = np.asarray(DETECTOR_LABELS)[records["channel"]]
    present = [label for label in DETECTOR_LABELS if np.any(labels == label)]
    return _build_streams(present, records["time_ps"].astype(np.int64), labels)


def _read_csv(path: Path) -> Dict[Channel, TimeTagStream]:
    try:
        table = pd.read_csv(path, dtype={"channel": str, "time_ps": np.int64})
    except ValueError as exc:
        raise TagFormatError(f"{path}: {exc}") from exc
    if list(table.columns) != ["channel", "time_ps"]:
        raise TagFormatError(f"{path}: expected header 'channel,time_ps', got {list(table.columns)}")
    labels = table["channel"].to_numpy(dtype=str)
    present = list(dict.fromkeys(sorted(labels)))
    return _build_streams(present, table["time_ps"].to_numpy(dtype=np.int64), labels)


def read_tags(path: Union[str, Path], channels: Optional[Iterable] = None) -> Dict[Channel, TimeTagStream]:
    """Read a ``.qtts`` or ``.csv`` file into per-channel streams.

    ``channels`` optionally restricts the result; a requested channel absent
    from the file raises ValueError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    streams = _read_csv(path) if path.suffix.lower() == ".csv" else _read_binary(path)
    logger.info("Read %d channels from %s", len(streams), path)
    if channels is None:
        return streams
    wanted = [Channel.parse(c) for c in channels]
    missing = [str(c) for c in wanted if c not in streams]
    if missing:
        raise ValueError(f"{path}: channels {missing} not present")
    return {c: streams[c] for c in wanted}


def parse_source_spec(spec: str):
    """Split ``file.qtts:D1`` into (path, channel); plain paths give channel None."""
    head, sep, tail = spec.rpartition(":")
    if sep and tail.strip() and "/" not in tail and "\\" not in tail and head:
        return Path(head), Channel.parse(tail)
    return Path(spec), None
