"""
core.tagstream - Channel-labelled timestamp streams shared by simulation and analysis.

Streams are immutable value objects. Tags are picoseconds; detector output is
int64, simulation-internal streams may carry float64 (continuous) time until
the final timestamping step rounds them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Tuple

import numpy as np

DETECTOR_LABELS = ("D1", "D2", "D3", "D4")


@dataclass(frozen=True, order=True)
class Channel:
    """Detector or synthetic channel label."""

    label: str

    def __post_init__(self) -> None:
        if not isinstance(self.label, str) or not self.label:
            raise ValueError("Channel label must be a non-empty string")

    @property
    def is_detector(self) -> bool:
        return self.label in DETECTOR_LABELS

    @property
    def index(self) -> int:
        """File index 0..3 for D1..D4."""
        if not self.is_detector:
            raise ValueError(f"Channel {self.label} has no file index")
        return DETECTOR_LABELS.index(self.label)

    @classmethod
    def from_index(cls, index: int) -> "Channel":
        if not 0 <= index < len(DETECTOR_LABELS):
            raise ValueError(f"Channel index {index} out of range 0..3")
        return cls(DETECTOR_LABELS[index])

    @classmethod
    def parse(cls, value: "str | Channel") -> "Channel":
        if isinstance(value, Channel):
            return value
        return cls(str(value).strip())

    def __str__(self) -> str:
        return self.label


D1 = Channel("D1")
D2 = Channel("D2")
D3 = Channel("D3")
D4 = Channel("D4")
DETECTORS = (D1, D2, D3, D4)


def _as_tag_array(tags) -> np.ndarray:
    arr = np.asarray(tags)
    if arr.ndim != 1:
        raise ValueError("tags must be one-dimensional")
    if arr.size == 0:
        return np.empty(0, dtype=np.int64)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.int64, copy=False)
    if np.issubdtype(arr.dtype, np.floating):
        if not np.all(np.isfinite(arr)):
            raise ValueError("tags must be finite")
        return arr.astype(np.float64, copy=False)
    raise ValueError(f"Unsupported tag dtype {arr.dtype}")


@dataclass(frozen=True)
class TimeTagStream:
    """Sorted detection timestamps of one channel within an observation span.

    Attributes
    ----------
    channel: Channel
        Channel identity of every tag.
    tags: np.ndarray
        Non-decreasing picosecond timestamps (int64, or float64 inside the simulator).
    span: tuple of int
        Half-open observation interval ``[start_ps, end_ps)`` containing all tags.
    """

    channel: Channel
    tags: np.ndarray = field(repr=False)
    span: Tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel", Channel.parse(self.channel))
        tags = _as_tag_array(self.tags)
        start, end = (int(self.span[0]), int(self.span[1]))
        if start > end:
            raise ValueError(f"span start {start} exceeds end {end}")
        if tags.size:
            if np.any(np.diff(tags) < 0):
                raise ValueError(f"tags of channel {self.channel} are not sorted")
            if tags[0] < start or tags[-1] >= end:
                raise ValueError(
                    f"tags of channel {self.channel} fall outside span [{start}, {end})"
                )
        tags = tags.view()
        tags.setflags(write=False)
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "span", (start, end))

    def __len__(self) -> int:
        return int(self.tags.size)

    @property
    def duration_ps(self) -> int:
        return self.span[1] - self.span[0]

    @property
    def rate_hz(self) -> float:
        if self.duration_ps <= 0:
            return 0.0
        return len(self) / (self.duration_ps * 1e-12)

    @property
    def is_integer(self) -> bool:
        return np.issubdtype(self.tags.dtype, np.integer)


def slice_window(s: TimeTagStream, t0_ps: int, t1_ps: int) -> TimeTagStream:
    """Return the tags in ``[t0_ps, t1_ps)`` with the span set to that window."""
    if t0_ps > t1_ps:
        raise ValueError(f"Inverted window [{t0_ps}, {t1_ps})")
    lo = np.searchsorted(s.tags, t0_ps, side="left")
    hi = np.searchsorted(s.tags, t1_ps, side="left")
    return TimeTagStream(s.channel, s.tags[lo:hi], (t0_ps, t1_ps))


def merge(a: TimeTagStream, b: TimeTagStream) -> TimeTagStream:
    """Sorted union of two streams of the same channel; duplicates are kept."""
    if a.channel != b.channel:
        raise ValueError(f"Cannot merge channel {a.channel} with {b.channel}")
    # Spans must overlap or touch; empty spans are neutral.
    if a.duration_ps and b.duration_ps:
        if a.span[1] < b.span[0] or b.span[1] < a.span[0]:
            raise ValueError(f"Spans {a.span} and {b.span} are disjoint")
    spans = [sp for sp in (a.span, b.span) if sp[1] > sp[0]] or [a.span]
    hull = (min(sp[0] for sp in spans), max(sp[1] for sp in spans))
    tags = np.concatenate([a.tags, b.tags])
    tags.sort(kind="stable")
    return TimeTagStream(a.channel, tags, hull)


def relabel(s: TimeTagStream, channel) -> TimeTagStream:
    return TimeTagStream(Channel.parse(channel), s.tags, s.span)


def clip_to_span(s: TimeTagStream, start_ps: int, end_ps: int) -> TimeTagStream:
    """Keep tags in ``[start_ps, end_ps)`` and adopt that span; dtype is preserved."""
    return slice_window(s, start_ps, end_ps)


def shift(s: TimeTagStream, delta_ps: int) -> TimeTagStream:
    return TimeTagStream(s.channel, s.tags + delta_ps, (s.span[0] + delta_ps, s.span[1] + delta_ps))


def common_span(streams: Iterable[TimeTagStream]) -> Tuple[int, int]:
    """Intersection of all spans; raises if it is empty."""
    streams = list(streams)
    if not streams:
        raise ValueError("No streams given")
    start = max(s.span[0] for s in streams)
    end = min(s.span[1] for s in streams)
    if start >= end:
        raise ValueError("Streams share no common span")
    return start, end


def covering_span(tags: np.ndarray, start_ps: int, end_ps: int) -> Tuple[int, int]:
    """Hull of a nominal span and the actual tag range (end exclusive)."""
    if tags.size == 0:
        return int(start_ps), int(end_ps)
    lo = int(np.floor(tags[0]))
    hi = int(np.floor(tags[-1])) + 1
    return min(int(start_ps), lo), max(int(end_ps), hi)


def by_label(streams: Mapping) -> dict:
    """Normalise a mapping keyed by labels or Channels to Channel keys."""
    return {Channel.parse(k): v for k, v in streams.items()}
