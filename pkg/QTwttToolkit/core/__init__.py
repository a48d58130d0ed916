"""Core types, validation and file formats for the QTwtt toolkit."""

from QTwttToolkit.core.tagstream import (
    D1, D2, D3, D4, DETECTORS, Channel, TimeTagStream, merge, slice_window,
)
from QTwttToolkit.core.scenario_validation import (
    ValidationError, load_preset, load_scenario, parse_scenario,
)
from QTwttToolkit.core.tag_io import TagFormatError, read_tags, write_tags

__all__ = [
    "D1", "D2", "D3", "D4", "DETECTORS",
    "Channel", "TimeTagStream", "merge", "slice_window",
    "ValidationError", "load_preset", "load_scenario", "parse_scenario",
    "TagFormatError", "read_tags", "write_tags",
]
