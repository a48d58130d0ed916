"""
core.scenario_validation - Scenario document validation and parsing.

Documents are JSON. Structure and ranges are checked with a strict JSON schema
(unknown keys rejected), cross-field rules with atomic validators. Defaults are
filled only for analysis knobs; physical parameters are always required.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import jsonschema

from QTwttToolkit.core.models import (
    CLOCK_MODES,
    DRIFT_SHAPES,
    NOISE_KINDS,
    SEGMENT_NAMES,
    ChannelModel,
    ClockModel,
    ClocksConfig,
    CoincidenceConfig,
    DetectorModel,
    DriftModel,
    FadingModel,
    NoiseTerm,
    PairSourceModel,
    RunConfig,
    ScenarioConfig,
)

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"


class ValidationError(Exception):
    """Scenario document rejected; message starts with the offending key path."""
    pass


# Atomic validators

def validate_type(value: Any, expected_type: type, path: str) -> None:
    if not isinstance(value, expected_type):
        raise ValidationError(
            f"{path}: expected type {expected_type.__name__}, got {type(value).__name__}"
        )


def validate_range(
    value: Any,
    path: str,
    min_value: Optional[float] = None,
    max_value: Optional[float] = None,
) -> None:
    if min_value is not None and value < min_value:
        raise ValidationError(f"{path}: value {value} below minimum {min_value}")
    if max_value is not None and value > max_value:
        raise ValidationError(f"{path}: value {value} above maximum {max_value}")


def validate_not_greater(value: float, other: float, path: str, other_path: str) -> None:
    if value > other:
        raise ValidationError(f"{path}: {value} must not exceed {other_path} ({other})")


# Composable validator

def validate_output(
    output: Any,
    validators: List[Tuple[Callable, Tuple, Dict]]
) -> None:
    """
    Run a sequence of validators on the output.
    Each validator is a tuple: (function, args, kwargs)
    """
    for func, args, kwargs in validators:
        func(output, *args, **kwargs)


_NUMBER = {"type": "number"}
_NON_NEGATIVE = {"type": "number", "minimum": 0}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

FADING_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "exponent": _NUMBER,
        "knee_hz": _POSITIVE,
        "scintillation_index": _NON_NEGATIVE,
        "zero_fade_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "dt_s": _POSITIVE,
    },
    "required": ["knee_hz", "scintillation_index", "zero_fade_fraction"],
}

DRIFT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "amplitude_ps": _NUMBER,
        "period_s": _NUMBER,
        "shape": {"enum": list(DRIFT_SHAPES)},
        "phase_rad": _NUMBER,
        "table": {
            "type": "array",
            "items": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
        },
    },
    "required": ["amplitude_ps", "period_s", "shape"],
}

CHANNEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mean_loss_db": _NON_NEGATIVE,
        "base_delay_ps": _NUMBER,
        "jitter_sigma_ps": _NON_NEGATIVE,
        "drift": DRIFT_SCHEMA,
        "fading": FADING_SCHEMA,
    },
    "required": ["mean_loss_db", "base_delay_ps", "jitter_sigma_ps"],
}

DETECTOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "efficiency": {"type": "number", "minimum": 0, "maximum": 1},
        "jitter_sigma_ps": _NON_NEGATIVE,
        "dark_rate_hz": _NON_NEGATIVE,
        "dead_time_ps": {"type": "integer", "minimum": 0},
    },
    "required": ["efficiency", "jitter_sigma_ps", "dark_rate_hz", "dead_time_ps"],
}

CLOCK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "offset_ps": _NUMBER,
        "fractional_frequency_offset": _NUMBER,
        "noise_terms": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": list(NOISE_KINDS)},
                    "level": _NON_NEGATIVE,
                },
                "required": ["kind", "level"],
            },
        },
    },
    "required": ["offset_ps", "fractional_frequency_offset"],
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "description": {"type": "string"},
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pair_rate_hz": _POSITIVE,
                "correlation_sigma_ps": _NON_NEGATIVE,
            },
            "required": ["pair_rate_hz", "correlation_sigma_ps"],
        },
        "idler_path": CHANNEL_SCHEMA,
        "segments": {
            "type": "object",
            "additionalProperties": False,
            "properties": {name: CHANNEL_SCHEMA for name in SEGMENT_NAMES},
            "required": list(SEGMENT_NAMES),
        },
        "detectors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {name: DETECTOR_SCHEMA for name in ("D1", "D2", "D3", "D4")},
            "required": ["D1", "D2", "D3", "D4"],
        },
        "clocks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": list(CLOCK_MODES)},
                "local": CLOCK_SCHEMA,
                "remote": CLOCK_SCHEMA,
                "phase_dt_s": _POSITIVE,
            },
            "required": ["mode", "local"],
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "duration_s": _POSITIVE,
                "window_s": _POSITIVE,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "block_s": _POSITIVE,
            },
            "required": ["duration_s", "window_s", "seed"],
        },
        "coincidence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window_ps": {"type": "integer", "minimum": 1},
                "bin_width_ps": {"type": "integer", "minimum": 1},
                "offset_guess_up_ps": {"type": "integer"},
                "offset_guess_down_ps": {"type": "integer"},
            },
        },
    },
    "required": ["source", "segments", "detectors", "clocks", "run"],
}


def _path_of(error: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in error.absolute_path) or "<root>"


def validate_json_schema(document: dict, schema: dict = SCENARIO_SCHEMA) -> None:
    """
    Validate the document against the provided JSON schema.
    Raises ValidationError naming the key path of the first (shallowest) failure.
    """
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(document), key=lambda e: (len(e.absolute_path), _path_of(e)))
    if errors:
        e = errors[0]
        raise ValidationError(f"{_path_of(e)}: {e.message}")


def validate_semantics(document: dict) -> None:
    """Cross-field rules the schema cannot express."""
    run = document["run"]
    validate_output(run["window_s"], [
        (validate_not_greater, (run["duration_s"], "run.window_s", "run.duration_s"), {}),
    ])
    clocks = document["clocks"]
    if clocks["mode"] == "two_clock" and "remote" not in clocks:
        raise ValidationError("clocks.remote: required when clocks.mode is two_clock")
    coincidence = document.get("coincidence", {})
    if "window_ps" in coincidence or "bin_width_ps" in coincidence:
        window = coincidence.get("window_ps", CoincidenceConfig.window_ps)
        width = coincidence.get("bin_width_ps", CoincidenceConfig.bin_width_ps)
        validate_not_greater(width, window, "coincidence.bin_width_ps", "coincidence.window_ps")
    channels = dict(document["segments"])
    if "idler_path" in document:
        channels["idler_path"] = document["idler_path"]
    for name, ch in channels.items():
        prefix = name if name == "idler_path" else f"segments.{name}"
        drift = ch.get("drift")
        if drift is None:
            continue
        if drift["shape"] in ("sinusoid", "linear_ramp"):
            validate_range(drift["period_s"], f"{prefix}.drift.period_s", min_value=1e-12)
        else:
            table = drift.get("table", [])
            if len(table) < 2:
                raise ValidationError(f"{prefix}.drift.table: needs at least two [t_s, delay_ps] points")
            times = [p[0] for p in table]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValidationError(f"{prefix}.drift.table: times must be strictly increasing")


def _channel(doc: dict) -> ChannelModel:
    drift = doc.get("drift")
    fading = doc.get("fading")
    return ChannelModel(
        mean_loss_db=float(doc["mean_loss_db"]),
        base_delay_ps=float(doc["base_delay_ps"]),
        jitter_sigma_ps=float(doc["jitter_sigma_ps"]),
        drift=None if drift is None else DriftModel(
            amplitude_ps=float(drift["amplitude_ps"]),
            period_s=float(drift["period_s"]),
            shape=drift["shape"],
            phase_rad=float(drift.get("phase_rad", 0.0)),
            table=tuple((float(t), float(d)) for t, d in drift.get("table", [])),
        ),
        fading=None if fading is None else FadingModel(**{k: float(v) for k, v in fading.items()}),
    )


def _clock(doc: dict) -> ClockModel:
    return ClockModel(
        offset_ps=float(doc["offset_ps"]),
        fractional_frequency_offset=float(doc["fractional_frequency_offset"]),
        noise_terms=tuple(NoiseTerm(t["kind"], float(t["level"])) for t in doc.get("noise_terms", [])),
    )


def scenario_from_dict(document: dict) -> ScenarioConfig:
    """Validate a decoded document and build the ScenarioConfig."""
    validate_type(document, dict, "<root>")
    validate_json_schema(document)
    validate_semantics(document)
    clocks = document["clocks"]
    run = document["run"]
    co = document.get("coincidence", {})
    try:
        return ScenarioConfig(
            source=PairSourceModel(**{k: float(v) for k, v in document["source"].items()}),
            segments={name: _channel(document["segments"][name]) for name in SEGMENT_NAMES},
            detectors={
                name: DetectorModel(
                    efficiency=float(d["efficiency"]),
                    jitter_sigma_ps=float(d["jitter_sigma_ps"]),
                    dark_rate_hz=float(d["dark_rate_hz"]),
                    dead_time_ps=int(d["dead_time_ps"]),
                )
                for name, d in document["detectors"].items()
            },
            clocks=ClocksConfig(
                local=_clock(clocks["local"]),
                mode=clocks["mode"],
                remote=_clock(clocks["remote"]) if "remote" in clocks else None,
                phase_dt_s=float(clocks.get("phase_dt_s", 1e-3)),
            ),
            run=RunConfig(
                duration_s=float(run["duration_s"]),
                window_s=float(run["window_s"]),
                seed=int(run["seed"]),
                block_s=float(run.get("block_s", 10.0)),
            ),
            coincidence=CoincidenceConfig(
                window_ps=int(co.get("window_ps", 2000)),
                bin_width_ps=int(co.get("bin_width_ps", 10)),
                offset_guess_up_ps=co.get("offset_guess_up_ps"),
                offset_guess_down_ps=co.get("offset_guess_down_ps"),
            ),
            idler_path=_channel(document["idler_path"]) if "idler_path" in document else None,
            description=document.get("description", ""),
        )
    except ValueError as exc:
        raise ValidationError(f"<root>: {exc}") from exc


def parse_scenario(text: Union[str, bytes]) -> ScenarioConfig:
    """Parse a JSON scenario document into a fully validated ScenarioConfig."""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"<root>: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    config = scenario_from_dict(document)
    logger.debug("Parsed scenario (%s)", config.description or "no description")
    return config


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"))


def preset_path(name: str) -> Path:
    """Path of a shipped preset; accepts ``mjd59814`` or ``mjd59814.json``."""
    filename = name if name.endswith(".json") else f"{name}.json"
    path = PRESET_DIR / filename
    if not path.exists():
        available = sorted(p.name for p in PRESET_DIR.glob("*.json"))
        raise ValueError(f"Unknown preset '{name}'; available: {available}")
    return path


def load_preset(name: str) -> ScenarioConfig:
    return load_scenario(preset_path(name))


def scenario_digest(text: Union[str, bytes]) -> str:
    """SHA-256 of the canonical JSON form of a scenario document."""
    document = json.loads(text)
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
