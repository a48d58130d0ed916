"""Toolkit configuration module.

Loads analysis defaults from an optional YAML file and environment variables.
"""

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional
import logging
import os
import json

try:
    import yaml  # type: ignore
except Exception:  # pragma: no cover - optional dependency
    yaml = None

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "config.yaml"


@dataclass
class ToolkitConfig:
    """Analysis defaults used when neither the command line nor a scenario sets them.

    Attributes
    ----------
    bin_width_ps: int
        Coincidence histogram bin width.
    coincidence_window_ps: int
        Half-width of the coincidence search window around the delay guess.
    window_s: float
        Analysis window for the two-way series.
    psd_dt_s: float
        Countrate sampling interval for spectra.
    offset_search_ps: int
        Half-range of the automatic delay search.
    offset_coarse_bin_ps: int
        Bin width of the automatic delay search.
    threads: Optional[int]
        Worker cap; None means CPU count.
    log_level: str
        Logging level for the command line.
    """

    bin_width_ps: int = 10
    coincidence_window_ps: int = 2000
    window_s: float = 50.0
    psd_dt_s: float = 0.001
    offset_search_ps: int = 200_000_000
    offset_coarse_bin_ps: int = 1000
    threads: Optional[int] = None
    log_level: str = "INFO"


def config_path() -> Path:
    return Path(os.environ.get("QTWTT_CONFIG", DEFAULT_CONFIG_PATH))


def load_config() -> ToolkitConfig:
    """Load configuration from YAML file and environment variables.

    Returns
    -------
    ToolkitConfig
        Configuration populated from `config.yaml` (or `QTWTT_CONFIG`) and
        the `QTWTT_THREADS` / `QTWTT_LOG_LEVEL` overrides.
    """
    path = config_path()
    data = {}
    if path.exists():
        try:
            with path.open("r", encoding="utf-8") as f:
                text = f.read()
                if yaml:
                    data = yaml.safe_load(text) or {}
                else:
                    data = json.loads(text or "{}")
        except Exception as exc:
            logger.warning("Failed to load %s: %s", path, exc)
            data = {}
    known = {f.name for f in fields(ToolkitConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        logger.warning("Ignoring unknown config keys in %s: %s", path, unknown)
        data = {k: v for k, v in data.items() if k in known}
    env_threads = os.environ.get("QTWTT_THREADS")
    env_level = os.environ.get("QTWTT_LOG_LEVEL")
    if env_threads:
        try:
            data["threads"] = max(1, int(env_threads))
        except ValueError:
            logger.warning("Ignoring invalid QTWTT_THREADS=%s", env_threads)
    if env_level:
        data["log_level"] = env_level.upper()
    return ToolkitConfig(**data)

CONFIG = load_config()
