"""
core.models - Scenario description types for the photon-pair time transfer simulator.

All physical quantities carry their unit in the field name. Validation of
documents happens in core.scenario_validation; the checks here only guard
programmatic construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

SEGMENT_NAMES = ("fs_uplink", "fs_downlink", "fiber_out", "fiber_return")
DRIFT_SHAPES = ("sinusoid", "linear_ramp", "piecewise_table")
NOISE_KINDS = ("white_pm", "flicker_pm", "white_fm")
CLOCK_MODES = ("loopback", "two_clock")


@dataclass(frozen=True)
class PairSourceModel:
    pair_rate_hz: float
    correlation_sigma_ps: float

    def __post_init__(self) -> None:
        if not self.pair_rate_hz > 0:
            raise ValueError("pair_rate_hz must be > 0")
        if self.correlation_sigma_ps < 0:
            raise ValueError("correlation_sigma_ps must be >= 0")


@dataclass(frozen=True)
class FadingModel:
    """Turbulence-induced transmittance fluctuations (mean 1, loss applied separately)."""

    scintillation_index: float
    zero_fade_fraction: float
    knee_hz: float
    exponent: float = -2.0 / 3.0
    dt_s: float = 1e-3

    def __post_init__(self) -> None:
        if not self.dt_s > 0:
            raise ValueError("dt_s must be > 0")
        if not 0 <= self.zero_fade_fraction < 1:
            raise ValueError("zero_fade_fraction must be in [0, 1)")
        if self.scintillation_index < 0:
            raise ValueError("scintillation_index must be >= 0")
        if not self.knee_hz > 0:
            raise ValueError("knee_hz must be > 0")


@dataclass(frozen=True)
class DriftModel:
    amplitude_ps: float
    period_s: float
    shape: str = "sinusoid"
    phase_rad: float = 0.0
    table: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.shape not in DRIFT_SHAPES:
            raise ValueError(f"Unknown drift shape '{self.shape}'")
        if self.shape in ("sinusoid", "linear_ramp") and not self.period_s > 0:
            raise ValueError("period_s must be > 0")
        if self.shape == "piecewise_table":
            if len(self.table) < 2:
                raise ValueError("piecewise_table drift needs at least two points")
            times = [p[0] for p in self.table]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("piecewise_table times must be strictly increasing")


@dataclass(frozen=True)
class ChannelModel:
    mean_loss_db: float
    base_delay_ps: float
    jitter_sigma_ps: float
    drift: Optional[DriftModel] = None
    fading: Optional[FadingModel] = None

    def __post_init__(self) -> None:
        if self.mean_loss_db < 0:
            raise ValueError("mean_loss_db must be >= 0")
        if self.jitter_sigma_ps < 0:
            raise ValueError("jitter_sigma_ps must be >= 0")

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.mean_loss_db / 10.0)


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float
    jitter_sigma_ps: float
    dark_rate_hz: float
    dead_time_ps: int

    def __post_init__(self) -> None:
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must be in [0, 1]")
        if self.jitter_sigma_ps < 0 or self.dark_rate_hz < 0 or self.dead_time_ps < 0:
            raise ValueError("detector jitter, dark rate and dead time must be >= 0")


@dataclass(frozen=True)
class NoiseTerm:
    kind: str
    level: float

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"Unknown clock noise kind '{self.kind}'")
        if self.level < 0:
            raise ValueError("noise level must be >= 0")


@dataclass(frozen=True)
class ClockModel:
    offset_ps: float
    fractional_frequency_offset: float
    noise_terms: Tuple[NoiseTerm, ...] = ()


@dataclass(frozen=True)
class ClocksConfig:
    local: ClockModel
    mode: str = "loopback"
    remote: Optional[ClockModel] = None
    phase_dt_s: float = 1e-3

    def __post_init__(self) -> None:
        if self.mode not in CLOCK_MODES:
            raise ValueError(f"Unknown clock mode '{self.mode}'")
        if self.mode == "two_clock" and self.remote is None:
            raise ValueError("two_clock mode needs a remote clock")
        if not self.phase_dt_s > 0:
            raise ValueError("phase_dt_s must be > 0")


@dataclass(frozen=True)
class RunConfig:
    duration_s: float
    window_s: float
    seed: int
    block_s: float = 10.0

    def __post_init__(self) -> None:
        if not self.duration_s > 0 or not self.window_s > 0:
            raise ValueError("duration_s and window_s must be > 0")
        if self.window_s > self.duration_s:
            raise ValueError("window_s must not exceed duration_s")
        if not self.block_s > 0:
            raise ValueError("block_s must be > 0")


@dataclass(frozen=True)
class CoincidenceConfig:
    window_ps: int = 2000
    bin_width_ps: int = 10
    offset_guess_up_ps: Optional[int] = None
    offset_guess_down_ps: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.window_ps >= self.bin_width_ps >= 1:
            raise ValueError("coincidence needs window_ps >= bin_width_ps >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    source: PairSourceModel
    segments: Dict[str, ChannelModel]
    detectors: Dict[str, DetectorModel]
    clocks: ClocksConfig
    run: RunConfig
    coincidence: CoincidenceConfig = field(default_factory=CoincidenceConfig)
    idler_path: Optional[ChannelModel] = None
    description: str = ""

    def __post_init__(self) -> None:
        missing = [name for name in SEGMENT_NAMES if name not in self.segments]
        if missing:
            raise ValueError(f"Missing channel segments: {missing}")
        missing = [d for d in ("D1", "D2", "D3", "D4") if d not in self.detectors]
        if missing:
            raise ValueError(f"Missing detectors: {missing}")

    def channel_models(self) -> List[Tuple[str, ChannelModel]]:
        items = [(name, self.segments[name]) for name in SEGMENT_NAMES]
        if self.idler_path is not None:
            items.append(("idler_path", self.idler_path))
        return items
