"""
logic.simulation - Seeded Monte-Carlo synthesis of the two-way photon-pair link.

Topology (loop-back): each signal photon goes through a 50/50 splitter to
route A (free-space uplink, then fiber return, detected at D1) or route B
(fiber out, then free-space downlink, detected at D2). Idler photons pass the
optional idler path and a second 50/50 splitter to the local reference
detectors D3 and D4. Route A is measured as t1 - t3, route B as t2 - t4.

In two-clock mode D1 and D4 are stamped by the remote clock and D2, D3 by the
local clock, so the recovered offset equals the route asymmetry plus
(local - remote) clock phase.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from QTwttToolkit.core.models import (
    ChannelModel,
    ClockModel,
    DetectorModel,
    DriftModel,
    FadingModel,
    PairSourceModel,
    ScenarioConfig,
)
from QTwttToolkit.core.tagstream import DETECTORS, Channel, TimeTagStream, covering_span
from QTwttToolkit.utils.utils import PS_PER_S, derive_seed, seconds_to_ps

logger = logging.getLogger(__name__)

SIGNAL = Channel("signal")
IDLER = Channel("idler")
FADING_SPECTRUM_ITERATIONS = 10


@dataclass(frozen=True)
class FadingTrace:
    """Sample-and-hold transmittance factor; sample i covers [start + i*dt, start + (i+1)*dt)."""

    values: np.ndarray
    dt_s: float
    start_ps: int = 0

    @property
    def end_ps(self) -> int:
        return self.start_ps + seconds_to_ps(self.values.size * self.dt_s)

    def covers(self, span: Tuple[int, int]) -> bool:
        if span[1] <= span[0]:
            return True
        return self.start_ps <= span[0] and span[1] <= self.end_ps

    def at(self, t_ps: np.ndarray) -> np.ndarray:
        idx = np.floor((np.asarray(t_ps, dtype=float) - self.start_ps) / (self.dt_s * PS_PER_S))
        idx = np.clip(idx.astype(np.int64), 0, self.values.size - 1)
        return self.values[idx]


@dataclass(frozen=True)
class ClockPhase:
    """Clock phase (seconds) on a regular grid, linearly interpolated at tag times."""

    values_s: np.ndarray
    dt_s: float
    start_ps: int = 0

    @property
    def grid_ps(self) -> np.ndarray:
        return self.start_ps + np.arange(self.values_s.size) * (self.dt_s * PS_PER_S)

    def covers(self, span: Tuple[int, int]) -> bool:
        if span[1] <= span[0]:
            return True
        last = self.start_ps + (self.values_s.size - 1) * self.dt_s * PS_PER_S
        return self.start_ps <= span[0] and span[1] - 1 <= last

    def at_ps(self, t_ps: np.ndarray) -> np.ndarray:
        """Phase in picoseconds at the given true times."""
        return np.interp(t_ps, self.grid_ps, self.values_s * PS_PER_S)


@dataclass
class ScenarioTruth:
    """Ground truth of a simulated run, sampled on the clock grid."""

    grid_dt_s: float
    true_t0_ps: np.ndarray
    delay_traces_ps: Dict[str, np.ndarray] = field(default_factory=dict)
    fading_traces: Dict[str, FadingTrace] = field(default_factory=dict)
    route_asymmetry_ps: float = 0.0
    clock_mode: str = "loopback"

    @property
    def grid_s(self) -> np.ndarray:
        return np.arange(self.true_t0_ps.size) * self.grid_dt_s

    def true_t0_at(self, t_s) -> np.ndarray:
        return np.interp(t_s, self.grid_s, self.true_t0_ps)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"time_s": self.grid_s, "true_t0_ps": self.true_t0_ps})
        for name, trace in self.delay_traces_ps.items():
            frame[f"delay_{name}_ps"] = trace
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        return path


def _stream(channel: Channel, tags: np.ndarray, start_ps: int, end_ps: int) -> TimeTagStream:
    tags = np.sort(tags, kind="stable")
    return TimeTagStream(channel, tags, covering_span(tags, start_ps, end_ps))


def generate_pairs(src: PairSourceModel, duration_s: float, seed: int) -> Tuple[TimeTagStream, TimeTagStream]:
    """Poisson pair emission; signal = e + d/2, idler = e - d/2 with d ~ N(0, correlation_sigma_ps)."""
    if duration_s < 0:
        raise ValueError("duration_s must be >= 0")
    rng = np.random.default_rng(seed)
    duration_ps = seconds_to_ps(duration_s)
    n = rng.poisson(src.pair_rate_hz * duration_s) if duration_s > 0 else 0
    emission = np.sort(rng.uniform(0.0, float(duration_ps), n))
    delta = rng.normal(0.0, src.correlation_sigma_ps, n) if src.correlation_sigma_ps > 0 else np.zeros(n)
    signal = emission + delta / 2.0
    idler = emission - delta / 2.0
    return (
        _stream(SIGNAL, signal, 0, duration_ps),
        _stream(IDLER, idler, 0, duration_ps),
    )


def split_stream(s: TimeTagStream, fraction: float, seed: int) -> Tuple[TimeTagStream, TimeTagStream]:
    """Beam splitter: each tag goes to the first output with probability ``fraction``."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    first = rng.random(len(s)) < fraction
    return (
        TimeTagStream(s.channel, s.tags[first], s.span),
        TimeTagStream(s.channel, s.tags[~first], s.span),
    )


def drift_ps(drift: Optional[DriftModel], t_s) -> np.ndarray:
    """Slow delay variation at times ``t_s`` (seconds)."""
    t_s = np.asarray(t_s, dtype=float)
    if drift is None:
        return np.zeros_like(t_s)
    if drift.shape == "sinusoid":
        return drift.amplitude_ps * np.sin(2.0 * np.pi * t_s / drift.period_s + drift.phase_rad)
    if drift.shape == "linear_ramp":
        return drift.amplitude_ps * t_s / drift.period_s
    times, values = zip(*drift.table)
    return np.interp(t_s, times, values)


def channel_delay_ps(ch: ChannelModel, t_s) -> np.ndarray:
    return ch.base_delay_ps + drift_ps(ch.drift, t_s)


def propagate(
    s: TimeTagStream,
    ch: ChannelModel,
    fading: Optional[FadingTrace],
    seed: int,
) -> TimeTagStream:
    """Loss (with optional fading), delay plus drift, then Gaussian timing jitter.

    Survival probability per tag is min(1, 10^(-loss/10) * T(t)).
    """
    rng = np.random.default_rng(seed)
    t = s.tags.astype(np.float64)
    if fading is not None and not fading.covers(s.span):
        raise ValueError(
            f"Fading trace [{fading.start_ps}, {fading.end_ps}) does not cover span {s.span}"
        )
    p = np.full(t.size, ch.transmission)
    if fading is not None:
        p = np.minimum(1.0, p * fading.at(t))
    t = t[rng.random(t.size) < p]
    out = t + channel_delay_ps(ch, t / PS_PER_S)
    if ch.jitter_sigma_ps > 0:
        out = out + rng.normal(0.0, ch.jitter_sigma_ps, out.size)
    base = int(math.floor(ch.base_delay_ps))
    return _stream(s.channel, out, s.span[0] + base, s.span[1] + base)


def _fading_gain(f: FadingModel, freqs: np.ndarray) -> np.ndarray:
    """Amplitude response: f^(exponent/2) up to knee_hz, f^-1 above; zero at DC."""
    gain = np.zeros_like(freqs)
    pos = freqs > 0
    fp = freqs[pos]
    gain[pos] = np.where(
        fp <= f.knee_hz,
        fp ** (f.exponent / 2.0),
        f.knee_hz ** (f.exponent / 2.0) * (f.knee_hz / fp),
    )
    return gain


def synthesize_fading(f: FadingModel, duration_s: float, seed: int, start_ps: int = 0) -> FadingTrace:
    """Lognormal transmittance with a power-law spectrum and deep-fade clamping.

    The log-field g is built from the target amplitudes (PSD ~ f^exponent up
    to knee_hz, f^-2 above) with uniform random phases. T = exp(s*g - s^2/2)
    with s^2 = ln(1 + scintillation_index); the lowest
    round(zero_fade_fraction * n) samples are set to zero and T is rescaled to
    unit mean. The exponential and the clamp flatten the spectrum, so the
    target amplitudes are re-imposed FADING_SPECTRUM_ITERATIONS times, each
    followed by restoring the exact sample distribution of T by rank.
    """
    if duration_s < f.dt_s:
        raise ValueError(f"duration_s {duration_s} shorter than one sample ({f.dt_s} s)")
    n = int(math.ceil(round(duration_s / f.dt_s, 9)))
    if f.scintillation_index == 0 and f.zero_fade_fraction == 0:
        return FadingTrace(np.ones(n), f.dt_s, start_ps)
    rng = np.random.default_rng(seed)
    gain = _fading_gain(f, np.fft.rfftfreq(n, d=f.dt_s))
    phases = rng.uniform(-math.pi, math.pi, gain.size)
    g = np.fft.irfft(gain * np.exp(1j * phases), n=n)
    sd = g.std()
    g = (g - g.mean()) / sd if sd > 0 else np.zeros(n)
    s2 = math.log1p(f.scintillation_index)
    values = np.exp(math.sqrt(s2) * g - s2 / 2.0)
    n_zero = int(round(f.zero_fade_fraction * n))
    if n_zero:
        values[np.argpartition(g, n_zero - 1)[:n_zero]] = 0.0
    values /= values.mean()
    if sd > 0:
        ranked = np.sort(values)
        for _ in range(FADING_SPECTRUM_ITERATIONS):
            shaped = np.fft.irfft(gain * np.exp(1j * np.angle(np.fft.rfft(values))), n=n)
            values = np.empty(n)
            values[np.argsort(shaped, kind="stable")] = ranked
    logger.debug("Fading trace: %d samples, %d deep fades", n, n_zero)
    return FadingTrace(values, f.dt_s, start_ps)


def synthesize_clock_phase(clk: ClockModel, n: int, dt_s: float, seed: int) -> np.ndarray:
    """Clock phase x[i] (seconds) at t = i*dt.

    Noise levels: white_pm in ps RMS per sample, white_fm as Allan deviation at
    1 s, flicker_pm as one-sided phase PSD at 1 Hz in ps^2/Hz.
    """
    if n < 1 or not dt_s > 0:
        raise ValueError("need n >= 1 and dt_s > 0")
    rng = np.random.default_rng(seed)
    i = np.arange(n)
    x = clk.offset_ps / PS_PER_S + clk.fractional_frequency_offset * (i * dt_s)
    for term in clk.noise_terms:
        if term.level == 0:
            continue
        if term.kind == "white_pm":
            x = x + rng.normal(0.0, term.level / PS_PER_S, n)
        elif term.kind == "white_fm":
            y = rng.normal(0.0, term.level / math.sqrt(dt_s), n)
            x = x + np.concatenate(([0.0], np.cumsum(y[:-1] * dt_s)))
        elif term.kind == "flicker_pm":
            spectrum = np.fft.rfft(rng.standard_normal(n))
            freqs = np.fft.rfftfreq(n, d=dt_s)
            gain = np.zeros_like(freqs)
            pos = freqs > 0
            # unit white noise has one-sided PSD 2*dt
            gain[pos] = np.sqrt(term.level * 1e-24 / (2.0 * dt_s * freqs[pos]))
            x = x + np.fft.irfft(spectrum * gain, n=n)
    return x


def apply_dead_time(tags: np.ndarray, dead_time_ps: int) -> np.ndarray:
    """Non-paralyzable dead time: drop tags closer than dead_time_ps to the last kept tag."""
    if dead_time_ps <= 0 or tags.size < 2:
        return tags
    close = np.diff(tags) < dead_time_ps
    if not close.any():
        return tags
    keep = np.ones(tags.size, dtype=bool)
    idx = np.flatnonzero(close)
    # Only bursts of sub-dead-time gaps need sequential treatment; their first tag is always kept.
    for run in np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1):
        first, last = int(run[0]), int(run[-1]) + 1
        kept = tags[first]
        for j in range(first + 1, last + 1):
            if tags[j] - kept >= dead_time_ps:
                kept = tags[j]
            else:
                keep[j] = False
    return tags[keep]


def timestamp(
    s: TimeTagStream,
    det: DetectorModel,
    clock_phase: Optional[ClockPhase],
    seed: int,
) -> TimeTagStream:
    """Detector and time-tagger model; output is integer picoseconds within ``s.span``."""
    rng = np.random.default_rng(seed)
    start, end = s.span
    t = s.tags.astype(np.float64)
    t = t[rng.random(t.size) < det.efficiency]
    if det.jitter_sigma_ps > 0:
        t = t + rng.normal(0.0, det.jitter_sigma_ps, t.size)
    duration_s = (end - start) / PS_PER_S
    n_dark = rng.poisson(det.dark_rate_hz * duration_s) if det.dark_rate_hz > 0 and end > start else 0
    if n_dark:
        t = np.concatenate([t, rng.uniform(start, end, n_dark)])
    t.sort(kind="stable")
    if clock_phase is not None:
        if not clock_phase.covers(s.span):
            raise ValueError(f"Clock phase grid does not cover span {s.span}")
        t = t + clock_phase.at_ps(t)
    tags = np.rint(t).astype(np.int64)
    tags.sort(kind="stable")
    lo, hi = np.searchsorted(tags, [start, end], side="left")
    tags = apply_dead_time(tags[lo:hi], det.dead_time_ps)
    return TimeTagStream(s.channel, tags, s.span)


def _route_delay_span_s(cfg: ScenarioConfig) -> float:
    total = 0.0
    for _, ch in cfg.channel_models():
        total += abs(ch.base_delay_ps) + 6.0 * ch.jitter_sigma_ps
        if ch.drift is not None:
            if ch.drift.shape == "piecewise_table":
                total += max(abs(d) for _, d in ch.drift.table)
            elif ch.drift.shape == "linear_ramp":
                total += abs(ch.drift.amplitude_ps) * cfg.run.duration_s / ch.drift.period_s
            else:
                total += abs(ch.drift.amplitude_ps)
    return total / PS_PER_S


def simulate_scenario(cfg: ScenarioConfig) -> Tuple[Dict[Channel, TimeTagStream], ScenarioTruth]:
    """Simulate the four detector streams over ``[0, run.duration_s)`` and the ground truth."""
    run = cfg.run
    seed = run.seed
    duration_ps = seconds_to_ps(run.duration_s)
    margin_s = _route_delay_span_s(cfg) + 1e-3
    margin_ps = seconds_to_ps(margin_s)

    fades: Dict[str, FadingTrace] = {}
    for name, ch in cfg.channel_models():
        if ch.fading is not None:
            fades[name] = synthesize_fading(
                ch.fading,
                run.duration_s + 2 * margin_s,
                derive_seed(seed, f"fading_{name}"),
                start_ps=-margin_ps,
            )

    seg = cfg.segments
    arrivals: Dict[Channel, list] = {d: [] for d in DETECTORS}
    n_blocks = max(1, int(math.ceil(round(run.duration_s / run.block_s, 9))))
    for block in range(n_blocks):
        block_start_s = block * run.block_s
        block_len_s = min(run.block_s, run.duration_s - block_start_s)
        if block_len_s <= 0:
            break
        offset = seconds_to_ps(block_start_s)
        signal, idler = generate_pairs(cfg.source, block_len_s, derive_seed(seed, "pairs", block))
        signal = TimeTagStream(signal.channel, signal.tags + offset, (signal.span[0] + offset, signal.span[1] + offset))
        idler = TimeTagStream(idler.channel, idler.tags + offset, (idler.span[0] + offset, idler.span[1] + offset))

        route_a, route_b = split_stream(signal, 0.5, derive_seed(seed, "signal_split", block))
        route_a = propagate(route_a, seg["fs_uplink"], fades.get("fs_uplink"), derive_seed(seed, "fs_uplink", block))
        route_a = propagate(route_a, seg["fiber_return"], fades.get("fiber_return"), derive_seed(seed, "fiber_return", block))
        route_b = propagate(route_b, seg["fiber_out"], fades.get("fiber_out"), derive_seed(seed, "fiber_out", block))
        route_b = propagate(route_b, seg["fs_downlink"], fades.get("fs_downlink"), derive_seed(seed, "fs_downlink", block))
        if cfg.idler_path is not None:
            idler = propagate(idler, cfg.idler_path, fades.get("idler_path"), derive_seed(seed, "idler_path", block))
        ref_up, ref_down = split_stream(idler, 0.5, derive_seed(seed, "idler_split", block))

        for det, stream in zip(DETECTORS, (route_a, route_b, ref_up, ref_down)):
            arrivals[det].append(stream.tags)
        logger.debug("Block %d/%d: %d pairs", block + 1, n_blocks, len(signal))

    n_grid = int(math.ceil((run.duration_s + margin_s) / cfg.clocks.phase_dt_s)) + 2
    local = synthesize_clock_phase(cfg.clocks.local, n_grid, cfg.clocks.phase_dt_s, derive_seed(seed, "clock_local"))
    if cfg.clocks.mode == "two_clock":
        remote = synthesize_clock_phase(cfg.clocks.remote, n_grid, cfg.clocks.phase_dt_s, derive_seed(seed, "clock_remote"))
        clock_of = {"D1": remote, "D2": local, "D3": local, "D4": remote}
    else:
        remote = None
        clock_of = {d.label: local for d in DETECTORS}

    streams: Dict[Channel, TimeTagStream] = {}
    for det in DETECTORS:
        tags = np.concatenate(arrivals[det]) if arrivals[det] else np.empty(0)
        tags.sort(kind="stable")
        lo, hi = np.searchsorted(tags, [0, duration_ps], side="left")
        arrived = TimeTagStream(det, tags[lo:hi], (0, duration_ps))
        phase = ClockPhase(clock_of[det.label], cfg.clocks.phase_dt_s)
        streams[det] = timestamp(
            arrived, cfg.detectors[det.label], phase, derive_seed(seed, f"detector_{det.label}")
        )
        logger.debug("%s: %d tags", det, len(streams[det]))

    grid_s = np.arange(n_grid) * cfg.clocks.phase_dt_s
    delays = {name: channel_delay_ps(seg[name], grid_s) for name in seg}
    route_a_ps = delays["fs_uplink"] + delays["fiber_return"]
    route_b_ps = delays["fiber_out"] + delays["fs_downlink"]
    asymmetry = (route_b_ps - route_a_ps) / 2.0
    true_t0 = asymmetry.copy()
    if remote is not None:
        true_t0 = true_t0 + (local - remote) * PS_PER_S
    truth = ScenarioTruth(
        grid_dt_s=cfg.clocks.phase_dt_s,
        true_t0_ps=true_t0,
        delay_traces_ps=delays,
        fading_traces=fades,
        route_asymmetry_ps=float(np.mean(asymmetry)),
        clock_mode=cfg.clocks.mode,
    )
    logger.info(
        "Simulated %.3f s (%s): %s",
        run.duration_s,
        cfg.clocks.mode,
        ", ".join(f"{d}={len(streams[d])}" for d in DETECTORS),
    )
    return streams, truth
