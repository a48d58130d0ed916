"""
logic.twtt - Two-way time transfer: per-window delays, offset recovery, precision predictors.

Route convention: route A (free-space up, fiber back) is measured as t1 - t3
(D1 against D3) and route B (fiber out, free-space down) as t2 - t4 (D2
against D4). The recovered offset is t0 = (route B - route A) / 2.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd

from QTwttToolkit.core.tagstream import D1, D2, D3, D4, TimeTagStream, by_label, common_span, slice_window
from QTwttToolkit.logic.coincidence import (
    CoincidenceHistogram,
    FitError,
    PeakFit,
    convert_width,
    cross_correlate,
    estimate_offset,
    fit_peak,
)
from QTwttToolkit.logic.stability import PhaseSeries
from QTwttToolkit.utils.utils import PS_PER_S, seconds_to_ps, worker_count

logger = logging.getLogger(__name__)

ROUTE_CONVENTION = (
    "route A = t1 - t3 (D1-D3, free-space uplink then fiber return); "
    "route B = t2 - t4 (D2-D4, fiber out then free-space downlink); "
    "t0 = (route B - route A) / 2"
)

SERIES_COLUMNS = [
    "window_start_s", "up_delay_ps", "down_delay_ps", "t0_ps", "sd_eq2_ps", "sd_eq3_ps",
    "car_up", "car_down", "fwhm_up_ps", "fwhm_down_ps",
]


def recover_offset(up_center_ps: float, down_center_ps: float) -> float:
    """t0 from the route A (up) and route B (down) peak centers."""
    return (down_center_ps - up_center_ps) / 2.0


def combine_sd(sd_up_ps: float, sd_down_ps: float) -> float:
    """Offset SD from the SDs of the two one-way delay measurements."""
    if sd_up_ps < 0 or sd_down_ps < 0:
        raise ValueError("standard deviations must be >= 0")
    return 0.5 * math.sqrt(sd_up_ps ** 2 + sd_down_ps ** 2)


def predict_sd(sigma_u_ps: float, n_u: float, sigma_d_ps: float, n_d: float) -> float:
    """Pair-count limited offset SD; widths are 1/e half-widths."""
    if not n_u > 0 or not n_d > 0:
        raise ValueError(f"pair counts must be > 0, got {n_u}, {n_d}")
    up = sigma_u_ps / math.sqrt(2.0 * n_u)
    down = sigma_d_ps / math.sqrt(2.0 * n_d)
    return 0.5 * math.sqrt(up ** 2 + down ** 2)


def predict_sd_car(
    sigma_u_ps: float, n_u: float, car_u: float,
    sigma_d_ps: float, n_d: float, car_d: float,
) -> float:
    """predict_sd with each pair count reduced to N / (1 + 1/CAR)."""
    if not car_u > 0 or not car_d > 0:
        raise ValueError(f"CAR must be > 0 (or +inf), got {car_u}, {car_d}")
    return predict_sd(sigma_u_ps, n_u / (1.0 + 1.0 / car_u), sigma_d_ps, n_d / (1.0 + 1.0 / car_d))


@dataclass(frozen=True)
class CoincidenceParams:
    window_ps: int = 2000
    bin_width_ps: int = 10
    offset_guess_up_ps: Optional[int] = None
    offset_guess_down_ps: Optional[int] = None
    offset_search_ps: int = 200_000_000
    offset_coarse_bin_ps: int = 1000
    threads: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.window_ps >= self.bin_width_ps >= 1:
            raise ValueError("need window_ps >= bin_width_ps >= 1")


@dataclass
class TwttWindowResult:
    index: int
    window_start_ps: int
    up_fit: Optional[PeakFit]
    down_fit: Optional[PeakFit]
    t0_ps: float
    predicted_sd_eq2_ps: float
    predicted_sd_eq3_ps: float
    gap_reason: Optional[str] = None
    up_hist: Optional[CoincidenceHistogram] = field(default=None, repr=False)
    down_hist: Optional[CoincidenceHistogram] = field(default=None, repr=False)

    @property
    def is_gap(self) -> bool:
        return self.gap_reason is not None


@dataclass
class TwttSeries:
    window_s: float
    results: List[TwttWindowResult]
    truth: Optional[np.ndarray] = None  # true t0 at window centers, ps

    def __post_init__(self) -> None:
        starts = [r.window_start_ps for r in self.results]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("windows must be ascending")

    def __len__(self) -> int:
        return len(self.results)

    @property
    def gap_indices(self) -> List[int]:
        return [r.index for r in self.results if r.is_gap]

    def t0_array(self) -> np.ndarray:
        return np.array([r.t0_ps for r in self.results], dtype=float)

    def up_delays(self) -> np.ndarray:
        return np.array([r.up_fit.center_ps if r.up_fit else np.nan for r in self.results])

    def down_delays(self) -> np.ndarray:
        return np.array([r.down_fit.center_ps if r.down_fit else np.nan for r in self.results])

    def empirical_sd_ps(self) -> float:
        t0 = self.t0_array()
        t0 = t0[np.isfinite(t0)]
        return float(np.std(t0, ddof=1)) if t0.size > 1 else float("nan")

    def mean_predicted_sd(self, which: str = "eq3") -> float:
        key = {"eq2": "predicted_sd_eq2_ps", "eq3": "predicted_sd_eq3_ps"}[which]
        values = np.array([getattr(r, key) for r in self.results], dtype=float)
        values = values[np.isfinite(values)]
        return float(values.mean()) if values.size else float("nan")

    def to_phase_series(self) -> PhaseSeries:
        t0 = self.t0_array()
        gaps = ~np.isfinite(t0)
        return PhaseSeries(np.where(gaps, np.nan, t0 / PS_PER_S), self.window_s, gaps if gaps.any() else None)

    def to_frame(self) -> pd.DataFrame:
        def fit_value(fit, attr):
            return getattr(fit, attr) if fit is not None else np.nan

        rows = []
        for r in self.results:
            rows.append({
                "window_start_s": r.window_start_ps / PS_PER_S,
                "up_delay_ps": fit_value(r.up_fit, "center_ps"),
                "down_delay_ps": fit_value(r.down_fit, "center_ps"),
                "t0_ps": r.t0_ps,
                "sd_eq2_ps": r.predicted_sd_eq2_ps,
                "sd_eq3_ps": r.predicted_sd_eq3_ps,
                "car_up": fit_value(r.up_fit, "car"),
                "car_down": fit_value(r.down_fit, "car"),
                "fwhm_up_ps": fit_value(r.up_fit, "fwhm_ps"),
                "fwhm_down_ps": fit_value(r.down_fit, "fwhm_ps"),
                "window_index": r.index,
            })
        frame = pd.DataFrame(rows, columns=SERIES_COLUMNS + ["window_index"])
        frame["t0_mean_removed_ps"] = frame["t0_ps"] - frame["t0_ps"].mean()
        if self.truth is not None:
            frame["true_t0_ps"] = self.truth
        frame["gap"] = [r.gap_reason or "" for r in self.results]
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        logger.info("Wrote %d windows to %s", len(self), path)
        return path


def _link(ref: TimeTagStream, other: TimeTagStream, start: int, end: int, guess: int, params: CoincidenceParams):
    a = slice_window(ref, start, end)
    # pairs belong to the window of their reference tag
    b = slice_window(other, start + guess - params.window_ps, end + guess + params.window_ps)
    hist = cross_correlate(a, b, params.window_ps, params.bin_width_ps, guess)
    return hist


def _analyze_window(index: int, start: int, end: int, streams, guesses, params: CoincidenceParams) -> TwttWindowResult:
    up_hist = _link(streams[D3], streams[D1], start, end, guesses[0], params)
    down_hist = _link(streams[D4], streams[D2], start, end, guesses[1], params)
    up_fit = down_fit = None
    link = "up"
    try:
        up_fit = fit_peak(up_hist)
        if up_fit.pair_count <= 0:
            raise FitError("no correlated pairs above background")
        link = "down"
        down_fit = fit_peak(down_hist)
        if down_fit.pair_count <= 0:
            raise FitError("no correlated pairs above background")
    except FitError as exc:
        logger.warning("Window %d: %s link fit failed (%s: %s)", index, link, type(exc).__name__, exc)
        return TwttWindowResult(
            index, start, up_fit, down_fit, float("nan"), float("nan"), float("nan"),
            gap_reason=f"{link}:{type(exc).__name__}", up_hist=up_hist, down_hist=down_hist,
        )
    sigma_u = convert_width(up_fit.sigma_ps, "sigma", "one_over_e_half")
    sigma_d = convert_width(down_fit.sigma_ps, "sigma", "one_over_e_half")
    eq2 = predict_sd(sigma_u, up_fit.pair_count, sigma_d, down_fit.pair_count)
    car_u = up_fit.car if up_fit.car > 0 else float("nan")
    car_d = down_fit.car if down_fit.car > 0 else float("nan")
    if math.isnan(car_u) or math.isnan(car_d):
        eq3 = float("nan")
    else:
        eq3 = predict_sd_car(sigma_u, up_fit.pair_count, car_u, sigma_d, down_fit.pair_count, car_d)
    return TwttWindowResult(
        index, start, up_fit, down_fit,
        recover_offset(up_fit.center_ps, down_fit.center_ps),
        eq2, eq3, up_hist=up_hist, down_hist=down_hist,
    )


def analyze_series(
    streams: Mapping,
    window_s: float,
    params: Optional[CoincidenceParams] = None,
    truth=None,
    progress: bool = False,
) -> TwttSeries:
    """Split the common span into windows and recover t0 in each.

    Windows whose fit fails are kept as gaps (t0 = NaN) with the reason.
    ``truth`` may be a ScenarioTruth; its t0 is sampled at window centers.
    """
    params = params or CoincidenceParams()
    streams = by_label(streams)
    missing = [str(d) for d in (D1, D2, D3, D4) if d not in streams]
    if missing:
        raise ValueError(f"missing detector streams: {missing}")
    start, end = common_span(streams[d] for d in (D1, D2, D3, D4))
    window_ps = seconds_to_ps(window_s)
    if window_ps <= 0:
        raise ValueError("window_s must be > 0")
    n_windows = (end - start) // window_ps
    if n_windows < 1:
        raise ValueError(f"span of {(end - start) / PS_PER_S:.6g} s holds no complete {window_s} s window")

    first_end = start + window_ps
    guess_up = params.offset_guess_up_ps
    if guess_up is None:
        guess_up = estimate_offset(slice_window(streams[D3], start, first_end), streams[D1],
                                   params.offset_search_ps, params.offset_coarse_bin_ps, params.bin_width_ps)
    guess_down = params.offset_guess_down_ps
    if guess_down is None:
        guess_down = estimate_offset(slice_window(streams[D4], start, first_end), streams[D2],
                                     params.offset_search_ps, params.offset_coarse_bin_ps, params.bin_width_ps)
    logger.info("Analysing %d windows of %g s (offset guesses up %d ps, down %d ps)",
                n_windows, window_s, guess_up, guess_down)

    results: List[Optional[TwttWindowResult]] = [None] * n_windows
    with concurrent.futures.ThreadPoolExecutor(max_workers=worker_count(params.threads)) as executor:
        futures = {
            executor.submit(
                _analyze_window,
                i,
                start + i * window_ps,
                start + (i + 1) * window_ps,
                streams,
                (guess_up, guess_down),
                params,
            ): i for i in range(n_windows)
        }
        for done, future in enumerate(concurrent.futures.as_completed(futures), 1):
            results[futures[future]] = future.result()
            if progress:
                print(f"PROGRESS: {done}/{n_windows}", end="\r", file=sys.stderr)

    truth_t0 = None
    if truth is not None:
        centers_s = (start + (np.arange(n_windows) + 0.5) * window_ps) / PS_PER_S
        truth_t0 = truth.true_t0_at(centers_s)
    series = TwttSeries(window_s=window_s, results=results, truth=truth_t0)
    if series.gap_indices:
        logger.warning("%d of %d windows are gaps: %s", len(series.gap_indices), n_windows, series.gap_indices)
    return series


def read_series_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Load a series CSV written by TwttSeries.to_csv."""
    frame = pd.read_csv(path)
    missing = [c for c in ("window_start_s", "t0_ps") if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return frame
