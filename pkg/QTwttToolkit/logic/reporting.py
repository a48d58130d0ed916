"""
logic.reporting - Run reports and the plot-ready CSV files behind them.

Files written into the output directory:
    series.csv      per-window delays, t0 and predicted SDs
    stability.csv   ADEV / MDEV / TDEV table of the t0 series
    hist_up.csv     summed D1-D3 histogram over valid windows
    hist_down.csv   summed D2-D4 histogram over valid windows
    psd_<name>.csv  one per countrate spectrum
    report.json     RunReport
"""

import json
import logging
import math
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
import scipy

from QTwttToolkit.logic.coincidence import CoincidenceHistogram
from QTwttToolkit.logic.spectral import Spectrum, powerlaw_fit
from QTwttToolkit.logic.stability import StabilitySeries, classify_noise, loglog_slope
from QTwttToolkit.logic.twtt import ROUTE_CONVENTION, TwttSeries
from version import __version__

logger = logging.getLogger(__name__)

FADING_BAND_HZ = (0.1, 20.0)


def _finite_or_none(value: float) -> Optional[float]:
    value = float(value)
    return value if math.isfinite(value) else None


@dataclass
class RunReport:
    scenario_digest: Optional[str]
    seed: Optional[int]
    route_convention: str
    window_s: float
    window_count: int
    gap_count: int
    gap_indices: List[int]
    empirical_sd_ps: Optional[float]
    mean_predicted_sd_eq2_ps: Optional[float]
    mean_predicted_sd_eq3_ps: Optional[float]
    mean_t0_ps: Optional[float]
    stability: List[Dict[str, float]] = field(default_factory=list)
    tdev_slope: Optional[float] = None
    mdev_noise_type: Optional[str] = None
    spectra: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    versions: Dict[str, str] = field(default_factory=dict)
    created: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path


def summed_histogram(series: TwttSeries, link: str) -> Optional[CoincidenceHistogram]:
    """Sum of one link's histograms over the non-gap windows."""
    attr = {"up": "up_hist", "down": "down_hist"}[link]
    hists = [getattr(r, attr) for r in series.results if not r.is_gap and getattr(r, attr) is not None]
    if not hists:
        return None
    first = hists[0]
    if any(h.offset_origin_ps != first.offset_origin_ps or h.counts.size != first.counts.size for h in hists):
        raise ValueError(f"{link} histograms do not share one binning")
    return CoincidenceHistogram(
        bin_width_ps=first.bin_width_ps,
        offset_origin_ps=first.offset_origin_ps,
        counts=np.sum([h.counts for h in hists], axis=0),
        n_left=sum(h.n_left for h in hists),
        n_right=sum(h.n_right for h in hists),
        integration_s=sum(h.integration_s for h in hists),
    )


def _versions() -> Dict[str, str]:
    return {
        "qtwtt": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _stability_summary(stability: StabilitySeries):
    rows = json.loads(stability.to_frame().to_json(orient="records"))
    tdev_slope = noise = None
    lo = float(stability.taus_s[0])
    # first decade of tau, else the whole curve
    for tau_range in ((lo, 10.0 * lo), None):
        try:
            tdev_slope = loglog_slope(stability, "tdev", tau_range)
            break
        except ValueError:
            continue
    try:
        noise = classify_noise(loglog_slope(stability, "mdev"))
    except ValueError:
        noise = None
    return rows, tdev_slope, noise


def _spectrum_summary(sp: Spectrum) -> Dict[str, Any]:
    summary: Dict[str, Any] = {"bins": int(len(sp.freqs_hz)), "df_hz": _finite_or_none(sp.df_hz)}
    try:
        exponent, level = powerlaw_fit(sp, *FADING_BAND_HZ)
        summary.update(exponent=exponent, level=level)
    except ValueError as exc:
        logger.debug("No power-law fit: %s", exc)
    return summary


def emit_report(
    series: TwttSeries,
    stability: Optional[StabilitySeries],
    out_dir: Union[str, Path],
    spectra: Optional[Mapping[str, Spectrum]] = None,
    scenario_digest: Optional[str] = None,
    seed: Optional[int] = None,
) -> RunReport:
    """Write every report file into ``out_dir`` and return the RunReport."""
    if len(series) == 0:
        raise ValueError("cannot report an empty series")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: Dict[str, str] = {}

    files["series"] = series.to_csv(out_dir / "series.csv").name
    for link in ("up", "down"):
        hist = summed_histogram(series, link)
        if hist is not None:
            files[f"hist_{link}"] = hist.to_csv(out_dir / f"hist_{link}.csv").name

    rows, tdev_slope, noise = [], None, None
    if stability is not None:
        files["stability"] = stability.to_csv(out_dir / "stability.csv").name
        rows, tdev_slope, noise = _stability_summary(stability)

    spectra_summary = {}
    for name, sp in (spectra or {}).items():
        files[f"psd_{name}"] = sp.to_csv(out_dir / f"psd_{name}.csv").name
        spectra_summary[name] = _spectrum_summary(sp)

    t0 = series.t0_array()
    finite = t0[np.isfinite(t0)]
    report = RunReport(
        scenario_digest=scenario_digest,
        seed=seed,
        route_convention=ROUTE_CONVENTION,
        window_s=series.window_s,
        window_count=len(series),
        gap_count=len(series.gap_indices),
        gap_indices=series.gap_indices,
        empirical_sd_ps=_finite_or_none(series.empirical_sd_ps()),
        mean_predicted_sd_eq2_ps=_finite_or_none(series.mean_predicted_sd("eq2")),
        mean_predicted_sd_eq3_ps=_finite_or_none(series.mean_predicted_sd("eq3")),
        mean_t0_ps=_finite_or_none(finite.mean()) if finite.size else None,
        stability=rows,
        tdev_slope=tdev_slope,
        mdev_noise_type=noise,
        spectra=spectra_summary,
        files=files,
        versions=_versions(),
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    report.files["report"] = "report.json"
    report.to_json(out_dir / "report.json")
    logger.info(
        "Report: %d windows, %d gaps, SD %s ps -> %s",
        report.window_count, report.gap_count, report.empirical_sd_ps, out_dir,
    )
    return report
