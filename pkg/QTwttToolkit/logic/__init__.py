"""
Simulation and analysis engines for the QTwtt toolkit.

- simulation: seeded Monte-Carlo of the photon-pair link
- coincidence: histograms, peak fits, offset search
- twtt: two-way offset recovery and precision predictors
- stability: ADEV / MDEV / TDEV
- spectral: countrate traces and PSDs
- reporting: report files
"""

from .coincidence import (
    CoincidenceHistogram,
    FitError,
    NoPeakError,
    NonConvergenceError,
    PeakFit,
    cross_correlate,
    estimate_car,
    estimate_offset,
    fit_peak,
)
from .simulation import ScenarioTruth, simulate_scenario
from .spectral import RateTrace, Spectrum, countrate_trace, powerlaw_fit, psd, psd_ratio_db
from .stability import PhaseSeries, StabilitySeries, adev, loglog_slope, mdev, stability_curve, tdev
from .twtt import (
    CoincidenceParams,
    TwttSeries,
    TwttWindowResult,
    analyze_series,
    combine_sd,
    predict_sd,
    predict_sd_car,
    recover_offset,
)
from .reporting import RunReport, emit_report

__all__ = [
    'CoincidenceHistogram', 'FitError', 'NoPeakError', 'NonConvergenceError', 'PeakFit',
    'cross_correlate', 'estimate_car', 'estimate_offset', 'fit_peak',
    'ScenarioTruth', 'simulate_scenario',
    'RateTrace', 'Spectrum', 'countrate_trace', 'powerlaw_fit', 'psd', 'psd_ratio_db',
    'PhaseSeries', 'StabilitySeries', 'adev', 'loglog_slope', 'mdev', 'stability_curve', 'tdev',
    'CoincidenceParams', 'TwttSeries', 'TwttWindowResult', 'analyze_series',
    'combine_sd', 'predict_sd', 'predict_sd_car', 'recover_offset',
    'RunReport', 'emit_report',
]
