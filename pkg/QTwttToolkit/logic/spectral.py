"""
logic.spectral - Countrate traces and power spectral densities of channel fading.

The PSD is Welch's averaged periodogram: Hann taper, segments of
len/8 samples (at least 64, at most the trace), 50 % overlap, mean removed,
one-sided density scaling. The zero-frequency bin is dropped.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd
from scipy import signal

from QTwttToolkit.core.tagstream import TimeTagStream
from QTwttToolkit.utils.utils import loglog_fit, seconds_to_ps

logger = logging.getLogger(__name__)

DEFAULT_DT_S = 1e-3
MIN_SEGMENT = 64


@dataclass(frozen=True)
class RateTrace:
    counts: np.ndarray
    dt_s: float
    start_ps: int = 0

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError(f"rate trace needs at least 2 bins, got {counts.size}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if not self.dt_s > 0:
            raise ValueError(f"dt_s must be > 0, got {self.dt_s}")
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def zero_fraction(self) -> float:
        return float(np.mean(self.counts == 0))


@dataclass(frozen=True)
class Spectrum:
    freqs_hz: np.ndarray
    power: np.ndarray

    def __post_init__(self) -> None:
        if len(self.freqs_hz) != len(self.power):
            raise ValueError("freqs_hz and power must have equal length")

    @property
    def df_hz(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0]) if len(self.freqs_hz) > 1 else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"freq_hz": self.freqs_hz, "power": self.power})

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        logger.info("Wrote spectrum (%d bins) to %s", len(self.freqs_hz), path)
        return path


def countrate_trace(s: TimeTagStream, dt_s: float = DEFAULT_DT_S) -> RateTrace:
    """Counts per [start + k*dt, start + (k+1)*dt) over the stream span.

    The last bin may be partial so that every tag is counted; a span shorter
    than 2 bins raises ValueError.
    """
    dt_ps = seconds_to_ps(dt_s)
    if dt_ps <= 0:
        raise ValueError(f"dt_s must be > 0, got {dt_s}")
    start, end = s.span
    n_bins = -(-(end - start) // dt_ps)
    if n_bins < 2:
        raise ValueError(f"span of {end - start} ps is shorter than 2 bins of {dt_ps} ps")
    if s.is_integer:
        index = (s.tags - start) // dt_ps
    else:
        index = np.floor((s.tags - start) / dt_ps).astype(np.int64)
    counts = np.bincount(index, minlength=n_bins)
    return RateTrace(counts, dt_s, start)


def series_psd(values, dt_s: float) -> Spectrum:
    """Welch PSD of any uniformly sampled real series."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 8:
        raise ValueError(f"PSD needs at least 8 samples, got {n}")
    nperseg = min(max(n // 8, MIN_SEGMENT), n)
    freqs, power = signal.welch(
        values,
        fs=1.0 / dt_s,
        window="hann",
        nperseg=nperseg,
        noverlap=nperseg // 2,
        detrend="constant",
        scaling="density",
        return_onesided=True,
    )
    return Spectrum(freqs[1:], power[1:])


def psd(r: RateTrace) -> Spectrum:
    return series_psd(r.counts, r.dt_s)


def powerlaw_fit(sp: Spectrum, f_min_hz: float, f_max_hz: float) -> Tuple[float, float]:
    """(exponent, level) of power ~ level * f**exponent over [f_min, f_max]."""
    f = np.asarray(sp.freqs_hz)
    p = np.asarray(sp.power)
    keep = (f >= f_min_hz) & (f <= f_max_hz) & (p > 0)
    if keep.sum() < 5:
        raise ValueError(f"need at least 5 bins with power in [{f_min_hz}, {f_max_hz}] Hz, got {int(keep.sum())}")
    slope, intercept = loglog_fit(f[keep], p[keep])
    return slope, 10.0 ** intercept


def _power_near(sp: Spectrum, f_hz: float, half_band_hz: float) -> float:
    f = np.asarray(sp.freqs_hz)
    if f.size == 0:
        raise ValueError("empty spectrum")
    if half_band_hz > 0:
        band = (f >= f_hz - half_band_hz) & (f <= f_hz + half_band_hz)
        if band.any():
            return float(np.mean(np.asarray(sp.power)[band]))
    return float(sp.power[int(np.argmin(np.abs(f - f_hz)))])


def psd_ratio_db(a: Spectrum, b: Spectrum, f_hz: float, half_band_hz: float = 0.0) -> float:
    """10 log10(power_a / power_b) at the bin nearest f_hz (or band mean)."""
    lo = max(a.freqs_hz[0], b.freqs_hz[0])
    hi = min(a.freqs_hz[-1], b.freqs_hz[-1])
    if not lo <= f_hz <= hi:
        raise ValueError(f"{f_hz} Hz lies outside the common range [{lo}, {hi}] Hz")
    pa = _power_near(a, f_hz, half_band_hz)
    pb = _power_near(b, f_hz, half_band_hz)
    if pb == 0:
        return float("inf")
    if pa == 0:
        return float("-inf")
    return float(10.0 * np.log10(pa / pb))
