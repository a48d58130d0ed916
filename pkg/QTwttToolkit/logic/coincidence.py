"""
logic.coincidence - Two-photon coincidence histograms, Gaussian peak fits and CAR.

Histograms count every ordered pair (ta, tb) with |tb - ta - guess| <= window,
binned by d = tb - ta from origin = guess - window. Pair lists are built from
searchsorted cursors over the sorted streams, never from all pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.optimize import least_squares

from QTwttToolkit.core.tagstream import TimeTagStream

logger = logging.getLogger(__name__)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
WIDTH_FACTORS = {
    "sigma": 1.0,
    "fwhm": FWHM_PER_SIGMA,
    "one_over_e_half": math.sqrt(2.0),
    "one_over_e_full": 2.0 * math.sqrt(2.0),
}
MAX_ITERATIONS = 200
XTOL = 1e-8
PAIR_CHUNK = 1 << 22
COARSE_PAIR_BUDGET = 1 << 24
COARSE_MIN_TAGS = 2000
FINE_MAX_TAGS = 1 << 22


class FitError(RuntimeError):
    """Peak fit failed."""


class NoPeakError(FitError):
    pass


class NonConvergenceError(FitError):
    pass


@dataclass(frozen=True)
class CoincidenceHistogram:
    bin_width_ps: int
    offset_origin_ps: int
    counts: np.ndarray
    n_left: int
    n_right: int
    integration_s: float

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if self.bin_width_ps <= 0:
            raise ValueError("bin_width_ps must be > 0")
        if counts.size < 3:
            raise ValueError("histogram needs at least 3 bins")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def centers_ps(self) -> np.ndarray:
        return self.offset_origin_ps + (np.arange(self.counts.size) + 0.5) * self.bin_width_ps

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"delay_ps": self.centers_ps, "counts": self.counts})

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        return path


@dataclass(frozen=True)
class PeakFit:
    center_ps: float
    sigma_ps: float
    fwhm_ps: float
    amplitude: float
    baseline: float
    pair_count: float
    car: float
    reduced_chi2: float
    center_err_ps: float = float("nan")

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def cross_correlate(
    a: TimeTagStream,
    b: TimeTagStream,
    window_ps: int,
    bin_width_ps: int,
    offset_guess_ps: int = 0,
) -> CoincidenceHistogram:
    """Histogram of d = tb - ta for all pairs within ``offset_guess_ps +- window_ps``."""
    if not window_ps >= bin_width_ps >= 1:
        raise ValueError(f"need window_ps >= bin_width_ps >= 1, got {window_ps}, {bin_width_ps}")
    origin = int(offset_guess_ps) - int(window_ps)
    n_bins = (2 * int(window_ps)) // int(bin_width_ps) + 1
    counts = np.zeros(n_bins, dtype=np.int64)
    ta = a.tags
    tb = b.tags
    if ta.size and tb.size:
        lo = np.searchsorted(tb, ta + (offset_guess_ps - window_ps), side="left")
        hi = np.searchsorted(tb, ta + (offset_guess_ps + window_ps), side="right")
        n_pairs = hi - lo
        has = np.flatnonzero(n_pairs)
        start = 0
        while start < has.size:
            # grow the chunk until it holds about PAIR_CHUNK pairs
            cum = np.cumsum(n_pairs[has[start:]])
            stop = start + max(1, int(np.searchsorted(cum, PAIR_CHUNK, side="right")))
            idx = has[start:stop]
            k = n_pairs[idx]
            total = int(k.sum())
            first = np.repeat(lo[idx], k)
            within = np.arange(total) - np.repeat(np.cumsum(k) - k, k)
            d = tb[first + within] - np.repeat(ta[idx], k)
            bins = np.floor((d - origin) / bin_width_ps).astype(np.int64) if d.dtype.kind == "f" \
                else (d - origin) // bin_width_ps
            counts += np.bincount(bins, minlength=n_bins)[:n_bins]
            start = stop
    return CoincidenceHistogram(
        bin_width_ps=int(bin_width_ps),
        offset_origin_ps=origin,
        counts=counts,
        n_left=len(a),
        n_right=len(b),
        integration_s=a.duration_ps * 1e-12,
    )


def _leading(a: TimeTagStream, n_tags: int) -> TimeTagStream:
    if n_tags >= len(a):
        return a
    end = int(math.floor(a.tags[n_tags - 1])) + 1
    return TimeTagStream(a.channel, a.tags[:n_tags], (a.span[0], end))


def _coarse_reference(a: TimeTagStream, b: TimeTagStream, search_ps: int) -> TimeTagStream:
    """Leading run of reference tags whose pairs within +-search_ps fit the budget."""
    density = len(b) / max(b.duration_ps, 1)
    per_tag = max(2.0 * search_ps * density, 1.0)
    return _leading(a, int(max(COARSE_MIN_TAGS, COARSE_PAIR_BUDGET // per_tag)))


def estimate_offset(
    a: TimeTagStream,
    b: TimeTagStream,
    search_ps: int,
    coarse_bin_ps: int = 1000,
    bin_width_ps: int = 10,
) -> int:
    """Locate the coincidence peak of b relative to a within +-search_ps.

    Coarse step: two-cursor histogram over +-search_ps at ``coarse_bin_ps``
    using a leading run of reference tags, so memory follows the search
    range and not the span. Fine step: histogram of +-2 coarse bins around
    it over at most FINE_MAX_TAGS reference tags, taking the best 3-bin sum.
    """
    if len(a) == 0 or len(b) == 0:
        raise NoPeakError("cannot estimate offset of an empty stream")
    if coarse_bin_ps % bin_width_ps:
        raise ValueError("coarse_bin_ps must be a multiple of bin_width_ps")
    if search_ps < coarse_bin_ps:
        raise ValueError(f"search_ps {search_ps} is smaller than coarse_bin_ps {coarse_bin_ps}")
    ref = _coarse_reference(a, b, search_ps)
    coarse_hist = cross_correlate(ref, b, search_ps, coarse_bin_ps, 0)
    if coarse_hist.total == 0:
        raise NoPeakError(f"no partner tags within +-{search_ps} ps")
    k = int(np.argmax(coarse_hist.counts))
    coarse = coarse_hist.offset_origin_ps + k * coarse_bin_ps + coarse_bin_ps // 2
    fine = cross_correlate(_leading(a, FINE_MAX_TAGS), b, 2 * coarse_bin_ps, bin_width_ps, coarse)
    smooth = np.convolve(fine.counts, np.ones(3), mode="same")
    guess = int(round(fine.centers_ps[int(np.argmax(smooth))]))
    logger.debug("Offset estimate from %d reference tags: coarse %d ps, refined %d ps", len(ref), coarse, guess)
    return guess


def _gauss_model(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    amp, center, sigma, base = p
    return amp * np.exp(-0.5 * ((x - center) / sigma) ** 2) + base


def _gauss_jac(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    amp, center, sigma, _ = p
    u = (x - center) / sigma
    g = np.exp(-0.5 * u ** 2)
    return np.column_stack([g, amp * g * u / sigma, amp * g * u ** 2 / sigma, np.ones_like(x)])


def _car(h: CoincidenceHistogram, center: float, sigma: float, baseline: float) -> float:
    centers = h.centers_ps
    inside = np.abs(centers - center) <= 3.0 * sigma
    n_acc = baseline * int(inside.sum())
    if n_acc <= 0:
        return math.inf
    n_true = max(float(h.counts[inside].sum()) - n_acc, 0.0)
    return n_true / n_acc


def estimate_car(h: CoincidenceHistogram, fit: PeakFit) -> float:
    """Coincidence-to-accidental ratio inside center +- 3 sigma; +inf when no accidentals."""
    return _car(h, fit.center_ps, fit.sigma_ps, fit.baseline)


def _initial_guess(counts: np.ndarray, x: np.ndarray, bw: float):
    k = int(np.argmax(counts))
    base0 = float(np.median(counts))
    excess = np.clip(counts - base0, 0.0, None)
    floor = 0.1 * excess[k]
    left = k
    while left > 0 and excess[left - 1] > floor:
        left -= 1
    right = k
    while right < counts.size - 1 and excess[right + 1] > floor:
        right += 1
    w = excess[left:right + 1]
    xs = x[left:right + 1]
    if w.sum() > 0:
        mean = float(np.sum(w * xs) / w.sum())
        sigma0 = float(math.sqrt(np.sum(w * (xs - mean) ** 2) / w.sum()))
    else:
        sigma0 = 0.0
    side = np.abs(x - x[k]) > 5.0 * max(sigma0, bw)
    baseline = float(counts[side].mean()) if side.sum() >= 3 else base0
    return k, sigma0, baseline


def fit_peak(h: CoincidenceHistogram) -> PeakFit:
    """Gaussian plus flat background fit by damped least squares (Levenberg-Marquardt)."""
    counts = h.counts.astype(np.float64)
    if h.total == 0:
        raise NoPeakError("empty histogram")
    bw = float(h.bin_width_ps)
    # origin-relative coordinates keep the fit exactly shift-equivariant
    x = (np.arange(counts.size) + 0.5) * bw
    k, sigma0, baseline = _initial_guess(counts, x, bw)
    height = counts[k] - baseline
    if height <= 0 or height < 5.0 * math.sqrt(max(baseline, 0.0)):
        raise NoPeakError(f"max bin {counts[k]:.0f} not above baseline {baseline:.2f} + 5 sqrt(baseline)")

    if sigma0 < bw / 2.0:
        lo, hi = max(k - 1, 0), min(k + 2, counts.size)
        w = np.clip(counts[lo:hi] - baseline, 0.0, None)
        center_rel = float(np.sum(w * x[lo:hi]) / w.sum())
        sigma = max(sigma0, bw / math.sqrt(12.0))
        params = np.array([height, center_rel, sigma, max(baseline, 0.0)])
        center_err = bw / math.sqrt(12.0 * max(w.sum(), 1.0))
        pair_count = float(w.sum())
    else:
        if counts.size < 5:
            raise NoPeakError("too few bins to fit a resolved peak")
        p0 = np.array([height, x[k], sigma0, max(baseline, 0.0)])
        result = least_squares(
            lambda p: _gauss_model(p, x) - counts,
            p0,
            jac=lambda p: _gauss_jac(p, x),
            method="lm",
            xtol=XTOL,
            max_nfev=MAX_ITERATIONS,
        )
        if result.status <= 0 or not np.all(np.isfinite(result.x)):
            raise NonConvergenceError(f"unweighted fit did not converge: {result.message}")
        first = np.array(result.x)
        first[2] = abs(first[2])
        weights = 1.0 / np.sqrt(np.maximum(_gauss_model(first, x), 1.0))
        result = least_squares(
            lambda p: (_gauss_model(p, x) - counts) * weights,
            first,
            jac=lambda p: _gauss_jac(p, x) * weights[:, None],
            method="lm",
            xtol=XTOL,
            max_nfev=MAX_ITERATIONS,
        )
        if result.status <= 0 or not np.all(np.isfinite(result.x)):
            raise NonConvergenceError(f"weighted fit did not converge: {result.message}")
        params = np.array(result.x)
        params[2] = abs(params[2])
        if params[0] <= 0 or params[2] == 0:
            raise NoPeakError("fit collapsed to a non-positive peak")
        try:
            cov = np.linalg.pinv(result.jac.T @ result.jac)
            center_err = float(math.sqrt(max(cov[1, 1], 0.0)))
        except np.linalg.LinAlgError:
            center_err = float("nan")
        pair_count = params[0] * params[2] * math.sqrt(2.0 * math.pi) / bw

    amp, center_rel, sigma, base = params
    base = max(float(base), 0.0)
    model = _gauss_model(np.array([amp, center_rel, sigma, base]), x)
    dof = max(counts.size - 4, 1)
    chi2 = float(np.sum((counts - model) ** 2 / np.maximum(model, 1.0)) / dof)
    center = h.offset_origin_ps + float(center_rel)
    pair_count = float(min(max(pair_count, 0.0), h.total))
    return PeakFit(
        center_ps=center,
        sigma_ps=float(sigma),
        fwhm_ps=FWHM_PER_SIGMA * float(sigma),
        amplitude=float(max(amp, 0.0)),
        baseline=base,
        pair_count=pair_count,
        car=_car(h, center, float(sigma), base),
        reduced_chi2=chi2,
        center_err_ps=float(center_err),
    )


def convert_width(value: float, from_: str, to: str) -> float:
    """Exact Gaussian width conversions between sigma, fwhm and 1/e conventions."""
    if from_ not in WIDTH_FACTORS or to not in WIDTH_FACTORS:
        raise ValueError(f"width conventions must be among {sorted(WIDTH_FACTORS)}")
    if not value > 0:
        raise ValueError("width must be > 0")
    if from_ == to:
        return value
    return value / WIDTH_FACTORS[from_] * WIDTH_FACTORS[to]


def brute_force_histogram(
    a: TimeTagStream,
    b: TimeTagStream,
    window_ps: int,
    bin_width_ps: int,
    offset_guess_ps: int = 0,
    origin: Optional[int] = None,
) -> np.ndarray:
    """All-pairs reference counter with the same pairing and binning rule."""
    origin = offset_guess_ps - window_ps if origin is None else origin
    n_bins = (2 * window_ps) // bin_width_ps + 1
    counts = np.zeros(n_bins, dtype=np.int64)
    if len(a) == 0 or len(b) == 0:
        return counts
    d = b.tags[None, :].astype(np.int64) - a.tags[:, None].astype(np.int64)
    d = d[np.abs(d - offset_guess_ps) <= window_ps]
    np.add.at(counts, (d - origin) // bin_width_ps, 1)
    return counts
