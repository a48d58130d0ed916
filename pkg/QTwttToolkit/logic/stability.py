"""
logic.stability - Allan-family statistics on phase data.

All estimators take phase samples x (seconds) spaced by tau0. The modified
Allan kernel is the second difference x[i+2m] - 2 x[i+m] + x[i]; the
printed "+2x_i" variant does not vanish on constant input and is not used.

Series with gaps are split into contiguous segments; squared terms and term
counts are pooled across segments before normalisation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import allantools
import numpy as np
import pandas as pd

from QTwttToolkit.utils.utils import loglog_fit

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)
# one-sigma coverage, erf(1/sqrt(2))
CI_LEVEL = 0.68268949213708585

# Canonical MDEV log-log slopes.
NOISE_SLOPES = {
    "white_pm": -1.5,
    "flicker_pm": -1.0,
    "white_fm": -0.5,
    "flicker_fm": 0.0,
    "random_walk_fm": 0.5,
}

# Power-law exponent of the phase-noise spectrum per noise type.
NOISE_ALPHA = {
    "white_pm": 2,
    "flicker_pm": 1,
    "white_fm": 0,
    "flicker_fm": -1,
    "random_walk_fm": -2,
}

STABILITY_COLUMNS = ["tau_s", "adev", "mdev", "tdev", "n_terms"]


@dataclass(frozen=True)
class PhaseSeries:
    """Uniformly spaced phase samples; ``gaps`` marks missing samples (NaN also counts)."""

    x: np.ndarray
    tau0_s: float
    gaps: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size < 4:
            raise ValueError(f"phase series needs at least 4 samples, got {x.size}")
        if not self.tau0_s > 0:
            raise ValueError(f"tau0_s must be > 0, got {self.tau0_s}")
        mask = ~np.isfinite(x)
        if self.gaps is not None:
            gaps = np.asarray(self.gaps, dtype=bool)
            if gaps.shape != x.shape:
                raise ValueError("gaps mask must match the phase samples")
            mask |= gaps
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "gaps", mask if mask.any() else None)

    def __len__(self) -> int:
        return self.x.size

    def segments(self) -> List[np.ndarray]:
        """Contiguous runs of valid samples."""
        if self.gaps is None:
            return [self.x]
        valid = ~self.gaps
        edges = np.flatnonzero(np.diff(np.concatenate(([0], valid.astype(np.int8), [0]))))
        return [self.x[a:b] for a, b in zip(edges[::2], edges[1::2])]


@dataclass
class StabilitySeries:
    taus_s: np.ndarray
    adev: np.ndarray
    mdev: np.ndarray
    tdev: np.ndarray
    n_terms: np.ndarray
    m_values: np.ndarray = field(default=None)
    edf: np.ndarray = field(default=None)
    tdev_ci_low: np.ndarray = field(default=None)
    tdev_ci_high: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.taus_s)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "tau_s": self.taus_s,
            "adev": self.adev,
            "mdev": self.mdev,
            "tdev": self.tdev,
            "n_terms": self.n_terms,
        })
        for name in ("m_values", "edf", "tdev_ci_low", "tdev_ci_high"):
            values = getattr(self, name)
            if values is not None:
                frame["m" if name == "m_values" else name] = values
        return frame

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        logger.info("Wrote stability table (%d taus) to %s", len(self), path)
        return path


def _check_m(p: PhaseSeries, m: int, divisor: int) -> None:
    limit = (len(p) - 1) // divisor
    if not isinstance(m, (int, np.integer)) or not 1 <= m <= limit:
        raise ValueError(f"m must be an integer in [1, {limit}] for {len(p)} samples, got {m}")


def _second_differences(x: np.ndarray, m: int) -> np.ndarray:
    return x[2 * m:] - 2.0 * x[m:-m] + x[:-2 * m]


def _allan_terms(p: PhaseSeries, m: int) -> Tuple[float, int]:
    total, count = 0.0, 0
    for seg in p.segments():
        if seg.size < 2 * m + 1:
            continue
        d = _second_differences(seg, m)
        total += float(np.dot(d, d))
        count += d.size
    return total, count


def _mod_allan_terms(p: PhaseSeries, m: int) -> Tuple[float, int]:
    total, count = 0.0, 0
    for seg in p.segments():
        if seg.size < 3 * m:
            continue
        d = _second_differences(seg, m)
        c = np.concatenate(([0.0], np.cumsum(d)))
        sums = c[m:] - c[:-m]
        total += float(np.dot(sums, sums))
        count += sums.size
    return total, count


def adev(p: PhaseSeries, m: int) -> float:
    """Overlapping Allan deviation at tau = m * tau0."""
    _check_m(p, m, 2)
    total, count = _allan_terms(p, m)
    if count == 0:
        raise ValueError(f"no gap-free stretch long enough for m={m}")
    tau = m * p.tau0_s
    return math.sqrt(total / (2.0 * tau * tau * count))


def _mdev_with_terms(p: PhaseSeries, m: int) -> Tuple[float, int]:
    _check_m(p, m, 3)
    if m == 1:
        # identical estimator at m=1
        return adev(p, 1), _allan_terms(p, 1)[1]
    total, count = _mod_allan_terms(p, m)
    if count == 0:
        raise ValueError(f"no gap-free stretch long enough for m={m}")
    tau = m * p.tau0_s
    return math.sqrt(total / (2.0 * m * m * tau * tau * count)), count


def mdev(p: PhaseSeries, m: int) -> float:
    """Modified Allan deviation at tau = m * tau0."""
    return _mdev_with_terms(p, m)[0]


def _tdev_from(tau_s, mdev_value):
    return tau_s / SQRT3 * mdev_value


def tdev(p: PhaseSeries, m: int) -> float:
    return _tdev_from(m * p.tau0_s, mdev(p, m))


def default_m_values(n: int) -> List[int]:
    """Octave grid 1, 2, 4, ... up to (n - 1) // 3."""
    limit = (n - 1) // 3
    if limit < 1:
        raise ValueError(f"need at least 4 samples, got {n}")
    values, m = [], 1
    while m <= limit:
        values.append(m)
        m *= 2
    return values


def _edf(p: PhaseSeries, m: int, alpha: int) -> float:
    """Greenhall EDF of the overlapping modified variance, summed over gap-free segments."""
    total = 0.0
    for seg in p.segments():
        if seg.size < 3 * m:
            continue
        total += float(allantools.edf_greenhall(
            alpha=alpha, d=2, m=int(m), N=int(seg.size), overlapping=True, modified=True, verbose=False,
        ))
    return max(total, 1.0)


def noise_alpha(mdev_values: Sequence[float], taus_s: Sequence[float]) -> int:
    """Power-law exponent of the phase noise from the MDEV slope; white PM when undetermined."""
    taus = np.asarray(taus_s, dtype=float)
    values = np.asarray(mdev_values, dtype=float)
    keep = values > 0
    if keep.sum() < 3:
        return NOISE_ALPHA["white_pm"]
    slope, _ = loglog_fit(taus[keep], values[keep])
    return NOISE_ALPHA[classify_noise(slope)]


def stability_curve(
    p: PhaseSeries,
    m_values: Optional[Sequence[int]] = None,
    alpha: Optional[int] = None,
) -> StabilitySeries:
    """ADEV, MDEV and TDEV over ``m_values`` with Greenhall EDF intervals on TDEV.

    ``alpha`` is the power-law noise exponent used for the EDF (2 white PM,
    1 flicker PM, 0 white FM, ...); by default it follows the MDEV slope.
    """
    m_values = list(default_m_values(len(p)) if m_values is None else m_values)
    if not m_values:
        raise ValueError("m_values is empty")
    if any(b <= a for a, b in zip(m_values, m_values[1:])):
        raise ValueError("m_values must be strictly ascending")
    ad, md, terms = [], [], []
    for m in m_values:
        value, count = _mdev_with_terms(p, m)
        md.append(value)
        terms.append(count)
        ad.append(adev(p, m))
    m_arr = np.asarray(m_values, dtype=np.int64)
    taus = m_arr * p.tau0_s
    md_arr = np.asarray(md)
    td_arr = _tdev_from(taus, md_arr)
    terms_arr = np.asarray(terms, dtype=np.int64)
    if alpha is None:
        alpha = noise_alpha(md_arr, taus)
    elif alpha not in NOISE_ALPHA.values():
        raise ValueError(f"alpha must be one of {sorted(NOISE_ALPHA.values())}, got {alpha}")
    edf = np.array([_edf(p, int(m), alpha) for m in m_arr])
    bounds = [allantools.confidence_interval(dev=d, edf=e, ci=CI_LEVEL) for d, e in zip(td_arr, edf)]
    low = np.array([b[0] for b in bounds])
    high = np.array([b[1] for b in bounds])
    logger.debug("Stability curve over m=%s (N=%d, gaps=%s, alpha=%d)", m_values, len(p), p.gaps is not None, alpha)
    return StabilitySeries(
        taus_s=taus, adev=np.asarray(ad), mdev=md_arr, tdev=td_arr, n_terms=terms_arr,
        m_values=m_arr, edf=edf, tdev_ci_low=low, tdev_ci_high=high,
    )


def loglog_slope(s: StabilitySeries, which: str = "tdev", tau_range: Optional[Tuple[float, float]] = None) -> float:
    """Least-squares slope of log(deviation) against log(tau)."""
    if which not in ("adev", "mdev", "tdev"):
        raise ValueError(f"which must be adev, mdev or tdev, got {which!r}")
    taus = np.asarray(s.taus_s, dtype=float)
    values = np.asarray(getattr(s, which), dtype=float)
    keep = values > 0
    if tau_range is not None:
        lo, hi = tau_range
        keep &= (taus >= lo) & (taus <= hi)
    if keep.sum() < 3:
        raise ValueError(f"need at least 3 positive points in range, got {int(keep.sum())}")
    slope, _ = loglog_fit(taus[keep], values[keep])
    return slope


def classify_noise(mdev_slope: float) -> str:
    """Noise type whose canonical MDEV slope is nearest."""
    return min(NOISE_SLOPES, key=lambda name: abs(NOISE_SLOPES[name] - mdev_slope))


def white_fm_mod_ratio(m: int) -> float:
    """Expected MDEV/ADEV for discrete white FM at averaging factor m.

    Weights of the frequency samples in one modified-Allan sum are the
    convolution of m ones with the step kernel (-1 x m, +1 x m); the ratio
    of variances is sum(w^2) / (2 m^3). Tends to 1/sqrt(2).
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    kernel = np.concatenate((-np.ones(m), np.ones(m)))
    w = np.convolve(np.ones(m), kernel)
    return math.sqrt(float(np.dot(w, w)) / (2.0 * m ** 3))


def read_series_phase(path: Union[str, Path], tau0_s: float, column: str = "t0_ps") -> PhaseSeries:
    """Phase series (seconds) from a series CSV column in picoseconds; NaN rows are gaps."""
    frame = pd.read_csv(path)
    if column not in frame.columns:
        raise ValueError(f"{path}: no column '{column}'")
    return PhaseSeries(frame[column].to_numpy(dtype=float) * 1e-12, tau0_s)
