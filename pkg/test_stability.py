import math

import allantools
import numpy as np
import pytest

from QTwttToolkit.logic.stability import (
    CI_LEVEL,
    NOISE_ALPHA,
    NOISE_SLOPES,
    SQRT3,
    STABILITY_COLUMNS,
    PhaseSeries,
    StabilitySeries,
    adev,
    classify_noise,
    default_m_values,
    loglog_slope,
    mdev,
    noise_alpha,
    read_series_phase,
    stability_curve,
    tdev,
    white_fm_mod_ratio,
)


def _white_pm(n=100_000, sigma=1e-12, seed=1):
    return PhaseSeries(np.random.default_rng(seed).normal(0.0, sigma, n), 1.0)


def _white_fm(n=100_000, seed=2):
    y = np.random.default_rng(seed).normal(0.0, 1e-12, n)
    return PhaseSeries(np.concatenate(([0.0], np.cumsum(y[:-1]))), 1.0)


def test_hand_evaluated_example():
    p = PhaseSeries([0, 1, 0, 1, 0], 1.0)
    assert mdev(p, 1) == pytest.approx(math.sqrt(2))
    assert tdev(p, 1) == pytest.approx(math.sqrt(2 / 3))
    assert adev(p, 1) == pytest.approx(math.sqrt(2))


def test_m_range():
    p = PhaseSeries([0, 1, 0, 1, 0], 1.0)
    with pytest.raises(ValueError):
        mdev(p, 2)
    with pytest.raises(ValueError):
        mdev(p, 0)
    with pytest.raises(ValueError):
        adev(p, 3)
    assert adev(p, 2) >= 0


def test_phase_series_validation():
    with pytest.raises(ValueError):
        PhaseSeries([0.0, 1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        PhaseSeries([0.0] * 5, 0.0)
    with pytest.raises(ValueError):
        PhaseSeries([0.0] * 5, 1.0, gaps=[False] * 4)


@pytest.mark.parametrize("m", [1, 2, 5])
def test_constant_and_ramp_vanish(m):
    constant = PhaseSeries(np.full(30, 7e-9), 1.0)
    ramp = PhaseSeries(3.0 + 0.5 * np.arange(30), 1.0)
    assert mdev(constant, m) == 0.0
    assert adev(constant, m) == 0.0
    assert mdev(ramp, m) == pytest.approx(0.0, abs=1e-12)
    assert adev(ramp, m) == pytest.approx(0.0, abs=1e-12)


def test_mdev_equals_adev_at_m1():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = PhaseSeries(rng.normal(size=int(rng.integers(4, 200))), float(rng.uniform(0.1, 10)))
        assert mdev(p, 1) == adev(p, 1)


def test_scale_and_time_reversal():
    x = np.random.default_rng(4).normal(size=500)
    p = PhaseSeries(x, 2.0)
    scaled = PhaseSeries(-3.0 * x, 2.0)
    reversed_ = PhaseSeries(x[::-1], 2.0)
    for m in (1, 3, 10):
        assert mdev(scaled, m) == pytest.approx(3.0 * mdev(p, m), rel=1e-12)
        assert adev(scaled, m) == pytest.approx(3.0 * adev(p, m), rel=1e-12)
        assert mdev(reversed_, m) == pytest.approx(mdev(p, m), rel=1e-12)
        assert adev(reversed_, m) == pytest.approx(adev(p, m), rel=1e-12)


def test_white_pm_levels():
    p = _white_pm(sigma=2e-12)
    assert adev(p, 1) == pytest.approx(SQRT3 * 2e-12, rel=0.05)
    assert tdev(p, 1) == pytest.approx(2e-12, rel=0.05)


@pytest.mark.parametrize("m", [2, 4, 8, 16])
def test_white_fm_mod_to_allan_ratio(m):
    p = _white_fm()
    ratio = mdev(p, m) / adev(p, m)
    assert ratio == pytest.approx(white_fm_mod_ratio(m), rel=0.05)
    if m >= 4:
        assert ratio == pytest.approx(1 / math.sqrt(2), rel=0.05)


def test_white_fm_mod_ratio_values():
    assert white_fm_mod_ratio(1) == 1.0
    assert white_fm_mod_ratio(2) == pytest.approx(math.sqrt(10 / 16))
    assert white_fm_mod_ratio(4) == pytest.approx(0.729, abs=1e-3)
    assert white_fm_mod_ratio(1024) == pytest.approx(1 / math.sqrt(2), rel=1e-3)
    with pytest.raises(ValueError):
        white_fm_mod_ratio(0)


def test_white_fm_adev_slope():
    curve = stability_curve(_white_fm(), [4, 8, 16, 32, 64])
    assert loglog_slope(curve, "adev") == pytest.approx(-0.5, abs=0.1)


def test_white_pm_tdev_slope_over_first_decade():
    curve = stability_curve(_white_pm(n=10_000, seed=9), [1, 2, 4, 8])
    assert loglog_slope(curve, "tdev") == pytest.approx(-0.5, abs=0.1)


def test_gaps_pool_segments():
    rng = np.random.default_rng(5)
    x = rng.normal(size=41)
    gaps = np.zeros(41, dtype=bool)
    gaps[20] = True
    p = PhaseSeries(x, 1.0, gaps=gaps)
    assert len(p.segments()) == 2
    d = np.concatenate([s[2:] - 2 * s[1:-1] + s[:-2] for s in (x[:20], x[21:])])
    assert adev(p, 1) == pytest.approx(math.sqrt(np.sum(d ** 2) / (2 * d.size)))
    assert mdev(p, 1) == adev(p, 1)


def test_nan_samples_are_gaps():
    x = np.arange(12, dtype=float) ** 2
    x[5] = np.nan
    p = PhaseSeries(x, 1.0)
    assert p.gaps.tolist() == [i == 5 for i in range(12)]
    # both stretches are pure quadratics with second difference 2
    assert adev(p, 1) == pytest.approx(math.sqrt(4 / 2))


def test_gaps_leaving_no_long_stretch():
    x = np.zeros(10)
    gaps = np.array([False, False, True] * 3 + [False])
    with pytest.raises(ValueError):
        adev(PhaseSeries(x, 1.0, gaps=gaps), 1)


def test_stability_curve_consistency():
    p = _white_pm(n=2000, seed=6)
    curve = stability_curve(p)
    assert curve.m_values.tolist() == default_m_values(2000)
    assert np.all(curve.tdev == curve.taus_s / SQRT3 * curve.mdev)
    assert np.all(curve.tdev_ci_low <= curve.tdev)
    assert np.all(curve.tdev <= curve.tdev_ci_high)
    single = stability_curve(p, [4])
    assert len(single) == 1
    assert single.mdev[0] == mdev(p, 4)
    assert single.adev[0] == adev(p, 4)
    assert single.n_terms[0] == 2000 - 3 * 4 + 1


def test_stability_curve_arguments():
    p = _white_pm(n=100)
    with pytest.raises(ValueError):
        stability_curve(p, [4, 2])
    with pytest.raises(ValueError):
        stability_curve(p, [])
    with pytest.raises(ValueError):
        stability_curve(p, [40])


def test_default_m_values():
    assert default_m_values(4) == [1]
    assert default_m_values(100) == [1, 2, 4, 8, 16, 32]
    with pytest.raises(ValueError):
        default_m_values(3)


def test_stability_csv(tmp_path):
    curve = stability_curve(_white_pm(n=200))
    path = curve.to_csv(tmp_path / "stability.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert header[:5] == STABILITY_COLUMNS
    assert {"m", "edf", "tdev_ci_low", "tdev_ci_high"} <= set(header)


def test_loglog_slope_exact_power_law():
    taus = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    values = 3.0 * taus ** -0.5
    s = StabilitySeries(taus, values, values, values, np.ones(5, dtype=int))
    assert loglog_slope(s, "tdev") == pytest.approx(-0.5)
    assert loglog_slope(s, "mdev", (2.0, 16.0)) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        loglog_slope(s, "tdev", (1.0, 2.0))
    with pytest.raises(ValueError):
        loglog_slope(s, "hdev")


@pytest.mark.parametrize("slope, expected", [(-1.45, "white_pm"), (-0.95, "flicker_pm"), (-0.55, "white_fm"), (0.1, "flicker_fm")])
def test_classify_noise(slope, expected):
    assert classify_noise(slope) == expected
    assert expected in NOISE_SLOPES


def test_read_series_phase(tmp_path):
    path = tmp_path / "series.csv"
    path.write_text("window_start_s,t0_ps\n0,1.5\n1,2.5\n2,\n3,0.5\n4,1.0\n")
    p = read_series_phase(path, 1.0)
    assert p.x[0] == pytest.approx(1.5e-12)
    assert p.gaps.tolist() == [False, False, True, False, False]
    with pytest.raises(ValueError):
        read_series_phase(path, 1.0, column="missing")


@pytest.mark.parametrize("series", [_white_pm(n=3000, seed=21), _white_fm(n=3000, seed=22)])
def test_estimators_match_allantools_on_gap_free_series(series):
    m_values = [1, 2, 4, 8, 16, 64]
    taus = [m * series.tau0_s for m in m_values]
    rate = 1.0 / series.tau0_s
    _, ref_adev, _, _ = allantools.oadev(series.x, rate=rate, data_type="phase", taus=taus)
    _, ref_mdev, _, _ = allantools.mdev(series.x, rate=rate, data_type="phase", taus=taus)
    _, ref_tdev, _, _ = allantools.tdev(series.x, rate=rate, data_type="phase", taus=taus)
    curve = stability_curve(series, m_values)
    assert curve.adev == pytest.approx(ref_adev, rel=1e-6)
    assert curve.mdev == pytest.approx(ref_mdev, rel=1e-6)
    assert curve.tdev == pytest.approx(ref_tdev, rel=1e-6)


def test_edf_and_intervals_follow_greenhall():
    p = _white_pm(n=2000, seed=23)
    curve = stability_curve(p, [1, 4, 16], alpha=2)
    for m, edf, dev, lo, hi in zip(curve.m_values, curve.edf, curve.tdev, curve.tdev_ci_low, curve.tdev_ci_high):
        expected = allantools.edf_greenhall(alpha=2, d=2, m=int(m), N=2000, overlapping=True, modified=True)
        assert edf == pytest.approx(expected)
        assert (lo, hi) == pytest.approx(allantools.confidence_interval(dev=dev, edf=edf, ci=CI_LEVEL))
        assert lo < dev < hi


def test_edf_pools_gap_free_segments():
    x = np.random.default_rng(24).normal(0.0, 1e-12, 1001)
    gaps = np.zeros(x.size, dtype=bool)
    gaps[500] = True
    curve = stability_curve(PhaseSeries(x, 1.0, gaps), [2], alpha=2)
    per_segment = allantools.edf_greenhall(alpha=2, d=2, m=2, N=500, overlapping=True, modified=True)
    assert curve.edf[0] == pytest.approx(2 * per_segment)


def test_noise_exponent_follows_mdev_slope():
    taus = np.array([1.0, 2.0, 4.0, 8.0])
    assert noise_alpha(taus ** -1.5, taus) == NOISE_ALPHA["white_pm"]
    assert noise_alpha(taus ** -0.5, taus) == NOISE_ALPHA["white_fm"]
    assert noise_alpha([1.0, 0.5], [1.0, 2.0]) == NOISE_ALPHA["white_pm"]
    with pytest.raises(ValueError):
        stability_curve(_white_pm(n=200), [1, 2], alpha=5)
