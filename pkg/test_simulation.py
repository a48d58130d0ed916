import json
import math

import numpy as np
import pytest

from QTwttToolkit.core.models import (
    ChannelModel,
    ClockModel,
    DetectorModel,
    DriftModel,
    FadingModel,
    NoiseTerm,
    PairSourceModel,
)
from QTwttToolkit.core.scenario_validation import scenario_from_dict
from QTwttToolkit.core.tagstream import D1, D2, D3, D4, Channel, TimeTagStream
from QTwttToolkit.logic.simulation import (
    ClockPhase,
    FadingTrace,
    apply_dead_time,
    drift_ps,
    generate_pairs,
    propagate,
    simulate_scenario,
    split_stream,
    synthesize_clock_phase,
    synthesize_fading,
    timestamp,
)
from QTwttToolkit.logic.spectral import powerlaw_fit, series_psd
from QTwttToolkit.logic.stability import PhaseSeries, adev, loglog_slope, mdev, stability_curve
from QTwttToolkit.utils.utils import PS_PER_S, derive_seed

IDEAL_DETECTOR = DetectorModel(efficiency=1.0, jitter_sigma_ps=0.0, dark_rate_hz=0.0, dead_time_ps=0)


def test_generate_pairs_empty_interval():
    signal, idler = generate_pairs(PairSourceModel(1e6, 10), 0.0, seed=1)
    assert len(signal) == len(idler) == 0


def test_generate_pairs_poisson_count():
    signal, idler = generate_pairs(PairSourceModel(1e6, 0), 1.0, seed=2)
    assert abs(len(signal) - 1_000_000) <= 5_000
    assert len(idler) == len(signal)
    assert np.all(np.diff(signal.tags) >= 0)


def test_generate_pairs_correlation_width():
    src = PairSourceModel(1e5, 50.0)
    signal, idler = generate_pairs(src, 1.0, seed=3)
    # with ~10 us mean spacing the two sorted streams stay pair-aligned
    diff = signal.tags - idler.tags
    assert len(signal) > 90_000
    assert np.std(diff) == pytest.approx(50.0, rel=0.02)


def test_generate_pairs_deterministic():
    a, _ = generate_pairs(PairSourceModel(1e4, 20), 0.1, seed=9)
    b, _ = generate_pairs(PairSourceModel(1e4, 20), 0.1, seed=9)
    assert np.array_equal(a.tags, b.tags)


def test_fading_noiseless_limit():
    trace = synthesize_fading(FadingModel(0.0, 0.0, knee_hz=20.0), 1.0, seed=1)
    assert np.all(trace.values == 1.0)
    assert trace.values.size == 1000


def test_fading_too_short():
    with pytest.raises(ValueError):
        synthesize_fading(FadingModel(0.1, 0.0, knee_hz=20.0), 0.0005, seed=1)


def test_fading_statistics():
    model = FadingModel(scintillation_index=0.25, zero_fade_fraction=0.0336, knee_hz=20.0)
    trace = synthesize_fading(model, 10.0, seed=5)
    assert trace.values.size == 10_000
    assert trace.values.mean() == pytest.approx(1.0)
    assert int(np.sum(trace.values == 0)) == 336
    assert np.all(trace.values >= 0)


def test_fading_relative_variance():
    trace = synthesize_fading(FadingModel(0.25, 0.0, knee_hz=20.0), 100.0, seed=6)
    assert trace.values.var() == pytest.approx(0.25, rel=0.2)


def test_fading_power_law_slope():
    model = FadingModel(scintillation_index=0.25, zero_fade_fraction=0.0336, knee_hz=20.0)
    trace = synthesize_fading(model, 100.0, seed=7)
    exponent, _ = powerlaw_fit(series_psd(trace.values, model.dt_s), 0.1, 20.0)
    assert -0.82 <= exponent <= -0.52


def test_fading_slope_holds_across_seeds():
    # 10 s at 1 ms, the length of one recorded countrate trace
    model = FadingModel(scintillation_index=0.25, zero_fade_fraction=0.0336, knee_hz=20.0)
    slopes = []
    for seed in range(20):
        trace = synthesize_fading(model, 10.0, seed=100 + seed)
        assert int(np.sum(trace.values == 0)) == 336
        slopes.append(powerlaw_fit(series_psd(trace.values, model.dt_s), 0.1, 20.0)[0])
    slopes = np.array(slopes)
    assert np.all(np.abs(slopes + 2 / 3) <= 0.15), slopes
    assert slopes.mean() == pytest.approx(-2 / 3, abs=0.05)


def test_propagate_lossless_shift():
    s = TimeTagStream(Channel("signal"), np.array([0.0, 10.5, 400.0]), (0, 1000))
    out = propagate(s, ChannelModel(0.0, 1000.0, 0.0), None, seed=1)
    assert out.tags.tolist() == [1000.0, 1010.5, 1400.0]
    assert out.span == (1000, 2000)


def test_propagate_loss_binomial():
    s = TimeTagStream(Channel("signal"), np.arange(100_000, dtype=float), (0, 100_000))
    out = propagate(s, ChannelModel(10.0, 0.0, 0.0), None, seed=2)
    assert abs(len(out) - 10_000) <= 500


def test_propagate_loss_composes():
    s = TimeTagStream(Channel("signal"), np.arange(200_000, dtype=float), (0, 200_000))
    two_step = propagate(propagate(s, ChannelModel(3.0, 0.0, 0.0), None, 1), ChannelModel(4.0, 0.0, 0.0), None, 2)
    expected = 200_000 * 10 ** -0.7
    assert abs(len(two_step) - expected) <= 5 * math.sqrt(expected)


def test_propagate_fading_must_cover():
    s = TimeTagStream(Channel("signal"), np.array([5.0e9]), (0, 10**10))
    trace = FadingTrace(np.ones(5), 1e-3)
    with pytest.raises(ValueError):
        propagate(s, ChannelModel(0.0, 0.0, 0.0), trace, seed=1)


def test_propagate_zero_fade_blocks_everything():
    s = TimeTagStream(Channel("signal"), np.linspace(0, 9.9e8, 100), (0, 10**9))
    trace = FadingTrace(np.zeros(1), 1e-3)
    assert len(propagate(s, ChannelModel(0.0, 0.0, 0.0), trace, seed=1)) == 0


def test_drift_shapes():
    t = np.array([0.0, 9000.0, 18000.0])
    sine = drift_ps(DriftModel(250.0, 36000.0), t)
    assert sine == pytest.approx([0.0, 250.0, 0.0], abs=1e-9)
    ramp = drift_ps(DriftModel(100.0, 10.0, shape="linear_ramp"), np.array([0.0, 5.0]))
    assert ramp.tolist() == [0.0, 50.0]
    table = DriftModel(0.0, 1.0, shape="piecewise_table", table=((0.0, 0.0), (10.0, 20.0)))
    assert drift_ps(table, np.array([-1.0, 5.0, 20.0])).tolist() == [0.0, 10.0, 20.0]
    assert drift_ps(None, t).tolist() == [0.0, 0.0, 0.0]


def test_sinusoid_drift_excursion():
    t = np.linspace(0.0, 36000.0, 3601)
    d = drift_ps(DriftModel(250.0, 36000.0), t)
    assert d.max() - d.min() == pytest.approx(500.0, rel=1e-3)


def test_split_stream_fraction():
    s = TimeTagStream(Channel("signal"), np.arange(100_000, dtype=float), (0, 100_000))
    a, b = split_stream(s, 0.5, seed=4)
    assert len(a) + len(b) == len(s)
    assert abs(len(a) - 50_000) <= 5 * math.sqrt(25_000)


def test_clock_phase_deterministic_terms():
    x = synthesize_clock_phase(ClockModel(100.0, 0.0), 10, 1e-3, seed=1)
    assert np.allclose(x, 100e-12)
    x = synthesize_clock_phase(ClockModel(0.0, 1e-9), 1001, 1.0, seed=1)
    assert x[1000] == pytest.approx(1e-6, rel=1e-12)


@pytest.mark.parametrize(
    "kind, level, slope, tol",
    [("white_pm", 1.0, -1.5, 0.15), ("flicker_pm", 1.0, -1.0, 0.15), ("white_fm", 1e-12, -0.5, 0.1)],
)
def test_clock_noise_mdev_slopes(kind, level, slope, tol):
    x = synthesize_clock_phase(ClockModel(0.0, 0.0, (NoiseTerm(kind, level),)), 100_000, 1.0, seed=11)
    curve = stability_curve(PhaseSeries(x, 1.0), [4, 8, 16, 32, 64])
    assert loglog_slope(curve, "mdev") == pytest.approx(slope, abs=tol)


def test_white_pm_adev_level():
    x = synthesize_clock_phase(ClockModel(0.0, 0.0, (NoiseTerm("white_pm", 5.0),)), 100_000, 1.0, seed=12)
    assert adev(PhaseSeries(x, 1.0), 1) == pytest.approx(math.sqrt(3) * 5e-12, rel=0.05)


def test_white_fm_level_is_adev_at_one_second():
    x = synthesize_clock_phase(ClockModel(0.0, 0.0, (NoiseTerm("white_fm", 1e-11),)), 100_000, 0.01, seed=13)
    assert adev(PhaseSeries(x, 0.01), 100) == pytest.approx(1e-11, rel=0.1)


def test_timestamp_identity():
    s = TimeTagStream(D1, np.array([10.0, 20.4, 30.6]), (0, 100))
    out = timestamp(s, IDEAL_DETECTOR, ClockPhase(np.zeros(3), 1e-3), seed=1)
    assert out.tags.tolist() == [10, 20, 31]
    assert out.is_integer


def test_timestamp_dead_time():
    s = TimeTagStream(D1, np.array([1000.0, 1010.0]), (0, 10**6))
    det = DetectorModel(1.0, 0.0, 0.0, dead_time_ps=50_000)
    assert timestamp(s, det, None, seed=1).tags.tolist() == [1000]


def test_timestamp_dark_counts():
    s = TimeTagStream(D1, [], (0, 10 * PS_PER_S))
    det = DetectorModel(0.0, 0.0, 100.0, 0)
    assert abs(len(timestamp(s, det, None, seed=3)) - 1000) <= 160


def test_timestamp_clock_must_cover():
    s = TimeTagStream(D1, np.array([5.0]), (0, 10 * PS_PER_S))
    with pytest.raises(ValueError):
        timestamp(s, IDEAL_DETECTOR, ClockPhase(np.zeros(2), 1e-3), seed=1)


def test_apply_dead_time_non_paralyzable():
    tags = np.array([0, 30_000, 60_000, 200_000, 210_000], dtype=np.int64)
    assert apply_dead_time(tags, 50_000).tolist() == [0, 60_000, 200_000]
    assert apply_dead_time(tags, 0).tolist() == tags.tolist()


def test_simulate_deterministic(scenario_doc):
    scenario_doc["source"]["correlation_sigma_ps"] = 20
    scenario_doc["detectors"]["D1"]["dark_rate_hz"] = 1000
    cfg = scenario_from_dict(scenario_doc)
    a, _ = simulate_scenario(cfg)
    b, _ = simulate_scenario(cfg)
    for ch in (D1, D2, D3, D4):
        assert np.array_equal(a[ch].tags, b[ch].tags)
        assert a[ch].is_integer


def test_simulate_blocks_do_not_change_rates(scenario_doc):
    scenario_doc["run"]["block_s"] = 0.003
    streams, _ = simulate_scenario(scenario_from_dict(scenario_doc))
    assert all(s.span == (0, 10**10) for s in streams.values())
    expected = 100_000 * 0.01 * 0.5
    for ch in (D1, D2, D3, D4):
        assert abs(len(streams[ch]) - expected) <= 5 * math.sqrt(expected)


def test_noiseless_truth_is_zero(scenario_doc):
    _, truth = simulate_scenario(scenario_from_dict(scenario_doc))
    assert np.all(truth.true_t0_ps == 0)
    assert truth.route_asymmetry_ps == 0
    assert truth.true_t0_at([0.005])[0] == 0


def test_route_asymmetry_truth(scenario_doc):
    scenario_doc["segments"]["fiber_return"]["base_delay_ps"] = 3120
    _, truth = simulate_scenario(scenario_from_dict(scenario_doc))
    assert truth.route_asymmetry_ps == pytest.approx(-60.0)


def test_two_clock_truth(scenario_doc):
    scenario_doc["clocks"] = {
        "mode": "two_clock",
        "local": {"offset_ps": 0, "fractional_frequency_offset": 0},
        "remote": {"offset_ps": 1000, "fractional_frequency_offset": 0},
    }
    _, truth = simulate_scenario(scenario_from_dict(scenario_doc))
    assert truth.clock_mode == "two_clock"
    assert np.allclose(truth.true_t0_ps, -1000.0)
    frame = truth.to_frame()
    assert {"time_s", "true_t0_ps", "delay_fs_uplink_ps"} <= set(frame.columns)


def test_fading_truth_traces(scenario_doc):
    scenario_doc["segments"]["fs_uplink"]["fading"] = {
        "scintillation_index": 0.2, "zero_fade_fraction": 0.0, "knee_hz": 20,
    }
    _, truth = simulate_scenario(scenario_from_dict(scenario_doc))
    assert set(truth.fading_traces) == {"fs_uplink"}
    assert truth.fading_traces["fs_uplink"].covers((0, 10**10))


def test_field_link_budget_rates(scenario_doc):
    doc = json.loads(json.dumps(scenario_doc))
    doc["source"]["pair_rate_hz"] = 2e7
    doc["segments"]["fs_uplink"]["mean_loss_db"] = 23
    doc["segments"]["fs_downlink"]["mean_loss_db"] = 27
    doc["segments"]["fiber_out"]["mean_loss_db"] = 2.5
    doc["segments"]["fiber_return"]["mean_loss_db"] = 2.5
    doc["run"] = {"duration_s": 0.2, "window_s": 0.1, "seed": 21}
    streams, _ = simulate_scenario(scenario_from_dict(doc))
    emitted = 2e7 * 0.2 * 0.5
    for ch, loss in ((D1, 25.5), (D2, 29.5)):
        expected = emitted * 10 ** (-loss / 10)
        assert abs(len(streams[ch]) - expected) <= 5 * math.sqrt(expected)


def test_idler_rate_after_attenuation(scenario_doc):
    scenario_doc["source"]["pair_rate_hz"] = 320e3 * 2 * 10 ** 1.3
    scenario_doc["idler_path"] = {"mean_loss_db": 13, "base_delay_ps": 0, "jitter_sigma_ps": 0}
    streams, _ = simulate_scenario(scenario_from_dict(scenario_doc))
    for ch in (D3, D4):
        assert abs(streams[ch].rate_hz - 320e3) <= 5 * math.sqrt(3200) / 0.01


def test_seed_components_are_stable():
    assert derive_seed(1, "pairs") == derive_seed(1, "pairs", 0)
    assert derive_seed(1, "pairs", 1) != derive_seed(1, "pairs", 0)
    with pytest.raises(ValueError):
        derive_seed(1, "unknown")
