import copy

import pytest

NOISELESS_DOCUMENT = {
    "description": "lossless, noiseless, symmetric link",
    "source": {"pair_rate_hz": 100000, "correlation_sigma_ps": 0},
    "segments": {
        "fs_uplink": {"mean_loss_db": 0, "base_delay_ps": 1000, "jitter_sigma_ps": 0},
        "fs_downlink": {"mean_loss_db": 0, "base_delay_ps": 1000, "jitter_sigma_ps": 0},
        "fiber_out": {"mean_loss_db": 0, "base_delay_ps": 3000, "jitter_sigma_ps": 0},
        "fiber_return": {"mean_loss_db": 0, "base_delay_ps": 3000, "jitter_sigma_ps": 0},
    },
    "detectors": {
        d: {"efficiency": 1.0, "jitter_sigma_ps": 0, "dark_rate_hz": 0, "dead_time_ps": 0}
        for d in ("D1", "D2", "D3", "D4")
    },
    "clocks": {"mode": "loopback", "local": {"offset_ps": 0, "fractional_frequency_offset": 0}},
    "run": {"duration_s": 0.01, "window_s": 0.001, "seed": 1},
    "coincidence": {
        "window_ps": 2000,
        "bin_width_ps": 10,
        "offset_guess_up_ps": 4000,
        "offset_guess_down_ps": 4000,
    },
}


@pytest.fixture
def scenario_doc():
    """Fresh copy of a minimal noiseless scenario document."""
    return copy.deepcopy(NOISELESS_DOCUMENT)
