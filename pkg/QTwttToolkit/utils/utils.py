"""
utils.utils - Shared helpers: seeding, worker counts, unit conversion.
"""

import logging
import multiprocessing
import os
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

PS_PER_S = 1_000_000_000_000

# Fixed ids for deterministic sub-seeds. Never renumber: outputs depend on them.
SEED_COMPONENTS = {
    "pairs": 1,
    "signal_split": 2,
    "idler_split": 3,
    "idler_path": 4,
    "fs_uplink": 5,
    "fs_downlink": 6,
    "fiber_out": 7,
    "fiber_return": 8,
    "fading_fs_uplink": 9,
    "fading_fs_downlink": 10,
    "fading_fiber_out": 11,
    "fading_fiber_return": 12,
    "fading_idler_path": 13,
    "clock_local": 14,
    "clock_remote": 15,
    "detector_D1": 21,
    "detector_D2": 22,
    "detector_D3": 23,
    "detector_D4": 24,
}


def derive_seed(seed: int, component: str, block: int = 0) -> int:
    """Sub-seed for ``component`` (and emission block) of a run seeded with ``seed``.

    Uses ``SeedSequence(seed, spawn_key=(component_id, block))`` so results do
    not depend on evaluation order or thread count.
    """
    if component not in SEED_COMPONENTS:
        raise ValueError(f"Unknown seed component '{component}'")
    seq = np.random.SeedSequence(int(seed), spawn_key=(SEED_COMPONENTS[component], int(block)))
    return int(seq.generate_state(1, np.uint64)[0])


def worker_count(requested: Optional[int] = None) -> int:
    """Worker cap: explicit request, else QTWTT_THREADS, else CPU count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("QTWTT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("Ignoring invalid QTWTT_THREADS=%s", env)
    return multiprocessing.cpu_count() or 1


def seconds_to_ps(value_s: float) -> int:
    return int(round(value_s * PS_PER_S))


def loglog_fit(x, y):
    """Least-squares line through ``(log10 x, log10 y)``; returns (slope, intercept)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs strictly positive values")
    slope, intercept = np.polyfit(np.log10(x), np.log10(y), 1)
    return float(slope), float(intercept)
