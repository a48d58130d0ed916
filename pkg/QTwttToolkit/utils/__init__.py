"""Shared helpers for the QTwtt toolkit."""

from QTwttToolkit.utils.utils import (
    PS_PER_S,
    SEED_COMPONENTS,
    derive_seed,
    loglog_fit,
    seconds_to_ps,
    worker_count,
)

__all__ = [
    "PS_PER_S",
    "SEED_COMPONENTS",
    "derive_seed",
    "loglog_fit",
    "seconds_to_ps",
    "worker_count",
]
