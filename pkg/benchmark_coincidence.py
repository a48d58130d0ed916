#!/usr/bin/env python
"""Throughput benchmark for the two-cursor coincidence histogram.

Generates two correlated Poisson streams (default 10^7 tags each) and times
``cross_correlate`` against them. Prints one JSON line with tags/s.
"""

import argparse
import json
import logging
import sys
import time

import numpy as np

from QTwttToolkit.core.tagstream import Channel, TimeTagStream
from QTwttToolkit.logic.coincidence import cross_correlate, fit_peak

logger = logging.getLogger(__name__)


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description='Coincidence histogram throughput benchmark')
    parser.add_argument('--tags', type=int, default=10_000_000, help='Tags per stream')
    parser.add_argument('--rate-hz', type=float, default=1e7, help='Mean tag rate per stream')
    parser.add_argument('--delay-ps', type=int, default=41_670_000, help='Delay of stream b')
    parser.add_argument('--window-ps', type=int, default=2000, help='Coincidence half-window')
    parser.add_argument('--bin-ps', type=int, default=10, help='Bin width')
    parser.add_argument('--repeat', type=int, default=3, help='Timed repetitions')
    parser.add_argument('--seed', type=int, default=1, help='Random seed')
    return parser.parse_args(argv)


def make_streams(n: int, rate_hz: float, delay_ps: int, seed: int):
    rng = np.random.default_rng(seed)
    gaps = rng.exponential(1e12 / rate_hz, n)
    a = np.cumsum(gaps).astype(np.int64)
    paired = rng.random(n) < 0.1
    b = np.where(paired, a + delay_ps + rng.normal(0, 50, n).astype(np.int64), rng.integers(0, a[-1], n))
    b.sort()
    span = (0, int(max(a[-1], b[-1])) + 1)
    return TimeTagStream(Channel("D3"), a, span), TimeTagStream(Channel("D1"), b, span)


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    a, b = make_streams(args.tags, args.rate_hz, args.delay_ps, args.seed)
    timings = []
    for i in range(args.repeat):
        start = time.perf_counter()
        hist = cross_correlate(a, b, args.window_ps, args.bin_ps, args.delay_ps)
        timings.append(time.perf_counter() - start)
        print(f"PROGRESS: {i + 1}/{args.repeat}", end='\r', file=sys.stderr)
    best = min(timings)
    fit = fit_peak(hist)
    print(json.dumps({
        'tags_per_stream': args.tags,
        'pairs_in_window': hist.total,
        'best_s': round(best, 4),
        'tags_per_s': round(2 * args.tags / best),
        'center_ps': round(fit.center_ps, 2),
    }))


if __name__ == '__main__':
    main()
