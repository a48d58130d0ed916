"""
Command line interface: ``qtwtt <command> [options]``.

Commands:
    simulate     scenario -> timestamp file (+ <stem>_truth.csv)
    coincidence  two channels -> histogram CSV, fit printed as JSON
    twtt         timestamp file -> per-window series CSV
    stability    series CSV -> ADEV/MDEV/TDEV CSV
    psd          one channel -> countrate PSD CSV
    report       scenario -> full pipeline into an output directory

Exit codes: 0 success, 2 invalid input or file format, 3 fit/analysis
failure, 1 anything else. Failures print one line on stderr:
``ERROR kind=<ExceptionName> message="<text>"``.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from config import CONFIG
from QTwttToolkit.core.models import ScenarioConfig
from QTwttToolkit.core.scenario_validation import ValidationError, parse_scenario, preset_path, scenario_digest
from QTwttToolkit.core.tag_io import TagFormatError, parse_source_spec, read_tags, write_tags
from QTwttToolkit.core.tagstream import DETECTORS, Channel, TimeTagStream
from QTwttToolkit.logic.coincidence import FitError, cross_correlate, estimate_offset, fit_peak
from QTwttToolkit.logic.reporting import emit_report
from QTwttToolkit.logic.simulation import simulate_scenario
from QTwttToolkit.logic.spectral import countrate_trace, powerlaw_fit, psd
from QTwttToolkit.logic.stability import classify_noise, loglog_slope, read_series_phase, stability_curve
from QTwttToolkit.logic.twtt import CoincidenceParams, analyze_series, read_series_csv
from version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_INVALID = 2
EXIT_ANALYSIS = 3


def _read_scenario(value: str) -> Tuple[ScenarioConfig, str]:
    """Scenario from a JSON file path or a shipped preset name; returns (config, digest)."""
    path = Path(value)
    if not path.exists():
        path = preset_path(value)
    text = path.read_text(encoding="utf-8")
    return parse_scenario(text), scenario_digest(text)


def _with_seed(cfg: ScenarioConfig, seed: Optional[int]) -> ScenarioConfig:
    if seed is None:
        return cfg
    return dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seed=seed))


def _coincidence_params(args, cfg: Optional[ScenarioConfig] = None) -> CoincidenceParams:
    scenario = cfg.coincidence if cfg is not None else None

    def pick(flag, attr, default):
        if flag is not None:
            return flag
        if scenario is not None and getattr(scenario, attr) is not None:
            return getattr(scenario, attr)
        return default

    return CoincidenceParams(
        window_ps=pick(args.window_ps, "window_ps", CONFIG.coincidence_window_ps),
        bin_width_ps=pick(args.bin_ps, "bin_width_ps", CONFIG.bin_width_ps),
        offset_guess_up_ps=scenario.offset_guess_up_ps if scenario else None,
        offset_guess_down_ps=scenario.offset_guess_down_ps if scenario else None,
        offset_search_ps=CONFIG.offset_search_ps,
        offset_coarse_bin_ps=CONFIG.offset_coarse_bin_ps,
        threads=args.threads if args.threads is not None else CONFIG.threads,
    )


def _select_stream(spec: str, default_input: Optional[str]) -> TimeTagStream:
    """``file.qtts:D1`` or a bare channel label read from ``-i``."""
    if ":" in spec:
        path, channel = parse_source_spec(spec)
        if channel is not None:
            return read_tags(path, [channel])[channel]
    if default_input is None:
        raise ValueError(f"channel '{spec}' needs -i/--input or the file:channel form")
    channel = Channel.parse(spec)
    return read_tags(default_input, [channel])[channel]


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=float))


def cmd_simulate(args) -> int:
    cfg, digest = _read_scenario(args.config)
    cfg = _with_seed(cfg, args.seed)
    streams, truth = simulate_scenario(cfg)
    out = write_tags(streams, args.output)
    truth_path = truth.to_csv(out.with_name(f"{out.stem}_truth.csv"))
    _print_json({
        "tags": str(out),
        "truth": str(truth_path),
        "seed": cfg.run.seed,
        "scenario_digest": digest,
        "counts": {str(c): len(s) for c, s in streams.items()},
    })
    return EXIT_OK


def cmd_coincidence(args) -> int:
    specs = args.channel or ["D3", "D1"]
    if len(specs) != 2:
        raise ValueError("--channel must be given exactly twice (reference, delayed)")
    a = _select_stream(specs[0], args.input)
    b = _select_stream(specs[1], args.input)
    params = _coincidence_params(args)
    guess = args.offset_ps
    if guess is None:
        guess = estimate_offset(a, b, params.offset_search_ps, params.offset_coarse_bin_ps, params.bin_width_ps)
    hist = cross_correlate(a, b, params.window_ps, params.bin_width_ps, guess)
    if args.output:
        hist.to_csv(args.output)
    fit = fit_peak(hist)
    _print_json({"reference": str(a.channel), "delayed": str(b.channel), "offset_guess_ps": int(guess),
                 "total": hist.total, **fit.to_dict()})
    return EXIT_OK


def cmd_twtt(args) -> int:
    cfg = None
    if args.config:
        cfg, _ = _read_scenario(args.config)
    streams = read_tags(args.input, DETECTORS)
    window_s = args.window_s or (cfg.run.window_s if cfg else CONFIG.window_s)
    series = analyze_series(streams, window_s, _coincidence_params(args, cfg), progress=args.progress)
    series.to_csv(args.output)
    _print_json({
        "windows": len(series),
        "gaps": series.gap_indices,
        "empirical_sd_ps": series.empirical_sd_ps(),
        "mean_predicted_sd_eq2_ps": series.mean_predicted_sd("eq2"),
        "mean_predicted_sd_eq3_ps": series.mean_predicted_sd("eq3"),
    })
    return EXIT_OK


def _infer_tau0(path) -> float:
    starts = read_series_csv(path)["window_start_s"].to_numpy(dtype=float)
    if starts.size < 2:
        raise ValueError(f"{path}: cannot infer --tau0-s from fewer than 2 windows")
    return float(np.median(np.diff(starts)))


def cmd_stability(args) -> int:
    tau0 = args.tau0_s or _infer_tau0(args.input)
    phase = read_series_phase(args.input, tau0, args.column)
    curve = stability_curve(phase)
    curve.to_csv(args.output)
    summary = {"tau0_s": tau0, "points": len(curve), "gaps": int(phase.gaps.sum()) if phase.gaps is not None else 0}
    try:
        summary["tdev_slope"] = loglog_slope(curve, "tdev")
        summary["noise_type"] = classify_noise(loglog_slope(curve, "mdev"))
    except ValueError as exc:
        logger.warning("No slope: %s", exc)
    _print_json(summary)
    return EXIT_OK


def cmd_psd(args) -> int:
    stream = _select_stream(args.channel or "D1", args.input)
    spectrum = psd(countrate_trace(stream, args.dt_s or CONFIG.psd_dt_s))
    spectrum.to_csv(args.output)
    summary = {"channel": str(stream.channel), "bins": len(spectrum.freqs_hz)}
    try:
        summary["exponent"], summary["level"] = powerlaw_fit(spectrum, args.fmin, args.fmax)
    except ValueError as exc:
        logger.warning("No power-law fit: %s", exc)
    _print_json(summary)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg, digest = _read_scenario(args.config)
    cfg = _with_seed(cfg, args.seed)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams, truth = simulate_scenario(cfg)
    if args.save_tags:
        write_tags(streams, out_dir / "tags.qtts")
    window_s = args.window_s or cfg.run.window_s
    series = analyze_series(streams, window_s, _coincidence_params(args, cfg), truth=truth, progress=args.progress)

    stability = None
    t0 = series.t0_array()
    if len(series) >= 4 and np.isfinite(t0).sum() >= 4:
        stability = stability_curve(series.to_phase_series())
    else:
        logger.warning("Too few valid windows (%d) for a stability curve", int(np.isfinite(t0).sum()))

    spectra = {}
    for det in DETECTORS:
        try:
            spectra[det.label] = psd(countrate_trace(streams[det], args.dt_s or CONFIG.psd_dt_s))
        except ValueError as exc:
            logger.warning("No countrate spectrum for %s: %s", det, exc)

    report = emit_report(series, stability, out_dir, spectra, scenario_digest=digest, seed=cfg.run.seed)
    _print_json({"output": str(out_dir), **{k: getattr(report, k) for k in (
        "window_count", "gap_count", "empirical_sd_ps", "mean_predicted_sd_eq2_ps", "mean_predicted_sd_eq3_ps",
    )}})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtwtt", description="Quantum two-way time transfer toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Logging level (default from config)")
    sub = parser.add_subparsers(dest="command", required=True)

    analysis = argparse.ArgumentParser(add_help=False)
    analysis.add_argument("--bin-ps", type=int, default=None, help="Histogram bin width in ps")
    analysis.add_argument("--window-ps", type=int, default=None, help="Coincidence half-window in ps")
    analysis.add_argument("--threads", type=int, default=None, help="Worker threads (default QTWTT_THREADS or CPU count)")

    p = sub.add_parser("simulate", help="Simulate a scenario into a timestamp file")
    p.add_argument("-c", "--config", required=True, help="Scenario JSON file or preset name")
    p.add_argument("-o", "--output", required=True, help="Output .qtts or .csv file")
    p.add_argument("--seed", type=int, default=None, help="Override run.seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coincidence", parents=[analysis], help="Histogram and fit one channel pair")
    p.add_argument("-i", "--input", default=None, help="Timestamp file")
    p.add_argument("--channel", action="append", help="Reference then delayed channel, e.g. D3 or tags.qtts:D3")
    p.add_argument("--offset-ps", type=int, default=None, help="Delay guess in ps (default: FFT search)")
    p.add_argument("-o", "--output", default=None, help="Histogram CSV")
    p.set_defaults(func=cmd_coincidence)

    p = sub.add_parser("twtt", parents=[analysis], help="Per-window two-way analysis")
    p.add_argument("-i", "--input", required=True, help="Timestamp file with D1..D4")
    p.add_argument("-c", "--config", default=None, help="Scenario supplying coincidence settings")
    p.add_argument("--window-s", type=float, default=None, help="Analysis window in seconds")
    p.add_argument("--progress", action="store_true", help="Print progress to stderr")
    p.add_argument("-o", "--output", required=True, help="Series CSV")
    p.set_defaults(func=cmd_twtt)

    p = sub.add_parser("stability", help="ADEV/MDEV/TDEV of a series CSV")
    p.add_argument("-i", "--input", required=True, help="Series CSV")
    p.add_argument("--tau0-s", type=float, default=None, help="Sample spacing (default: window spacing)")
    p.add_argument("--column", default="t0_ps", help="Phase column in ps")
    p.add_argument("-o", "--output", required=True, help="Stability CSV")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("psd", help="Countrate PSD of one channel")
    p.add_argument("-i", "--input", default=None, help="Timestamp file")
    p.add_argument("--channel", default=None, help="Channel, e.g. D1 or tags.qtts:D1")
    p.add_argument("--dt-s", type=float, default=None, help="Countrate bin in seconds")
    p.add_argument("--fmin", type=float, default=0.1, help="Power-law fit lower frequency")
    p.add_argument("--fmax", type=float, default=20.0, help="Power-law fit upper frequency")
    p.add_argument("-o", "--output", required=True, help="PSD CSV")
    p.set_defaults(func=cmd_psd)

    p = sub.add_parser("report", parents=[analysis], help="Simulate, analyse and write a full report")
    p.add_argument("-c", "--config", required=True, help="Scenario JSON file or preset name")
    p.add_argument("-o", "--output", required=True, help="Output directory")
    p.add_argument("--seed", type=int, default=None, help="Override run.seed")
    p.add_argument("--window-s", type=float, default=None, help="Analysis window in seconds")
    p.add_argument("--dt-s", type=float, default=None, help="Countrate bin in seconds")
    p.add_argument("--save-tags", action="store_true", help="Also write tags.qtts")
    p.add_argument("--progress", action="store_true", help="Print progress to stderr")
    p.set_defaults(func=cmd_report)
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ValidationError, TagFormatError)):
        return EXIT_INVALID
    if isinstance(exc, FitError):
        return EXIT_ANALYSIS
    return EXIT_OTHER


def error_line(exc: BaseException) -> str:
    message = " ".join(str(exc).split()).replace("\\", "\\\\").replace('"', '\\"')
    return f'ERROR kind={type(exc).__name__} message="{message}"'


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or CONFIG.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except Exception as exc:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(error_line(exc), file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
