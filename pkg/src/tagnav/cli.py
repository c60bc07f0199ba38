"""Command-line front end.

Every stage reads and writes files so the stages can be chained, or a
real detector's JSONL output substituted for ``simulate``.  Exit codes:
0 success, 1 usage or parameter error, 2 input/parse error, 3 numerical
failure.  Errors are a single line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._io import write_text
from .butterworth import (
    DEFAULT_ENERGY_FRACTION,
    DEFAULT_ORDER,
    DEFAULT_SAMPLE_RATE,
    FilterSpec,
    amplitude_spectrum,
    frequency_response,
    suggest_cutoff,
    zero_order_hold,
)
from .config import CONFIG_DIR_ENV, ExperimentConfig, FilterConfig, PnpConfig, default_config_path
from .detections import DEFAULT_MIN_CONFIDENCE, read_detections
from .errors import InputError, InvalidParameterError, TagNavError
from .geometry import CameraIntrinsics, MarkerMap, default_intrinsics, wall_marker_map
from .metrics import evaluate
from .sim import estimate_stage, filter_stage, run_experiment, write_simulation
from .trajectory import Trajectory, fmt

log = logging.getLogger("tagnav")


class UsageError(InvalidParameterError):
    kind = "Usage-Error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- helpers ------------------------------------------------------------------

def _emit(text, out):
    """Write ``text`` to ``out`` atomically, or to stdout when ``out`` is None or '-'."""
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        write_text(out, text)


def _load_config(path):
    return ExperimentConfig.load(path if path else default_config_path())


def _load_trajectory(path) -> Trajectory:
    if str(path) == "-":
        return Trajectory.from_csv_text(sys.stdin.read())
    return Trajectory.load(path)


def _csv_text(header, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


# -- commands -----------------------------------------------------------------

def cmd_simulate(args):
    config = _load_config(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    names = [p.name for p in config.profiles]
    wanted = args.profile or names
    unknown = sorted(set(wanted) - set(names))
    if unknown:
        raise InvalidParameterError(f"unknown profile(s) {unknown}; configured: {names}")
    out = Path(args.out)
    write_text(out / "map.json", json.dumps(config.marker_map.to_dict(), indent=2) + "\n")
    write_text(out / "intrinsics.json", json.dumps(config.intrinsics.to_dict(), indent=2) + "\n")
    for i, name in enumerate(names):
        if name in wanted:
            truth, dets = write_simulation(config, i, out / name)
            log.info("%s: %d frames, %d detections", name, len(truth), len(dets))
    return 0


def cmd_estimate(args):
    marker_map = MarkerMap.load(args.map) if args.map else wall_marker_map()
    intr = CameraIntrinsics.load(args.intrinsics) if args.intrinsics else default_intrinsics()
    pnp = PnpConfig(args.mode, args.min_markers, args.weights)
    config = ExperimentConfig(marker_map=marker_map, intrinsics=intr, pnp=pnp,
                              min_confidence=args.min_confidence)
    frame_times = list(_load_trajectory(args.frame_times).t) if args.frame_times else None
    if args.detections == "-":
        dets = read_detections(sys.stdin)
    else:
        dets = read_detections(args.detections)
    raw = estimate_stage(dets, config, frame_times) if args.jobs == 1 else _estimate_parallel(
        dets, config, frame_times, args.jobs)
    _emit(raw.to_csv_text(), args.output)
    gaps = int(raw.is_gap.sum())
    if gaps:
        log.info("%d of %d frames are gap records", gaps, len(raw))
    return 0


def _estimate_parallel(dets, config, frame_times, jobs):
    from .pnp import estimate_trajectory, frames_to_trajectory

    frames = estimate_trajectory(dets, config.marker_map, config.intrinsics, config.pnp.mode,
                                 config.pnp.min_markers, min_confidence=config.min_confidence,
                                 frame_times=frame_times, weight_policy=config.pnp.weight_policy,
                                 n_jobs=jobs)
    return frames_to_trajectory(frames)


def cmd_filter(args):
    if args.cutoff is not None:
        FilterSpec(args.order, args.cutoff, args.sample_rate)  # fail before reading input
        fc = FilterConfig(args.order, args.cutoff, DEFAULT_ENERGY_FRACTION, 1.0, args.zero_phase)
    else:
        frac = DEFAULT_ENERGY_FRACTION if args.auto_cutoff is None else args.auto_cutoff
        fc = FilterConfig(args.order, None, frac, args.cutoff_scale, args.zero_phase)
    raw = _load_trajectory(args.trajectory)
    filtered, wc = filter_stage(raw, fc, args.sample_rate)
    log.info("cutoff %.6g rad/s", wc)
    _emit(filtered.to_csv_text(), args.output)
    return 0


def cmd_evaluate(args):
    a = _load_trajectory(args.trajectory)
    b = _load_trajectory(args.reference)
    report = evaluate(a, b, max_skew=args.max_skew, config_digest=args.config_digest,
                      label=args.label)
    _emit(report.to_json(), args.output)
    return 0


def cmd_bench(args):
    config = _load_config(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    timing = False if args.no_timing else None
    arts = run_experiment(config, args.out, timing=timing)
    if args.plots:
        from .plots import plot_trajectories

        for v in arts.variants:
            plot_trajectories({"truth": v.truth, "raw": v.raw, "filtered": v.filtered},
                              arts.output_dir / v.profile.name / "trajectories.svg",
                              title=v.profile.name)
    sys.stdout.write(arts.table)
    return 0


def cmd_bode(args):
    spec = FilterSpec(args.order, args.cutoff, args.sample_rate)
    if not 0 < args.omega_min < args.omega_max:
        raise InvalidParameterError("need 0 < --omega-min < --omega-max")
    omegas = np.geomspace(args.omega_min, args.omega_max, args.points)
    mag, phase = frequency_response(spec, omegas)
    _emit(_csv_text(("omega_rad_s", "magnitude_db", "phase_deg"), (omegas, mag, phase)),
          args.output)
    if args.svg:
        from .plots import plot_bode

        plot_bode(omegas, mag, phase, args.svg,
                  title=f"order {spec.order}, cutoff {spec.cutoff:g} rad/s")
    return 0


def cmd_spectrum(args):
    traj = _load_trajectory(args.signal)
    cols = {"x": 0, "y": 1, "z": 2}
    names = args.columns.split(",")
    bad = [c for c in names if c not in (*cols, "theta")]
    if bad:
        raise InvalidParameterError(f"unknown column(s) {bad}; choose from x,y,z,theta")
    if not traj.valid.any():
        raise InputError(f"{args.signal}: no pose rows")
    series = np.column_stack([traj.theta if c == "theta" else traj.position[:, cols[c]]
                              for c in names])
    data = zero_order_hold(series, traj.valid)
    for k, c in enumerate(names):
        if c == "theta":
            data[:, k] = np.unwrap(data[:, k])
    omegas, amp = amplitude_spectrum(data, args.sample_rate)
    wc = suggest_cutoff(data, args.sample_rate, args.energy_fraction)
    _emit(_csv_text(("omega_rad_s", "amplitude"), (omegas, amp)), args.output)
    log.info("suggested cutoff %.6g rad/s at energy fraction %g", wc, args.energy_fraction)
    if args.svg:
        from .plots import plot_spectrum

        plot_spectrum(omegas, amp, args.svg, cutoff=wc)
    return 0


def cmd_map_gen(args):
    marker_map = wall_marker_map(args.n, args.side, args.spacing, args.height)
    _emit(json.dumps(marker_map.to_dict(), indent=2) + "\n", args.output)
    if args.intrinsics_out:
        write_text(args.intrinsics_out, json.dumps(default_intrinsics().to_dict(), indent=2) + "\n")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tagnav", description=__doc__.splitlines()[0],
                epilog=f"Default config: packaged default.yaml, or "
                       f"${CONFIG_DIR_ENV}/default.yaml when that variable is set.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    _add = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add(*a, parents=[common], **kw)

    s = sub.add_parser("simulate", help="write ground truth and synthetic detections")
    s.add_argument("--config", help="experiment YAML (or manifest JSON)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--profile", action="append", help="profile name (repeatable; default all)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", help="per-frame pose from detections (raw trajectory CSV)")
    s.add_argument("detections", help="detection JSONL file, or - for stdin")
    s.add_argument("--map", help="marker map JSON (default: 8-marker wall)")
    s.add_argument("--intrinsics", help="camera intrinsics JSON (default: 856x480 sim camera)")
    s.add_argument("--mode", choices=("4dof", "6dof"), default="4dof")
    s.add_argument("--min-markers", type=int, default=1)
    s.add_argument("--min-confidence", type=float, default=DEFAULT_MIN_CONFIDENCE)
    s.add_argument("--weights", choices=("uniform", "confidence"), default="uniform")
    s.add_argument("--frame-times", metavar="CSV",
                   help="trajectory CSV whose t column lists every frame (rows = frame index)")
    s.add_argument("--jobs", type=int, default=1, help="worker threads for per-frame solves")
    s.add_argument("-o", "--output", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("filter", help="Butterworth low-pass of a trajectory CSV")
    s.add_argument("trajectory", help="trajectory CSV, or - for stdin")
    s.add_argument("--order", type=int, default=DEFAULT_ORDER)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--cutoff", type=float, help="cutoff in rad/s")
    g.add_argument("--auto-cutoff", type=float, metavar="FRACTION",
                   help=f"spectrum energy fraction (default {DEFAULT_ENERGY_FRACTION})")
    s.add_argument("--cutoff-scale", type=float, default=1.0,
                   help="multiplier applied to the automatic cutoff")
    s.add_argument("--sample-rate", type=float, default=DEFAULT_SAMPLE_RATE, help="Hz")
    s.add_argument("--zero-phase", action="store_true",
                   help="forward-backward filtering (non-causal, offline analysis only)")
    s.add_argument("-o", "--output", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("evaluate", help="Hausdorff and discrete Frechet distance report")
    s.add_argument("trajectory", help="estimated trajectory CSV")
    s.add_argument("reference", help="reference (ground truth) trajectory CSV")
    s.add_argument("--max-skew", type=float, help="pairing tolerance in s (default half a frame)")
    s.add_argument("--config-digest", default="")
    s.add_argument("--label", default="")
    s.add_argument("-o", "--output", help="output JSON (default stdout)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bench", help="run every configured profile and print the result table")
    s.add_argument("--config", help="experiment YAML (or manifest JSON)")
    s.add_argument("--out", help="output directory (default: config output_dir)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--no-timing", action="store_true",
                   help="skip FPS measurement; artifacts are then byte-identical across runs")
    s.add_argument("--plots", action="store_true", help="also write trajectories.svg per profile")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("bode", help="analog Butterworth magnitude and phase")
    s.add_argument("--order", type=int, default=DEFAULT_ORDER)
    s.add_argument("--cutoff", type=float, required=True, help="rad/s")
    s.add_argument("--sample-rate", type=float, default=DEFAULT_SAMPLE_RATE, help="Hz")
    s.add_argument("--omega-min", type=float, default=0.01)
    s.add_argument("--omega-max", type=float, default=100.0)
    s.add_argument("--points", type=int, default=200)
    s.add_argument("-o", "--output", help="output CSV (default stdout)")
    s.add_argument("--svg", help="also write an SVG plot")
    s.set_defaults(func=cmd_bode)

    s = sub.add_parser("spectrum", help="one-sided amplitude spectrum of a trajectory CSV")
    s.add_argument("signal", help="trajectory CSV")
    s.add_argument("--columns", default="x,y,z", help="comma list from x,y,z,theta")
    s.add_argument("--sample-rate", type=float, default=DEFAULT_SAMPLE_RATE, help="Hz")
    s.add_argument("--energy-fraction", type=float, default=DEFAULT_ENERGY_FRACTION)
    s.add_argument("-o", "--output", help="output CSV (default stdout)")
    s.add_argument("--svg", help="also write an SVG plot")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("map-gen", help="write a wall marker map JSON")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--side", type=float, default=0.2)
    s.add_argument("--spacing", type=float, default=0.58)
    s.add_argument("--height", type=float, default=0.724)
    s.add_argument("-o", "--output", help="output JSON (default stdout)")
    s.add_argument("--intrinsics-out", help="also write the default intrinsics JSON here")
    s.set_defaults(func=cmd_map_gen)
    return p


def _setup_logging(verbose):
    """Route package logs to the current stderr, replacing any earlier CLI handler."""
    for h in [h for h in log.handlers if getattr(h, "_tagnav_cli", False)]:
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler._tagnav_cli = True
    handler.setFormatter(logging.Formatter("tagnav: %(levelname)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO if verbose else logging.WARNING)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _setup_logging(args.verbose)
        return args.func(args)
    except TagNavError as exc:
        print(f"tagnav: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        err = InputError(f"{exc.filename or ''}: {exc.strerror or exc}".lstrip(": "))
        print(f"tagnav: error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
