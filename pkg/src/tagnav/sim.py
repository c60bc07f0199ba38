"""Reference trajectories and the end-to-end experiment harness.

The camera is the body: every reference pose doubles as the camera pose
used to synthesize detections.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__
from ._io import write_text
from .butterworth import FilterSpec, auto_cutoff, filter_trajectory
from .detections import read_detections, synthesize_detections, write_detections
from .errors import InvalidParameterError, OutOfRoomError, StageError, TagNavError
from .geometry import Pose
from .metrics import MetricReport, evaluate, format_table, measure_fps
from .pnp import estimate_trajectory, frames_to_trajectory
from .trajectory import Trajectory
from .validation import check_positive

log = logging.getLogger(__name__)


class ProfileKind(str, Enum):
    SPIRAL_EIGHT = "spiral-eight"
    RECTANGULAR_EIGHT = "rectangular-eight"


@dataclass(frozen=True)
class RoomSpec:
    """Axis-aligned flight volume ``[origin, origin + extent]`` in metres.

    The default origin centres the room on the default marker row, with the
    marker wall (``y = 0``) as the far side of the room.
    """

    extent_x: float = 6.10
    extent_y: float = 5.85
    extent_z: float = 2.44
    origin: tuple = (-1.02, -5.85, 0.0)

    def __post_init__(self):
        for name in ("extent_x", "extent_y", "extent_z"):
            check_positive(getattr(self, name), name)
        if len(self.origin) != 3 or not all(math.isfinite(v) for v in self.origin):
            raise InvalidParameterError("room origin must be three finite numbers")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + [self.extent_x, self.extent_y, self.extent_z]

    def contains(self, points, tol=1e-9) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lower - tol) & (p <= self.upper + tol), axis=1)


@dataclass(frozen=True)
class TrajectoryProfile:
    """Parametric figure-eight reference path.

    Parameters
    ----------
    kind : ProfileKind
        ``spiral-eight`` is a Lissajous eight with sinusoidal altitude;
        ``rectangular-eight`` is two adjoined rectangles flown at constant
        speed and altitude.
    amplitude_x, amplitude_y : float
        Half extents of the eight along x and y (m).
    base_altitude, altitude_amplitude : float
        Mean altitude and its sinusoidal swing (m); the swing is ignored by
        the rectangular eight.
    period : float
        Spiral period T (s).
    altitude_period : float, optional
        Period T' of the altitude swing (s); defaults to ``period / 2``.
    speed : float
        Rectangular ground speed (m/s).
    duration, frame_rate : float
        Sampling window (s) and rate (Hz).
    center_x, center_y : float
        Centre of the eight; ``center_y`` is the y0 offset (m).
    name : str
        Label for artifacts and tables.
    """

    kind: ProfileKind = ProfileKind.SPIRAL_EIGHT
    amplitude_x: float = 1.0
    amplitude_y: float = 0.5
    base_altitude: float = 1.0
    altitude_amplitude: float = 0.2
    period: float = 30.0
    altitude_period: float | None = None
    speed: float = 0.25
    duration: float = 30.0
    frame_rate: float = 30.0
    center_x: float = 0.0
    center_y: float = -3.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        check_positive(self.duration, "duration")
        check_positive(self.frame_rate, "frame_rate")
        check_positive(self.period, "period")
        check_positive(self.speed, "speed")
        for name in ("amplitude_x", "amplitude_y", "altitude_amplitude"):
            check_positive(getattr(self, name), name, allow_zero=True)
        for name in ("base_altitude", "center_x", "center_y"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")
        if self.altitude_period is not None:
            check_positive(self.altitude_period, "altitude_period")
        if not self.name:
            object.__setattr__(self, "name", "spiral" if self.kind is ProfileKind.SPIRAL_EIGHT
                               else "rect")

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.duration * self.frame_rate + 1e-9))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.frame_rate

    @property
    def rectangle_perimeter(self) -> float:
        return 2.0 * (self.amplitude_x + 2.0 * self.amplitude_y)

    def bounds(self):
        """Analytic bounding box ``(lower, upper)`` of the path."""
        dz = self.altitude_amplitude if self.kind is ProfileKind.SPIRAL_EIGHT else 0.0
        lo = np.array([self.center_x - self.amplitude_x, self.center_y - self.amplitude_y,
                       self.base_altitude - dz])
        hi = np.array([self.center_x + self.amplitude_x, self.center_y + self.amplitude_y,
                       self.base_altitude + dz])
        return lo, hi

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["kind"] = self.kind.value
        return d


def _spiral_positions(p: TrajectoryProfile, t):
    tz = p.altitude_period if p.altitude_period is not None else p.period / 2
    x = p.center_x + p.amplitude_x * np.sin(2 * np.pi * t / p.period)
    y = p.center_y + p.amplitude_y * np.sin(4 * np.pi * t / p.period)
    z = p.base_altitude + p.altitude_amplitude * np.sin(2 * np.pi * t / tz)
    return np.column_stack([x, y, z])


def rectangular_waypoints(p: TrajectoryProfile) -> np.ndarray:
    """Closed corner sequence: right rectangle, then the left one.

    Both loops share the middle edge ``x = center_x``.
    """
    cx, y0, ax, ay = p.center_x, p.center_y, p.amplitude_x, p.amplitude_y
    return np.array([
        [cx, y0 - ay], [cx + ax, y0 - ay], [cx + ax, y0 + ay], [cx, y0 + ay],
        [cx, y0 - ay], [cx - ax, y0 - ay], [cx - ax, y0 + ay], [cx, y0 + ay],
        [cx, y0 - ay],
    ])


def _rectangular_positions(p: TrajectoryProfile, t):
    wp = rectangular_waypoints(p)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(wp, axis=0), axis=1))])
    n = len(t)
    if arc[-1] == 0.0:
        xy = np.repeat(wp[:1], n, axis=0)
    else:
        s = np.mod(p.speed * t, arc[-1])
        xy = np.column_stack([np.interp(s, arc, wp[:, 0]), np.interp(s, arc, wp[:, 1])])
    return np.column_stack([xy, np.full(n, p.base_altitude)])


def generate_reference(profile: TrajectoryProfile, room: RoomSpec = RoomSpec()):
    """Timed wall-facing poses ``[(t, Pose), ...]`` sampled at the frame rate.

    Raises
    ------
    OutOfRoomError
        If the path's bounding box, or any sample, leaves the room.
    """
    lo, hi = profile.bounds()
    if not (room.contains(lo)[0] and room.contains(hi)[0]):
        raise OutOfRoomError(f"profile {profile.name!r} spans {lo.tolist()}..{hi.tolist()}, "
                             f"room is {room.lower.tolist()}..{room.upper.tolist()}")
    t = profile.times
    if profile.kind is ProfileKind.SPIRAL_EIGHT:
        pos = _spiral_positions(profile, t)
    else:
        pos = _rectangular_positions(profile, t)
    outside = ~room.contains(pos)
    if outside.any():
        k = int(np.flatnonzero(outside)[0])
        raise OutOfRoomError(f"sample {k} at {pos[k].tolist()} leaves the room")
    heading = math.pi / 2
    return [(float(ti), Pose(*map(float, pi), heading)) for ti, pi in zip(t, pos)]


# -- experiment orchestration -------------------------------------------------

@dataclass
class VariantResult:
    """Artifacts of one profile; trajectories are as read back from disk."""

    profile: TrajectoryProfile
    truth: Trajectory
    raw: Trajectory
    filtered: Trajectory
    cutoff: float
    raw_report: MetricReport
    filtered_report: MetricReport
    visible_fraction: float
    gap_fraction: float
    warnings: list = field(default_factory=list)


@dataclass
class ExperimentArtifacts:
    config: "ExperimentConfig"
    digest: str
    output_dir: Path
    variants: list
    table: str
    manifest: dict

    def rows(self):
        for v in self.variants:
            yield v.profile.name, "raw", v.raw_report
            yield v.profile.name, "filtered", v.filtered_report


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except TagNavError as exc:
        raise StageError(name, exc) from exc


def estimate_stage(detections, config, frame_times=None) -> Trajectory:
    """Raw trajectory from detections, with gap rows, as configured."""
    frames = estimate_trajectory(detections, config.marker_map, config.intrinsics,
                                 config.pnp.mode, config.pnp.min_markers,
                                 min_confidence=config.min_confidence, frame_times=frame_times,
                                 weight_policy=config.pnp.weight_policy)
    return frames_to_trajectory(frames)


def resolve_cutoff(raw: Trajectory, filter_config, sample_rate) -> float:
    """Configured cutoff, or the scaled spectrum suggestion clamped below Nyquist."""
    if filter_config.cutoff is not None:
        return float(filter_config.cutoff)
    wc = auto_cutoff(raw, sample_rate, filter_config.energy_fraction) * filter_config.cutoff_scale
    return min(wc, float(np.nextafter(math.pi * sample_rate, 0.0)))


def filter_stage(raw: Trajectory, filter_config, sample_rate):
    """Smoothed trajectory and the cutoff used."""
    wc = resolve_cutoff(raw, filter_config, sample_rate)
    spec = FilterSpec(filter_config.order, wc, sample_rate)
    return filter_trajectory(spec, raw, zero_phase=filter_config.zero_phase), wc


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _save_trajectory(traj: Trajectory, path) -> Trajectory:
    text = traj.to_csv_text()
    write_text(path, text)
    return Trajectory.from_csv_text(text)


def simulate_variant(config, index):
    """Reference trajectory and synthetic detections of profile ``index``."""
    profile = config.profiles[index]
    ref = _stage("simulate", generate_reference, profile, config.room)
    truth = Trajectory.from_poses(ref)
    dets = list(_stage("simulate", synthesize_detections, config.marker_map, config.intrinsics,
                       ref, config.noise_for(index)))
    return truth, dets


def write_simulation(config, index, out: Path):
    """Write ``truth.csv`` and ``detections.jsonl`` of profile ``index`` to ``out``.

    Returns both as read back from disk.
    """
    truth, dets = simulate_variant(config, index)
    truth = _save_trajectory(truth, out / "truth.csv")
    write_detections(dets, out / "detections.jsonl")
    return truth, read_detections(out / "detections.jsonl")


def run_variant(config, index, out: Path, *, timing: bool) -> VariantResult:
    profile = config.profiles[index]
    truth, dets = write_simulation(config, index, out)

    raw = _stage("estimate", estimate_stage, dets, config, list(truth.t))
    raw = _save_trajectory(raw, out / "raw.csv")
    filtered, wc = _stage("filter", filter_stage, raw, config.filter, profile.frame_rate)
    filtered = _save_trajectory(filtered, out / "filtered.csv")

    digest = config.digest()
    raw_rep = _stage("evaluate", evaluate, raw, truth, config_digest=digest, label="raw")
    filt_rep = _stage("evaluate", evaluate, filtered, truth, config_digest=digest,
                      label="filtered")
    if timing:
        fs = profile.frame_rate
        est = lambda d: estimate_stage(d, config, list(truth.t))
        both = lambda d: filter_stage(est(d), config.filter, fs)
        raw_rep.fps = measure_fps(est, dets, n_frames=len(truth), repeats=config.fps_repeats)
        filt_rep.fps = measure_fps(both, dets, n_frames=len(truth), repeats=config.fps_repeats)
    raw_rep.save(out / "report_raw.json")
    filt_rep.save(out / "report_filtered.json")

    counts = np.bincount([d.frame for d in dets if d.confidence >= config.min_confidence],
                         minlength=len(truth))
    visible = float(np.mean(counts >= config.checks.visible_markers))
    gaps = float(np.mean(raw.is_gap))
    warnings = []
    if visible < config.checks.min_visible_fraction:
        warnings.append(f"{profile.name}: only {visible:.0%} of frames see "
                        f">= {config.checks.visible_markers} markers")
    if gaps > config.checks.max_gap_fraction:
        warnings.append(f"{profile.name}: {gaps:.0%} of frames are gap records")
    for w in warnings:
        log.warning(w)
    return VariantResult(profile, truth, raw, filtered, wc, raw_rep, filt_rep, visible, gaps,
                         warnings)


def run_experiment(config, output_dir=None, *, timing=None) -> ExperimentArtifacts:
    """Simulate, estimate, filter and evaluate every configured profile.

    Each stage reads its input back from the file the previous stage wrote,
    so the command-line pipeline reproduces these numbers exactly.  Output
    layout: ``<out>/<profile>/{truth.csv, detections.jsonl, raw.csv,
    filtered.csv, report_raw.json, report_filtered.json}`` plus
    ``<out>/table.txt`` and ``<out>/manifest.json``.

    Everything except the FPS figures is deterministic for a fixed config;
    pass ``timing=False`` (or set ``timing: false``) for byte-identical
    reruns.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    timing = config.timing if timing is None else timing
    variants = [run_variant(config, i, out / p.name, timing=timing)
                for i, p in enumerate(config.profiles)]
    table = format_table([(v.profile.name, lab, rep) for v in variants
                          for lab, rep in (("raw", v.raw_report), ("filtered", v.filtered_report))])
    write_text(out / "table.txt", table)
    artifacts = {}
    for v in variants:
        for name in ARTIFACT_FILES:
            rel = f"{v.profile.name}/{name}"
            artifacts[rel] = _sha256(out / rel)
    artifacts["table.txt"] = _sha256(out / "table.txt")
    manifest = {
        "tagnav_version": __version__,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "timing": timing,
        "cutoffs": {v.profile.name: v.cutoff for v in variants},
        "coverage": {v.profile.name: {"visible_fraction": v.visible_fraction,
                                      "gap_fraction": v.gap_fraction} for v in variants},
        "warnings": [w for v in variants for w in v.warnings],
        "artifacts": artifacts,
    }
    write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ExperimentArtifacts(config, config.digest(), out, variants, table, manifest)


ARTIFACT_FILES = ("truth.csv", "detections.jsonl", "raw.csv", "filtered.csv",
                  "report_raw.json", "report_filtered.json")
