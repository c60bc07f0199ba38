"""Experiment configuration: a nested YAML document.

Top-level sections are ``map``, ``intrinsics``, ``room``, ``profiles``,
``noise``, ``threshold``, ``pnp``, ``filter`` and ``checks``, plus the
scalars ``name``, ``seed``, ``output_dir``, ``timing`` and ``fps_repeats``.
Missing keys take the defaults of the dataclasses below; unknown keys are
rejected.  ``map`` and ``intrinsics`` may point at JSON files with
``path:`` (relative to the config file).  A run manifest, which embeds the
resolved configuration under ``config``, is accepted as a config too.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .butterworth import DEFAULT_ENERGY_FRACTION, DEFAULT_ORDER
from .detections import DEFAULT_MIN_CONFIDENCE, NoiseSpec
from .errors import InvalidParameterError, ParseError, SchemaError
from .geometry import CameraIntrinsics, MarkerMap, default_intrinsics, wall_marker_map
from .pnp import Mode
from .sim import ProfileKind, RoomSpec, TrajectoryProfile
from .validation import check_int, check_positive, check_probability

CONFIG_DIR_ENV = "TAGNAV_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "default.yaml"


@dataclass(frozen=True)
class FilterConfig:
    """Smoothing stage.

    With ``cutoff`` unset the cutoff is ``cutoff_scale`` times the
    spectrum-suggested value for ``energy_fraction``.
    """

    order: int = DEFAULT_ORDER
    cutoff: float | None = None
    energy_fraction: float = DEFAULT_ENERGY_FRACTION
    cutoff_scale: float = 20.0
    zero_phase: bool = False

    def __post_init__(self):
        check_int(self.order, "filter.order", minimum=1)
        if self.cutoff is not None:
            check_positive(self.cutoff, "filter.cutoff")
        check_probability(self.energy_fraction, "filter.energy_fraction")
        check_positive(self.energy_fraction, "filter.energy_fraction")
        check_positive(self.cutoff_scale, "filter.cutoff_scale")


@dataclass(frozen=True)
class PnpConfig:
    mode: str = Mode.FOUR_DOF.value
    min_markers: int = 1
    weight_policy: str = "uniform"

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", Mode(self.mode).value)
        except ValueError:
            raise InvalidParameterError(f"pnp.mode must be 4dof or 6dof, got {self.mode!r}") \
                from None
        check_int(self.min_markers, "pnp.min_markers", minimum=1)
        if self.weight_policy not in ("uniform", "confidence"):
            raise InvalidParameterError("pnp.weight_policy must be 'uniform' or 'confidence'")


@dataclass(frozen=True)
class ChecksConfig:
    """Coverage sanity thresholds; violations are warnings, not errors."""

    visible_markers: int = 4
    min_visible_fraction: float = 0.5
    max_gap_fraction: float = 0.2

    def __post_init__(self):
        check_int(self.visible_markers, "checks.visible_markers", minimum=1)
        check_probability(self.min_visible_fraction, "checks.min_visible_fraction")
        check_probability(self.max_gap_fraction, "checks.max_gap_fraction")


def default_profiles():
    return (
        TrajectoryProfile(ProfileKind.SPIRAL_EIGHT, center_x=2.03, altitude_period=15.0,
                          name="spiral"),
        TrajectoryProfile(ProfileKind.RECTANGULAR_EIGHT, center_x=2.03, duration=32.0,
                          name="rect"),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    seed: int = 0
    output_dir: str = "bench_out"
    timing: bool = True
    fps_repeats: int = 5
    marker_map: MarkerMap = field(default_factory=wall_marker_map)
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    room: RoomSpec = RoomSpec()
    profiles: tuple = field(default_factory=default_profiles)
    noise: NoiseSpec = NoiseSpec(pixel_sigma=2.0, dropout_prob=0.1)
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    pnp: PnpConfig = PnpConfig()
    filter: FilterConfig = FilterConfig()
    checks: ChecksConfig = ChecksConfig()

    def __post_init__(self):
        check_int(self.seed, "seed", minimum=0)
        check_int(self.fps_repeats, "fps_repeats", minimum=1)
        check_probability(self.min_confidence, "threshold.min_confidence")
        if not self.profiles:
            raise InvalidParameterError("at least one profile is required")

    def noise_for(self, index: int) -> NoiseSpec:
        """Noise model of profile ``index``; seeds differ per profile."""
        n = self.noise
        return NoiseSpec(n.pixel_sigma, n.dropout_prob, n.confidence, self.seed + index)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ExperimentConfig(**d)

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        """Fully resolved, self-contained form (map and intrinsics inline)."""
        return {
            "name": self.name,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "timing": self.timing,
            "fps_repeats": self.fps_repeats,
            "map": self.marker_map.to_dict(),
            "intrinsics": self.intrinsics.to_dict(),
            "room": {"extent_x": self.room.extent_x, "extent_y": self.room.extent_y,
                     "extent_z": self.room.extent_z, "origin": list(self.room.origin)},
            "profiles": [p.to_dict() for p in self.profiles],
            "noise": {"pixel_sigma": self.noise.pixel_sigma,
                      "dropout_prob": self.noise.dropout_prob,
                      "confidence": self.noise.confidence},
            "threshold": {"min_confidence": self.min_confidence},
            "pnp": _plain(self.pnp),
            "filter": _plain(self.filter),
            "checks": _plain(self.checks),
        }

    def digest(self) -> str:
        """sha256 of the canonical JSON of the resolved configuration.

        ``output_dir`` is excluded so relocating a run keeps its digest.
        """
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d, base_dir=".") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise SchemaError("experiment config must be a mapping")
        if "config" in d and "artifacts" in d:
            d = d["config"]
        known = {"name", "seed", "output_dir", "timing", "fps_repeats", "map", "intrinsics",
                 "room", "profiles", "noise", "threshold", "pnp", "filter", "checks"}
        _reject_unknown(d, known, "config")
        kw = {k: d[k] for k in ("name", "seed", "output_dir", "timing", "fps_repeats") if k in d}
        if "map" in d:
            kw["marker_map"] = _load_map(d["map"], base_dir)
        if "intrinsics" in d:
            kw["intrinsics"] = _load_intrinsics(d["intrinsics"], base_dir)
        if "room" in d:
            kw["room"] = _build(RoomSpec, d["room"], "room")
        if "profiles" in d:
            if not isinstance(d["profiles"], list) or not d["profiles"]:
                raise SchemaError("profiles must be a non-empty list")
            kw["profiles"] = tuple(_build(TrajectoryProfile, p, "profiles") for p in d["profiles"])
            names = [p.name for p in kw["profiles"]]
            if len(set(names)) != len(names):
                raise SchemaError(f"profile names must be unique, got {names}")
        if "noise" in d:
            _reject_unknown(d["noise"], {"pixel_sigma", "dropout_prob", "confidence"}, "noise")
            kw["noise"] = NoiseSpec(**d["noise"])
        if "threshold" in d:
            _reject_unknown(d["threshold"], {"min_confidence"}, "threshold")
            kw["min_confidence"] = float(d["threshold"].get("min_confidence",
                                                           DEFAULT_MIN_CONFIDENCE))
        for key, typ in (("pnp", PnpConfig), ("filter", FilterConfig), ("checks", ChecksConfig)):
            if key in d:
                kw[key] = _build(typ, d[key], key)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ParseError(f"{path}: {exc.strerror}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ParseError(f"{path}: {getattr(exc, 'problem', exc)}",
                             line=None if mark is None else mark.line + 1) from None
        return cls.from_dict(data or {}, base_dir=path.parent)

    def dump_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _plain(obj):
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _reject_unknown(d, known, section):
    if not isinstance(d, dict):
        raise SchemaError(f"section {section!r} must be a mapping")
    extra = sorted(set(d) - set(known))
    if extra:
        raise SchemaError(f"unknown key(s) {extra} in section {section!r}")


def _build(cls, d, section):
    _reject_unknown(d, {f.name for f in fields(cls)}, section)
    d = dict(d)
    if cls is RoomSpec and "origin" in d:
        d["origin"] = tuple(d["origin"])
    return cls(**d)


def _load_map(d, base_dir) -> MarkerMap:
    if isinstance(d, dict) and "path" in d:
        return MarkerMap.load(Path(base_dir) / d["path"])
    if isinstance(d, dict) and "wall" in d:
        _reject_unknown(d["wall"], {"n", "side", "spacing", "center_height"}, "map.wall")
        return wall_marker_map(**d["wall"])
    return MarkerMap.from_dict(d)


def _load_intrinsics(d, base_dir) -> CameraIntrinsics:
    if isinstance(d, dict) and "path" in d:
        return CameraIntrinsics.load(Path(base_dir) / d["path"])
    return CameraIntrinsics.from_dict(d)


def default_config_path() -> Path:
    """``$TAGNAV_CONFIG_DIR/default.yaml`` if set, else the packaged default."""
    env = os.environ.get(CONFIG_DIR_ENV)
    if env:
        return Path(env) / DEFAULT_CONFIG_NAME
    return Path(__file__).parent / "configs" / DEFAULT_CONFIG_NAME
