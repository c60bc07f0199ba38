"""Detection records, JSON Lines ingestion and a synthetic detector.

The JSON Lines file is the boundary where an external (e.g. neural) marker
detector plugs in: one object per detected marker,
``{"t": float, "frame": int, "id": int, "corners": [[u, v] x 4], "conf": float}``
with corners ordered TL, TR, BR, BL in pixel coordinates (v pointing down).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._io import atomic_open
from .errors import InvalidParameterError, NonFiniteError, ParseError, SchemaError
from .geometry import CameraIntrinsics, MarkerMap, Pose
from .validation import check_int, check_positive, check_probability

DEFAULT_MIN_CONFIDENCE = 0.5
FIELDS = ("t", "frame", "id", "corners", "conf")


@dataclass(frozen=True, eq=False)
class Detection:
    t: float
    frame: int
    id: int
    corners: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        c = np.array(self.corners, dtype=float)
        if c.shape != (4, 2):
            raise InvalidParameterError("detection corners must be 4 x 2")
        if not np.all(np.isfinite(c)) or not math.isfinite(self.t):
            raise NonFiniteError("detection contains NaN or Inf")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidParameterError(f"confidence {self.confidence} outside [0, 1]")
        c.flags.writeable = False
        object.__setattr__(self, "corners", c)

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        return (self.t == other.t and self.frame == other.frame and self.id == other.id
                and self.confidence == other.confidence
                and np.array_equal(self.corners, other.corners))

    def to_record(self):
        return {"t": float(self.t), "frame": int(self.frame), "id": int(self.id),
                "corners": self.corners.tolist(), "conf": float(self.confidence)}


def winding(corners) -> float:
    """Shoelace signed area of a corner quad in image coordinates.

    Positive for the TL, TR, BR, BL order because the image v axis points down.
    """
    c = np.asarray(corners, dtype=float)
    x, y = c[:, 0], c[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class NoiseSpec:
    """Corner noise and dropout model for the synthetic detector.

    ``confidence`` is either a fixed value in [0, 1] or the string
    ``"sigma"``, which assigns ``1 / (1 + pixel_sigma)`` to every detection.
    """

    pixel_sigma: float = 0.0
    dropout_prob: float = 0.0
    confidence: float | str = 1.0
    seed: int = 0

    def __post_init__(self):
        check_positive(self.pixel_sigma, "pixel_sigma", allow_zero=True)
        check_probability(self.dropout_prob, "dropout_prob")
        check_int(self.seed, "seed")
        if self.confidence != "sigma":
            check_probability(self.confidence, "confidence")

    def confidence_value(self) -> float:
        if self.confidence == "sigma":
            return 1.0 / (1.0 + self.pixel_sigma)
        return float(self.confidence)


def synthesize_detections(
    marker_map: MarkerMap,
    intrinsics: CameraIntrinsics,
    camera_path: Sequence[tuple[float, Pose]],
    noise: NoiseSpec = NoiseSpec(),
) -> Iterator[Detection]:
    """Stand-in for the neural detector.

    Every marker whose four exact corner projections lie in front of the
    camera and inside the image yields one detection per frame, with
    i.i.d. Gaussian noise on each pixel coordinate, unless dropped.

    Random draws are made for every marker of every frame, visible or not,
    so the noise on a given marker/frame does not depend on which other
    markers happen to be visible.
    """
    rng = np.random.default_rng(noise.seed)
    corners_w = marker_map.corners.reshape(-1, 3)
    n_markers = len(marker_map)
    ids = marker_map.ids
    conf = noise.confidence_value()
    prev_t = -math.inf
    for frame, (t, pose) in enumerate(camera_path):
        if not t > prev_t:
            raise InvalidParameterError("camera path timestamps must be strictly increasing")
        prev_t = t
        drop = rng.random(n_markers) < noise.dropout_prob
        jitter = rng.standard_normal((n_markers, 4, 2)) * noise.pixel_sigma
        R, tvec = pose.world_to_camera()
        pc = (corners_w @ R.T + tvec).reshape(n_markers, 4, 3)
        if not np.all(np.isfinite(pc)):
            raise NonFiniteError("non-finite camera-frame corner")
        depth = pc[..., 2]
        front = np.all(depth > 0, axis=1)
        safe = np.where(depth > 0, depth, 1.0)
        uv = np.stack([intrinsics.fx * pc[..., 0] / safe + intrinsics.cx,
                       intrinsics.fy * pc[..., 1] / safe + intrinsics.cy], axis=-1)
        inside = np.all(intrinsics.contains(uv), axis=1)
        for k in np.flatnonzero(front & inside & ~drop):
            yield Detection(float(t), frame, ids[k], uv[k] + jitter[k], conf)


def threshold(detections: Iterable[Detection], min_confidence=DEFAULT_MIN_CONFIDENCE):
    """Keep detections with ``confidence >= min_confidence``, order preserved."""
    return [d for d in detections if d.confidence >= min_confidence]


def group_by_frame(detections: Iterable[Detection]) -> dict[int, list[Detection]]:
    frames: dict[int, list[Detection]] = {}
    for d in detections:
        frames.setdefault(d.frame, []).append(d)
    return frames


def _parse_record(obj, lineno) -> Detection:
    if not isinstance(obj, dict):
        raise SchemaError("record is not a JSON object", line=lineno)
    for key in FIELDS:
        if key not in obj:
            raise SchemaError(f"missing field {key!r}", line=lineno)
    try:
        corners = np.array(obj["corners"], dtype=float)
        t = float(obj["t"])
        conf = float(obj["conf"])
    except (TypeError, ValueError):
        raise SchemaError("non-numeric t, conf or corners", line=lineno) from None
    if corners.shape != (4, 2):
        raise SchemaError("corners must be four [u, v] pairs", line=lineno)
    for key in ("frame", "id"):
        if isinstance(obj[key], bool) or not isinstance(obj[key], int):
            raise SchemaError(f"field {key!r} must be an integer", line=lineno)
    if not 0.0 <= conf <= 1.0:
        raise SchemaError(f"confidence {conf} outside [0, 1]", line=lineno)
    if not (np.all(np.isfinite(corners)) and math.isfinite(t)):
        raise SchemaError("non-finite value", line=lineno)
    if winding(corners) <= 0:
        raise SchemaError("corners are not in TL, TR, BR, BL order (winding)", line=lineno)
    return Detection(t, obj["frame"], obj["id"], corners, conf)


def read_detections(source) -> list[Detection]:
    """Parse a detection JSONL file (path or open text stream).

    Blank lines are skipped; the first malformed record raises with its
    line number.
    """
    if hasattr(source, "read"):
        return _read_lines(source)
    with open(source) as fh:
        return _read_lines(fh)


def _read_lines(fh) -> list[Detection]:
    out = []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=lineno) from None
        out.append(_parse_record(obj, lineno))
    return out


def write_detections(detections: Iterable[Detection], path):
    # json uses the shortest repr that round-trips every float exactly
    with atomic_open(path) as fh:
        for d in detections:
            fh.write(json.dumps(d.to_record(), separators=(",", ":")))
            fh.write("\n")
