"""Spatial types and the pinhole projection.

World frame: right-handed, +Z up, marker wall in the plane y = 0.  A pose
stores the camera centre in world coordinates plus its heading ``theta``
about +Z; ``theta = +pi/2`` looks along +Y, i.e. at the wall from y < 0.

Camera frame: +Z forward along the heading, +X right, +Y down.  The camera
frame is rigidly attached to the body frame (forward, left, up), so the
world-to-camera rotation is ``BODY_TO_CAMERA @ R_body_to_world.T``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BehindCameraError,
    InvalidParameterError,
    NonFiniteError,
    SchemaError,
)
from .validation import check_int, check_positive

# camera axes expressed in body (forward-left-up) coordinates, one per row
BODY_TO_CAMERA = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

WORLD_FRAME = "right-handed; +z up; marker wall in plane y=0; theta=+pi/2 faces +y"


def wrap_angle(theta):
    """Wrap an angle (or array of angles) to ``(-pi, pi]``."""
    w = math.pi - np.mod(math.pi - np.asarray(theta, dtype=float), 2 * math.pi)
    w = np.where(w <= -math.pi, w + 2 * math.pi, w)
    return float(w) if w.ndim == 0 else w


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_from_matrix(R):
    """Roll, pitch, yaw of a body-to-world rotation (Z-Y-X convention)."""
    yaw = math.atan2(R[1, 0], R[0, 0])
    pitch = math.atan2(-R[2, 0], math.hypot(R[2, 1], R[2, 2]))
    roll = math.atan2(R[2, 1], R[2, 2])
    return roll, pitch, yaw


@dataclass(frozen=True)
class Pose:
    """UAV state ``(x, y, z, theta)``.

    ``roll`` and ``pitch`` default to zero and are only populated by the
    six-degree-of-freedom solver, which uses them as a full-rotation view.
    """

    x: float
    y: float
    z: float
    theta: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.theta, self.roll, self.pitch)
        if not all(math.isfinite(v) for v in vals):
            raise NonFiniteError("pose fields must be finite")
        object.__setattr__(self, "theta", float(wrap_angle(float(self.theta))))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def body_to_world(self) -> np.ndarray:
        R = rot_z(self.theta)
        if self.roll or self.pitch:
            R = R @ rot_y(self.pitch) @ rot_x(self.roll)
        return R

    def world_to_camera(self):
        """Return ``(R, t)`` with ``p_cam = R @ p_world + t``."""
        R = BODY_TO_CAMERA @ self.body_to_world().T
        return R, -R @ self.position

    @classmethod
    def from_world_to_camera(cls, R, t, *, four_dof=True):
        R = np.asarray(R, dtype=float)
        center = -R.T @ np.asarray(t, dtype=float)
        roll, pitch, yaw = rpy_from_matrix(R.T @ BODY_TO_CAMERA)
        if four_dof:
            roll = pitch = 0.0
        return cls(*map(float, center), yaw, roll, pitch)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            if not math.isfinite(getattr(self, name)):
                raise NonFiniteError(f"intrinsics {name} must be finite")
        check_positive(self.fx, "fx")
        check_positive(self.fy, "fy")
        check_int(self.width, "width", minimum=1)
        check_int(self.height, "height", minimum=1)
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidParameterError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= 0) & (uv[..., 0] < self.width)
            & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)
        )

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        from .schemas import validate

        validate(d, "intrinsics")
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))

    @classmethod
    def load(cls, path):
        return cls.from_dict(_load_json(path))


def default_intrinsics() -> CameraIntrinsics:
    """Simulation default for an 856x480 image; the focal length is a placeholder."""
    return CameraIntrinsics(fx=537.0, fy=537.0, cx=428.0, cy=240.0, width=856, height=480)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        from .errors import ParseError

        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc


@dataclass(frozen=True, eq=False)
class Marker:
    """Square marker with corners ordered TL, TR, BR, BL seen from the camera side."""

    id: int
    corners: np.ndarray
    tol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        c = np.array(self.corners, dtype=float)
        if c.shape != (4, 3):
            raise InvalidParameterError(f"marker {self.id}: corners must be 4 x 3")
        if not np.all(np.isfinite(c)):
            raise NonFiniteError(f"marker {self.id}: corners must be finite")
        edges = np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=1)
        if edges.min() <= 0 or np.ptp(edges) > self.tol:
            raise InvalidParameterError(f"marker {self.id}: edges are not of equal length")
        normal = np.cross(c[1] - c[0], c[3] - c[0])
        normal /= np.linalg.norm(normal)
        if abs(np.dot(c[2] - c[0], normal)) > self.tol:
            raise InvalidParameterError(f"marker {self.id}: corners are not coplanar")
        c.flags.writeable = False
        object.__setattr__(self, "corners", c)
        object.__setattr__(self, "id", int(self.id))

    @property
    def side(self) -> float:
        return float(np.linalg.norm(self.corners[1] - self.corners[0]))

    @property
    def center(self) -> np.ndarray:
        return self.corners.mean(axis=0)


class MarkerMap:
    """Ordered, immutable collection of markers with id lookup."""

    def __init__(self, markers: Sequence[Marker], frame: str = WORLD_FRAME):
        markers = tuple(markers)
        if not markers:
            raise InvalidParameterError("a marker map needs at least one marker")
        index = {}
        for i, m in enumerate(markers):
            if m.id in index:
                raise InvalidParameterError(f"duplicate marker id {m.id}")
            index[m.id] = i
        self._markers = markers
        self._index = index
        self.frame = frame
        corners = np.stack([m.corners for m in markers])
        corners.flags.writeable = False
        self._corners = corners

    @property
    def markers(self):
        return self._markers

    @property
    def ids(self):
        return [m.id for m in self._markers]

    @property
    def corners(self) -> np.ndarray:
        """``(n_markers, 4, 3)`` array of corners in map order."""
        return self._corners

    def __len__(self):
        return len(self._markers)

    def __iter__(self):
        return iter(self._markers)

    def __contains__(self, marker_id):
        return marker_id in self._index

    def __getitem__(self, marker_id) -> Marker:
        from .errors import UnknownMarkerIdError

        try:
            return self._markers[self._index[marker_id]]
        except KeyError:
            raise UnknownMarkerIdError(marker_id) from None

    def index_of(self, marker_id) -> int:
        from .errors import UnknownMarkerIdError

        try:
            return self._index[marker_id]
        except KeyError:
            raise UnknownMarkerIdError(marker_id) from None

    def subset(self, ids) -> "MarkerMap":
        return MarkerMap([self[i] for i in ids], self.frame)

    def to_dict(self):
        return {
            "frame": self.frame,
            "markers": [{"id": m.id, "corners": m.corners.tolist()} for m in self._markers],
        }

    @classmethod
    def from_dict(cls, d):
        from .schemas import validate

        validate(d, "marker_map")
        try:
            return cls([Marker(m["id"], m["corners"]) for m in d["markers"]], d["frame"])
        except InvalidParameterError as exc:
            raise SchemaError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        return cls.from_dict(_load_json(path))


def wall_marker_map(n=8, side=0.2, spacing=0.58, center_height=0.724) -> MarkerMap:
    """Row of ``n`` markers on the wall plane ``y = 0``.

    Marker ``i`` (1-based) is centred at ``x = (i - 1) * spacing``,
    ``z = center_height``; corners are ordered TL, TR, BR, BL as viewed
    from ``y < 0``.
    """
    check_int(n, "n", minimum=1)
    check_positive(side, "side")
    check_positive(spacing, "spacing")
    check_positive(center_height, "center_height")
    h = side / 2
    offsets = np.array([[-h, 0.0, h], [h, 0.0, h], [h, 0.0, -h], [-h, 0.0, -h]])
    markers = []
    for i in range(n):
        center = np.array([i * spacing, 0.0, center_height])
        markers.append(Marker(i + 1, center + offsets))
    return MarkerMap(markers)


def transform_points(pose: Pose, points) -> np.ndarray:
    R, t = pose.world_to_camera()
    return np.asarray(points, dtype=float) @ R.T + t


def project_camera_points(intr: CameraIntrinsics, points_cam) -> np.ndarray:
    """Pinhole projection of camera-frame points, shape ``(..., 3) -> (..., 2)``.

    Raises :class:`BehindCameraError` if any depth is not positive.
    """
    p = np.asarray(points_cam, dtype=float)
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("point contains NaN or Inf")
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point is not in front of the camera")
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def project(intr: CameraIntrinsics, camera_pose: Pose, point) -> np.ndarray:
    """Project a world point into pixels for a camera at ``camera_pose``.

    The result may fall outside the image; callers clip.
    """
    return project_camera_points(intr, transform_points(camera_pose, point))


def back_project(intr: CameraIntrinsics, pixel, depth) -> np.ndarray:
    """Camera-frame point at ``depth`` whose projection is ``pixel``."""
    u, v = np.asarray(pixel, dtype=float)
    return np.array([(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth])
