"""Multi-marker perspective-n-point pose estimation.

Pose is found by minimising the weighted reprojection cost

    sum_ij w_ij * || z_ij - pi(R l_ij + T) ||^2

over all corners ``l_ij`` of all detected markers.  Under i.i.d. Gaussian
corner noise this is the negative log of the product of per-marker
likelihoods, so the minimiser is the maximum-likelihood pose.

The solve has two stages: an EPnP initialisation (the planar
three-control-point variant when every world point lies on one plane, as on
a marker wall) followed by Gauss-Newton refinement with Levenberg damping.
``FOUR_DOF`` refines ``(x, y, z, theta)`` with roll = pitch = 0;
``SIX_DOF`` refines a full rotation and reports yaw as ``theta``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .detections import DEFAULT_MIN_CONFIDENCE, Detection, group_by_frame
from .errors import (
    DegenerateConfigurationError,
    InsufficientPointsError,
    InvalidParameterError,
    NonFiniteError,
    TagNavError,
)
from . import _kernels
from .geometry import BODY_TO_CAMERA, CameraIntrinsics, MarkerMap, Pose, rpy_from_matrix
from .trajectory import Trajectory


class Mode(str, Enum):
    FOUR_DOF = "4dof"
    SIX_DOF = "6dof"


@dataclass(frozen=True)
class Correspondence:
    world: np.ndarray
    image: np.ndarray
    weight: float = 1.0


class Correspondences:
    """Array-backed list of 3D-2D correspondences.

    Iterating yields :class:`Correspondence` objects; the solver works on
    the ``world``, ``image`` and ``weights`` arrays directly.
    """

    def __init__(self, world, image, weights=None, marker_ids=None):
        self.world = np.asarray(world, dtype=float).reshape(-1, 3)
        self.image = np.asarray(image, dtype=float).reshape(-1, 2)
        n = len(self.world)
        if len(self.image) != n:
            raise InvalidParameterError("world and image point counts differ")
        self.weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        if self.weights.shape != (n,) or not np.all(np.isfinite(self.weights)) \
                or np.any(self.weights <= 0):
            raise InvalidParameterError("weights must be positive and finite")
        self.marker_ids = marker_ids

    @classmethod
    def from_list(cls, items: Iterable[Correspondence]):
        items = list(items)
        return cls([c.world for c in items], [c.image for c in items],
                   [c.weight for c in items])

    def __len__(self):
        return len(self.world)

    def __iter__(self):
        for w, i, k in zip(self.world, self.image, self.weights):
            yield Correspondence(w, i, float(k))

    @property
    def num_markers(self):
        if self.marker_ids is None:
            return len(self) // 4
        return len(set(self.marker_ids))

    def scaled(self, factor) -> "Correspondences":
        return Correspondences(self.world, self.image, self.weights * factor, self.marker_ids)


WeightPolicy = Callable[[Detection], float]


def confidence_weight(det: Detection) -> float:
    return det.confidence


_POLICIES = {None: None, "uniform": None, "confidence": confidence_weight}


def build_correspondences(detections: Sequence[Detection], marker_map: MarkerMap,
                          weight_policy: str | WeightPolicy | None = None) -> Correspondences:
    """Pair each detected corner with its map corner (TL with TL, ...)."""
    policy = _POLICIES[weight_policy] if not callable(weight_policy) else weight_policy
    idx = [marker_map.index_of(d.id) for d in detections]
    if not detections:
        return Correspondences(np.zeros((0, 3)), np.zeros((0, 2)))
    world = marker_map.corners[idx].reshape(-1, 3)
    image = np.concatenate([d.corners for d in detections])
    weights = None
    if policy is not None:
        weights = np.repeat([float(policy(d)) for d in detections], 4)
    ids = np.repeat([d.id for d in detections], 4)
    return Correspondences(world, image, weights, ids)


@dataclass(frozen=True)
class SolveOptions:
    step_tol: float = 1e-10
    max_iters: int = 50
    min_points: int = 6
    initial_damping: float = 1e-3
    rank_tol: float = 1e-10
    planar_tol: float = 1e-6


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    reprojection_rms: float
    num_markers: int
    num_points: int
    converged: bool
    iterations: int
    cost: float = math.nan


# -- EPnP initialisation ----------------------------------------------------

_STATUS_ERRORS = {
    _kernels.COLLINEAR: "world points are collinear or coincident",
    _kernels.NO_FRONT_SOLUTION: "EPnP found no solution in front of the camera",
    _kernels.BEHIND: "initial estimate places points behind the camera",
}


def _raise_status(status, rank_tol):
    if status == _kernels.RANK_DEFICIENT:
        raise DegenerateConfigurationError(
            f"pose is unobservable (singular value ratio below {rank_tol:g})")
    raise DegenerateConfigurationError(_STATUS_ERRORS[status])


def epnp(world, image, intrinsics: CameraIntrinsics, weights=None, planar_tol=1e-6):
    """Closed-form EPnP estimate ``(R, t)`` of the world-to-camera transform.

    Uses four control points for general scenes and three (spanning the
    plane) when the world points are coplanar, where the four-point linear
    system is rank deficient.  Candidate solutions from a one- and a
    two-dimensional null space are compared by reprojection error.
    """
    world = np.ascontiguousarray(world, dtype=float)
    image = np.asarray(image, dtype=float)
    xn = (image[:, 0] - intrinsics.cx) / intrinsics.fx
    yn = (image[:, 1] - intrinsics.cy) / intrinsics.fy
    sw = np.ones(len(world)) if weights is None else np.sqrt(np.asarray(weights, dtype=float))
    status, R, t = _kernels.epnp_kernel(world, xn, yn, sw, planar_tol)
    if status != _kernels.OK:
        _raise_status(status, 0.0)
    return R, t


# -- cost and Jacobians -----------------------------------------------------

def _project_4dof(params, world, intr, jac=True):
    cx_, cy_, cz_, th = params
    c, s = math.cos(th), math.sin(th)
    dx = world[0] - cx_
    dy = world[1] - cy_
    Y = cz_ - world[2]
    X = s * dx - c * dy
    Z = c * dx + s * dy
    if Z.min() <= 0:
        return None, None, None
    iz = 1.0 / Z
    xz = X * iz
    yz = Y * iz
    u = intr.fx * xz + intr.cx
    v = intr.fy * yz + intr.cy
    if not jac:
        return u, v, None
    fxz = intr.fx * iz
    fyz = intr.fy * iz
    Ju = np.empty((4, len(Z)))
    Ju[0] = fxz * (xz * c - s)
    Ju[1] = fxz * (c + xz * s)
    Ju[2] = 0.0
    Ju[3] = intr.fx * (1.0 + xz * xz)
    Jv = np.empty((4, len(Z)))
    Jv[0] = fyz * yz * c
    Jv[1] = fyz * yz * s
    Jv[2] = fyz
    Jv[3] = intr.fy * xz * yz
    return u, v, (Ju.T, Jv.T)


def _skew_rows(q):
    """d(camera point)/d(body-frame rotation increment) for each body-frame point q."""
    z = np.zeros(len(q))
    dX = np.column_stack([-q[:, 2], z, q[:, 0]])
    dY = np.column_stack([q[:, 1], -q[:, 0], z])
    dZ = np.column_stack([z, -q[:, 2], q[:, 1]])
    return dX, dY, dZ


def _project_6dof(center, R_wb, world, intr):
    q = (world - center) @ R_wb
    X, Y, Z = -q[:, 1], -q[:, 2], q[:, 0]
    if np.any(Z <= 0):
        return None, None, None
    iz = 1.0 / Z
    u = intr.fx * X * iz + intr.cx
    v = intr.fy * Y * iz + intr.cy
    R_wc = BODY_TO_CAMERA @ R_wb.T
    dRx, dRy, dRz = _skew_rows(q)
    dX = np.hstack([np.broadcast_to(-R_wc[0], (len(q), 3)), dRx])
    dY = np.hstack([np.broadcast_to(-R_wc[1], (len(q), 3)), dRy])
    dZ = np.hstack([np.broadcast_to(-R_wc[2], (len(q), 3)), dRz])
    Ju = intr.fx * (dX * iz[:, None] - (X * iz * iz)[:, None] * dZ)
    Jv = intr.fy * (dY * iz[:, None] - (Y * iz * iz)[:, None] * dZ)
    return u, v, (Ju, Jv)


def _rodrigues(phi):
    angle = float(np.linalg.norm(phi))
    if angle < 1e-300:
        return np.eye(3)
    k = phi / angle
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def reprojection_residuals(pose: Pose, corr: Correspondences, intr: CameraIntrinsics):
    """Per-point pixel residuals ``z - pi(pose)``, shape ``(n, 2)``."""
    R, t = pose.world_to_camera()
    cam = corr.world @ R.T + t
    if np.any(cam[:, 2] <= 0):
        return np.full((len(corr), 2), np.inf)
    uv = np.column_stack([intr.fx * cam[:, 0] / cam[:, 2] + intr.cx,
                          intr.fy * cam[:, 1] / cam[:, 2] + intr.cy])
    return corr.image - uv


def reprojection_cost(pose: Pose, corr: Correspondences, intr: CameraIntrinsics) -> float:
    r = reprojection_residuals(pose, corr, intr)
    return float(np.sum(corr.weights * np.sum(r * r, axis=1)))


def cost_gradient(pose: Pose, corr: Correspondences, intr: CameraIntrinsics) -> np.ndarray:
    """Analytic gradient of :func:`reprojection_cost` w.r.t. ``(x, y, z, theta)``.

    Assumes roll = pitch = 0.
    """
    u, v, (Ju, Jv) = _project_4dof((pose.x, pose.y, pose.z, pose.theta), corr.world.T, intr)
    w = corr.weights
    eu = corr.image[:, 0] - u
    ev = corr.image[:, 1] - v
    return -2.0 * (Ju.T @ (w * eu) + Jv.T @ (w * ev))


# -- solver -----------------------------------------------------------------

def _check_rank(Ju, Jv, sw, rank_tol):
    J = np.vstack([Ju * sw[:, None], Jv * sw[:, None]])
    sv = np.linalg.svd(J, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv[-1] < rank_tol * sv[0]:
        raise DegenerateConfigurationError(
            f"pose is unobservable (singular value ratio {sv[-1] / sv[0]:.3g})")


def _solve_4dof(corr, intr, R0, t0, options):
    R_wb = R0.T @ BODY_TO_CAMERA
    x0 = np.empty(4)
    x0[:3] = -R0.T @ t0
    x0[3] = math.atan2(R_wb[1, 0], R_wb[0, 0])
    world = corr.world
    status, st, e, it, converged = _kernels.refine_4dof(
        np.ascontiguousarray(world[:, 0]), np.ascontiguousarray(world[:, 1]),
        np.ascontiguousarray(world[:, 2]), np.ascontiguousarray(corr.image[:, 0]),
        np.ascontiguousarray(corr.image[:, 1]), corr.weights,
        intr.fx, intr.fy, intr.cx, intr.cy, x0, options.step_tol, options.max_iters,
        options.initial_damping, options.rank_tol)
    if status != _kernels.OK:
        _raise_status(status, options.rank_tol)
    return st, e, int(it), bool(converged)


def _solve_6dof(corr, intr, R0, t0, options):
    pose0 = Pose.from_world_to_camera(R0, t0, four_dof=False)
    w = corr.weights
    zu, zv = corr.image[:, 0], corr.image[:, 1]
    world = corr.world
    state = (pose0.position, pose0.body_to_world())

    def evaluate(st):
        return _project_6dof(st[0], st[1], world, intr)

    u, v, J = evaluate(state)
    if u is None:
        _raise_status(_kernels.BEHIND, options.rank_tol)
    _check_rank(*J, np.sqrt(w), options.rank_tol)
    e = np.concatenate([zu - u, zv - v])
    w2 = np.concatenate([w, w])
    cost = float(np.dot(w2, e * e))
    lam = options.initial_damping
    converged = False
    polish = 0
    it = 0
    eye = np.eye(6)
    for it in range(1, options.max_iters + 1):
        Jm = np.vstack(J)
        Jw = Jm * w2[:, None]
        try:
            delta = np.linalg.solve(Jm.T @ Jw + lam * eye, Jw.T @ e)
        except np.linalg.LinAlgError:
            break
        step = float(np.sqrt(delta @ delta))
        cand = state[0] + delta[:3], state[1] @ _rodrigues(delta[3:])
        cu, cv, cJ = evaluate(cand)
        accepted = False
        if cu is not None:
            ce = np.concatenate([zu - cu, zv - cv])
            # same acceptance rule as the compiled four-DOF loop
            if np.dot(w2 * (ce - e), ce + e) <= 1e-12 * cost:
                state, e, J = cand, ce, cJ
                cost = float(np.dot(w2, e * e))
                lam = max(lam / 10.0, 1e-12)
                accepted = True
        if not accepted:
            lam *= 10.0
        if converged:
            polish += 1
            if not accepted or polish >= 2:
                break
        elif step < options.step_tol:
            converged = True
            if not accepted:
                break
    return state, e, it, converged


def solve_pose(corr: Correspondences, intrinsics: CameraIntrinsics,
               mode: Mode | str = Mode.FOUR_DOF, options: SolveOptions = SolveOptions()
               ) -> PoseEstimate:
    """Weighted least-squares pose from marker-corner correspondences.

    EPnP provides the starting point; Gauss-Newton with Levenberg damping
    (initial damping ``options.initial_damping``, x10 after a rejected
    step, /10 after an accepted one) refines it.  ``converged`` is set when
    a step shorter than ``options.step_tol`` occurs within
    ``options.max_iters`` iterations; otherwise the best iterate is returned
    with ``converged=False``.

    Raises
    ------
    InsufficientPointsError
        Fewer than ``options.min_points`` correspondences.
    DegenerateConfigurationError
        Collinear points or a rank-deficient linearisation
        (smallest singular value below ``options.rank_tol`` times the largest).
    """
    mode = Mode(mode)
    n = len(corr)
    if n < options.min_points:
        raise InsufficientPointsError(f"{n} correspondences, need at least {options.min_points}")
    if not (np.all(np.isfinite(corr.world)) and np.all(np.isfinite(corr.image))):
        raise NonFiniteError("correspondences contain NaN or Inf")
    R0, t0 = epnp(corr.world, corr.image, intrinsics, corr.weights, options.planar_tol)
    if mode is Mode.FOUR_DOF:
        st, e, it, converged = _solve_4dof(corr, intrinsics, R0, t0, options)
        pose = Pose(float(st[0]), float(st[1]), float(st[2]), float(st[3]))
    else:
        st, e, it, converged = _solve_6dof(corr, intrinsics, R0, t0, options)
        roll, pitch, yaw = rpy_from_matrix(st[1])
        pose = Pose(float(st[0][0]), float(st[0][1]), float(st[0][2]), yaw, roll, pitch)
    sq = e * e
    cost = float(np.dot(corr.weights, sq[:n] + sq[n:]))
    rms = math.sqrt(float(sq.sum()) / n)
    return PoseEstimate(pose, rms, corr.num_markers, n, converged, it, cost)


# -- per-frame trajectory estimation ------------------------------------------

INSUFFICIENT_MARKERS = "Insufficient-Markers"


@dataclass(frozen=True)
class FrameEstimate:
    """One frame of an estimated trajectory; ``estimate`` is None for gap records."""

    t: float
    frame: int
    n_markers: int
    estimate: PoseEstimate | None = None
    cause: str = ""

    @property
    def is_gap(self):
        return self.estimate is None


def _frame_times(groups, frame_times):
    if frame_times is not None:
        if isinstance(frame_times, dict):
            return dict(sorted(frame_times.items()))
        return {i: float(t) for i, t in enumerate(frame_times)}
    if not groups:
        return {}
    seen = {f: dets[0].t for f, dets in groups.items()}
    frames = np.array(sorted(seen))
    times = np.array([seen[f] for f in frames])
    if len(frames) > 1:
        slope, icept = np.polyfit(frames, times, 1)
    else:
        slope, icept = 0.0, times[0]
    out = {}
    for f in range(frames[0], frames[-1] + 1):
        out[f] = seen[f] if f in seen else float(icept + slope * f)
    return out


def estimate_trajectory(detections: Iterable[Detection], marker_map: MarkerMap,
                        intrinsics: CameraIntrinsics, mode: Mode | str = Mode.FOUR_DOF,
                        min_markers: int = 1, *, min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                        frame_times=None, weight_policy=None,
                        options: SolveOptions = SolveOptions(), n_jobs: int = 1
                        ) -> list[FrameEstimate]:
    """Solve every frame independently.

    Frames with fewer than ``min_markers`` usable detections, or whose solve
    fails, become gap records carrying the cause; no pose is interpolated.
    ``frame_times`` (sequence indexed by frame, or ``{frame: t}``) lists the
    frames to report; otherwise frames are inferred from the detection
    indices and missing timestamps are interpolated from the frame index.
    """
    mode = Mode(mode)
    groups = group_by_frame(d for d in detections if d.confidence >= min_confidence)
    times = _frame_times(groups, frame_times)

    def one(item):
        frame, t = item
        dets = groups.get(frame, [])
        k = len(dets)
        if k < min_markers or k == 0:
            return FrameEstimate(t, frame, k, None, INSUFFICIENT_MARKERS)
        try:
            corr = build_correspondences(dets, marker_map, weight_policy)
            est = solve_pose(corr, intrinsics, mode, options)
        except TagNavError as exc:
            return FrameEstimate(t, frame, k, None, exc.kind)
        return FrameEstimate(t, frame, k, est)

    items = list(times.items())
    if n_jobs == 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(one, items))


def frames_to_trajectory(frames: Sequence[FrameEstimate]) -> Trajectory:
    n = len(frames)
    pos = np.full((n, 3), np.nan)
    theta = np.full(n, np.nan)
    rms = np.full(n, np.nan)
    conv = np.zeros(n, dtype=bool)
    for i, f in enumerate(frames):
        if f.estimate is not None:
            p = f.estimate.pose
            pos[i] = p.x, p.y, p.z
            theta[i] = p.theta
            rms[i] = f.estimate.reprojection_rms
            conv[i] = f.estimate.converged
    return Trajectory(np.array([f.t for f in frames], dtype=float), pos, theta, rms,
                      np.array([f.n_markers for f in frames], dtype=int), conv,
                      [f.cause for f in frames])
