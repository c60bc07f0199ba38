"""Trajectory-similarity metrics and stage throughput.

Distances are Euclidean over 3-D positions; heading is excluded (a yaw RMS
diagnostic is reported separately).
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from . import _kernels
from ._io import write_text
from .errors import EmptyTrajectoryError, TooFewFramesError
from .trajectory import Trajectory
from .validation import check_paired_sequences


def hausdorff(A, B) -> float:
    """Symmetric Hausdorff distance between two point sequences."""
    A, B = check_paired_sequences(A, B)
    d = cdist(A, B)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def discrete_frechet(A, B) -> float:
    """Discrete Frechet distance (Eiter & Mannila, 1994).

    ``d(i, j) = max(|A_i - B_j|, min(d(i-1, j), d(i-1, j-1), d(i, j-1)))``,
    evaluated row by row over the longer sequence so only
    O(min(|A|, |B|)) values are kept.  Squared coordinate differences are
    summed left to right, so each ground distance is bit-identical to the
    scalar formula ``sqrt(dx*dx + dy*dy + ...)``.
    """
    A, B = check_paired_sequences(A, B)
    if len(A) < len(B):
        A, B = B, A
    return float(_kernels.frechet_dp(np.ascontiguousarray(A), np.ascontiguousarray(B)))


def pair_by_time(estimate: Trajectory, truth: Trajectory, max_skew=None):
    """Match every pose row of ``estimate`` to the nearest ground-truth timestamp.

    Rows further than ``max_skew`` seconds (default half the median truth
    period) from any truth sample are dropped.  Returns the estimate
    rows and the truth rows, in estimate order.
    """
    est = estimate.select(estimate.valid)
    tt = truth.t
    if len(tt) == 0 or len(est) == 0:
        return est.select(np.zeros(len(est), bool)), truth.select(np.zeros(len(tt), bool))
    if max_skew is None:
        max_skew = 0.5 * float(np.median(np.diff(tt))) if len(tt) > 1 else math.inf
    right = np.clip(np.searchsorted(tt, est.t), 0, len(tt) - 1)
    left = np.maximum(right - 1, 0)
    idx = np.where(np.abs(tt[left] - est.t) <= np.abs(tt[right] - est.t), left, right)
    keep = np.abs(tt[idx] - est.t) <= max_skew * (1 + 1e-9)
    return est.select(keep), _rows(truth, idx[keep])


def _rows(traj: Trajectory, idx) -> Trajectory:
    return Trajectory(traj.t[idx], traj.position[idx], traj.theta[idx], traj.rms[idx],
                      traj.n_markers[idx], traj.converged[idx], [traj.cause[i] for i in idx])


@dataclass
class FpsResult:
    mean: float
    std: float
    n_frames: int = 0
    repeats: int = 0
    parallel: bool = False


@dataclass
class MetricReport:
    """Benchmark row comparing one trajectory to a reference."""

    hausdorff: float
    frechet: float
    n_a: int
    n_b: int
    fps: FpsResult | None = None
    yaw_rms: float = math.nan
    config_digest: str = ""
    label: str = ""

    def to_dict(self):
        fps = ({"mean": self.fps.mean, "std": self.fps.std} if self.fps is not None
               else {"mean": None, "std": None})
        return {"hausdorff": self.hausdorff, "frechet": self.frechet, "fps": fps,
                "n_a": self.n_a, "n_b": self.n_b, "config_digest": self.config_digest,
                "yaw_rms": None if math.isnan(self.yaw_rms) else self.yaw_rms,
                "label": self.label}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        write_text(path, self.to_json())

    @classmethod
    def from_dict(cls, d):
        fps = d.get("fps") or {}
        fps = FpsResult(fps["mean"], fps["std"]) if fps.get("mean") is not None else None
        yaw = d.get("yaw_rms")
        return cls(d["hausdorff"], d["frechet"], d["n_a"], d["n_b"], fps,
                   math.nan if yaw is None else yaw, d.get("config_digest", ""),
                   d.get("label", ""))


def evaluate(estimate: Trajectory, truth: Trajectory, *, max_skew=None,
             config_digest="", label="") -> MetricReport:
    """Hausdorff and discrete Frechet distance of ``estimate`` to ``truth``."""
    est, ref = pair_by_time(estimate, truth, max_skew)
    if len(est) == 0:
        raise EmptyTrajectoryError("no estimated pose lies within the skew bound of the truth")
    h = hausdorff(est.position, ref.position)
    f = discrete_frechet(est.position, ref.position)
    dyaw = np.angle(np.exp(1j * (est.theta - ref.theta)))
    return MetricReport(h, f, len(est), len(ref), None, float(np.sqrt(np.mean(dyaw ** 2))),
                        config_digest, label)


def measure_fps(stage: Callable[[list], object], detections, *, n_frames=None, repeats=5,
                min_frames=100, parallel=False, clock=time.perf_counter) -> FpsResult:
    """Frames per second of ``stage(detections)``, mean and std over ``repeats``.

    Only the call to ``stage`` is timed.  ``n_frames`` defaults to the
    number of distinct frame indices in ``detections``.
    """
    if n_frames is None:
        n_frames = len({d.frame for d in detections})
    if n_frames < min_frames:
        raise TooFewFramesError(f"{n_frames} frames, need at least {min_frames} for stable timing")
    rates = []
    for _ in range(repeats):
        t0 = clock()
        stage(detections)
        rates.append(n_frames / (clock() - t0))
    std = statistics.stdev(rates) if len(rates) > 1 else 0.0
    return FpsResult(statistics.fmean(rates), std, n_frames, repeats, parallel)


def format_table(rows) -> str:
    """Aligned text table of ``(profile, variant, MetricReport)`` rows."""
    head = ("Profile", "Trajectory", "Hausdorff (m)", "Frechet (m)", "FPS")
    body = []
    for profile, variant, rep in rows:
        fps = "-" if rep.fps is None else f"{rep.fps.mean:.0f} +/- {rep.fps.std:.0f}"
        body.append((profile, variant, f"{rep.hausdorff:.4f}", f"{rep.frechet:.4f}", fps))
    widths = [max(len(r[k]) for r in (head, *body)) for k in range(len(head))]
    line = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(head), rule, *map(line, body)]) + "\n"
