"""scikit-learn style wrappers around the pose and smoothing stages.

Both follow the estimator conventions: hyper-parameters are stored verbatim
by ``__init__``, validated in ``fit``, and learned state ends with ``_``.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .butterworth import (
    DEFAULT_ENERGY_FRACTION,
    DEFAULT_ORDER,
    DEFAULT_SAMPLE_RATE,
    FilterSpec,
    auto_cutoff,
    design,
    filter_signal,
    filter_trajectory,
    suggest_cutoff,
)
from .detections import DEFAULT_MIN_CONFIDENCE
from .errors import InvalidParameterError
from .geometry import default_intrinsics, wall_marker_map
from .metrics import discrete_frechet
from .pnp import Mode, SolveOptions, estimate_trajectory, frames_to_trajectory
from .trajectory import Trajectory
from .validation import check_finite, check_int, check_positive, check_probability


class MarkerPoseEstimator(BaseEstimator):
    """Per-frame camera pose from marker detections.

    Parameters
    ----------
    marker_map : MarkerMap, optional
        World geometry of the markers; the default wall map when omitted.
    intrinsics : CameraIntrinsics, optional
        Pinhole model; the simulation default when omitted.
    mode : {"4dof", "6dof"}
    min_markers : int
        Frames with fewer usable markers become gap rows.
    min_confidence : float
        Detections below this confidence are discarded.
    weight_policy : {"uniform", "confidence"}

    Examples
    --------
    >>> est = MarkerPoseEstimator().fit()
    >>> est.predict([])
    array([], shape=(0, 4), dtype=float64)
    """

    def __init__(self, marker_map=None, intrinsics=None, mode="4dof", min_markers=1,
                 min_confidence=DEFAULT_MIN_CONFIDENCE, weight_policy="uniform"):
        self.marker_map = marker_map
        self.intrinsics = intrinsics
        self.mode = mode
        self.min_markers = min_markers
        self.min_confidence = min_confidence
        self.weight_policy = weight_policy

    def fit(self, X=None, y=None):
        """Validate the configuration; there is nothing to learn."""
        try:
            self.mode_ = Mode(self.mode)
        except ValueError:
            raise InvalidParameterError(f"mode must be '4dof' or '6dof', got {self.mode!r}") \
                from None
        check_int(self.min_markers, "min_markers", minimum=1)
        check_probability(self.min_confidence, "min_confidence")
        if self.weight_policy not in ("uniform", "confidence"):
            raise InvalidParameterError("weight_policy must be 'uniform' or 'confidence'")
        self.marker_map_ = self.marker_map if self.marker_map is not None else wall_marker_map()
        self.intrinsics_ = (self.intrinsics if self.intrinsics is not None
                            else default_intrinsics())
        return self

    def predict_trajectory(self, X, frame_times=None) -> Trajectory:
        """Trajectory with explicit gap rows for the detections ``X``."""
        check_is_fitted(self, "mode_")
        frames = estimate_trajectory(X, self.marker_map_, self.intrinsics_, self.mode_,
                                     self.min_markers, min_confidence=self.min_confidence,
                                     frame_times=frame_times, weight_policy=self.weight_policy,
                                     options=SolveOptions())
        return frames_to_trajectory(frames)

    def predict(self, X, frame_times=None) -> np.ndarray:
        """``(n_frames, 4)`` array of ``x, y, z, theta``; gap rows are NaN."""
        traj = self.predict_trajectory(X, frame_times)
        return np.column_stack([traj.position, traj.theta]) if len(traj) else np.zeros((0, 4))

    def score(self, X, y, frame_times=None) -> float:
        """Negative discrete Frechet distance between predicted and reference positions."""
        pred = self.predict(X, frame_times)
        ref = np.asarray(y, dtype=float)[:, :3]
        ok = np.all(np.isfinite(pred), axis=1)
        return -discrete_frechet(pred[ok, :3], ref)


class ButterworthSmoother(TransformerMixin, BaseEstimator):
    """Causal Butterworth low-pass for uniformly sampled signals or trajectories.

    ``fit`` fixes the cutoff: ``cutoff`` when given, otherwise
    ``cutoff_scale`` times the spectrum-suggested cutoff of the training
    signal for ``energy_fraction``.

    Parameters
    ----------
    order : int
    cutoff : float, optional
        rad/s.
    sample_rate : float
        Hz.
    energy_fraction : float
    cutoff_scale : float
    zero_phase : bool
        Forward-backward (non-causal) filtering for offline analysis.

    Examples
    --------
    >>> sm = ButterworthSmoother(cutoff=2.0).fit(np.zeros(32))
    >>> sm.transform(np.ones(4))
    array([1., 1., 1., 1.])
    """

    def __init__(self, order=DEFAULT_ORDER, cutoff=None, sample_rate=DEFAULT_SAMPLE_RATE,
                 energy_fraction=DEFAULT_ENERGY_FRACTION, cutoff_scale=1.0, zero_phase=False):
        self.order = order
        self.cutoff = cutoff
        self.sample_rate = sample_rate
        self.energy_fraction = energy_fraction
        self.cutoff_scale = cutoff_scale
        self.zero_phase = zero_phase

    def fit(self, X, y=None):
        check_positive(self.sample_rate, "sample_rate")
        check_positive(self.cutoff_scale, "cutoff_scale")
        if self.cutoff is not None:
            wc = float(self.cutoff)
        else:
            if isinstance(X, Trajectory):
                wc = auto_cutoff(X, self.sample_rate, self.energy_fraction)
            else:
                X = np.asarray(X, dtype=float)
                check_finite(X, what="X")
                wc = suggest_cutoff(X, self.sample_rate, self.energy_fraction)
            wc = min(wc * self.cutoff_scale, math.nextafter(math.pi * self.sample_rate, 0.0))
        self.spec_ = FilterSpec(self.order, wc, self.sample_rate)
        self.cutoff_ = wc
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        if isinstance(X, Trajectory):
            return filter_trajectory(self.spec_, X, zero_phase=self.zero_phase)
        X = np.asarray(X, dtype=float)
        check_finite(X, what="X")
        filt = design(self.spec_)
        if X.ndim == 1:
            return filter_signal(filt, X, zero_phase=self.zero_phase)
        return np.column_stack([filter_signal(filt, X[:, k], zero_phase=self.zero_phase)
                                for k in range(X.shape[1])])
