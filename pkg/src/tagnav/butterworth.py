"""Butterworth low-pass smoothing of pose sequences.

The analog filter is ``H(s) = 1 / B_n(s / w_c)`` with ``B_n`` the normalised
Butterworth polynomial, so the DC gain is 1 and the magnitude at the cutoff
``w_c`` is -3.0103 dB.  Sampled signals are filtered by the bilinear-transform
discretisation with frequency pre-warping, realised as second-order sections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyInputError,
    EmptyTrajectoryError,
    InvalidSpecError,
    NonFiniteError,
    NonUniformSamplingError,
    TooFewSamplesError,
)
from .geometry import wrap_angle
from .trajectory import Trajectory

DEFAULT_ORDER = 2
DEFAULT_SAMPLE_RATE = 30.0
DEFAULT_ENERGY_FRACTION = 0.95


@dataclass(frozen=True)
class FilterSpec:
    """Filter order, cutoff ``w_c`` in rad/s and sample rate in Hz."""

    order: int = DEFAULT_ORDER
    cutoff: float = 1.0
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if isinstance(self.order, bool) or not isinstance(self.order, (int, np.integer)) \
                or self.order < 1:
            raise InvalidSpecError(f"order must be an integer >= 1, got {self.order!r}")
        if not (math.isfinite(self.sample_rate) and self.sample_rate > 0):
            raise InvalidSpecError(f"sample_rate must be positive, got {self.sample_rate!r}")
        if not (math.isfinite(self.cutoff) and 0 < self.cutoff < self.nyquist):
            raise InvalidSpecError(
                f"cutoff {self.cutoff!r} rad/s must lie in (0, {self.nyquist:.6g}) "
                "(below Nyquist)")

    @property
    def nyquist(self) -> float:
        """Nyquist frequency in rad/s."""
        return math.pi * self.sample_rate


@dataclass(frozen=True)
class AnalogPrototype:
    """Normalised Butterworth polynomial ``B_n(s) = sum_k a_k s^k`` (unit cutoff)."""

    order: int

    @property
    def poles(self) -> np.ndarray:
        k = np.arange(1, self.order + 1)
        return np.exp(1j * math.pi * (2 * k + self.order - 1) / (2 * self.order))

    @property
    def coefficients(self) -> np.ndarray:
        """``a_0 .. a_n`` in ascending powers of ``s``."""
        return np.real(np.poly(self.poles))[::-1].copy()

    def scaled_coefficients(self, cutoff) -> np.ndarray:
        """Coefficients of ``B_n(s / w_c)``: ``a_k / w_c**k``."""
        return self.coefficients / cutoff ** np.arange(self.order + 1)


def prototype(order) -> AnalogPrototype:
    return AnalogPrototype(int(order))


class DiscreteFilter:
    """Cascade of second-order sections (transposed direct form II).

    ``sos`` rows are ``[b0, b1, b2, 1, a1, a2]``; the cascade output is
    multiplied by ``gain``.  The filter owns per-section delay registers and
    is therefore not safe to share between concurrently filtered streams.
    """

    def __init__(self, spec: FilterSpec, sos, gain):
        self.spec = spec
        self.sos = np.asarray(sos, dtype=float)
        self.gain = float(gain)
        self.state = np.zeros((len(self.sos), 2))

    @property
    def sample_rate(self):
        return self.spec.sample_rate

    def dc_gain(self) -> float:
        b = self.sos[:, :3].sum(axis=1)
        a = self.sos[:, 3:].sum(axis=1)
        return self.gain * float(np.prod(b / a))

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(row[3:]) for row in self.sos])

    def response(self, omegas) -> np.ndarray:
        """Complex response at ``omegas`` (rad/s) of the sampled filter."""
        z = np.exp(-1j * np.asarray(omegas, dtype=float) / self.spec.sample_rate)
        h = np.full(z.shape, self.gain, dtype=complex)
        for b0, b1, b2, _, a1, a2 in self.sos:
            h *= (b0 + b1 * z + b2 * z * z) / (1 + a1 * z + a2 * z * z)
        return h

    def reset(self, x0=0.0):
        """Set the delay registers to the steady state for a constant input ``x0``."""
        x = float(x0) * self.gain
        for k, (b0, b1, b2, _, a1, a2) in enumerate(self.sos):
            y = x * (b0 + b1 + b2) / (1 + a1 + a2)
            z2 = b2 * x - a2 * y
            self.state[k] = (b1 * x - a1 * y + z2, z2)
            x = y

    def process(self, samples) -> np.ndarray:
        """Filter ``samples`` continuing from the current state."""
        x = [float(v) * self.gain for v in np.asarray(samples, dtype=float)]
        for k, (b0, b1, b2, _, a1, a2) in enumerate(self.sos):
            z1, z2 = self.state[k]
            y = [0.0] * len(x)
            for i, xi in enumerate(x):
                yi = b0 * xi + z1
                z1 = b1 * xi - a1 * yi + z2
                z2 = b2 * xi - a2 * yi
                y[i] = yi
            self.state[k] = (z1, z2)
            x = y
        return np.array(x)


def design(spec: FilterSpec) -> DiscreteFilter:
    """Discretise the Butterworth low-pass for ``spec``.

    The analog cutoff is pre-warped to ``2 fs tan(w_c / (2 fs))`` so that
    the bilinear transform puts the -3 dB point exactly at ``w_c``.
    """
    fs = spec.sample_rate
    warped = 2 * fs * math.tan(spec.cutoff / (2 * fs))
    s_poles = warped * prototype(spec.order).poles
    z_poles = (1 + s_poles / (2 * fs)) / (1 - s_poles / (2 * fs))
    sos = []
    upper = sorted((p for p in z_poles if p.imag > 1e-12), key=lambda p: -abs(p))
    for p in upper:
        sos.append([1.0, 2.0, 1.0, 1.0, -2 * p.real, abs(p) ** 2])
    real = [p.real for p in z_poles if abs(p.imag) <= 1e-12]
    for p in real:
        sos.append([1.0, 1.0, 0.0, 1.0, -p, 0.0])
    sos = np.array(sos)
    gain = 1.0
    for row in sos:
        gain *= row[3:].sum() / row[:3].sum()
    return DiscreteFilter(spec, sos, gain)


def filter_signal(filt: DiscreteFilter, samples, *, zero_phase=False) -> np.ndarray:
    """Causal low-pass filtering of a uniformly sampled signal.

    The delay registers start at the steady state of the first sample, so a
    constant signal passes unchanged from sample 0.  The output lags the
    input (group delay of the filter); this is not compensated.

    ``zero_phase=True`` runs the filter forward and then backward over an
    odd (point-reflected) extension of the signal.  That removes the lag but
    is NOT causal and is meant for offline analysis only; its magnitude
    response is squared.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise EmptyInputError("filter_signal needs a non-empty 1-D signal")
    if not zero_phase:
        filt.reset(x[0])
        return filt.process(x)
    first_order = int(np.sum(filt.sos[:, 5] == 0))
    pad = min(3 * (2 * len(filt.sos) + 1 - first_order), x.size - 1)
    ext = np.concatenate([2 * x[0] - x[pad:0:-1], x, 2 * x[-1] - x[-2:-pad - 2:-1]])
    filt.reset(ext[0])
    y = filt.process(ext)
    filt.reset(y[-1])
    y = filt.process(y[::-1])[::-1]
    return y[pad:pad + x.size]


def frequency_response(spec: FilterSpec, omegas):
    """Analog response of ``H(jw)``: magnitude in dB and unwrapped phase in degrees.

    Phase is the sum of the pole contributions, so it runs continuously
    from 0 towards ``-90 * order`` degrees.
    """
    w = np.asarray(omegas, dtype=float)
    poles = spec.cutoff * prototype(spec.order).poles
    jw = 1j * w[..., None]
    h = np.prod(-poles / (jw - poles), axis=-1)
    mag_db = 20 * np.log10(np.abs(h))
    phase = -np.degrees(np.sum(np.arctan2(w[..., None] - poles.imag, -poles.real), axis=-1))
    return mag_db, phase


def amplitude_spectrum(samples, sample_rate=DEFAULT_SAMPLE_RATE):
    """One-sided amplitude spectrum; returns ``(omegas in rad/s, amplitude)``.

    A 2-D input is treated as one channel per column; channel powers are
    summed and the combined amplitude is ``sqrt`` of that sum.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    spec = np.fft.rfft(x - x.mean(axis=0), axis=0)
    amp = np.abs(spec) / n
    amp[1:] *= 2
    if n % 2 == 0:
        amp[-1] /= 2
    omegas = 2 * math.pi * np.fft.rfftfreq(n, d=1.0 / sample_rate)
    return omegas, np.sqrt(np.sum(amp ** 2, axis=1))


def suggest_cutoff(samples, sample_rate=DEFAULT_SAMPLE_RATE,
                   energy_fraction=DEFAULT_ENERGY_FRACTION) -> float:
    """Smallest frequency holding ``energy_fraction`` of the non-DC spectral energy.

    Returns rad/s, clamped below Nyquist.
    """
    x = np.asarray(samples, dtype=float)
    if x.shape[0] < 16:
        raise TooFewSamplesError(f"need at least 16 samples, got {x.shape[0]}")
    if not 0 < energy_fraction <= 1:
        raise InvalidSpecError("energy_fraction must lie in (0, 1]")
    omegas, amp = amplitude_spectrum(x, sample_rate)
    energy = amp[1:] ** 2
    total = energy.sum()
    nyquist = math.pi * sample_rate
    below = np.nextafter(nyquist, 0.0)
    if total <= 0:
        return below
    cum = np.cumsum(energy)
    k = int(np.searchsorted(cum, energy_fraction * total * (1 - 1e-12)))
    k = min(k, len(energy) - 1)
    return float(min(omegas[1 + k], below))


def _check_uniform(t, sample_rate):
    if len(t) < 2:
        return
    period = 1.0 / sample_rate
    jitter = np.max(np.abs(np.diff(t) - period))
    if jitter > 0.01 * period:
        raise NonUniformSamplingError(
            f"timestamp jitter {jitter:.3g} s exceeds 1% of the {period:.6g} s frame period")


def zero_order_hold(values, valid):
    """Fill invalid rows with the most recent valid row (leading gaps take the first one)."""
    values = np.array(values, dtype=float)
    idx = np.where(valid, np.arange(len(valid)), -1)
    idx = np.maximum.accumulate(idx)
    first = int(np.argmax(valid))
    idx[idx < 0] = first
    return values[idx]


def filter_trajectory(spec: FilterSpec, trajectory: Trajectory, *, zero_phase=False) -> Trajectory:
    """Filter x, y, z and the unwrapped heading independently.

    Gap rows are filled by zero-order hold before filtering and come back
    as pose rows whose cause is prefixed with ``interpolated``.

    Raises
    ------
    EmptyTrajectoryError
        If no row carries a pose.
    NonUniformSamplingError
        If timestamp jitter exceeds 1% of the frame period.
    NonFiniteError
        If the filtered output overflows.
    """
    valid = trajectory.valid
    if not valid.any():
        raise EmptyTrajectoryError("trajectory has no pose rows to filter")
    _check_uniform(trajectory.t, spec.sample_rate)
    pos = zero_order_hold(trajectory.position, valid)
    theta = np.unwrap(zero_order_hold(trajectory.theta, valid))
    filt = design(spec)
    with np.errstate(over="ignore", invalid="ignore"):  # reported below
        out_pos = np.column_stack([filter_signal(filt, pos[:, k], zero_phase=zero_phase)
                                   for k in range(3)])
        out_theta = filter_signal(filt, theta, zero_phase=zero_phase)
    if not (np.isfinite(out_pos).all() and np.isfinite(out_theta).all()):
        raise NonFiniteError("filter output overflowed; input magnitudes are too large")
    out_theta = wrap_angle(out_theta)
    cause = [c if ok else ("interpolated:" + c if c else "interpolated")
             for c, ok in zip(trajectory.cause, valid)]
    return Trajectory(trajectory.t.copy(), out_pos, out_theta, trajectory.rms.copy(),
                      trajectory.n_markers.copy(), trajectory.converged.copy(), cause)


def auto_cutoff(trajectory: Trajectory, sample_rate=DEFAULT_SAMPLE_RATE,
                energy_fraction=DEFAULT_ENERGY_FRACTION) -> float:
    """Cutoff suggested from the combined x, y, z spectrum of a trajectory."""
    pos = zero_order_hold(trajectory.position, trajectory.valid)
    return suggest_cutoff(pos, sample_rate, energy_fraction)
