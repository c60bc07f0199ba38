"""Static SVG figures: Bode curves, amplitude spectra, trajectory overlays.

Output is reproducible byte for byte: the SVG id salt is fixed and the
date metadata is omitted.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

from matplotlib import rc_context  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from ._io import atomic_open  # noqa: E402

_RC = {"svg.hashsalt": "tagnav", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path):
    with rc_context(_RC), atomic_open(path, "wb") as fh:
        fig.savefig(fh, format="svg", metadata={"Date": None})


def plot_bode(omegas, magnitude_db, phase_deg, path, title=""):
    with rc_context(_RC):
        fig = Figure(figsize=(6, 5))
        ax_m, ax_p = fig.subplots(2, 1, sharex=True)
        ax_m.semilogx(omegas, magnitude_db)
        ax_m.set_ylabel("magnitude (dB)")
        ax_p.semilogx(omegas, phase_deg)
        ax_p.set_ylabel("phase (deg)")
        ax_p.set_xlabel("frequency (rad/s)")
        for ax in (ax_m, ax_p):
            ax.grid(True, which="both", linewidth=0.3)
        if title:
            ax_m.set_title(title)
        fig.tight_layout()
    _save(fig, path)


def plot_spectrum(omegas, amplitude, path, cutoff=None):
    with rc_context(_RC):
        fig = Figure(figsize=(6, 3.5))
        ax = fig.subplots()
        ax.semilogy(omegas[1:], amplitude[1:])
        if cutoff is not None:
            ax.axvline(cutoff, color="tab:red", linestyle="--", label=f"cutoff {cutoff:.3g} rad/s")
            ax.legend()
        ax.set_xlabel("frequency (rad/s)")
        ax.set_ylabel("amplitude")
        ax.grid(True, linewidth=0.3)
        fig.tight_layout()
    _save(fig, path)


def plot_trajectories(trajectories: dict, path, title=""):
    """Top view (x, y) and altitude over time of each labelled trajectory."""
    with rc_context(_RC):
        fig = Figure(figsize=(9, 4))
        ax_xy, ax_z = fig.subplots(1, 2)
        for label, traj in trajectories.items():
            ok = traj.valid
            ax_xy.plot(traj.position[ok, 0], traj.position[ok, 1], label=label, linewidth=0.8)
            ax_z.plot(traj.t[ok], traj.position[ok, 2], label=label, linewidth=0.8)
        ax_xy.set_xlabel("x (m)")
        ax_xy.set_ylabel("y (m)")
        ax_xy.set_aspect("equal", adjustable="datalim")
        ax_z.set_xlabel("t (s)")
        ax_z.set_ylabel("z (m)")
        ax_xy.legend(fontsize="small")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
    _save(fig, path)
