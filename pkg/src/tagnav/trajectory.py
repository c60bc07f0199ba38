"""Timed pose sequences and their CSV representation.

CSV header: ``t,x,y,z,theta,rms,n_markers,converged,cause``.  Gap records
keep their timestamp and cause but leave the pose fields empty.  Numbers are
written with 9 significant digits so files are byte-stable across runs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ._io import write_text
from .errors import ParseError, SchemaError
from .geometry import Pose, wrap_angle

HEADER = ("t", "x", "y", "z", "theta", "rms", "n_markers", "converged", "cause")
REQUIRED = ("t", "x", "y", "z", "theta")


def fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.9g}"


@dataclass
class Trajectory:
    t: np.ndarray
    position: np.ndarray
    theta: np.ndarray
    rms: np.ndarray = None
    n_markers: np.ndarray = None
    converged: np.ndarray = None
    cause: list = field(default=None)

    def __post_init__(self):
        n = len(self.t)
        self.t = np.asarray(self.t, dtype=float)
        self.position = np.asarray(self.position, dtype=float).reshape(n, 3)
        self.theta = np.asarray(self.theta, dtype=float).reshape(n)
        self.rms = np.full(n, np.nan) if self.rms is None else np.asarray(self.rms, dtype=float)
        self.n_markers = (np.zeros(n, dtype=int) if self.n_markers is None
                          else np.asarray(self.n_markers, dtype=int))
        self.converged = (np.isfinite(self.theta) if self.converged is None
                          else np.asarray(self.converged, dtype=bool))
        self.cause = [""] * n if self.cause is None else list(self.cause)

    def __len__(self):
        return len(self.t)

    @property
    def valid(self) -> np.ndarray:
        """Rows that carry a pose (estimated or interpolated)."""
        return np.all(np.isfinite(self.position), axis=1) & np.isfinite(self.theta)

    @property
    def is_gap(self) -> np.ndarray:
        return ~self.valid

    def poses(self):
        return [(float(t), Pose(*p, th)) for t, p, th, ok
                in zip(self.t, self.position, self.theta, self.valid) if ok]

    def select(self, mask) -> "Trajectory":
        mask = np.asarray(mask, dtype=bool)
        return Trajectory(self.t[mask], self.position[mask], self.theta[mask], self.rms[mask],
                          self.n_markers[mask], self.converged[mask],
                          [c for c, m in zip(self.cause, mask) if m])

    @classmethod
    def from_poses(cls, timed_poses) -> "Trajectory":
        t = [tp[0] for tp in timed_poses]
        pos = [[p.x, p.y, p.z] for _, p in timed_poses]
        th = [p.theta for _, p in timed_poses]
        n = len(t)
        return cls(np.array(t), np.array(pos).reshape(n, 3), np.array(th),
                   rms=np.zeros(n), converged=np.ones(n, dtype=bool))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for i in range(len(self)):
            ok = self.valid[i]
            pose = ([fmt(v) for v in self.position[i]] + [fmt(self.theta[i])]
                    if ok else ["", "", "", ""])
            w.writerow([fmt(self.t[i]), *pose, fmt(self.rms[i]), str(int(self.n_markers[i])),
                        "1" if self.converged[i] else "0", self.cause[i]])
        return buf.getvalue()

    def save(self, path):
        write_text(path, self.to_csv_text())

    @classmethod
    def load(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            return cls.from_csv_text(fh.read())

    @classmethod
    def from_csv_text(cls, text) -> "Trajectory":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None:
            raise ParseError("empty trajectory file", line=1)
        missing = [k for k in REQUIRED if k not in reader.fieldnames]
        if missing:
            raise SchemaError(f"trajectory header lacks {missing}", line=1)

        def num(row, key, lineno, default=math.nan):
            raw = (row.get(key) or "").strip()
            if raw == "":
                return default
            try:
                return float(raw)
            except ValueError:
                raise ParseError(f"bad number {raw!r} in column {key!r}", line=lineno) from None

        cols = {k: [] for k in HEADER}
        for lineno, row in enumerate(reader, start=2):
            t = num(row, "t", lineno)
            if not math.isfinite(t):
                raise SchemaError("missing timestamp", line=lineno)
            cols["t"].append(t)
            for k in ("x", "y", "z", "theta", "rms"):
                cols[k].append(num(row, k, lineno))
            cols["n_markers"].append(int(num(row, "n_markers", lineno, 0)))
            conv = (row.get("converged") or "").strip()
            cols["converged"].append(conv in ("1", "true", "True") or
                                     (conv == "" and math.isfinite(cols["x"][-1])))
            cols["cause"].append((row.get("cause") or "").strip())
        n = len(cols["t"])
        pos = np.column_stack([cols["x"], cols["y"], cols["z"]]) if n else np.zeros((0, 3))
        return cls(np.array(cols["t"]), pos, np.array(cols["theta"]), np.array(cols["rms"]),
                   np.array(cols["n_markers"], dtype=int), np.array(cols["converged"], dtype=bool),
                   cols["cause"])

    def quantized(self) -> "Trajectory":
        """The trajectory as it reads back from its CSV form."""
        return Trajectory.from_csv_text(self.to_csv_text())

    def unwrapped_theta(self) -> np.ndarray:
        """Heading made continuous across pose rows; gap rows stay NaN."""
        th = self.theta.copy()
        ok = np.isfinite(th)
        th[ok] = np.unwrap(th[ok])
        return th

    def wrapped(self) -> "Trajectory":
        self.theta = np.where(np.isfinite(self.theta), wrap_angle(np.nan_to_num(self.theta)), np.nan)
        return self
