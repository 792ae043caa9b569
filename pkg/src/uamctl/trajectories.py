"""Reference end-effector trajectories and tracking-error metrics.

Three analytic reference motions (a fixed setpoint, a planar ellipse and a
planar figure-eight, all in the x-z plane with identity attitude) plus a
"file" kind that replays a recorded CSV stream. Also hosts the RMSE metric
used by the benchmark harness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import matrix_from_quat
from .mpc.problem import EeTarget

log = logging.getLogger(__name__)

KINDS = ("setpoint", "ellipse", "figure8", "file")

# CSV replay format: header row, then one sample per line,
#   t [s], x [m], y [m], z [m], qw, qx, qy, qz
# with strictly increasing t and a unit-norm (or normalizable) quaternion.
FILE_COLUMNS = ("t", "x", "y", "z", "qw", "qx", "qy", "qz")


@dataclass
class TrajectorySpec:
    kind: str = "ellipse"
    duration: float = 60.0
    sample_rate: float = 100.0
    path: str | None = None  # CSV source, file kind only
    rate: float = 1.0  # time-warp factor, speeds the analytic motions up

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.kind == "file":
            if self.path is None:
                raise ValueError("file kind needs a path")
            if self.rate != 1.0:
                raise ValueError("file replays cannot be time-warped")


def _positions(kind: str, t: np.ndarray):
    """Analytic position and velocity at times t, shapes (n, 3)."""
    t = np.asarray(t, dtype=float)
    p = np.zeros(t.shape + (3,))
    v = np.zeros(t.shape + (3,))
    if kind == "setpoint":
        p[..., 2] = 1.3
    elif kind == "ellipse":
        p[..., 0] = 0.5 * np.sin(0.3 * t)
        p[..., 2] = 1.4 + 0.2 * np.sin(0.3 * t + 0.75)
        v[..., 0] = 0.15 * np.cos(0.3 * t)
        v[..., 2] = 0.06 * np.cos(0.3 * t + 0.75)
    elif kind == "figure8":
        p[..., 0] = 0.1 + 0.6 * np.sin(0.3 * t)
        p[..., 2] = 1.35 + 0.25 * np.sin(0.6 * t)
        v[..., 0] = 0.18 * np.cos(0.3 * t)
        v[..., 2] = 0.15 * np.cos(0.6 * t)
    else:
        raise ValueError(kind)
    return p, v


class ReferenceTrajectory:
    """Callable reference stream built from a TrajectorySpec."""

    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        self._warned = False
        if spec.kind == "file":
            data = np.loadtxt(spec.path, delimiter=",", skiprows=1, ndmin=2)
            if data.shape[1] != len(FILE_COLUMNS):
                raise ValueError(
                    f"{spec.path}: expected columns {FILE_COLUMNS}")
            if data.shape[0] < 2:
                raise ValueError(f"{spec.path}: need at least two samples")
            ts = data[:, 0]
            if np.any(np.diff(ts) <= 0):
                raise ValueError(f"{spec.path}: timestamps must increase")
            self._ft = ts
            self._fp = data[:, 1:4]
            q = data[:, 4:8]
            self._fq = q / np.linalg.norm(q, axis=1, keepdims=True)
            # replay clips to the recorded window
            self.spec.duration = min(spec.duration, float(ts[-1]))

    def _clamp(self, t):
        lo, hi = 0.0, self.spec.duration
        out = np.clip(t, lo, hi)
        if not self._warned and np.any((t < lo) | (t > hi)):
            log.debug("trajectory sampled outside [0, %.1f], clamping", hi)
            self._warned = True
        return out

    def positions(self, t):
        """Vectorized position/velocity reference, (n,3) each."""
        t = self._clamp(np.asarray(t, dtype=float))
        if self.spec.kind != "file":
            p, v = _positions(self.spec.kind, self.spec.rate * t)
            return p, v * self.spec.rate
        p = np.column_stack([np.interp(t, self._ft, self._fp[:, i])
                             for i in range(3)])
        # velocity of the replay by differencing the interpolant
        h = 1e-3
        pa = np.column_stack([np.interp(t - h, self._ft, self._fp[:, i])
                              for i in range(3)])
        pb = np.column_stack([np.interp(t + h, self._ft, self._fp[:, i])
                              for i in range(3)])
        return p, (pb - pa) / (2 * h)

    def _rotation(self, t: float) -> np.ndarray:
        if self.spec.kind != "file":
            return np.eye(3)
        # nearest-neighbor blend of the two bracketing quaternions
        i = int(np.searchsorted(self._ft, t, side="right") - 1)
        i = min(max(i, 0), len(self._ft) - 2)
        t0, t1 = self._ft[i], self._ft[i + 1]
        a = (t - t0) / (t1 - t0)
        q0, q1 = self._fq[i], self._fq[i + 1]
        if np.dot(q0, q1) < 0:
            q1 = -q1
        q = (1 - a) * q0 + a * q1
        return matrix_from_quat(q / np.linalg.norm(q))

    def sample(self, t: float) -> EeTarget:
        t = float(self._clamp(t))
        p, v = self.positions(np.array([t]))
        vel = np.zeros(6)
        vel[:3] = v[0]
        return EeTarget(p=p[0], R=self._rotation(t), v_ref=vel)

    def sample_horizon(self, t0: float, dt: float, n: int) -> list:
        """Targets at t0, t0+dt, ..., t0+n*dt for the horizon problem."""
        ts = self._clamp(t0 + dt * np.arange(n + 1))
        p, v = self.positions(ts)
        vel = np.zeros((n + 1, 6))
        vel[:, :3] = v
        if self.spec.kind == "file":
            return [EeTarget(p=p[k], R=self._rotation(float(ts[k])),
                             v_ref=vel[k]) for k in range(n + 1)]
        eye = np.eye(3)
        return [EeTarget(p=p[k], R=eye, v_ref=vel[k]) for k in range(n + 1)]

    def target_fn(self, t0: float, dt: float, n: int) -> list:
        return self.sample_horizon(t0, dt, n)

    def max_speed(self) -> float:
        """Peak reference speed, from densely sampled analytic velocity."""
        ts = np.arange(0.0, self.spec.duration, 1.0 / self.spec.sample_rate)
        _, v = self.positions(ts)
        return float(np.max(np.linalg.norm(v, axis=1)))


def make_trajectory(kind: str, duration: float = 60.0,
                    path: str | None = None,
                    rate: float = 1.0) -> ReferenceTrajectory:
    return ReferenceTrajectory(
        TrajectorySpec(kind=kind, duration=duration, path=path, rate=rate))


def position_rmse(t_ref, p_ref, t_meas, p_meas):
    """Tracking RMSE in centimeters, plus the per-axis error series.

    Streams may live on different clocks; the measured stream is linearly
    interpolated onto the reference timestamps restricted to the overlap.
    Returns (rmse_cm, err) with err of shape (n, 3) in meters.
    """
    t_ref = np.asarray(t_ref, dtype=float)
    p_ref = np.asarray(p_ref, dtype=float)
    t_meas = np.asarray(t_meas, dtype=float)
    p_meas = np.asarray(p_meas, dtype=float)
    lo = max(t_ref[0], t_meas[0])
    hi = min(t_ref[-1], t_meas[-1])
    keep = (t_ref >= lo) & (t_ref <= hi)
    if not keep.any():
        raise ValueError("reference and measurement do not overlap in time")
    tg = t_ref[keep]
    pr = p_ref[keep]
    pm = np.column_stack([np.interp(tg, t_meas, p_meas[:, i])
                          for i in range(3)])
    err = pm - pr
    rmse_m = np.sqrt(np.mean(np.sum(err ** 2, axis=1)))
    return 100.0 * rmse_m, err


def aggregate(values) -> tuple:
    """Mean and standard deviation over repeated runs."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std())
