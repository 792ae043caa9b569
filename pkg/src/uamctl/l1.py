"""Piecewise-constant adaptive disturbance estimators.

Two mirrored estimators: one for the external wrench acting on the base,
one for the joint servo disturbance. Each runs a state predictor alongside
the plant at the 100 Hz control rate, turns the prediction error into a
piecewise-constant disturbance estimate, and low-pass filters that estimate
before it is folded back into the command.

Sign convention, fixed by the constant-disturbance rejection tests: the
estimators converge to the physical disturbance itself (positive sign), so
augmentation SUBTRACTS the filtered estimate from the command. The raw
update law carries the textbook leading minus; the predictor feedback term
makes the composition come out positive.

Per-tick call order (matches the closed-loop runner). The measurement is
taken at the tick boundary, before the plant advances, so predictor and
plant step in lockstep from the same instant:

    s = plant.measure()                # state at tick start
    u_star = est.augment(u_cmd, ...)   # last tick's filtered estimate
    est.update(s, u_star)              # adapt on this tick's error, then
                                       # propagate with the applied command
    plant.step(u_star)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arm_model import ArmParams
from .uav_dynamics import FRAME_BODY, UavParams, Wrench, accel_arrays


def adaptation_gain(A: np.ndarray, dt: float) -> np.ndarray:
    """Gain G of the piecewise-constant update: raw estimate = G @ (v_hat - v).

    G = -(e^{A dt} - I)^{-1} A e^{A dt}, evaluated by eigendecomposition.
    Requires A Hurwitz (then e^{A dt} - I is invertible) and diagonalizable,
    which covers every A this package constructs.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    w, V = np.linalg.eig(A)
    if np.any(w.real >= 0):
        raise ValueError("adaptation matrix must be Hurwitz")
    E = (V * np.exp(w * dt)) @ np.linalg.inv(V)
    E = E.real
    G = -np.linalg.solve(E - np.eye(A.shape[0]), A @ E)
    return G


def _lpf_alpha(cutoff_hz: float, dt: float) -> float:
    if cutoff_hz <= 0:
        raise ValueError("filter cutoff must be positive")
    return 1.0 - float(np.exp(-2.0 * np.pi * cutoff_hz * dt))


@dataclass
class L1Config:
    """Estimator gains shared by the base and joint estimators.

    pole sets A = pole * I for the predictor error feedback. The filter
    cutoffs sit an order below the 100 Hz loop; the base filter is slower
    because the base estimate feeds straight into thrust.
    """

    pole: float = -2.5
    cutoff_base_hz: float = 5.0
    cutoff_joint_hz: float = 10.0
    dt: float = 0.01
    # clamp on the raw estimates; generously above any benchmark disturbance
    wrench_bound: tuple = (5.0, 5.0, 5.0, 1.0, 1.0, 1.0)
    joint_rate_bound: float = 2.0

    def __post_init__(self):
        if self.pole >= 0:
            raise ValueError("predictor pole must be negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


class L1BaseEstimator:
    """External-wrench estimator for the floating base.

    Predictor state is the generalized velocity v_hat (world linear, body
    angular). The disturbance estimate lives in wrench units: world-frame
    force on the linear rows, body-frame torque on the angular rows, same
    split the plant uses for its injected biases.
    """

    def __init__(self, uav: UavParams, cfg: L1Config | None = None,
                 A_v: np.ndarray | None = None):
        self.cfg = cfg = cfg if cfg is not None else L1Config()
        self.uav = uav
        self.A_v = (cfg.pole * np.eye(6) if A_v is None
                    else np.asarray(A_v, dtype=float))
        self._gain = adaptation_gain(self.A_v, cfg.dt)
        self._alpha = _lpf_alpha(cfg.cutoff_base_hz, cfg.dt)
        # wrench = M @ (velocity-error update); block diagonal mass matrix
        self._M = np.zeros((6, 6))
        self._M[:3, :3] = np.diag(uav.m_lin)
        self._M[3:, 3:] = uav.inertia
        self._Minv = np.linalg.inv(self._M)
        self._bound = np.asarray(cfg.wrench_bound, dtype=float)
        self.v_hat = np.zeros(6)
        self.sigma_raw = np.zeros(6)
        self.sigma = np.zeros(6)     # filtered wrench estimate
        self._primed = False

    def reset(self, v: np.ndarray | None = None):
        self.v_hat = np.zeros(6) if v is None else np.asarray(v, dtype=float).copy()
        self.sigma_raw = np.zeros(6)
        self.sigma = np.zeros(6)
        self._primed = v is not None

    def update(self, state, force_body: np.ndarray, torque_body: np.ndarray):
        """Adapt on the current prediction error, then advance the predictor.

        state is the measured plant state for this tick; force/torque are the
        body-frame commands actually applied over the coming interval
        (i.e. after augmentation and clamping).
        """
        v = np.asarray(state.v, dtype=float)
        if not self._primed:
            self.v_hat = v.copy()
            self._primed = True
        err = self.v_hat - v
        raw = self._M @ (self._gain @ err)
        self.sigma_raw = np.clip(raw, -self._bound, self._bound)
        self.sigma = self.sigma + self._alpha * (self.sigma_raw - self.sigma)
        a_nom = accel_arrays(state.R, v,
                             np.asarray(force_body, dtype=float),
                             np.asarray(torque_body, dtype=float), self.uav)
        dv = a_nom + self._Minv @ self.sigma_raw + self.A_v @ err
        self.v_hat = self.v_hat + self.cfg.dt * dv

    def disturbance(self) -> Wrench:
        """Filtered estimate: world-frame force rows, body-frame torque rows."""
        return Wrench(self.sigma[:3].copy(), self.sigma[3:].copy(),
                      frame=FRAME_BODY)

    def augment(self, force_body: np.ndarray, torque_body: np.ndarray,
                R: np.ndarray, u_lb: np.ndarray | None = None,
                u_ub: np.ndarray | None = None):
        """Fold the filtered estimate into a body-frame wrench command.

        The force estimate is world-frame, so it is rotated into the body
        before subtraction. Optional bounds clamp the result to what the
        actuators can deliver.
        """
        f = np.asarray(force_body, dtype=float) - R.T @ self.sigma[:3]
        tq = np.asarray(torque_body, dtype=float) - self.sigma[3:]
        if u_lb is not None:
            f = np.clip(f, u_lb[:3], u_ub[:3])
            tq = np.clip(tq, u_lb[3:], u_ub[3:])
        return f, tq


class L1JointEstimator:
    """Servo disturbance estimator, one scalar channel per joint.

    The predictor integrates the first-order servo model; the disturbance
    d_hat is a joint-rate offset (rad/s), so the command correction is
    beta * d_hat.
    """

    def __init__(self, arm: ArmParams, cfg: L1Config | None = None,
                 A_d: np.ndarray | None = None):
        self.cfg = cfg = cfg if cfg is not None else L1Config()
        self.arm = arm
        n = len(arm.beta)
        self.A_d = (cfg.pole * np.eye(n) if A_d is None
                    else np.asarray(A_d, dtype=float))
        self._gain = adaptation_gain(self.A_d, cfg.dt)
        self._alpha = _lpf_alpha(cfg.cutoff_joint_hz, cfg.dt)
        self._bound = cfg.joint_rate_bound
        self.theta_hat = np.zeros(n)
        self.d_raw = np.zeros(n)
        self.d_hat = np.zeros(n)
        self._primed = False

    def reset(self, theta: np.ndarray | None = None):
        n = len(self.arm.beta)
        self.theta_hat = (np.zeros(n) if theta is None
                          else np.asarray(theta, dtype=float).copy())
        self.d_raw = np.zeros(n)
        self.d_hat = np.zeros(n)
        self._primed = theta is not None

    def update(self, theta_measured: np.ndarray, theta_cmd_applied: np.ndarray):
        th = np.asarray(theta_measured, dtype=float)
        if not self._primed:
            self.theta_hat = th.copy()
            self._primed = True
        err = self.theta_hat - th
        raw = self._gain @ err
        self.d_raw = np.clip(raw, -self._bound, self._bound)
        self.d_hat = self.d_hat + self._alpha * (self.d_raw - self.d_hat)
        dth = ((np.asarray(theta_cmd_applied, dtype=float) - self.theta_hat)
               / self.arm.beta + self.d_raw + self.A_d @ err)
        self.theta_hat = self.theta_hat + self.cfg.dt * dth

    def augment(self, theta_cmd: np.ndarray) -> np.ndarray:
        """Command that cancels the estimated rate offset, within limits."""
        lim = self.arm.joint_limits
        out = np.asarray(theta_cmd, dtype=float) - self.arm.beta * self.d_hat
        return np.clip(out, lim[:, 0], lim[:, 1])
