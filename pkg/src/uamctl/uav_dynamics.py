"""Rigid-body model of the fully-actuated hexarotor base.

Conventions, fixed once here and relied on everywhere else:
  * base position and linear velocity are expressed in the world frame,
  * angular velocity is expressed in the body frame,
  * the commanded wrench is body-fixed (rotors turn with the vehicle); its
    force part is rotated into the world frame inside the dynamics,
  * gravity acts along -z in the world frame.

The generalized mass matrix is diagonal: three effective-mass entries for
the translational axes (normalized thrust units, so they need not be equal)
and the rotational inertia diagonal. Free fall accelerates at exactly -g on
the z axis regardless of the translational entries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import hat, orthonormalize_fast

FRAME_BODY = "body"
FRAME_WORLD = "world"

# identified values for the bench vehicle: effective masses (x, y, z) and
# rotational inertia diagonal
MASS_MATRIX = np.array([0.105, 0.121, 0.101, 0.025, 0.011, 0.013])
GRAVITY = 9.81


@dataclass
class Wrench:
    """Force/torque pair with an explicit frame tag."""

    force: np.ndarray
    torque: np.ndarray
    frame: str = FRAME_BODY

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float)
        self.torque = np.asarray(self.torque, dtype=float)
        if self.force.shape != (3,) or self.torque.shape != (3,):
            raise ValueError("wrench force and torque must be 3-vectors")
        if self.frame not in (FRAME_BODY, FRAME_WORLD):
            raise ValueError(f"unknown wrench frame {self.frame!r}")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @staticmethod
    def zero(frame: str = FRAME_BODY) -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3), frame)


@dataclass
class UavParams:
    """Base inertial parameters. mass_matrix holds the six diagonal entries."""

    mass_matrix: np.ndarray = field(default_factory=lambda: MASS_MATRIX.copy())
    inertia: np.ndarray | None = None
    gravity: float = GRAVITY

    def __post_init__(self):
        self.mass_matrix = np.asarray(self.mass_matrix, dtype=float)
        if self.mass_matrix.shape != (6,) or np.any(self.mass_matrix <= 0):
            raise ValueError("mass_matrix must be 6 positive diagonal entries")
        if self.inertia is None:
            self.inertia = np.diag(self.mass_matrix[3:])
        else:
            self.inertia = np.asarray(self.inertia, dtype=float)
        J = self.inertia
        if J.shape != (3, 3) or np.abs(J - J.T).max() > 1e-9:
            raise ValueError("inertia must be symmetric 3x3")
        if np.any(np.linalg.eigvalsh(J) <= 0):
            raise ValueError("inertia must be positive definite")
        if self.gravity <= 0:
            raise ValueError("gravity must be positive")
        self._inertia_inv = np.linalg.inv(J)
        self._g_vec = np.array([0.0, 0.0, self.gravity])

    @property
    def m_lin(self) -> np.ndarray:
        return self.mass_matrix[:3]

    def hover_force_world(self) -> np.ndarray:
        """World-frame force that exactly cancels gravity."""
        return np.array([0.0, 0.0, self.m_lin[2] * self.gravity])


@dataclass
class BaseState:
    """Base pose and generalized velocity (world linear, body angular)."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.v = np.asarray(self.v, dtype=float)

    def copy(self) -> "BaseState":
        return BaseState(self.p.copy(), self.R.copy(), self.v.copy())


def hover_wrench(params: UavParams, R: np.ndarray) -> Wrench:
    """Body-frame wrench holding the vehicle static at attitude R."""
    return Wrench(R.T @ params.hover_force_world(), np.zeros(3), FRAME_BODY)


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross spends most of its time reshuffling axes; spelled out it is
    # several times faster on the small batches used in the control loop
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1,
                     a2 * b0 - a0 * b2,
                     a0 * b1 - a1 * b0], axis=-1)


def accel_arrays(R: np.ndarray, v: np.ndarray, force_body: np.ndarray,
                 torque_body: np.ndarray, params: UavParams,
                 force_ext_world: np.ndarray | None = None,
                 torque_ext_body: np.ndarray | None = None) -> np.ndarray:
    """Generalized acceleration; broadcasts over a leading batch axis.

    Shapes: R (..., 3, 3), v (..., 6), forces/torques (..., 3).
    Single source for the Newton-Euler equations: the translational block is
    world-frame (no Coriolis coupling), the rotational block is body-frame
    with the gyroscopic term omega x J omega.
    """
    om = v[..., 3:6]
    f_world = (R @ force_body[..., None])[..., 0]
    if force_ext_world is not None:
        f_world = f_world + force_ext_world
    dv_lin = f_world / params.m_lin
    dv_lin = dv_lin - params._g_vec
    Jom = om @ params.inertia.T
    gyro = _cross3(om, Jom)
    tq = torque_body - gyro
    if torque_ext_body is not None:
        tq = tq + torque_ext_body
    dv_ang = tq @ params._inertia_inv.T
    return np.concatenate([dv_lin, dv_ang], axis=-1)


def _split_ext(state_R: np.ndarray, tau_ext: Wrench):
    """External wrench as (world force, body torque)."""
    if tau_ext.frame == FRAME_WORLD:
        return tau_ext.force, state_R.T @ tau_ext.torque
    return state_R @ tau_ext.force, tau_ext.torque


def dynamics_rhs(s: BaseState, tau: Wrench, tau_ext: Wrench,
                 params: UavParams):
    """Continuous-time derivative (dp, dR, dv) under commanded wrench tau.

    tau must carry the body frame tag; an external wrench may be tagged with
    either frame and is converted internally.
    """
    if tau.frame != FRAME_BODY:
        raise ValueError("commanded wrench must be expressed in the body frame")
    f_ext_w, t_ext_b = _split_ext(s.R, tau_ext)
    dp = s.v[:3].copy()
    dR = s.R @ hat(s.v[3:6])
    dv = accel_arrays(s.R, s.v, tau.force, tau.torque, params,
                      force_ext_world=f_ext_w, torque_ext_body=t_ext_b)
    return dp, dR, dv


def rk4_step(s: BaseState, tau: Wrench, tau_ext: Wrench, params: UavParams,
             dt: float) -> BaseState:
    """One RK4 step with zero-order-hold wrenches; re-orthonormalizes R."""
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt must lie in (0, 0.1], got {dt}")
    if tau.frame != FRAME_BODY:
        raise ValueError("commanded wrench must be expressed in the body frame")
    f_ext_w, t_ext_b = _split_ext(s.R, tau_ext)

    def rhs(p, R, v):
        dp = v[:3]
        dR = R @ hat(v[3:6])
        dv = accel_arrays(R, v, tau.force, tau.torque, params,
                          force_ext_world=f_ext_w, torque_ext_body=t_ext_b)
        return dp, dR, dv

    k1 = rhs(s.p, s.R, s.v)
    k2 = rhs(s.p + 0.5 * dt * k1[0], s.R + 0.5 * dt * k1[1], s.v + 0.5 * dt * k1[2])
    k3 = rhs(s.p + 0.5 * dt * k2[0], s.R + 0.5 * dt * k2[1], s.v + 0.5 * dt * k2[2])
    k4 = rhs(s.p + dt * k3[0], s.R + dt * k3[1], s.v + dt * k3[2])
    p = s.p + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    R = s.R + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    v = s.v + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return BaseState(p, orthonormalize_fast(R), v)
