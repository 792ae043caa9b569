"""Kinematics and servo model of the 4-DoF manipulator.

The arm is described by classic (distal) Denavit-Hartenberg rows: each joint
contributes RotZ(theta + offset) * TransZ(d) * TransX(a) * RotX(alpha). The
chain hangs from a fixed mount transform under the base; the mount rotation
turns the first three joint axes horizontal so they act as pitch joints,
while the wrist twist ahead of joint 4 makes it rotate about the
end-effector z axis.

Servo dynamics are first order per joint: beta_i * theta_dot_i =
theta_cmd_i + bias_i - theta_i. There is no arm dynamics feedback on the
base here; that coupling is injected by the plant as a disturbance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Transform, hat

# identified DH rows (theta_offset, d, a, alpha) and servo time constants
DH_ROWS = [
    (0.0, 0.0, 0.363, 0.10),
    (0.0, 0.050, 0.441, -0.10),
    (0.0, 0.0, 0.007, -1.578),
    (0.0, 0.076, 0.200, 0.0),
]
BETA = np.array([0.66, 0.68, 0.81, 0.85])
MOUNT_TRANSLATION = np.array([0.0, 0.0, -0.08])
# rotate the DH base z axis onto -y of the body so joints 1-3 pitch
MOUNT_ROTATION = np.array([[1.0, 0.0, 0.0],
                           [0.0, 0.0, -1.0],
                           [0.0, 1.0, 0.0]])


@dataclass
class DhJoint:
    theta_offset: float = 0.0
    d: float = 0.0
    a: float = 0.0
    alpha: float = 0.0


@dataclass
class ArmParams:
    joints: list[DhJoint] = field(
        default_factory=lambda: [DhJoint(*row) for row in DH_ROWS])
    beta: np.ndarray = field(default_factory=lambda: BETA.copy())
    mount: Transform = field(default_factory=lambda: Transform(
        MOUNT_ROTATION.copy(), MOUNT_TRANSLATION.copy()))
    joint_limits: np.ndarray = field(
        default_factory=lambda: np.array([[-2.6, 2.6]] * 4))
    rate_limit: float = 3.0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.joint_limits = np.asarray(self.joint_limits, dtype=float)
        n = len(self.joints)
        if self.beta.shape != (n,) or np.any(self.beta <= 0):
            raise ValueError("beta must give a positive time constant per joint")
        if self.joint_limits.shape != (n, 2):
            raise ValueError("joint_limits must be (n_joints, 2)")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def dh_array(self) -> np.ndarray:
        """(n, 4) array of (theta_offset, d, a, alpha) rows."""
        return np.array([[j.theta_offset, j.d, j.a, j.alpha]
                         for j in self.joints])


@dataclass
class ArmState:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)

    def copy(self) -> "ArmState":
        return ArmState(self.theta.copy())


def dh_matrix(theta: float, d: float, a: float, alpha: float) -> np.ndarray:
    """Homogeneous transform of one classic DH row."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def fk_frames(theta: np.ndarray, params: ArmParams,
              base: Transform | None = None) -> list[Transform]:
    """World transforms [mount frame, joint-1 frame, ..., EE frame]."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (params.n_joints,):
        raise ValueError(f"theta must have shape ({params.n_joints},)")
    T = (base or Transform.identity()) @ params.mount
    frames = [T]
    for ang, joint in zip(theta, params.joints):
        A = dh_matrix(ang + joint.theta_offset, joint.d, joint.a, joint.alpha)
        T = T @ Transform.from_matrix(A)
        frames.append(T)
    return frames


def fk_ee(theta: np.ndarray, params: ArmParams,
          base: Transform | None = None) -> Transform:
    """End-effector pose in the world frame."""
    return fk_frames(theta, params, base)[-1]


def fk_ee_arrays(p_base: np.ndarray, R_base: np.ndarray, theta: np.ndarray,
                 params: ArmParams):
    """Batched end-effector pose. Shapes (..., 3), (..., 3, 3), (..., n)."""
    dh = params.dh_array()
    R_acc = R_base @ params.mount.rotation
    p_acc = p_base + (R_base @ params.mount.translation)
    for i in range(params.n_joints):
        off, d, a, alpha = dh[i]
        ang = theta[..., i] + off
        ct, st = np.cos(ang), np.sin(ang)
        ca, sa = np.cos(alpha), np.sin(alpha)
        t_local = np.stack([a * ct, a * st, np.broadcast_to(d, ct.shape)], axis=-1)
        p_acc = p_acc + (R_acc @ t_local[..., None])[..., 0]
        A = np.empty(ct.shape + (3, 3))
        A[..., 0, 0] = ct
        A[..., 0, 1] = -st * ca
        A[..., 0, 2] = st * sa
        A[..., 1, 0] = st
        A[..., 1, 1] = ct * ca
        A[..., 1, 2] = -ct * sa
        A[..., 2, 0] = 0.0
        A[..., 2, 1] = sa
        A[..., 2, 2] = ca
        R_acc = R_acc @ A
    return p_acc, R_acc


def ee_jacobian(theta: np.ndarray, params: ArmParams,
                base: Transform | None = None) -> np.ndarray:
    """Geometric Jacobian of the EE twist, 6 x (6 + n_joints).

    Input velocity ordering: [base linear (world), base angular (body),
    joint rates]. Output twist: [EE linear velocity (world), EE angular
    velocity (world)].
    """
    base = base or Transform.identity()
    frames = fk_frames(theta, params, base)
    p_ee = frames[-1].translation
    n = params.n_joints
    J = np.zeros((6, 6 + n))
    J[:3, :3] = np.eye(3)
    J[:3, 3:6] = -hat(p_ee - base.translation) @ base.rotation
    J[3:6, 3:6] = base.rotation
    for i in range(n):
        axis = frames[i].rotation[:, 2]
        origin = frames[i].translation
        J[:3, 6 + i] = np.cross(axis, p_ee - origin)
        J[3:6, 6 + i] = axis
    return J


def servo_rhs(state: ArmState, theta_cmd: np.ndarray, params: ArmParams,
              bias: np.ndarray | float = 0.0) -> np.ndarray:
    """First-order servo response rate; broadcasts over batches."""
    theta_cmd = np.asarray(theta_cmd, dtype=float)
    theta = state.theta if isinstance(state, ArmState) else np.asarray(state)
    return (theta_cmd + bias - theta) / params.beta
