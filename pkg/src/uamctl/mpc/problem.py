"""Whole-body optimal control problem for the end-effector pose.

The decision variables are base wrench and joint position commands over an
N-step horizon. States are kept as base pose + generalized velocity +
joint angles; the end-effector pose enters the cost through forward
kinematics, so the optimizer trades base and arm motion against each other.

Tangent-space layout used everywhere in this package:
    state delta (16,): [dp (3), drot (3, body-frame right increment),
                        dv (6), dtheta (4)]
    control   (10,): [force (3, body), torque (3, body), theta_cmd (4)]
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..arm_model import ArmParams, fk_ee, fk_ee_arrays
from ..geometry import Transform, exp_so3, hat, log_so3, orthonormalize_fast, \
    rotation_error
from ..uav_dynamics import BaseState, FRAME_BODY, UavParams, Wrench, \
    accel_arrays

N_TANGENT = 16
N_CONTROL = 10


class InfeasibleStateError(ValueError):
    """Initial state violates a hard bound of the problem."""


@dataclass
class MpcWeights:
    """Diagonal cost weights. Control rows penalize deviation from the
    gravity-compensating hover wrench and from the current joint angles."""

    pos: np.ndarray = field(default_factory=lambda: np.full(3, 12.0))
    rot: np.ndarray = field(default_factory=lambda: np.full(3, 10.0))
    vel: np.ndarray = field(default_factory=lambda: np.full(6, 0.1))
    joint: np.ndarray = field(default_factory=lambda: np.full(4, 0.1))
    force: np.ndarray = field(default_factory=lambda: np.full(3, 0.03))
    torque: np.ndarray = field(default_factory=lambda: np.full(3, 0.1))
    joint_cmd: np.ndarray = field(default_factory=lambda: np.full(4, 0.1))
    terminal_scale: float = 10.0
    collision: float = 100.0

    def __post_init__(self):
        for name in ("pos", "rot", "vel", "joint", "force", "torque",
                     "joint_cmd"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def control_diag(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque, self.joint_cmd])


@dataclass
class MpcConfig:
    horizon_s: float = 2.5
    steps: int = 50
    u_lb: np.ndarray = field(default_factory=lambda: np.array(
        [-0.6, -0.6, 0.0, -0.5, -0.5, -0.5, -2.6, -2.6, -2.6, -2.6]))
    u_ub: np.ndarray = field(default_factory=lambda: np.array(
        [0.6, 0.6, 2.0, 0.5, 0.5, 0.5, 2.6, 2.6, 2.6, 2.6]))
    v_max: float = 1.5
    omega_max: float = 6.0
    floor_z: float = 0.15
    base_radius: float = 0.45
    link_radius: float = 0.03
    clearance_margin: float = 0.05
    walls: list = field(default_factory=list)  # (unit normal (3,), offset b)
    theta_ref: np.ndarray = field(
        default_factory=lambda: np.array([0.5, -1.1, 0.6, 0.0]))
    mode: str = "rti"  # or "full"
    max_iters: int = 40
    kkt_tol: float = 1e-6

    def __post_init__(self):
        self.u_lb = np.asarray(self.u_lb, dtype=float)
        self.u_ub = np.asarray(self.u_ub, dtype=float)
        self.theta_ref = np.asarray(self.theta_ref, dtype=float)
        if self.mode not in ("rti", "full"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.steps < 1 or self.horizon_s <= 0:
            raise ValueError("horizon must have at least one positive step")

    @property
    def dt(self) -> float:
        return self.horizon_s / self.steps


@dataclass
class EeTarget:
    """Desired end-effector pose plus optional base velocity reference."""

    p: np.ndarray
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    v_ref: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.v_ref = np.asarray(self.v_ref, dtype=float)


@dataclass
class MpcState:
    """Controller state: base pose, generalized velocity, joint angles."""

    p: np.ndarray
    R: np.ndarray
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)

    def ee_pose(self, arm: ArmParams) -> Transform:
        return fk_ee(self.theta, arm, Transform(self.R, self.p))

    @staticmethod
    def from_base_arm(base: BaseState, theta: np.ndarray) -> "MpcState":
        return MpcState(base.p.copy(), base.R.copy(), base.v.copy(),
                        np.asarray(theta, dtype=float).copy())


@dataclass
class MpcControl:
    wrench: Wrench
    theta_cmd: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.wrench.as_vector(), self.theta_cmd])

    @staticmethod
    def from_vector(u: np.ndarray) -> "MpcControl":
        u = np.asarray(u, dtype=float)
        return MpcControl(Wrench(u[:3].copy(), u[3:6].copy(), FRAME_BODY),
                          u[6:].copy())


@dataclass
class Trajectory:
    """One rollout: states at nodes 0..N, controls at nodes 0..N-1."""

    P: np.ndarray
    R: np.ndarray
    V: np.ndarray
    TH: np.ndarray
    U: np.ndarray
    cost: float = 0.0


def _hinge(x):
    return np.maximum(x, 0.0)


def hover_control_reference(uav: UavParams, R: np.ndarray,
                            theta: np.ndarray) -> np.ndarray:
    """Control reference: gravity-compensating wrench, hold current joints."""
    f = R.T @ np.array([0.0, 0.0, uav.m_lin[2] * uav.gravity])
    return np.concatenate([f, np.zeros(3), theta])


def stage_cost(x: MpcState, u: np.ndarray, target: EeTarget,
               theta_ref: np.ndarray, weights: MpcWeights,
               arm: ArmParams, u_ref: np.ndarray | None = None) -> float:
    """Tracking part of the stage cost (collision penalties excluded)."""
    ee = x.ee_pose(arm)
    e_p = ee.translation - target.p
    e_r = rotation_error(ee.rotation, target.R)
    e_v = x.v - target.v_ref
    e_th = x.theta - np.asarray(theta_ref, dtype=float)
    c = float(e_p @ (weights.pos * e_p) + e_r @ (weights.rot * e_r)
              + e_v @ (weights.vel * e_v) + e_th @ (weights.joint * e_th))
    if u is not None:
        du = np.asarray(u, dtype=float) - (
            np.zeros(N_CONTROL) if u_ref is None else u_ref)
        c += float(du @ (weights.control_diag() * du))
    return c


class MpcProblem:
    """Transcribed horizon problem with batched rollout and linearization."""

    def __init__(self, uav: UavParams, arm: ArmParams, weights: MpcWeights,
                 config: MpcConfig, x0: MpcState, targets: list[EeTarget],
                 u_ref: np.ndarray | None = None):
        self.uav = uav
        self.arm = arm
        self.weights = weights
        self.config = config
        self.N = config.steps
        self.dt = config.dt
        self.nx = N_TANGENT
        self.nu = N_CONTROL
        self.u_lb = config.u_lb
        self.u_ub = config.u_ub
        self._beta = arm.beta
        # one RK4 step of the decoupled servo lag contracts (theta - cmd) by
        # the 4th-order Taylor polynomial of exp(-dt/beta), exactly
        z = -self.dt / arm.beta
        self._th_factor = 1 + z + z ** 2 / 2 + z ** 3 / 6 + z ** 4 / 24
        self._fd_h = 2.0 ** -13
        self._exp_plus = exp_so3(np.eye(3) * self._fd_h)
        self._exp_minus = exp_so3(-np.eye(3) * self._fd_h)
        self.set_initial_state(x0)
        self.set_targets(targets)
        self.u_ref = hover_control_reference(uav, x0.R, x0.theta) \
            if u_ref is None else np.asarray(u_ref, dtype=float)

    # -- problem data -----------------------------------------------------

    def set_initial_state(self, x0: MpcState):
        if not (np.all(np.isfinite(x0.p)) and np.all(np.isfinite(x0.v))
                and np.all(np.isfinite(x0.theta))):
            raise InfeasibleStateError("initial state contains non-finite values")
        if np.abs(x0.R.T @ x0.R - np.eye(3)).max() > 1e-6:
            raise InfeasibleStateError("initial rotation is not orthonormal")
        lims = self.arm.joint_limits
        if np.any(x0.theta < lims[:, 0] - 1e-9) or \
                np.any(x0.theta > lims[:, 1] + 1e-9):
            raise InfeasibleStateError("initial joint angles violate limits")
        if np.linalg.norm(x0.v[:3]) > self.config.v_max * 2.0:
            raise InfeasibleStateError("initial linear speed beyond bound")
        if np.linalg.norm(x0.v[3:]) > self.config.omega_max * 2.0:
            raise InfeasibleStateError("initial angular rate beyond bound")
        self.x0 = x0

    def set_targets(self, targets):
        if isinstance(targets, EeTarget):
            targets = [targets]
        if len(targets) == 1:
            targets = list(targets) * (self.N + 1)
        if len(targets) != self.N + 1:
            raise ValueError(f"need 1 or {self.N + 1} targets, got {len(targets)}")
        self.P_ref = np.stack([t.p for t in targets])
        self.R_ref = np.stack([t.R for t in targets])
        self.V_ref = np.stack([t.v_ref for t in targets])

    def refresh_control_reference(self):
        self.u_ref = hover_control_reference(self.uav, self.x0.R,
                                             self.x0.theta)

    # -- dynamics ----------------------------------------------------------

    def step_batch(self, P, R, V, TH, U):
        """RK4 over one horizon interval; broadcasts over leading axes.

        Base-block arithmetic matches rk4_step stage for stage; the servo
        block integrates in closed form (decoupled linear lag).
        """
        h = self.dt
        uav = self.uav
        f, tq, thc = U[..., 0:3], U[..., 3:6], U[..., 6:10]
        k1 = accel_arrays(R, V, f, tq, uav)
        dR1 = R @ hat(V[..., 3:6])
        V2 = V + 0.5 * h * k1
        R2 = R + 0.5 * h * dR1
        k2 = accel_arrays(R2, V2, f, tq, uav)
        dR2 = R2 @ hat(V2[..., 3:6])
        V3 = V + 0.5 * h * k2
        R3 = R + 0.5 * h * dR2
        k3 = accel_arrays(R3, V3, f, tq, uav)
        dR3 = R3 @ hat(V3[..., 3:6])
        V4 = V + h * k3
        R4 = R + h * dR3
        k4 = accel_arrays(R4, V4, f, tq, uav)
        dR4 = R4 @ hat(V4[..., 3:6])
        h6 = h / 6.0
        P1 = P + h6 * (V[..., 0:3] + 2 * V2[..., 0:3]
                       + 2 * V3[..., 0:3] + V4[..., 0:3])
        R1 = orthonormalize_fast(R + h6 * (dR1 + 2 * dR2 + 2 * dR3 + dR4))
        V1 = V + h6 * (k1 + 2 * k2 + 2 * k3 + k4)
        TH1 = thc + (TH - thc) * self._th_factor
        return P1, R1, V1, TH1

    def state_diff(self, P2, R2, V2, TH2, P1, R1, V1, TH1):
        """Tangent difference (state2 minus state1), batched."""
        drot = log_so3(np.swapaxes(R1, -1, -2) @ R2)
        return np.concatenate(
            [P2 - P1, drot, V2 - V1, TH2 - TH1], axis=-1)

    def feedback_diff(self, P2, R2, V2, TH2, P1, R1, V1, TH1):
        """Like state_diff but with the antisymmetric-part rotation chart:
        agrees with the log chart to first order and skips the trig, which
        is what the feedback gains care about."""
        drot = rotation_error(R2, R1)
        return np.concatenate(
            [P2 - P1, drot, V2 - V1, TH2 - TH1], axis=-1)

    def state_add(self, P, R, V, TH, dx):
        return (P + dx[..., 0:3], R @ exp_so3(dx[..., 3:6]),
                V + dx[..., 6:12], TH + dx[..., 12:16])

    # -- cost --------------------------------------------------------------

    def _pose_rows(self, P, R, TH):
        """Residual rows that depend on pose/joints, batched.

        Rows: weighted EE position error (3), EE attitude error (3),
        EE floor clearance, base floor clearance, EE-body clearance,
        one row per wall plane.
        """
        cfg, w = self.config, self.weights
        # refs broadcast against batch axes that follow the node axis
        pE, RE = fk_ee_arrays(P, R, TH, self.arm)
        shape_ref = self.P_ref.shape[:1] + (1,) * (pE.ndim - 2) + (3,)
        P_ref = self.P_ref.reshape(shape_ref)
        R_ref = self.R_ref.reshape(shape_ref + (3,))
        r_pos = np.sqrt(w.pos) * (pE - P_ref)
        r_rot = np.sqrt(w.rot) * rotation_error(RE, R_ref)
        sw = np.sqrt(w.collision)
        lim = cfg.floor_z + cfg.clearance_margin
        r_floor_ee = sw * _hinge(lim + cfg.link_radius - pE[..., 2])
        r_floor_base = sw * _hinge(lim + cfg.base_radius - P[..., 2])
        dist = np.linalg.norm(pE - P, axis=-1)
        r_body = sw * _hinge(cfg.base_radius + cfg.link_radius
                             + cfg.clearance_margin - dist)
        rows = [r_pos, r_rot, r_floor_ee[..., None], r_floor_base[..., None],
                r_body[..., None]]
        for normal, offset in cfg.walls:
            n = np.asarray(normal, dtype=float)
            viol = _hinge(offset + cfg.clearance_margin - pE @ n)
            rows.append(sw * viol[..., None])
        lead = np.broadcast_shapes(*(r.shape[:-1] for r in rows))
        rows = [np.broadcast_to(r, lead + r.shape[-1:]) for r in rows]
        return np.concatenate(rows, axis=-1)

    def _vel_rows(self, V):
        cfg, w = self.config, self.weights
        shape_ref = self.V_ref.shape[:1] + (1,) * (V.ndim - 2) + (6,)
        r_vel = np.sqrt(w.vel) * (V - self.V_ref.reshape(shape_ref))
        sw = np.sqrt(w.collision)
        r_speed = sw * _hinge(np.linalg.norm(V[..., :3], axis=-1) - cfg.v_max)
        r_omega = sw * _hinge(np.linalg.norm(V[..., 3:], axis=-1)
                              - cfg.omega_max)
        rows = [r_vel, r_speed[..., None], r_omega[..., None]]
        lead = np.broadcast_shapes(*(r.shape[:-1] for r in rows))
        rows = [np.broadcast_to(r, lead + r.shape[-1:]) for r in rows]
        return np.concatenate(rows, axis=-1)

    def _joint_rows(self, TH):
        ref = self.config.theta_ref
        return np.sqrt(self.weights.joint) * (TH - ref)

    def _control_rows(self, U):
        return np.sqrt(self.weights.control_diag()) * (U - self.u_ref)

    def node_weights(self):
        """sqrt scaling per node: terminal state rows are upweighted."""
        s = np.ones(self.N + 1)
        s[-1] = np.sqrt(self.weights.terminal_scale)
        return s

    def trajectory_cost(self, P, R, V, TH, U):
        """Total cost; accepts extra batch axes after the node axis."""
        scale = self.node_weights()
        scale = scale.reshape((self.N + 1,) + (1,) * (P.ndim - 2))
        rp = self._pose_rows(P, R, TH) * scale[..., None]
        rv = self._vel_rows(V) * scale[..., None]
        rj = self._joint_rows(TH) * scale[..., None]
        ru = self._control_rows(U)
        axes = (0, -1)
        return (np.sum(rp * rp, axis=axes) + np.sum(rv * rv, axis=axes)
                + np.sum(rj * rj, axis=axes) + np.sum(ru * ru, axis=axes))

    # -- rollout and linearization ------------------------------------------

    def default_controls(self) -> np.ndarray:
        u0 = np.clip(self.u_ref, self.u_lb, self.u_ub)
        return np.tile(u0, (self.N, 1))

    def rollout(self, U: np.ndarray) -> Trajectory:
        N = self.N
        P = np.empty((N + 1, 3))
        R = np.empty((N + 1, 3, 3))
        V = np.empty((N + 1, 6))
        TH = np.empty((N + 1, 4))
        P[0], R[0], V[0], TH[0] = (self.x0.p, self.x0.R, self.x0.v,
                                   self.x0.theta)
        for k in range(N):
            P[k + 1], R[k + 1], V[k + 1], TH[k + 1] = self.step_batch(
                P[k], R[k], V[k], TH[k], U[k])
        cost = float(self.trajectory_cost(P, R, V, TH, U))
        return Trajectory(P, R, V, TH, np.array(U, dtype=float), cost)

    def forward_pass(self, ref: Trajectory, k_ff: np.ndarray, K_fb: np.ndarray,
                     alphas: np.ndarray):
        """Roll out feedback-corrected controls for several step sizes at
        once. Returns (costs, candidate batch)."""
        A = len(alphas)
        N = self.N
        P = np.empty((N + 1, A, 3))
        R = np.empty((N + 1, A, 3, 3))
        V = np.empty((N + 1, A, 6))
        TH = np.empty((N + 1, A, 4))
        U = np.empty((N, A, self.nu))
        P[0] = self.x0.p
        R[0] = self.x0.R
        V[0] = self.x0.v
        TH[0] = self.x0.theta
        al = np.asarray(alphas, dtype=float)[:, None]
        for k in range(N):
            dx = self.feedback_diff(P[k], R[k], V[k], TH[k],
                                    ref.P[k], ref.R[k], ref.V[k], ref.TH[k])
            u = ref.U[k] + al * k_ff[k] + dx @ K_fb[k].T
            U[k] = np.clip(u, self.u_lb, self.u_ub)
            P[k + 1], R[k + 1], V[k + 1], TH[k + 1] = self.step_batch(
                P[k], R[k], V[k], TH[k], U[k])
        costs = self.trajectory_cost(P, R, V, TH, U)
        return costs, (P, R, V, TH, U)

    def select_candidate(self, batch, i: int) -> Trajectory:
        P, R, V, TH, U = batch
        return Trajectory(np.ascontiguousarray(P[:, i]),
                          np.ascontiguousarray(R[:, i]),
                          np.ascontiguousarray(V[:, i]),
                          np.ascontiguousarray(TH[:, i]),
                          np.ascontiguousarray(U[:, i]))

    def linearize(self, traj: Trajectory):
        """Dynamics Jacobians and Gauss-Newton cost expansion along traj.

        Returns dict with A (N,16,16), B (N,16,10), lx (N+1,16),
        lu (N,10), lxx (N+1,16,16), luu (N,10,10).
        """
        N, nx, nu, h = self.N, self.nx, self.nu, self._fd_h
        P, R, V, TH, U = traj.P, traj.R, traj.V, traj.TH, traj.U

        # ---- dynamics Jacobians, all nodes batched ---------------------
        # Only rotation, twist and wrench need finite differences: position
        # enters the step additively (identity column block), the servo lag
        # is linear with a known factor, and base and joint blocks do not
        # couple inside a single step.
        n_dir = 15  # 3 rot + 6 twist + 6 wrench
        Pp = np.broadcast_to(P[:N, None, None], (N, n_dir, 2, 3))
        Rp = np.broadcast_to(R[:N, None, None], (N, n_dir, 2, 3, 3)).copy()
        Vp = np.broadcast_to(V[:N, None, None], (N, n_dir, 2, 6)).copy()
        THp = np.broadcast_to(TH[:N, None, None], (N, n_dir, 2, 4))
        Up = np.broadcast_to(U[:, None, None], (N, n_dir, 2, nu)).copy()
        for i in range(3):
            Rp[:, i, 0] = R[:N] @ self._exp_plus[i]
            Rp[:, i, 1] = R[:N] @ self._exp_minus[i]
        for i in range(6):
            Vp[:, 3 + i, 0, i] += h
            Vp[:, 3 + i, 1, i] -= h
            Up[:, 9 + i, 0, i] += h
            Up[:, 9 + i, 1, i] -= h
        Pn, Rn, Vn, _ = self.step_batch(Pp, Rp, Vp, THp, Up)
        dp = Pn - P[1:, None, None]
        drot = log_so3(np.swapaxes(R[1:, None, None], -1, -2) @ Rn)
        dv = Vn - V[1:, None, None]
        dx = np.concatenate([dp, drot, dv], axis=-1)
        jac = (dx[:, :, 0, :] - dx[:, :, 1, :]) / (2.0 * h)  # (N, n_dir, 12)
        A = np.zeros((N, nx, nx))
        B = np.zeros((N, nx, nu))
        A[:, :12, 3:12] = np.swapaxes(jac[:, :9, :], 1, 2)
        idx = np.arange(3)
        A[:, idx, idx] = 1.0
        idx = np.arange(12, 16)
        A[:, idx, idx] = self._th_factor
        B[:, :12, :6] = np.swapaxes(jac[:, 9:, :], 1, 2)
        B[:, idx, idx - 6] = 1.0 - self._th_factor

        # ---- cost expansion -------------------------------------------
        scale = self.node_weights()
        # pose-dependent rows: value + FD Jacobian over the 10 pose dims
        r_pose = self._pose_rows(P, R, TH) * scale[:, None]
        n_pose = r_pose.shape[-1]
        M = N + 1
        pose_dims = [0, 1, 2, 3, 4, 5, 12, 13, 14, 15]
        Pq = np.broadcast_to(P[:, None, None], (M, 10, 2, 3)).copy()
        Rq = np.broadcast_to(R[:, None, None], (M, 10, 2, 3, 3)).copy()
        THq = np.broadcast_to(TH[:, None, None], (M, 10, 2, 4)).copy()
        for i in range(3):
            Pq[:, i, 0, i] += h
            Pq[:, i, 1, i] -= h
            Rq[:, 3 + i, 0] = R @ self._exp_plus[i]
            Rq[:, 3 + i, 1] = R @ self._exp_minus[i]
        for i in range(4):
            THq[:, 6 + i, 0, i] += h
            THq[:, 6 + i, 1, i] -= h
        rq = self._pose_rows(Pq, Rq, THq) * scale[:, None, None, None]
        Jpose_t = (rq[:, :, 0, :] - rq[:, :, 1, :]) / (2.0 * h)  # (M,10,rows)

        Jx = np.zeros((M, n_pose + 8 + 4, nx))
        r_all = np.empty((M, n_pose + 8 + 4))
        r_all[:, :n_pose] = r_pose
        Jx[:, :n_pose, :][:, :, pose_dims] = np.swapaxes(Jpose_t, 1, 2)
        # velocity rows: 6 tracking + 2 hinge
        r_velrows = self._vel_rows(V) * scale[:, None]
        r_all[:, n_pose:n_pose + 8] = r_velrows
        sqv = np.sqrt(self.weights.vel)
        for i in range(6):
            Jx[:, n_pose + i, 6 + i] = sqv[i] * scale
        sw = np.sqrt(self.weights.collision)
        vlin = V[:, :3]
        speed = np.linalg.norm(vlin, axis=-1)
        act = speed > self.config.v_max
        if act.any():
            gdir = np.where(act[:, None], vlin / np.maximum(speed, 1e-12)[:, None], 0.0)
            Jx[:, n_pose + 6, 6:9] = sw * gdir * scale[:, None]
        om = V[:, 3:]
        rate = np.linalg.norm(om, axis=-1)
        act = rate > self.config.omega_max
        if act.any():
            gdir = np.where(act[:, None], om / np.maximum(rate, 1e-12)[:, None], 0.0)
            Jx[:, n_pose + 7, 9:12] = sw * gdir * scale[:, None]
        # joint rows
        r_all[:, n_pose + 8:] = self._joint_rows(TH) * scale[:, None]
        sqj = np.sqrt(self.weights.joint)
        for i in range(4):
            Jx[:, n_pose + 8 + i, 12 + i] = sqj[i] * scale

        lx = 2.0 * np.matmul(r_all[:, None, :], Jx)[:, 0, :]
        lxx = 2.0 * np.matmul(np.swapaxes(Jx, 1, 2), Jx)

        # control rows are affine with constant diagonal Jacobian
        squ = np.sqrt(self.weights.control_diag())
        ru = self._control_rows(U)
        lu = 2.0 * squ * ru
        luu = np.broadcast_to(np.diag(2.0 * squ * squ), (N, nu, nu))
        return {"A": A, "B": B, "lx": lx, "lu": lu, "lxx": lxx, "luu": luu,
                "cost": traj.cost}


def build_problem(x0: MpcState, targets, weights: MpcWeights,
                  config: MpcConfig, uav: UavParams,
                  arm: ArmParams) -> MpcProblem:
    """Validate the initial state and assemble the horizon problem."""
    return MpcProblem(uav, arm, weights, config, x0, targets)
