"""Comparison controllers: IK + cascade PID, and direct force allocation.

Two alternatives to the receding-horizon controller, used by the tracking
benchmark. Both consume the same EeTarget stream and emit the same
MpcControl, so the closed-loop runner treats all controllers uniformly.
The "adaptation off" ablation is not here: that is the same MPC path with
the augmentation flag disabled in the run config.

ik_pid: resolve the EE target to a (base pose, joint angle) setpoint by
damped least squares on the 10-DoF kinematic chain, then track the base
setpoint with a position->velocity->wrench cascade. The arm setpoint goes
straight to the servos.

dffc: PD law on the EE pose error gives a desired EE acceleration, which a
weighted pseudo-inverse of the EE Jacobian distributes over base and arm;
the base share becomes a wrench through the base inertia, the arm share is
integrated into joint commands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm_model import ArmParams, ee_jacobian, fk_ee
from .geometry import Transform, exp_so3, orthonormalize_fast, rotation_error
from .mpc.problem import EeTarget, MpcControl, MpcState
from .uav_dynamics import FRAME_BODY, UavParams, Wrench

# actuation bounds shared with the MPC transcription
U_LB = np.array([-0.6, -0.6, 0.0, -0.5, -0.5, -0.5])
U_UB = np.array([0.6, 0.6, 2.0, 0.5, 0.5, 0.5])

HOME_THETA = np.array([0.5, -1.1, 0.6, 0.0])


# ---------------------------------------------------------------------------
# inverse kinematics on the full chain


@dataclass
class IkResult:
    p_base: np.ndarray
    R_base: np.ndarray
    theta: np.ndarray
    reachable: bool
    err_pos: float
    err_rot: float


def ik_plan(target: EeTarget, guess: MpcState, arm: ArmParams,
            theta_ref: np.ndarray = HOME_THETA, iters: int = 20,
            damping: float = 0.01, tol: float = 1e-5,
            null_gains: tuple = (0.2, 0.1)) -> IkResult:
    """Damped-least-squares IK over base pose + joint angles.

    The chain is redundant (10 DoF for a 6-DoF task), so the base rows get
    a higher motion penalty than the joints (move the arm before the
    vehicle) and the 4-dim null space is used to pull the joints toward
    theta_ref and the base attitude toward level. Starting from `guess`
    keeps consecutive solutions on the same branch.
    """
    p = guess.p.astype(float).copy()
    R = guess.R.astype(float).copy()
    th = guess.theta.astype(float).copy()
    lims = arm.joint_limits
    # inverse motion weights: base translation/attitude expensive, arm cheap
    w_base = np.concatenate([np.full(3, 0.05), np.full(3, 0.05), np.ones(4)])
    k_level, k_home = null_gains
    err_pos = err_rot = np.inf
    for _ in range(iters):
        pose = fk_ee(th, arm, Transform(R, p))
        e = np.concatenate([target.p - pose.translation,
                            pose.rotation @ rotation_error(target.R,
                                                           pose.rotation)])
        err_pos = float(np.linalg.norm(e[:3]))
        err_rot = float(np.linalg.norm(e[3:]))
        if err_pos < tol and err_rot < 10 * tol:
            break
        J = ee_jacobian(th, arm, Transform(R, p))
        bias = np.concatenate([np.zeros(3),
                               -k_level * rotation_error(R, np.eye(3)),
                               k_home * (theta_ref - th)])
        w_inv = w_base.copy()
        for _retry in range(2):
            JW = J * w_inv
            K = JW @ J.T
            K.flat[::7] += damping * damping
            dq = w_inv * (J.T @ np.linalg.solve(K, e))
            # null-space pull: joints toward reference, base toward level;
            # kept weak so it settles redundancy without stalling the task
            dq += bias - w_inv * (J.T @ np.linalg.solve(K, J @ bias))
            # joints pegged at a limit must not keep soaking up the task:
            # freeze any outward-pushing column and re-solve once
            pegged = (((th <= lims[:, 0] + 1e-12) & (dq[6:] < 0))
                      | ((th >= lims[:, 1] - 1e-12) & (dq[6:] > 0)))
            if not np.any(pegged):
                break
            w_inv[6:][pegged] = 1e-9
        p += dq[:3]
        R = orthonormalize_fast(R @ exp_so3(dq[3:6]))
        th = np.clip(th + dq[6:], lims[:, 0], lims[:, 1])
    reachable = err_pos < 1e-4 and err_rot < 1e-3
    return IkResult(p, R, th, reachable, err_pos, err_rot)


# ---------------------------------------------------------------------------
# cascade PID on the base


@dataclass
class PidGains:
    """Cascade gains in acceleration units (mass/inertia applied afterwards).

    Outer loop maps pose error to a velocity reference, inner loop maps
    velocity error to acceleration. Tuned once against a step-response
    check (no overshoot past 20%, position bandwidth above 0.5 Hz) and
    frozen here.
    """

    kp_pos: np.ndarray = field(default_factory=lambda: np.full(3, 4.0))
    kp_rot: np.ndarray = field(default_factory=lambda: np.full(3, 6.0))
    kv_lin: np.ndarray = field(default_factory=lambda: np.full(3, 16.0))
    kv_ang: np.ndarray = field(default_factory=lambda: np.full(3, 24.0))
    ki_lin: np.ndarray = field(default_factory=lambda: np.full(3, 4.0))
    ki_ang: np.ndarray = field(default_factory=lambda: np.zeros(3))
    i_clamp: float = 1.0

    def __post_init__(self):
        for name in ("kp_pos", "kp_rot", "kv_lin", "kv_ang", "ki_lin",
                     "ki_ang"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
        if self.i_clamp <= 0:
            raise ValueError("integral clamp must be positive")


@dataclass
class PidState:
    i_lin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    i_ang: np.ndarray = field(default_factory=lambda: np.zeros(3))


def cascade_pid_step(p_sp: np.ndarray, R_sp: np.ndarray, state,
                     gains: PidGains, uav: UavParams, mem: PidState,
                     dt: float, u_lb: np.ndarray = U_LB,
                     u_ub: np.ndarray = U_UB):
    """One 100 Hz step of the base-pose cascade; returns (f_body, tq_body).

    Outer loop: velocity reference from pose error. Inner loop: acceleration
    from velocity error plus a clamped integral, scaled by mass/inertia,
    gravity feedforward added on the force side. Integrators freeze while
    the corresponding axis is saturated (anti-windup).
    """
    v_ref = gains.kp_pos * (p_sp - state.p)
    e_rot = rotation_error(R_sp, state.R)   # body frame, drives R toward R_sp
    w_ref = gains.kp_rot * e_rot
    ev = v_ref - state.v[:3]
    ew = w_ref - state.v[3:]
    a_lin = gains.kv_lin * ev + gains.ki_lin * mem.i_lin
    a_ang = gains.kv_ang * ew + gains.ki_ang * mem.i_ang
    f_world = uav.m_lin * a_lin + uav.hover_force_world()
    f_body = state.R.T @ f_world
    tq = uav.inertia @ a_ang
    f_clip = np.clip(f_body, u_lb[:3], u_ub[:3])
    tq_clip = np.clip(tq, u_lb[3:], u_ub[3:])
    free_f = np.all(f_clip == f_body)
    free_t = np.all(tq_clip == tq)
    if free_f:
        mem.i_lin = np.clip(mem.i_lin + dt * ev, -gains.i_clamp,
                            gains.i_clamp)
    if free_t:
        mem.i_ang = np.clip(mem.i_ang + dt * ew, -gains.i_clamp,
                            gains.i_clamp)
    return f_clip, tq_clip


class IkPidController:
    """EE tracking via IK setpoints and the base cascade, 100 Hz."""

    def __init__(self, uav: UavParams, arm: ArmParams,
                 gains: PidGains | None = None, target_fn=None,
                 theta_ref: np.ndarray = HOME_THETA, dt: float = 0.01):
        self.uav = uav
        self.arm = arm
        self.gains = gains if gains is not None else PidGains()
        self.target_fn = target_fn
        self.theta_ref = np.asarray(theta_ref, dtype=float)
        self.dt = dt
        self.mem = PidState()
        self._ik_seed: MpcState | None = None
        self.unreachable = 0

    def set_target(self, target: EeTarget):
        self.target_fn = lambda t: target

    def reset(self):
        self.mem = PidState()
        self._ik_seed = None
        self.unreachable = 0

    def update(self, t: float, state: MpcState) -> MpcControl:
        target = self.target_fn(t)
        seed = self._ik_seed if self._ik_seed is not None else state
        sol = ik_plan(target, seed, self.arm, self.theta_ref, iters=4)
        if not sol.reachable:
            self.unreachable += 1
        self._ik_seed = MpcState(sol.p_base, sol.R_base, np.zeros(6),
                                 sol.theta)
        f, tq = cascade_pid_step(sol.p_base, sol.R_base, state, self.gains,
                                 self.uav, self.mem, self.dt)
        return MpcControl(Wrench(f, tq, FRAME_BODY), sol.theta)


# ---------------------------------------------------------------------------
# direct force allocation


@dataclass
class DffcGains:
    """EE-space PD plus the 10-dim allocation weights (diagonal).

    Larger weight = less motion assigned to that degree of freedom. The
    default makes the base do the bulk carrying and keeps the wrist quiet.
    """

    kp: np.ndarray = field(default_factory=lambda: np.concatenate(
        [np.full(3, 8.0), np.full(3, 10.0)]))
    kd: np.ndarray = field(default_factory=lambda: np.concatenate(
        [np.full(3, 5.0), np.full(3, 6.0)]))
    ki: np.ndarray = field(default_factory=lambda: np.full(6, 4.0))
    i_clamp: float = 1.0
    # leak on the joint-rate integrator: without it any persistent EE error
    # ramps theta_cmd into the limits (double integrator windup)
    rate_leak: float = 3.0
    # posture regularization, applied in the task null space: the EE task
    # pins 6 of 10 DoF, and the free internal motion (base pitching over
    # while the arm folds to keep the EE in place) otherwise drifts until
    # the tilted base runs out of lateral force authority
    level_gain: float = 4.0
    level_damp: float = 3.0
    home_gain: float = 2.0
    home_damp: float = 1.0
    weights: np.ndarray = field(default_factory=lambda: np.concatenate(
        [np.ones(3), np.full(3, 2.0), np.full(4, 6.0)]))
    damping: float = 0.05
    cond_limit: float = 1e6

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=float)
        self.kd = np.asarray(self.kd, dtype=float)
        self.ki = np.asarray(self.ki, dtype=float)
        if np.any(self.kp < 0) or np.any(self.kd < 0) or np.any(self.ki < 0):
            raise ValueError("PID gains must be nonnegative")
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ValueError("allocation weights must be positive")
        if self.rate_leak < 0:
            raise ValueError("rate_leak must be nonnegative")


@dataclass
class DffcState:
    theta_cmd: np.ndarray | None = None
    jrate: np.ndarray = field(default_factory=lambda: np.zeros(4))
    i_err: np.ndarray = field(default_factory=lambda: np.zeros(6))
    ill_conditioned: int = 0


def dffc_step(target: EeTarget, state: MpcState, gains: DffcGains,
              uav: UavParams, arm: ArmParams, mem: DffcState,
              dt: float = 0.01, u_lb: np.ndarray = U_LB,
              u_ub: np.ndarray = U_UB) -> MpcControl:
    """EE-error PD -> desired EE acceleration -> weighted allocation.

    The joint-rate share is integrated twice (acceleration -> rate ->
    command) so the servo chain sees a smooth position command. Near
    singular configurations the allocation damping is raised tenfold and
    the event counted.
    """
    if mem.theta_cmd is None:
        mem.theta_cmd = state.theta.copy()
    base = Transform(state.R, state.p)
    pose = fk_ee(state.theta, arm, base)
    J = ee_jacobian(state.theta, arm, base)
    jr = (mem.theta_cmd - state.theta) / arm.beta  # servo-model rate estimate
    v_ee = J @ np.concatenate([state.v, jr])
    e = np.concatenate([target.p - pose.translation,
                        pose.rotation @ rotation_error(target.R,
                                                       pose.rotation)])
    a_star = gains.kp * e + gains.kd * (target.v_ref - v_ee) \
        + gains.ki * mem.i_err

    w_inv = 1.0 / gains.weights
    JW = J * w_inv
    K = JW @ J.T
    lam = gains.damping
    if np.linalg.cond(K) > gains.cond_limit:
        mem.ill_conditioned += 1
        lam *= 10.0
    K.flat[::7] += lam * lam
    qdd = w_inv * (J.T @ np.linalg.solve(K, a_star))
    # null-space posture pull: base toward level, joints toward home,
    # both velocity-damped; projected so the EE task is untouched
    b = np.zeros(J.shape[1])
    b[3:6] = -gains.level_gain * rotation_error(state.R, np.eye(3)) \
        - gains.level_damp * state.v[3:]
    b[6:] = gains.home_gain * (HOME_THETA - state.theta) \
        - gains.home_damp * jr
    qdd += b - w_inv * (J.T @ np.linalg.solve(K, J @ b))

    f_world = uav.m_lin * qdd[:3] + uav.hover_force_world()
    f_raw = state.R.T @ f_world
    tq_raw = uav.inertia @ qdd[3:6]
    f_body = np.clip(f_raw, u_lb[:3], u_ub[:3])
    tq = np.clip(tq_raw, u_lb[3:], u_ub[3:])
    # integrate EE error only while the base has authority left
    if np.array_equal(f_body, f_raw) and np.array_equal(tq, tq_raw):
        mem.i_err = np.clip(mem.i_err + dt * e,
                            -gains.i_clamp, gains.i_clamp)
    mem.jrate = np.clip(
        mem.jrate + dt * (qdd[6:] - gains.rate_leak * mem.jrate),
        -arm.rate_limit, arm.rate_limit)
    lims = arm.joint_limits
    mem.theta_cmd = np.clip(mem.theta_cmd + dt * mem.jrate,
                            lims[:, 0], lims[:, 1])
    return MpcControl(Wrench(f_body, tq, FRAME_BODY), mem.theta_cmd.copy())


class DffcController:
    """Direct force allocation wrapper with the common update() interface."""

    def __init__(self, uav: UavParams, arm: ArmParams,
                 gains: DffcGains | None = None, target_fn=None,
                 dt: float = 0.01):
        self.uav = uav
        self.arm = arm
        self.gains = gains if gains is not None else DffcGains()
        self.target_fn = target_fn
        self.dt = dt
        self.mem = DffcState()

    def set_target(self, target: EeTarget):
        self.target_fn = lambda t: target

    def reset(self):
        self.mem = DffcState()

    def update(self, t: float, state: MpcState) -> MpcControl:
        return dffc_step(self.target_fn(t), state, self.gains, self.uav,
                         self.arm, self.mem, self.dt)
