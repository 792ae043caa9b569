"""Closed-loop rollout harness shared by the benchmark CLI and teleop.

Wires a controller to the ground-truth plant at the 100 Hz control rate,
optionally folds the adaptive wrench/joint compensation into the commands,
and records one trace row per control cycle. Tracking statistics are taken
on the true end-effector position against the sampled reference.

Per-tick order (the estimator predictors rely on it): measure the plant at
the tick boundary, compute the raw command, augment it, adapt the estimators
on the measurement and the command actually applied, then step the plant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .arm_model import ArmParams, fk_ee
from .baselines import DffcController, DffcGains, HOME_THETA, \
    IkPidController, PidGains, ik_plan
from .geometry import RotationLogError, Transform, log_so3, quat_from_matrix
from .l1 import L1BaseEstimator, L1Config, L1JointEstimator
from .mpc.controller import EeMpcController
from .mpc.problem import EeTarget, MpcConfig, MpcState, MpcWeights
from .plant import DisturbanceConfig, Plant, PlantDivergence, TICK_DT, \
    benchmark_disturbances
from .trajectories import ReferenceTrajectory, make_trajectory, position_rmse
from .uav_dynamics import UavParams

CONTROLLERS = ("mpc_l1", "mpc", "ik_pid", "dffc")

# faults that count as "the controller fell over", not harness bugs
_CONTROLLER_ERRORS = (FloatingPointError, RotationLogError,
                      np.linalg.LinAlgError)


def trace_columns() -> list:
    """Column names of the per-cycle run trace, in file order."""
    base = ["px", "py", "pz", "qw", "qx", "qy", "qz",
            "vx", "vy", "vz", "wx", "wy", "wz",
            "theta1", "theta2", "theta3", "theta4"]
    cols = ["t"]
    cols += base
    cols += ["ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz"]
    cols += ["est_" + c for c in base]
    cols += ["cmd_fx", "cmd_fy", "cmd_fz", "cmd_tx", "cmd_ty", "cmd_tz",
             "cmd_theta1", "cmd_theta2", "cmd_theta3", "cmd_theta4"]
    cols += ["ext_fx", "ext_fy", "ext_fz", "ext_tx", "ext_ty", "ext_tz"]
    cols += ["dhat1", "dhat2", "dhat3", "dhat4"]
    cols += ["ref_x", "ref_y", "ref_z", "err_pos", "err_rot", "mpc_cost"]
    return cols


TRACE_COLUMNS = trace_columns()


def _flat_state(s: MpcState) -> list:
    q = quat_from_matrix(s.R)
    return [*s.p, *q, *s.v, *s.theta]


@dataclass
class RunResult:
    controller: str = ""
    trajectory: str = ""
    seed: int = 0
    rmse_cm: float = float("nan")
    max_err_cm: float = float("nan")
    err: np.ndarray | None = None      # (n, 3) EE position error, meters
    completed: bool = False
    fail_reason: str = ""
    duration: float = 0.0              # simulated time actually covered
    cycles: int = 0
    solve_ms: tuple = ()               # (median, p90) for MPC runs
    trace: np.ndarray | None = None    # rows x TRACE_COLUMNS
    extras: dict = field(default_factory=dict)

    def write_trace(self, path):
        if self.trace is None:
            raise ValueError("run was executed with trace=False")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in np.asarray(self.trace):
                w.writerow([f"{x:.9g}" for x in row])


def make_controller(name: str, uav: UavParams, arm: ArmParams, target_fn,
                    resolve_hz: float = 25.0,
                    weights: MpcWeights | None = None,
                    mpc_config: MpcConfig | None = None,
                    pid_gains: PidGains | None = None,
                    dffc_gains: DffcGains | None = None):
    """Controller registry. mpc_l1 and mpc build the identical MPC; the
    adaptive augmentation is wired by the rollout, not the controller."""
    if name in ("mpc_l1", "mpc"):
        return EeMpcController(uav, arm, weights=weights, config=mpc_config,
                               target_fn=target_fn, resolve_hz=resolve_hz)
    if name == "ik_pid":
        return IkPidController(uav, arm, gains=pid_gains, target_fn=target_fn)
    if name == "dffc":
        return DffcController(uav, arm, gains=dffc_gains, target_fn=target_fn)
    raise ValueError(f"unknown controller {name!r}; expected {CONTROLLERS}")


def uses_adaptation(name: str) -> bool:
    return name == "mpc_l1"


def initial_state_on(target: EeTarget, arm: ArmParams,
                     theta_ref: np.ndarray = HOME_THETA):
    """Base pose, velocity and joint angles putting the EE on the target.

    Runs start on-reference and at the reference velocity so the statistics
    measure tracking rather than the initial approach; a still start against
    a moving reference charges every controller a velocity-step transient.
    """
    offset = fk_ee(theta_ref, arm, Transform()).translation
    guess = MpcState(p=target.p - offset, R=np.eye(3), v=np.zeros(6),
                     theta=theta_ref.copy())
    sol = ik_plan(target, guess, arm, theta_ref=theta_ref, iters=40)
    if not sol.reachable:
        raise ValueError("initial target unreachable: residual "
                         f"{sol.err_pos:.3g} m / {sol.err_rot:.3g} rad")
    v0 = np.zeros(6)
    v0[:3] = target.v_ref[:3]
    return sol.p_base, sol.R_base, v0, sol.theta


def rollout(plant: Plant, controller, target_fn, duration: float = 60.0,
            base_est: L1BaseEstimator | None = None,
            joint_est: L1JointEstimator | None = None,
            trace: bool = True) -> RunResult:
    """Run the loop for the given sim duration; never raises on instability.

    target_fn maps absolute time to an EeTarget (the controller holds its
    own reference to it; here it is only used for the trace and scoring).
    """
    n_ticks = int(round(duration / TICK_DT))
    rows = []
    ts = np.empty(n_ticks)
    p_ee = np.empty((n_ticks, 3))
    p_ref = np.empty((n_ticks, 3))
    completed, reason = True, ""
    n_done = 0
    for k in range(n_ticks):
        t = k * TICK_DT
        s = plant.measure()
        if not (np.isfinite(s.v).all() and np.isfinite(s.p).all()):
            completed, reason = False, f"non-finite state at t={t:.2f}"
            break
        try:
            u = controller.update(t, s)
        except _CONTROLLER_ERRORS as err:
            completed, reason = False, f"controller fault at t={t:.2f}: {err}"
            break
        f, tq = u.wrench.force, u.wrench.torque
        th_cmd = u.theta_cmd
        if base_est is not None:
            f, tq = base_est.augment(f, tq, s.R, plant.u_lb, plant.u_ub)
        if joint_est is not None:
            th_cmd = joint_est.augment(th_cmd)
        if base_est is not None:
            base_est.update(s, f, tq)
        if joint_est is not None:
            joint_est.update(s.theta, th_cmd)

        truth = plant.truth()
        ee = fk_ee(truth.theta, plant.arm_true,
                   Transform(truth.R, truth.p))
        target = target_fn(t)
        ts[k] = t
        p_ee[k] = ee.translation
        p_ref[k] = target.p
        n_done = k + 1
        if trace:
            rows.append(_trace_row(t, truth, ee, s, f, tq, th_cmd,
                                   base_est, joint_est, target, controller))
        try:
            plant.step(f, tq, th_cmd)
        except PlantDivergence as err:
            completed, reason = False, str(err)
            break
    n = n_done
    res = RunResult(completed=completed, fail_reason=reason,
                    duration=n * TICK_DT, cycles=n)
    if trace and rows:
        res.trace = np.asarray(rows)
    if n >= 2:
        rmse, err = position_rmse(ts[:n], p_ref[:n], ts[:n], p_ee[:n])
        res.rmse_cm = rmse
        res.err = err
        res.max_err_cm = 100.0 * float(np.max(np.linalg.norm(err, axis=1)))
    solve_times = getattr(controller, "solve_times", None)
    if solve_times:
        ms = 1e3 * np.asarray(solve_times)
        res.solve_ms = (float(np.median(ms)), float(np.percentile(ms, 90)))
    return res


def _trace_row(t, truth, ee, est, f, tq, th_cmd, base_est, joint_est,
               target, controller):
    sigma = base_est.sigma if base_est is not None else np.zeros(6)
    dhat = joint_est.d_hat if joint_est is not None else np.zeros(4)
    e_pos = float(np.linalg.norm(ee.translation - target.p))
    try:
        e_rot = float(np.linalg.norm(log_so3(target.R.T @ ee.rotation)))
    except RotationLogError:
        e_rot = np.pi
    sol = getattr(controller, "last_solution", None)
    cost = sol.cost if sol is not None else float("nan")
    return [t, *_flat_state(truth),
            *ee.translation, *quat_from_matrix(ee.rotation),
            *_flat_state(est),
            *f, *tq, *th_cmd, *sigma, *dhat,
            *target.p, e_pos, e_rot, cost]


def run_tracking(name: str, kind: str, seed: int = 0, duration: float = 60.0,
                 disturbances: DisturbanceConfig | str | None = "benchmark",
                 weights: MpcWeights | None = None,
                 mpc_config: MpcConfig | None = None,
                 resolve_hz: float = 25.0, trace: bool = True,
                 trajectory: ReferenceTrajectory | None = None,
                 plant_kwargs: dict | None = None) -> RunResult:
    """One benchmark run: controller name x trajectory kind x seed."""
    uav, arm = UavParams(), ArmParams()
    traj = trajectory if trajectory is not None else \
        make_trajectory(kind, duration=duration)
    if isinstance(disturbances, str):
        if disturbances == "benchmark":
            cfg = benchmark_disturbances()
        elif disturbances in ("none", "zero"):
            cfg = DisturbanceConfig()
        elif disturbances == "noisy":
            # degraded state estimation: 1 cm position noise, plant exact
            cfg = DisturbanceConfig(pos_noise=0.01)
        else:
            raise ValueError(f"unknown disturbance profile {disturbances!r}")
    else:
        cfg = disturbances if disturbances is not None else DisturbanceConfig()
    p0, R0, v0, theta0 = initial_state_on(traj.sample(0.0), arm)
    plant = Plant(uav, arm, cfg=cfg, seed=seed, p0=p0, R0=R0, v0=v0,
                  theta0=theta0, **(plant_kwargs or {}))
    controller = make_controller(name, uav, arm, traj.sample,
                                 resolve_hz=resolve_hz, weights=weights,
                                 mpc_config=mpc_config)
    base_est = joint_est = None
    if uses_adaptation(name):
        l1c = L1Config()
        base_est = L1BaseEstimator(uav, l1c)
        joint_est = L1JointEstimator(arm, l1c)
    res = rollout(plant, controller, traj.sample, duration=duration,
                  base_est=base_est, joint_est=joint_est, trace=trace)
    res.controller = name
    res.trajectory = kind if trajectory is None else traj.spec.kind
    res.seed = seed
    res.extras["clamped"] = plant.clamped
    if hasattr(controller, "unreachable"):
        res.extras["ik_unreachable"] = controller.unreachable
    if hasattr(controller, "mem") and hasattr(controller.mem,
                                              "ill_conditioned"):
        res.extras["ill_conditioned"] = controller.mem.ill_conditioned
    return res
