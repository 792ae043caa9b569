"""Kinematic and servo-constant identification from logged motion.

Fits the arm's DH rows (plus joint encoder offsets) to measured end-effector
poses by Gauss-Newton on a mixed pose residual, and the per-joint servo time
constants by linear regression on the discretized first-order response.
Identification works on base-relative EE poses, so a rigid re-basing of the
whole log changes nothing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .arm_model import ArmParams, DhJoint, fk_ee_arrays
from .geometry import exp_so3, log_so3, matrix_from_quat

# weight mixing rotation-log norm (rad) into the translation residual (m):
# 1 cm of position counts like ~5.7 degrees of orientation
ROT_WEIGHT = 0.1

# joint encoder offsets (joint 1 pinned to zero as gauge), then the fixed
# DH numbers; names are what rank-deficiency reports print
PARAM_NAMES = ("theta_off2", "theta_off3", "theta_off4",
               "d1", "d2", "d3", "d4",
               "a1", "a2", "a3", "a4",
               "alpha1", "alpha2", "alpha3", "alpha4")
N_PARAMS = len(PARAM_NAMES)


class ExcitationError(ValueError):
    """Log does not excite the parameters being identified."""

    def __init__(self, msg: str, directions: list | None = None):
        super().__init__(msg)
        self.directions = directions or []


@dataclass
class MotionLog:
    """Synchronized motion-capture style record of one arm session."""

    t: np.ndarray            # (n,)
    p_base: np.ndarray       # (n, 3) world
    R_base: np.ndarray       # (n, 3, 3)
    theta_cmd: np.ndarray    # (n, k)
    theta: np.ndarray        # (n, k) measured joint angles
    p_ee: np.ndarray         # (n, 3) measured EE position, world
    R_ee: np.ndarray         # (n, 3, 3) measured EE attitude

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        for name in ("p_base", "R_base", "theta_cmd", "theta",
                     "p_ee", "R_ee"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.t)
        shapes = {"p_base": (n, 3), "R_base": (n, 3, 3),
                  "p_ee": (n, 3), "R_ee": (n, 3, 3)}
        for name, want in shapes.items():
            if getattr(self, name).shape != want:
                raise ValueError(f"{name} must have shape {want}")
        if self.theta.shape != self.theta_cmd.shape \
                or self.theta.shape[0] != n:
            raise ValueError("theta and theta_cmd must be (n, k)")
        if n >= 2:
            dt = np.diff(self.t)
            if np.any(dt <= 0):
                raise ValueError("timestamps must strictly increase")
            if np.median(dt) > 1.0 / 50.0 + 1e-9:
                raise ValueError("log rate below 50 Hz")

    def __len__(self):
        return len(self.t)

    def still_mask(self, pos_tol: float = 1e-3,
                   rot_tol: float = 1e-3) -> np.ndarray:
        """Samples where the base holds still relative to its neighbors."""
        n = len(self.t)
        mask = np.ones(n, dtype=bool)
        dp = np.linalg.norm(np.diff(self.p_base, axis=0), axis=1)
        dR = np.linalg.norm(
            log_so3(np.swapaxes(self.R_base[:-1], -1, -2) @ self.R_base[1:]),
            axis=1)
        moving = (dp > pos_tol) | (dR > rot_tol)
        mask[:-1] &= ~moving
        mask[1:] &= ~moving
        return mask

    @staticmethod
    def from_trace(path) -> "MotionLog":
        """Build a log from a closed-loop run trace CSV.

        Base pose and joint angles come from the estimate columns, the EE
        pose from the true-pose columns (the mocap stand-in).
        """
        from .closed_loop import TRACE_COLUMNS
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != list(TRACE_COLUMNS):
            raise ValueError(f"{path}: not a run trace (header mismatch)")
        data = np.asarray(rows[1:], dtype=float)
        col = {name: i for i, name in enumerate(TRACE_COLUMNS)}

        def take(names):
            return data[:, [col[n] for n in names]]

        quat = take(["est_qw", "est_qx", "est_qy", "est_qz"])
        R_base = np.stack([matrix_from_quat(q) for q in quat])
        quat = take(["ee_qw", "ee_qx", "ee_qy", "ee_qz"])
        R_ee = np.stack([matrix_from_quat(q) for q in quat])
        return MotionLog(
            t=data[:, col["t"]],
            p_base=take(["est_px", "est_py", "est_pz"]),
            R_base=R_base,
            theta_cmd=take([f"cmd_theta{i}" for i in range(1, 5)]),
            theta=take([f"est_theta{i}" for i in range(1, 5)]),
            p_ee=take(["ee_x", "ee_y", "ee_z"]),
            R_ee=R_ee)


# ---------------------------------------------------------------------------
# DH identification


def _pack(arm: ArmParams) -> np.ndarray:
    dh = arm.dh_array()
    return np.concatenate([dh[1:, 0], dh[:, 1], dh[:, 2], dh[:, 3]])


def _unpack(x: np.ndarray, template: ArmParams) -> ArmParams:
    n = template.n_joints
    off = np.concatenate([[template.joints[0].theta_offset], x[:n - 1]])
    d, a, al = x[n - 1:2 * n - 1], x[2 * n - 1:3 * n - 1], x[3 * n - 1:]
    joints = [DhJoint(off[i], d[i], a[i], al[i]) for i in range(n)]
    return ArmParams(joints=joints, beta=template.beta.copy(),
                     mount=template.mount, joint_limits=template.joint_limits,
                     rate_limit=template.rate_limit)


def _relative_poses(log: MotionLog):
    """Measured EE poses expressed in the base frame."""
    RbT = np.swapaxes(log.R_base, -1, -2)
    p_rel = (RbT @ (log.p_ee - log.p_base)[..., None])[..., 0]
    R_rel = RbT @ log.R_ee
    return p_rel, R_rel


def _residual(x, template, theta, p_rel, R_rel):
    arm = _unpack(x, template)
    n = len(theta)
    p_pred, R_pred = fk_ee_arrays(np.zeros((n, 3)), np.eye(3), theta, arm)
    rot = log_so3(np.swapaxes(R_rel, -1, -2) @ R_pred)
    return np.concatenate([(p_pred - p_rel).ravel(),
                           ROT_WEIGHT * rot.ravel()])


def _jacobian(x, template, theta, p_rel, R_rel, step: float = 1e-6):
    cols = []
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        rp = _residual(xp, template, theta, p_rel, R_rel)
        rm = _residual(xm, template, theta, p_rel, R_rel)
        cols.append((rp - rm) / (2 * step))
    return np.stack(cols, axis=1)


def _check_rank(J: np.ndarray, rel_tol: float = 1e-7):
    _, s, Vt = np.linalg.svd(J, full_matrices=False)
    bad = s < rel_tol * s[0]
    if not bad.any():
        return
    directions = []
    names = []
    for v in Vt[bad]:
        weights = {PARAM_NAMES[i]: float(v[i]) for i in range(len(v))
                   if abs(v[i]) > 0.3}
        if not weights:   # diffuse direction, keep the largest entries
            top = np.argsort(-np.abs(v))[:3]
            weights = {PARAM_NAMES[i]: float(v[i]) for i in top}
        directions.append(weights)
        names.append("+".join(sorted(weights)))
    raise ExcitationError(
        "log does not excite these parameter directions: "
        + "; ".join(names), directions)


def identify_dh(log: MotionLog, init: ArmParams, max_iters: int = 50,
                tol: float = 1e-12, samples: np.ndarray | None = None):
    """Recover DH rows (and joint 2..n encoder offsets) from a motion log.

    Returns (ArmParams, report). The report carries the per-sample RMS of
    the mixed residual and the accepted-iteration cost history.
    """
    idx = np.arange(len(log)) if samples is None else np.flatnonzero(samples)
    if len(idx) * 6 < N_PARAMS:
        raise ExcitationError(
            f"{len(idx)} samples cannot pin down {N_PARAMS} parameters")
    theta = log.theta[idx]
    p_rel, R_rel = _relative_poses(log)
    p_rel, R_rel = p_rel[idx], R_rel[idx]

    x = _pack(init)
    r = _residual(x, init, theta, p_rel, R_rel)
    cost = float(r @ r)
    history = [cost]
    converged = False
    lam = 1e-4
    # Levenberg-Marquardt with diagonal scaling: the near-parallel joint
    # axes leave a badly conditioned valley that a plain Gauss-Newton step
    # overshoots
    for _ in range(max_iters):
        J = _jacobian(x, init, theta, p_rel, R_rel)
        _check_rank(J)
        g = J.T @ r
        H = J.T @ J
        scale = np.diag(np.diag(H))
        for _ in range(30):
            dx = np.linalg.solve(H + lam * scale, -g)
            r_new = _residual(x + dx, init, theta, p_rel, R_rel)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                lam = max(lam / 3.0, 1e-12)
                break
            lam *= 4.0
        else:
            converged = True
            break
        x = x + dx
        r, prev, cost = r_new, cost, cost_new
        history.append(cost)
        if prev - cost <= tol * max(prev, 1e-30):
            converged = True
            break
    arm = _unpack(x, init)
    report = {
        "rms_residual": float(np.sqrt(cost / len(idx))),
        "iterations": len(history) - 1,
        "cost_history": history,
        "converged": converged,
        "n_samples": int(len(idx)),
    }
    return arm, report


# ---------------------------------------------------------------------------
# servo constant identification


def identify_beta(log: MotionLog, full_output: bool = False):
    """Per-joint servo time constants from the first-order response.

    Regresses the centrally differenced joint rate against the command
    error; the intercept soaks up any constant servo bias. Raises
    ExcitationError when a channel carries no information (settled constant
    command). A wide confidence interval is flagged, not fatal.
    """
    if len(log) < 5:
        raise ExcitationError("log too short for rate estimation")
    th, cmd, t = log.theta, log.theta_cmd, log.t
    rate = (th[2:] - th[:-2]) / (t[2:] - t[:-2])[:, None]
    err = (cmd - th)[1:-1]
    n_j = th.shape[1]
    beta = np.zeros(n_j)
    rel_ci = np.zeros(n_j)
    for j in range(n_j):
        e, rj = err[:, j], rate[:, j]
        if np.var(e) <= 1e-8:
            raise ExcitationError(
                f"joint {j + 1}: command error never moves; "
                "settled constant commands carry no servo information")
        A = np.column_stack([e, np.ones_like(e)])
        sol, *_ = np.linalg.lstsq(A, rj, rcond=None)
        slope = sol[0]
        if slope <= 0:
            raise ExcitationError(
                f"joint {j + 1}: no stable first-order response in log")
        beta[j] = 1.0 / slope
        resid = rj - A @ sol
        dof = max(len(e) - 2, 1)
        var_slope = float(resid @ resid) / dof / float(
            np.sum((e - e.mean()) ** 2))
        rel_ci[j] = 1.96 * np.sqrt(var_slope) / slope
    if not full_output:
        return beta
    report = {"rel_ci": rel_ci, "wide_ci": bool(np.any(rel_ci > 0.1))}
    return beta, report


# ---------------------------------------------------------------------------
# synthetic excitation logs


def make_excitation_log(arm: ArmParams, duration: float = 6.0,
                        rate: float = 100.0, seed: int = 0,
                        base_motion: bool = False, pos_noise: float = 0.0,
                        rot_noise: float = 0.0, theta_noise: float = 0.0,
                        ) -> MotionLog:
    """Multi-sine joint excitation with exact first-order servo tracking.

    Amplitudes and frequencies keep commanded rates well under the servo
    rate limit so the pure first-order model holds.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    h = 1.0 / rate
    t = h * np.arange(n)
    n_j = arm.n_joints
    lims = arm.joint_limits
    center = 0.5 * (lims[:, 0] + lims[:, 1])
    cmd = np.zeros((n, n_j))
    # wide, slow sweeps pin down the axis geometry; the faster small terms
    # carry the servo-lag information. Frequencies are detuned per joint so
    # the joints decorrelate and the log covers the configuration space
    # instead of a diagonal slice of it. Peak commanded rate stays near
    # half the servo rate limit.
    amps = (1.3, 0.6, 0.25, 0.1)
    freqs = (0.3, 0.7, 1.3, 2.3)
    for j in range(n_j):
        c = center[j] + rng.uniform(-0.3, 0.3)
        prof = np.zeros(n)
        detune = 1.0 + 0.19 * j
        for amp, w in zip(amps, freqs):
            prof += amp * rng.uniform(0.7, 1.0) * np.sin(
                detune * w * t + rng.uniform(0, 2 * np.pi))
        cmd[:, j] = np.clip(c + prof, lims[j, 0] + 0.05, lims[j, 1] - 0.05)
    # exact continuous-time first-order response to the piecewise-linear
    # command: for c(t) = c0 + m t over one step,
    #   theta(h) = c(h) - m*beta + (theta0 - c0 + m*beta) e^{-h/beta}
    theta = np.zeros((n, n_j))
    theta[0] = cmd[0]
    decay = np.exp(-h / arm.beta)
    for k in range(1, n):
        m = (cmd[k] - cmd[k - 1]) / h
        lag = m * arm.beta
        theta[k] = cmd[k] - lag + (theta[k - 1] - cmd[k - 1] + lag) * decay
    p_base = np.zeros((n, 3)) + np.array([0.0, 0.0, 1.3])
    R_base = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    if base_motion:
        p_base = p_base + 0.2 * np.column_stack(
            [np.sin(0.5 * t), np.sin(0.3 * t + 1.0), np.zeros(n)])
    p_ee, R_ee = fk_ee_arrays(p_base, R_base, theta, arm)
    meas = theta
    if theta_noise > 0:
        meas = theta + theta_noise * rng.standard_normal(theta.shape)
    if pos_noise > 0:
        p_ee = p_ee + pos_noise * rng.standard_normal(p_ee.shape)
    if rot_noise > 0:
        for k in range(n):
            R_ee[k] = R_ee[k] @ exp_so3(
                rot_noise * rng.standard_normal(3))
    return MotionLog(t=t, p_base=p_base, R_base=R_base, theta_cmd=cmd,
                     theta=meas, p_ee=p_ee, R_ee=R_ee)


def format_report(arm: ArmParams, report: dict) -> str:
    """Human-readable identification summary."""
    lines = ["identified DH rows (theta_offset, d, a, alpha):"]
    for i, j in enumerate(arm.joints):
        lines.append(f"  joint {i + 1}:  {j.theta_offset:+.6f}  {j.d:+.6f}  "
                     f"{j.a:+.6f}  {j.alpha:+.6f}")
    lines.append(f"rms residual: {report['rms_residual']:.3e} "
                 f"({report['n_samples']} samples, "
                 f"{report['iterations']} iterations, "
                 f"converged={report['converged']})")
    return "\n".join(lines)
