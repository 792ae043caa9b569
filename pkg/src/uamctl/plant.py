"""Ground-truth plant for closed-loop experiments.

Deliberately not the controller's model: the plant integrates its own copy
of the dynamics with scaled "true" parameters and layers on the effects the
controller does not know about: constant wrench bias, arm-reaction coupling
on the base, ground effect near the floor, servo backlash and bias, and
measurement noise. Commands arrive at the 100 Hz control rate and are held
over 10 internal 1 ms substeps.

Conventions match uav_dynamics: force commands are body-fixed, the constant
force bias is world-fixed, torque bias is body-fixed. The servo lag is
solved exactly within each substep (the joint ODE is linear), with the rate
limit applied as a saturation on the commanded slew.

The inner loop is spelled out in plain floats rather than numpy: at
3-vector scale the array machinery costs more than the arithmetic, and this
loop runs sixty thousand times per benchmark run. The vectorized form of
the same equations lives in uav_dynamics.accel_arrays; a test pins the two
against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm_model import ArmParams
from .geometry import exp_so3
from .mpc.problem import MpcState
from .uav_dynamics import UavParams

TICK_DT = 0.01       # command rate
SUBSTEPS = 10        # internal integration substeps per tick
BLOWUP_SPEED = 20.0  # m/s; anything past this is a diverged run

DEG = np.pi / 180.0

_NO_COUPLING = ((0.0, 0.0, 0.0),) * 4


class PlantDivergence(RuntimeError):
    """Simulation left the sane envelope; carries the time of death."""

    def __init__(self, t: float, speed: float):
        super().__init__(f"plant diverged at t={t:.3f}s (speed {speed:.1f})")
        self.t = t


@dataclass
class DisturbanceConfig:
    """Everything the plant does that the nominal model does not.

    All magnitudes default to zero: the default-constructed plant is the
    nominal model exactly. force_bias is world-frame, torque_bias body-frame.
    coupling_gain maps joint accelerations to a body-frame reaction force at
    the arm mount (the matching torque uses the mount lever arm).
    """

    mass_scale: float = 0.0        # true mass = nominal * (1 + scale)
    inertia_scale: float = 0.0
    beta_scale: float = 0.0
    force_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    coupling_gain: np.ndarray = field(
        default_factory=lambda: np.zeros((3, 4)))
    ground_enabled: bool = False
    ground_z_threshold: float = 1.0
    ground_gain: float = 0.2      # upward force = gain * (z_th - z)^2
    backlash_halfwidth: float = 0.0   # rad; dead zone around engaged cmd
    servo_bias: np.ndarray = field(default_factory=lambda: np.zeros(4))
    pos_noise: float = 0.0        # measurement stds
    rot_noise: float = 0.0
    vel_noise: float = 0.0
    omega_noise: float = 0.0
    theta_noise: float = 0.0

    def __post_init__(self):
        self.force_bias = np.asarray(self.force_bias, dtype=float)
        self.torque_bias = np.asarray(self.torque_bias, dtype=float)
        self.coupling_gain = np.asarray(self.coupling_gain, dtype=float)
        self.servo_bias = np.asarray(self.servo_bias, dtype=float)
        if self.coupling_gain.shape != (3, 4):
            raise ValueError("coupling_gain must be 3x4")
        for name in ("backlash_halfwidth", "ground_gain", "pos_noise",
                     "rot_noise", "vel_noise", "omega_noise", "theta_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.ground_enabled and self.ground_z_threshold <= 0:
            raise ValueError("ground_z_threshold must sit above the floor")


def benchmark_disturbances(noise: bool = True) -> DisturbanceConfig:
    """Default mismatch profile for the tracking benchmarks.

    Mass +10%, inertia +5%, servo delay +15%, half a degree of backlash,
    ground effect sized to ~5% of hover thrust at z = 0.5, arm-reaction
    coupling sized to a few percent of hover during fast sweeps, and
    motion-capture grade measurement noise.
    """
    cfg = DisturbanceConfig(
        mass_scale=0.10,
        inertia_scale=0.05,
        beta_scale=0.15,
        coupling_gain=0.005 * np.array([[1.0, 0.8, 0.3, 0.0],
                                        [0.0, 0.1, 0.0, 0.2],
                                        [0.8, 1.0, 0.4, 0.0]]),
        ground_enabled=True,
        ground_z_threshold=1.0,
        ground_gain=0.2,
        backlash_halfwidth=0.5 * DEG,
        servo_bias=np.array([0.01, -0.008, 0.012, -0.006]),
    )
    if noise:
        cfg.pos_noise = 1.5e-3
        cfg.rot_noise = 2e-3
        cfg.vel_noise = 4e-3
        cfg.omega_noise = 4e-3
        cfg.theta_noise = 1e-3
    return cfg


class Plant:
    """Owns the true state; advances one 100 Hz tick per step() call."""

    def __init__(self, uav: UavParams, arm: ArmParams,
                 cfg: DisturbanceConfig | None = None, seed: int = 0,
                 p0=(0.0, 0.0, 1.3), R0=None, v0=None, theta0=None,
                 u_lb=None, u_ub=None, pin_base: bool = False,
                 substeps: int = SUBSTEPS):
        self.cfg = cfg = cfg if cfg is not None else DisturbanceConfig()
        mm = uav.mass_matrix.copy()
        mm[:3] *= 1.0 + cfg.mass_scale
        mm[3:] *= 1.0 + cfg.inertia_scale
        self.uav_true = UavParams(mm, uav.inertia * (1.0 + cfg.inertia_scale),
                                  uav.gravity)
        self.arm_true = ArmParams(
            joints=arm.joints, beta=arm.beta * (1.0 + cfg.beta_scale),
            mount=arm.mount, joint_limits=arm.joint_limits,
            rate_limit=arm.rate_limit)
        self.rng = np.random.default_rng(seed)
        self.pin_base = pin_base
        self.p = np.asarray(p0, dtype=float).copy()
        self.R = np.eye(3) if R0 is None else np.asarray(R0, dtype=float).copy()
        self.v = np.zeros(6) if v0 is None else np.asarray(v0, dtype=float).copy()
        self.theta = (np.array([0.5, -1.1, 0.6, 0.0]) if theta0 is None
                      else np.asarray(theta0, dtype=float).copy())
        self.engaged = self.theta.copy()   # backlash memory
        self.t = 0.0
        self.clamped = False   # sticky flag: some command hit a bound
        # actuation limits the plant enforces (same bounds the MPC sees)
        self.u_lb = (np.array([-0.6, -0.6, 0.0, -0.5, -0.5, -0.5])
                     if u_lb is None else np.asarray(u_lb, dtype=float))
        self.u_ub = (np.array([0.6, 0.6, 2.0, 0.5, 0.5, 0.5])
                     if u_ub is None else np.asarray(u_ub, dtype=float))
        self._n_sub = int(substeps)
        h = TICK_DT / self._n_sub
        self._h = h
        self._decay_half = tuple(np.exp(-0.5 * h / self.arm_true.beta))
        self._decay_full = tuple(np.exp(-h / self.arm_true.beta))
        self._beta = tuple(self.arm_true.beta)
        self._lever = tuple(map(float, self.arm_true.mount.translation))
        self._gmat = tuple(map(float, cfg.coupling_gain.ravel()))
        # scalar copies of the true inertial parameters for the inner loop
        self._im = tuple(1.0 / m for m in self.uav_true.mass_matrix[:3])
        self._g = float(uav.gravity)
        J = self.uav_true.inertia
        Ji = self.uav_true._inertia_inv
        (self._j00, self._j01, self._j02, _,
         self._j11, self._j12, _, _, self._j22) = map(float, J.ravel())
        (self._ji00, self._ji01, self._ji02, _,
         self._ji11, self._ji12, _, _, self._ji22) = map(float, Ji.ravel())
        self._bias = tuple(map(float, cfg.force_bias))
        self._ground = bool(cfg.ground_enabled)
        self._gz_th = float(cfg.ground_z_threshold)
        self._g_gain = float(cfg.ground_gain)

    # ---- actuator-side shaping -----------------------------------------

    def _effective_cmd(self, theta_cmd: np.ndarray) -> np.ndarray:
        lim = self.arm_true.joint_limits
        c = np.clip(theta_cmd, lim[:, 0], lim[:, 1])
        if np.any(c != theta_cmd):
            self.clamped = True
        hw = self.cfg.backlash_halfwidth
        if hw > 0.0:
            delta = c - self.engaged
            move = np.abs(delta) > hw
            self.engaged[move] = c[move] - hw * np.sign(delta[move])
            c = self.engaged.copy()
        else:
            self.engaged = c.copy()
        return c + self.cfg.servo_bias

    # ---- one control tick ----------------------------------------------

    def step(self, force_body, torque_body, theta_cmd):
        f_cmd = np.clip(np.asarray(force_body, dtype=float),
                        self.u_lb[:3], self.u_ub[:3])
        tq_cmd = np.clip(np.asarray(torque_body, dtype=float),
                         self.u_lb[3:], self.u_ub[3:])
        if (np.any(f_cmd != np.asarray(force_body, dtype=float))
                or np.any(tq_cmd != np.asarray(torque_body, dtype=float))):
            self.clamped = True
        c_eff = self._effective_cmd(np.asarray(theta_cmd, dtype=float))

        fb = tuple(map(float, f_cmd))
        tq = tuple(map(float, tq_cmd + self.cfg.torque_bias))
        ce = tuple(map(float, c_eff))
        th = list(map(float, self.theta))
        base = (tuple(map(float, self.p)),
                tuple(map(float, self.R.ravel())),
                tuple(map(float, self.v)))
        beta, dhalf, dfull = self._beta, self._decay_half, self._decay_full
        rate = float(self.arm_true.rate_limit)
        h = self._h
        coupled = any(self._gmat) and not self.pin_base
        g00, g01, g02, g03, g10, g11, g12, g13, g20, g21, g22, g23 = self._gmat

        for _ in range(self._n_sub):
            thdd = [0.0, 0.0, 0.0, 0.0]
            t2 = [0.0, 0.0, 0.0, 0.0]
            t4 = [0.0, 0.0, 0.0, 0.0]
            for j in range(4):
                gap = ce[j] - th[j]
                slew = gap / beta[j]
                if slew > rate:
                    th[j] += h * rate
                elif slew < -rate:
                    th[j] -= h * rate
                else:
                    # exact exponential segment; coupling sees the analytic
                    # joint acceleration, zero while rate-saturated
                    a = -slew / beta[j]
                    thdd[j] = a
                    t2[j] = a * dhalf[j]
                    t4[j] = a * dfull[j]
                    th[j] = ce[j] - gap * dfull[j]
            if not self.pin_base:
                if coupled:
                    stages = (
                        (g00 * thdd[0] + g01 * thdd[1] + g02 * thdd[2] + g03 * thdd[3],
                         g10 * thdd[0] + g11 * thdd[1] + g12 * thdd[2] + g13 * thdd[3],
                         g20 * thdd[0] + g21 * thdd[1] + g22 * thdd[2] + g23 * thdd[3]),
                        (g00 * t2[0] + g01 * t2[1] + g02 * t2[2] + g03 * t2[3],
                         g10 * t2[0] + g11 * t2[1] + g12 * t2[2] + g13 * t2[3],
                         g20 * t2[0] + g21 * t2[1] + g22 * t2[2] + g23 * t2[3]),
                        (g00 * t4[0] + g01 * t4[1] + g02 * t4[2] + g03 * t4[3],
                         g10 * t4[0] + g11 * t4[1] + g12 * t4[2] + g13 * t4[3],
                         g20 * t4[0] + g21 * t4[1] + g22 * t4[2] + g23 * t4[3]))
                    stages = (stages[0], stages[1], stages[1], stages[2])
                else:
                    stages = _NO_COUPLING
                base = self._base_substep(base, fb, tq, stages)
            self.t += h

        self.theta[:] = th
        p, rr, v = base
        self.p[:] = p
        self.R.ravel()[:] = rr
        self.v[:] = v
        speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) ** 0.5
        if speed > BLOWUP_SPEED:
            raise PlantDivergence(self.t, speed)
        return self.truth()

    def _accel(self, rr, w3, w4, w5, pz, fb0, fb1, fb2, tq0, tq1, tq2):
        """Scalar Newton-Euler evaluation, same equations as accel_arrays."""
        r00, r01, r02, r10, r11, r12, r20, r21, r22 = rr
        b0, b1, b2 = self._bias
        fw0 = r00 * fb0 + r01 * fb1 + r02 * fb2 + b0
        fw1 = r10 * fb0 + r11 * fb1 + r12 * fb2 + b1
        fw2 = r20 * fb0 + r21 * fb1 + r22 * fb2 + b2
        if self._ground and pz < self._gz_th:
            gap = self._gz_th - pz
            fw2 += self._g_gain * gap * gap
        im0, im1, im2 = self._im
        a0 = fw0 * im0
        a1 = fw1 * im1
        a2 = fw2 * im2 - self._g
        jo0 = self._j00 * w3 + self._j01 * w4 + self._j02 * w5
        jo1 = self._j01 * w3 + self._j11 * w4 + self._j12 * w5
        jo2 = self._j02 * w3 + self._j12 * w4 + self._j22 * w5
        t0 = tq0 - (w4 * jo2 - w5 * jo1)
        t1 = tq1 - (w5 * jo0 - w3 * jo2)
        t2 = tq2 - (w3 * jo1 - w4 * jo0)
        a3 = self._ji00 * t0 + self._ji01 * t1 + self._ji02 * t2
        a4 = self._ji01 * t0 + self._ji11 * t1 + self._ji12 * t2
        a5 = self._ji02 * t0 + self._ji12 * t1 + self._ji22 * t2
        return a0, a1, a2, a3, a4, a5

    def _base_substep(self, state, fb, tq, stages):
        h = self._h
        half = 0.5 * h
        f0, f1, f2 = fb
        q0, q1, q2 = tq
        l0, l1, l2 = self._lever
        (p0, p1, p2), rr, vv = state
        v0, v1, v2, v3, v4, v5 = vv

        def stage(rr_s, w, pz, fc):
            c0, c1, c2 = fc
            w0, w1, w2, w3, w4, w5 = w
            a = self._accel(rr_s, w3, w4, w5, pz,
                            f0 + c0, f1 + c1, f2 + c2,
                            q0 + l1 * c2 - l2 * c1,
                            q1 + l2 * c0 - l0 * c2,
                            q2 + l0 * c1 - l1 * c0)
            r00, r01, r02, r10, r11, r12, r20, r21, r22 = rr_s
            # dR = R @ hat(omega), columns spelled out
            dr = (r01 * w5 - r02 * w4, r02 * w3 - r00 * w5,
                  r00 * w4 - r01 * w3,
                  r11 * w5 - r12 * w4, r12 * w3 - r10 * w5,
                  r10 * w4 - r11 * w3,
                  r21 * w5 - r22 * w4, r22 * w3 - r20 * w5,
                  r20 * w4 - r21 * w3)
            return a, dr

        def lerp9(a, d, s):
            return (a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2],
                    a[3] + s * d[3], a[4] + s * d[4], a[5] + s * d[5],
                    a[6] + s * d[6], a[7] + s * d[7], a[8] + s * d[8])

        def lerp6(a, d, s):
            return (a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2],
                    a[3] + s * d[3], a[4] + s * d[4], a[5] + s * d[5])

        s1, s2, s3, s4 = stages
        k1, d1 = stage(rr, vv, p2, s1)
        rr2 = lerp9(rr, d1, half)
        w2 = lerp6(vv, k1, half)
        k2, d2 = stage(rr2, w2, p2 + half * v2, s2)
        rr3 = lerp9(rr, d2, half)
        w3 = lerp6(vv, k2, half)
        k3, d3 = stage(rr3, w3, p2 + half * w2[2], s3)
        rr4 = lerp9(rr, d3, h)
        w4 = lerp6(vv, k3, h)
        k4, d4 = stage(rr4, w4, p2 + h * w3[2], s4)

        h6 = h / 6.0
        p_new = (p0 + h6 * (v0 + 2 * w2[0] + 2 * w3[0] + w4[0]),
                 p1 + h6 * (v1 + 2 * w2[1] + 2 * w3[1] + w4[1]),
                 p2 + h6 * (v2 + 2 * w2[2] + 2 * w3[2] + w4[2]))
        v_new = tuple(vv[i] + h6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                      for i in range(6))
        m = tuple(rr[i] + h6 * (d1[i] + 2 * d2[i] + 2 * d3[i] + d4[i])
                  for i in range(9))
        # one Newton-Schulz sweep: R <- 1.5 R - 0.5 (R R^T) R
        a0, a1, a2, b0, b1, b2, c0, c1, c2 = m
        saa = a0 * a0 + a1 * a1 + a2 * a2
        sab = a0 * b0 + a1 * b1 + a2 * b2
        sac = a0 * c0 + a1 * c1 + a2 * c2
        sbb = b0 * b0 + b1 * b1 + b2 * b2
        sbc = b0 * c0 + b1 * c1 + b2 * c2
        scc = c0 * c0 + c1 * c1 + c2 * c2
        r_new = (1.5 * a0 - 0.5 * (saa * a0 + sab * b0 + sac * c0),
                 1.5 * a1 - 0.5 * (saa * a1 + sab * b1 + sac * c1),
                 1.5 * a2 - 0.5 * (saa * a2 + sab * b2 + sac * c2),
                 1.5 * b0 - 0.5 * (sab * a0 + sbb * b0 + sbc * c0),
                 1.5 * b1 - 0.5 * (sab * a1 + sbb * b1 + sbc * c1),
                 1.5 * b2 - 0.5 * (sab * a2 + sbb * b2 + sbc * c2),
                 1.5 * c0 - 0.5 * (sac * a0 + sbc * b0 + scc * c0),
                 1.5 * c1 - 0.5 * (sac * a1 + sbc * b1 + scc * c1),
                 1.5 * c2 - 0.5 * (sac * a2 + sbc * b2 + scc * c2))
        return p_new, r_new, v_new

    # ---- observation -----------------------------------------------------

    def truth(self) -> MpcState:
        return MpcState(self.p.copy(), self.R.copy(), self.v.copy(),
                        self.theta.copy())

    def measure(self) -> MpcState:
        """Truth plus zero-mean Gaussian estimation noise (seeded)."""
        cfg = self.cfg
        p = self.p + cfg.pos_noise * self.rng.standard_normal(3)
        R = self.R
        if cfg.rot_noise > 0:
            R = R @ exp_so3(cfg.rot_noise * self.rng.standard_normal(3))
        v = self.v.copy()
        v[:3] += cfg.vel_noise * self.rng.standard_normal(3)
        v[3:] += cfg.omega_noise * self.rng.standard_normal(3)
        th = self.theta + cfg.theta_noise * self.rng.standard_normal(4)
        return MpcState(p, R, v, th)

    def mechanical_energy(self) -> float:
        """Quasi-energy of the base for the anisotropic mass model."""
        m = self.uav_true.mass_matrix
        ke = 0.5 * float(np.sum(m[:3] * self.v[:3] ** 2))
        rot = 0.5 * float(self.v[3:] @ self.uav_true.inertia @ self.v[3:])
        pe = m[2] * self.uav_true.gravity * self.p[2]
        return ke + rot + pe
