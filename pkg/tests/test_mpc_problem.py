"""Horizon problem: prediction model consistency, cost values, validation."""
import numpy as np
import pytest

from uamctl.arm_model import ArmParams, fk_ee
from uamctl.geometry import Transform, exp_so3, rotation_error
from uamctl.mpc.problem import EeTarget, InfeasibleStateError, MpcConfig, \
    MpcProblem, MpcState, MpcWeights, build_problem, stage_cost
from uamctl.uav_dynamics import BaseState, FRAME_BODY, UavParams, Wrench, \
    rk4_step

RNG = np.random.default_rng(20260817)


def default_setup(mode="full"):
    uav = UavParams()
    arm = ArmParams()
    cfg = MpcConfig(mode=mode)
    w = MpcWeights()
    return uav, arm, cfg, w


def hover_state(arm, p=(0.0, 0.0, 1.3), theta=None):
    theta = np.array([0.5, -1.1, 0.6, 0.0]) if theta is None else np.asarray(theta)
    return MpcState(np.asarray(p, dtype=float), np.eye(3), np.zeros(6), theta)


def random_state(rng, arm):
    p = rng.uniform(-1, 1, 3) + np.array([0, 0, 1.5])
    R = exp_so3(rng.uniform(-0.3, 0.3, 3))
    v = np.concatenate([rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.5, 0.5, 3)])
    theta = rng.uniform(-1.2, 1.2, 4)
    return MpcState(p, R, v, theta)


def make_problem(x0=None, target=None, mode="full", **cfg_kw):
    uav, arm, cfg, w = default_setup(mode)
    for k, v in cfg_kw.items():
        setattr(cfg, k, v)
    x0 = hover_state(arm) if x0 is None else x0
    if target is None:
        ee = x0.ee_pose(arm)
        target = EeTarget(ee.translation, ee.rotation)
    return build_problem(x0, target, w, cfg, uav, arm), uav, arm, cfg, w


class TestPredictionModel:
    def test_base_step_matches_plant_integrator(self):
        """Same RK4 arithmetic as the simulator step, state by state."""
        prob, uav, arm, cfg, _ = make_problem()
        zero_ext = Wrench.zero()
        for _ in range(20):
            x = random_state(RNG, arm)
            u = RNG.uniform(cfg.u_lb, cfg.u_ub)
            P1, R1, V1, TH1 = prob.step_batch(x.p, x.R, x.v, x.theta, u)
            s1 = rk4_step(BaseState(x.p, x.R, x.v),
                          Wrench(u[:3], u[3:6], FRAME_BODY),
                          zero_ext, uav, cfg.dt)
            assert np.allclose(P1, s1.p, atol=1e-14)
            assert np.allclose(R1, s1.R, atol=1e-14)
            assert np.allclose(V1, s1.v, atol=1e-14)

    def test_joint_step_matches_staged_rk4(self):
        # oracle: spell out the four RK4 stages for theta' = (c - theta)/beta
        prob, uav, arm, cfg, _ = make_problem()
        h = cfg.dt
        for _ in range(10):
            x = random_state(RNG, arm)
            u = RNG.uniform(cfg.u_lb, cfg.u_ub)
            _, _, _, TH1 = prob.step_batch(x.p, x.R, x.v, x.theta, u)
            c, b = u[6:], arm.beta
            k1 = (c - x.theta) / b
            k2 = (c - (x.theta + 0.5 * h * k1)) / b
            k3 = (c - (x.theta + 0.5 * h * k2)) / b
            k4 = (c - (x.theta + h * k3)) / b
            expected = x.theta + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            assert np.allclose(TH1, expected, atol=1e-13)

    def test_rollout_from_hover_is_stationary(self):
        prob, uav, arm, cfg, _ = make_problem()
        traj = prob.rollout(prob.default_controls())
        assert np.allclose(traj.P, traj.P[0], atol=1e-10)
        assert np.allclose(traj.V, 0.0, atol=1e-10)
        assert np.allclose(traj.TH, traj.TH[0], atol=1e-12)
        assert traj.cost < 1e-16

    def test_linearization_predicts_perturbed_step(self):
        """x1(x0+dx, u+du) ~ x1 + A dx + B du to second order."""
        x0 = random_state(RNG, ArmParams())
        prob, uav, arm, cfg, _ = make_problem(x0=x0)
        U = np.tile(prob.u_ref, (cfg.steps, 1))
        traj = prob.rollout(U)
        lin = prob.linearize(traj)
        k = 7
        for _ in range(10):
            dx = RNG.uniform(-1, 1, 16) * 1e-3
            du = RNG.uniform(-1, 1, 10) * 1e-3
            Pp, Rp, Vp, THp = prob.state_add(
                traj.P[k], traj.R[k], traj.V[k], traj.TH[k], dx)
            P1, R1, V1, TH1 = prob.step_batch(Pp, Rp, Vp, THp, U[k] + du)
            got = prob.state_diff(P1, R1, V1, TH1, traj.P[k + 1],
                                  traj.R[k + 1], traj.V[k + 1], traj.TH[k + 1])
            pred = lin["A"][k] @ dx + lin["B"][k] @ du
            assert np.linalg.norm(got - pred) < 5e-6


class TestCost:
    def test_unit_position_error_costs_position_weight(self):
        uav, arm, cfg, w = default_setup()
        x = hover_state(arm)
        ee = x.ee_pose(arm)
        target = EeTarget(ee.translation - np.array([1.0, 0, 0]), ee.rotation)
        u_ref = np.concatenate(
            [np.array([0, 0, uav.m_lin[2] * uav.gravity]), np.zeros(3), x.theta])
        c = stage_cost(x, u_ref, target, x.theta, w, arm, u_ref=u_ref)
        assert c == pytest.approx(12.0, abs=1e-12)

    def test_stage_cost_accumulates_all_terms(self):
        # independent accumulation of the weighted squared errors
        uav, arm, cfg, w = default_setup()
        x = random_state(RNG, arm)
        target = EeTarget(RNG.uniform(-1, 1, 3) + [0, 0, 1.5],
                          exp_so3(RNG.uniform(-0.2, 0.2, 3)),
                          RNG.uniform(-0.1, 0.1, 6))
        theta_ref = RNG.uniform(-1, 1, 4)
        u = RNG.uniform(-0.5, 0.5, 10)
        ee = fk_ee(x.theta, arm, Transform(x.R, x.p))
        e = [ee.translation - target.p,
             rotation_error(ee.rotation, target.R),
             x.v - target.v_ref, x.theta - theta_ref, u]
        wts = [w.pos, w.rot, w.vel, w.joint, w.control_diag()]
        expected = sum(float(ei @ (wi * ei)) for ei, wi in zip(e, wts))
        got = stage_cost(x, u, target, theta_ref, w, arm)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_trajectory_cost_matches_stage_sum(self):
        """Rollout cost equals summed stage costs plus the scaled terminal
        term when no penalty is active."""
        prob, uav, arm, cfg, w = make_problem()
        span = np.array([0.02] * 3 + [0.002] * 3 + [0.02] * 4)
        U = np.tile(prob.u_ref, (cfg.steps, 1)) \
            + RNG.uniform(-1, 1, (cfg.steps, 10)) * span
        traj = prob.rollout(U)
        # premise: no penalty is active along this gentle rollout
        assert np.linalg.norm(traj.V[:, :3], axis=1).max() < cfg.v_max
        assert np.linalg.norm(traj.V[:, 3:], axis=1).max() < cfg.omega_max
        target = EeTarget(prob.P_ref[0], prob.R_ref[0], prob.V_ref[0])
        total = 0.0
        for k in range(cfg.steps):
            xk = MpcState(traj.P[k], traj.R[k], traj.V[k], traj.TH[k])
            total += stage_cost(xk, U[k], target, cfg.theta_ref, w, arm,
                                u_ref=prob.u_ref)
        xN = MpcState(traj.P[-1], traj.R[-1], traj.V[-1], traj.TH[-1])
        total += w.terminal_scale * stage_cost(
            xN, None, target, cfg.theta_ref, w, arm)
        assert traj.cost == pytest.approx(total, rel=1e-10)

    def test_floor_penalty_activates_below_clearance(self):
        prob, uav, arm, cfg, w = make_problem()
        x_low = hover_state(arm, p=(0, 0, 0.3))   # base sphere dips below
        x_high = hover_state(arm, p=(0, 0, 1.3))
        rows_low = prob._pose_rows(x_low.p[None], x_low.R[None],
                                   x_low.theta[None])
        rows_high = prob._pose_rows(x_high.p[None], x_high.R[None],
                                    x_high.theta[None])
        assert rows_low[0, 7] > 0    # base floor row
        assert np.all(rows_high[0, 6:] == 0.0)

    def test_speed_penalty_activates_above_bound(self):
        prob, *_ = make_problem()
        v = np.zeros((1, 6))
        v[0, 0] = 2.0  # above the 1.5 bound
        rows = prob._vel_rows(v)
        assert rows[0, 6] == pytest.approx(np.sqrt(100.0) * 0.5)
        v[0, 0] = 1.0
        assert prob._vel_rows(v)[0, 6] == 0.0


class TestValidation:
    def test_rejects_joint_limit_violation(self):
        arm = ArmParams()
        bad = hover_state(arm, theta=[3.0, 0, 0, 0])
        with pytest.raises(InfeasibleStateError):
            make_problem(x0=bad)

    def test_rejects_excess_speed(self):
        arm = ArmParams()
        x = hover_state(arm)
        x.v[0] = 5.0
        with pytest.raises(InfeasibleStateError):
            make_problem(x0=x)

    def test_rejects_non_orthonormal_rotation(self):
        arm = ArmParams()
        x = hover_state(arm)
        x.R = 1.01 * np.eye(3)
        with pytest.raises(InfeasibleStateError):
            make_problem(x0=x)

    def test_rejects_non_finite_state(self):
        arm = ArmParams()
        x = hover_state(arm)
        x.p[1] = np.nan
        with pytest.raises(InfeasibleStateError):
            make_problem(x0=x)

    def test_rejects_wrong_target_count(self):
        prob, *_ = make_problem()
        ts = [EeTarget(np.zeros(3))] * 5
        with pytest.raises(ValueError):
            prob.set_targets(ts)
