import numpy as np
import pytest

from uamctl.arm_model import ArmParams
from uamctl.plant import (DisturbanceConfig, Plant, PlantDivergence,
                          benchmark_disturbances, DEG)
from uamctl.uav_dynamics import UavParams


def hover_force(uav, R=None):
    f = np.array([0.0, 0.0, uav.mass_matrix[2] * uav.gravity])
    return f if R is None else R.T @ f


def make_plant(cfg=None, **kw):
    uav, arm = UavParams(), ArmParams()
    return Plant(uav, arm, cfg=cfg, **kw), uav, arm


class TestNominalBehavior:
    def test_hover_is_stationary(self):
        plant, uav, _ = make_plant()
        f = hover_force(uav)
        th0 = plant.theta.copy()
        for _ in range(1000):   # 10 s
            plant.step(f, np.zeros(3), th0)
        assert np.linalg.norm(plant.p - [0, 0, 1.3]) < 1e-6
        assert np.linalg.norm(plant.v) < 1e-6
        np.testing.assert_allclose(plant.theta, th0, atol=1e-9)

    def test_servo_matches_dense_integration(self):
        # oracle: 1 us Euler integration of beta*thd = cmd - th
        plant, _, arm = make_plant()
        cmd = plant.theta + np.array([0.3, -0.2, 0.25, 0.4])
        for _ in range(50):   # 0.5 s
            plant.step(hover_force(plant.uav_true), np.zeros(3), cmd)
        th = plant.theta.copy()
        ref = np.array([0.5, -1.1, 0.6, 0.0])
        h = 1e-6
        for _ in range(int(0.5 / h)):
            ref = ref + h * np.clip((cmd - ref) / arm.beta,
                                    -arm.rate_limit, arm.rate_limit)
        np.testing.assert_allclose(th, ref, atol=1e-6)

    def test_rate_limit_bounds_slew(self):
        plant, _, arm = make_plant()
        cmd = plant.theta + np.array([2.0, 0, 0, 0])  # demands 3x the limit
        before = plant.theta[0]
        plant.step(hover_force(plant.uav_true), np.zeros(3), cmd)
        moved = plant.theta[0] - before
        # saturated for most of the tick, never above the limit
        assert moved <= arm.rate_limit * 0.01 * (1 + 1e-9)
        assert moved > 0.98 * arm.rate_limit * 0.01

    def test_free_fall_conserves_energy(self):
        plant, _, _ = make_plant()
        plant.v[3:] = [1.2, -0.8, 0.5]   # tumbling, zero thrust
        e0 = plant.mechanical_energy()
        th0 = plant.theta.copy()
        for _ in range(100):   # 1 s of free fall
            plant.step(np.zeros(3), np.zeros(3), th0)
        e1 = plant.mechanical_energy()
        assert abs(e1 - e0) < 1e-6

    def test_determinism(self):
        outs = []
        for _ in range(2):
            plant, uav, _ = make_plant(cfg=benchmark_disturbances(), seed=42)
            f = hover_force(uav)
            th0 = plant.theta.copy()
            tr = []
            for k in range(100):
                plant.step(f, np.zeros(3), th0 + 0.1 * np.sin(0.1 * k))
                m = plant.measure()
                tr.append(np.concatenate([plant.p, plant.v, plant.theta,
                                          m.p, m.theta]))
            outs.append(np.array(tr))
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_substep_convergence(self):
        # halving the internal step must not move the 60 s endpoint;
        # translation + servo excitation (open-loop torque would tumble)
        ends = []
        for sub in (10, 20):
            plant, uav, _ = make_plant(substeps=sub)
            th0 = plant.theta.copy()
            for k in range(6000):
                t = 0.01 * k
                f = hover_force(uav) + [0.02 * np.sin(0.7 * t),
                                        0.02 * np.cos(0.5 * t), 0.0]
                plant.step(f, np.zeros(3), th0 + 0.2 * np.sin(0.3 * t))
            ends.append(plant.p.copy())
        assert np.linalg.norm(ends[0] - ends[1]) < 1e-4


class TestDisturbances:
    def test_backlash_dead_zone(self):
        cfg = DisturbanceConfig(backlash_halfwidth=0.5 * DEG)
        plant, uav, _ = make_plant(cfg=cfg)
        f = hover_force(uav)
        th0 = plant.theta.copy()
        for k in range(200):
            cmd = th0 + 0.2 * DEG * np.sin(0.2 * k)
            plant.step(f, np.zeros(3), cmd)
            np.testing.assert_array_equal(plant.theta, th0)

    def test_backlash_large_commands_pass(self):
        cfg = DisturbanceConfig(backlash_halfwidth=0.5 * DEG)
        plant, uav, _ = make_plant(cfg=cfg)
        cmd = plant.theta + 0.3
        for _ in range(1200):   # 12 s, ~14 time constants
            plant.step(hover_force(uav), np.zeros(3), cmd)
        # settles half a degree short of the command
        np.testing.assert_allclose(plant.theta, cmd - 0.5 * DEG, atol=1e-4)

    def test_mass_mismatch_descends(self):
        cfg = DisturbanceConfig(mass_scale=0.10)
        plant, uav, _ = make_plant(cfg=cfg)
        f = hover_force(uav)   # nominal hover force, 10% light
        th0 = plant.theta.copy()
        for _ in range(100):   # 1 s
            plant.step(f, np.zeros(3), th0)
        # a = -g * (1 - 1/1.1); z drop = a t^2 / 2 at t = 1
        expect = 0.5 * uav.gravity * (1 - 1 / 1.1)
        assert 1.3 - plant.p[2] == pytest.approx(expect, rel=1e-3)

    def test_ground_effect_pushes_up(self):
        cfg = DisturbanceConfig(ground_enabled=True, ground_gain=0.2,
                                ground_z_threshold=1.0)
        plant, uav, _ = make_plant(cfg=cfg, p0=(0, 0, 0.5))
        f = hover_force(uav)
        th0 = plant.theta.copy()
        plant.step(f, np.zeros(3), th0)
        assert plant.v[2] > 0.0
        # sized near 5% of hover at z = 0.5
        boost = 0.2 * 0.25 / (uav.mass_matrix[2] * uav.gravity)
        assert 0.03 < boost < 0.07

    def test_constant_force_bias_accelerates(self):
        cfg = DisturbanceConfig(force_bias=np.array([0.05, 0, 0]))
        plant, uav, _ = make_plant(cfg=cfg)
        th0 = plant.theta.copy()
        for _ in range(50):
            plant.step(hover_force(uav), np.zeros(3), th0)
        expect = 0.05 / (uav.mass_matrix[0] * 1.0) * 0.5
        assert plant.v[0] == pytest.approx(expect, rel=1e-6)

    def test_coupling_active_only_while_arm_moves(self):
        cfg = DisturbanceConfig(
            coupling_gain=0.005 * np.ones((3, 4)))
        plant, uav, _ = make_plant(cfg=cfg)
        f = hover_force(uav)
        th0 = plant.theta.copy()
        for _ in range(20):
            plant.step(f, np.zeros(3), th0)
        v_static = np.linalg.norm(plant.v)
        plant.step(f, np.zeros(3), th0 + 0.4)   # kick the arm
        assert np.linalg.norm(plant.v) > v_static
        # envelope: reaction stays a small fraction of hover thrust
        thdd_peak = plant.arm_true.rate_limit / plant.arm_true.beta.min()
        peak = np.abs(cfg.coupling_gain).sum(axis=1).max() * thdd_peak
        assert peak < 0.1 * uav.mass_matrix[2] * uav.gravity

    def test_servo_bias_shifts_rest_point(self):
        cfg = DisturbanceConfig(servo_bias=np.array([0.02, 0, 0, 0]))
        plant, uav, _ = make_plant(cfg=cfg)
        th0 = plant.theta.copy()
        for _ in range(800):
            plant.step(hover_force(uav), np.zeros(3), th0)
        assert plant.theta[0] == pytest.approx(th0[0] + 0.02, abs=1e-5)
        np.testing.assert_allclose(plant.theta[1:], th0[1:], atol=1e-9)


class TestMeasurement:
    def test_zero_noise_is_truth(self):
        plant, uav, _ = make_plant()
        m = plant.measure()
        np.testing.assert_array_equal(m.p, plant.p)
        np.testing.assert_array_equal(m.R, plant.R)
        np.testing.assert_array_equal(m.theta, plant.theta)

    def test_noise_statistics(self):
        cfg = DisturbanceConfig(pos_noise=0.01)
        plant, _, _ = make_plant(cfg=cfg, seed=7)
        draws = np.array([plant.measure().p - plant.p for _ in range(10000)])
        assert draws.std() == pytest.approx(0.01, rel=0.05)
        assert abs(draws.mean()) < 5e-4

    def test_rotation_noise_keeps_orthonormality(self):
        cfg = DisturbanceConfig(rot_noise=0.01)
        plant, _, _ = make_plant(cfg=cfg, seed=3)
        R = plant.measure().R
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)


class TestGuards:
    def test_blowup_raises(self):
        plant, _, _ = make_plant()
        plant.v[0] = 19.0
        with pytest.raises(PlantDivergence):
            for _ in range(300):
                plant.step(np.zeros(3), np.zeros(3), plant.theta)

    def test_command_clamp_flag(self):
        plant, uav, _ = make_plant()
        assert not plant.clamped
        plant.step([0, 0, 5.0], np.zeros(3), plant.theta)  # fz limit is 2
        assert plant.clamped

    def test_pinned_base_moves_arm_only(self):
        plant, _, _ = make_plant(pin_base=True)
        p0 = plant.p.copy()
        for _ in range(100):
            plant.step(np.zeros(3), np.zeros(3), plant.theta + 0.3)
        np.testing.assert_array_equal(plant.p, p0)
        assert np.linalg.norm(plant.v) == 0.0
        assert plant.theta[0] > 0.5  # arm still answered

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DisturbanceConfig(backlash_halfwidth=-0.1)
        with pytest.raises(ValueError):
            DisturbanceConfig(coupling_gain=np.zeros((2, 4)))


class TestScalarKernel:
    def test_accel_matches_array_dynamics(self):
        # the unrolled inner loop must agree with the vectorized reference
        # to the last bit of rounding
        from uamctl.geometry import exp_so3
        from uamctl.uav_dynamics import accel_arrays

        cfg = benchmark_disturbances(noise=False)
        plant, _, _ = make_plant(cfg=cfg)
        par = plant.uav_true
        rng = np.random.default_rng(7)
        for _ in range(50):
            R = exp_so3(rng.standard_normal(3))
            v = rng.standard_normal(6)
            pz = rng.uniform(0.2, 2.0)
            fb = rng.standard_normal(3)
            tq = rng.standard_normal(3)
            f_ext = np.array(plant._bias)
            if pz < cfg.ground_z_threshold:
                f_ext = f_ext + [0, 0, cfg.ground_gain
                                 * (cfg.ground_z_threshold - pz) ** 2]
            ref = accel_arrays(R[None], v[None], fb[None], tq[None], par,
                               force_ext_world=f_ext[None])[0]
            got = plant._accel(tuple(R.ravel()), v[3], v[4], v[5], pz,
                               fb[0], fb[1], fb[2], tq[0], tq[1], tq[2])
            np.testing.assert_allclose(got, ref, rtol=0, atol=1e-13)
