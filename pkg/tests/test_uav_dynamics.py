import numpy as np
import pytest

from uamctl.geometry import exp_so3
from uamctl.uav_dynamics import (
    FRAME_BODY, FRAME_WORLD, BaseState, UavParams, Wrench, accel_arrays,
    dynamics_rhs, hover_wrench, rk4_step,
)

RNG = np.random.default_rng(99)


def random_state():
    return BaseState(RNG.normal(size=3),
                     exp_so3(RNG.normal(size=3) * 0.8),
                     RNG.normal(size=6))


def newton_euler_oracle(state, f_body, t_body, f_ext_w, t_ext_b, params):
    """Componentwise re-derivation used to pin dynamics_rhs."""
    R, v = state.R, state.v
    om = v[3:6]
    f_w = np.empty(3)
    for i in range(3):
        f_w[i] = sum(R[i, j] * f_body[j] for j in range(3)) + f_ext_w[i]
    dv_lin = np.array([f_w[i] / params.mass_matrix[i] for i in range(3)])
    dv_lin[2] -= params.gravity
    J = params.inertia
    Jom = np.array([sum(J[i, j] * om[j] for j in range(3)) for i in range(3)])
    gyro = np.array([om[1] * Jom[2] - om[2] * Jom[1],
                     om[2] * Jom[0] - om[0] * Jom[2],
                     om[0] * Jom[1] - om[1] * Jom[0]])
    rhs = t_body + t_ext_b - gyro
    dv_ang = np.linalg.solve(J, rhs)
    return np.concatenate([dv_lin, dv_ang])


def test_hover_is_equilibrium():
    params = UavParams()
    for _ in range(20):
        R = exp_so3(RNG.normal(size=3) * 0.5)
        s = BaseState(RNG.normal(size=3), R, np.zeros(6))
        dp, dR, dv = dynamics_rhs(s, hover_wrench(params, R),
                                  Wrench.zero(), params)
        np.testing.assert_allclose(dp, 0.0, atol=1e-12)
        np.testing.assert_allclose(dR, 0.0, atol=1e-12)
        np.testing.assert_allclose(dv, 0.0, atol=1e-12)


def test_free_fall_acceleration():
    params = UavParams()
    for _ in range(20):
        s = BaseState(RNG.normal(size=3), exp_so3(RNG.normal(size=3)),
                      np.r_[RNG.normal(size=3), np.zeros(3)])
        _, _, dv = dynamics_rhs(s, Wrench.zero(), Wrench.zero(), params)
        np.testing.assert_allclose(dv[:3], [0, 0, -params.gravity], atol=1e-12)


def test_rhs_matches_componentwise_oracle():
    params = UavParams(inertia=np.array([[0.025, 0.001, 0.0],
                                         [0.001, 0.011, -0.002],
                                         [0.0, -0.002, 0.013]]))
    for _ in range(50):
        s = random_state()
        f_b, t_b = RNG.normal(size=3), RNG.normal(size=3)
        f_ext = RNG.normal(size=3)
        t_ext = RNG.normal(size=3)
        _, _, dv = dynamics_rhs(s, Wrench(f_b, t_b, FRAME_BODY),
                                Wrench(s.R.T @ f_ext, t_ext, FRAME_BODY),
                                params)
        expected = newton_euler_oracle(s, f_b, t_b, f_ext, t_ext, params)
        np.testing.assert_allclose(dv, expected, atol=1e-10)


def test_external_wrench_frame_conversion():
    params = UavParams()
    s = random_state()
    f_w, t_w = RNG.normal(size=3), RNG.normal(size=3)
    world = Wrench(f_w, t_w, FRAME_WORLD)
    body = Wrench(s.R.T @ f_w, s.R.T @ t_w, FRAME_BODY)
    tau = Wrench(RNG.normal(size=3), RNG.normal(size=3), FRAME_BODY)
    _, _, dv_w = dynamics_rhs(s, tau, world, params)
    _, _, dv_b = dynamics_rhs(s, tau, body, params)
    np.testing.assert_allclose(dv_w, dv_b, atol=1e-12)


def test_wrong_frame_tag_is_rejected():
    params = UavParams()
    s = BaseState()
    world_tau = Wrench(np.zeros(3), np.zeros(3), FRAME_WORLD)
    with pytest.raises(ValueError):
        dynamics_rhs(s, world_tau, Wrench.zero(), params)
    with pytest.raises(ValueError):
        rk4_step(s, world_tau, Wrench.zero(), params, 0.01)
    with pytest.raises(ValueError):
        Wrench(np.zeros(3), np.zeros(3), "vehicle")


def test_rk4_free_fall_one_second():
    params = UavParams()
    s = BaseState(np.array([0.0, 0.0, 10.0]), np.eye(3), np.zeros(6))
    for _ in range(100):
        s = rk4_step(s, Wrench.zero(), Wrench.zero(), params, 0.01)
    # closed form: dz = -g/2 * t^2, vz = -g t
    assert abs(s.p[2] - (10.0 - 0.5 * params.gravity)) < 1e-6
    assert abs(s.v[2] + params.gravity) < 1e-9


def test_rk4_dt_validation():
    params = UavParams()
    s = BaseState()
    for dt in (0.0, -0.01, 0.11):
        with pytest.raises(ValueError):
            rk4_step(s, Wrench.zero(), Wrench.zero(), params, dt)
    rk4_step(s, Wrench.zero(), Wrench.zero(), params, 0.1)


def integrate(s, tau, params, dt, t_end):
    n = int(round(t_end / dt))
    for _ in range(n):
        s = rk4_step(s, tau, Wrench.zero(), params, dt)
    return s


def test_rk4_fourth_order_convergence():
    params = UavParams()
    s0 = BaseState(np.zeros(3), exp_so3(np.array([0.3, -0.2, 0.1])),
                   np.array([0.1, -0.2, 0.05, 0.8, -0.6, 0.9]))
    tau = Wrench(np.array([0.02, -0.03, 1.05]), np.array([0.004, 0.003, -0.002]))
    ref = integrate(s0.copy(), tau, params, 0.000625, 0.4)

    def endpoint_err(dt):
        s = integrate(s0.copy(), tau, params, dt, 0.4)
        return np.linalg.norm(s.p - ref.p) + np.linalg.norm(s.v - ref.v) \
            + np.linalg.norm(s.R - ref.R)

    e1, e2 = endpoint_err(0.02), endpoint_err(0.01)
    assert e1 / e2 >= 2 ** 3.5


def test_gyroscopic_term_is_workless():
    params = UavParams(inertia=np.array([[0.025, 0.002, -0.001],
                                         [0.002, 0.011, 0.001],
                                         [-0.001, 0.001, 0.013]]))
    for _ in range(100):
        om = RNG.normal(size=3) * 3
        Jom = params.inertia @ om
        assert abs(om @ np.cross(om, Jom)) < 1e-10
        # torque-free angular acceleration does not change kinetic energy
        s = BaseState(np.zeros(3), np.eye(3), np.r_[np.zeros(3), om])
        _, _, dv = dynamics_rhs(s, Wrench.zero(), Wrench.zero(), params)
        assert abs(om @ (params.inertia @ dv[3:6])) < 1e-10


def test_principal_axis_spin_preserves_rate():
    params = UavParams()  # diagonal inertia
    s = BaseState(np.zeros(3), np.eye(3),
                  np.array([0.0, 0.0, 0.0, 0.0, 0.0, 2.0]))
    tau = Wrench(hover_wrench(params, np.eye(3)).force * 0, np.zeros(3))
    rates = []
    for _ in range(1000):  # 10 s
        s = rk4_step(s, tau, Wrench.zero(), params, 0.01)
        rates.append(np.linalg.norm(s.v[3:6]))
    assert np.abs(np.array(rates) - 2.0).max() < 1e-8


def test_accel_arrays_batched_matches_single():
    params = UavParams()
    R = exp_so3(RNG.normal(size=(32, 3)) * 0.5)
    v = RNG.normal(size=(32, 6))
    f = RNG.normal(size=(32, 3))
    t = RNG.normal(size=(32, 3))
    batched = accel_arrays(R, v, f, t, params)
    for i in range(32):
        np.testing.assert_allclose(
            batched[i], accel_arrays(R[i], v[i], f[i], t[i], params),
            atol=1e-13)
