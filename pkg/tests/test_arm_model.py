import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRot

from uamctl.arm_model import (
    ArmParams, ArmState, DhJoint, dh_matrix, ee_jacobian, fk_ee, fk_ee_arrays,
    fk_frames, servo_rhs,
)
from uamctl.geometry import Transform, exp_so3, log_so3

RNG = np.random.default_rng(7)


def dh_oracle(theta, d, a, alpha):
    """Compose the four elementary transforms explicitly."""
    def rot_z(q):
        c, s = np.cos(q), np.sin(q)
        return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])

    def rot_x(q):
        c, s = np.cos(q), np.sin(q)
        return np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1.0]])

    def trans(x, y, z):
        T = np.eye(4)
        T[:3, 3] = [x, y, z]
        return T

    return rot_z(theta) @ trans(0, 0, d) @ trans(a, 0, 0) @ rot_x(alpha)


def fk_oracle(theta, params, base):
    T = base.as_matrix() @ params.mount.as_matrix()
    for ang, j in zip(theta, params.joints):
        T = T @ dh_oracle(ang + j.theta_offset, j.d, j.a, j.alpha)
    return T


def random_base():
    return Transform(ScipyRot.random(random_state=int(RNG.integers(1 << 31))).as_matrix(),
                     RNG.normal(size=3))


def test_dh_matrix_matches_elementary_composition():
    for _ in range(200):
        q, d, a, al = RNG.normal(size=4)
        np.testing.assert_allclose(dh_matrix(q, d, a, al),
                                   dh_oracle(q, d, a, al), atol=1e-14)


def test_fk_identified_geometry_against_oracle():
    params = ArmParams()
    np.testing.assert_allclose(
        fk_ee(np.zeros(4), params).as_matrix(),
        fk_oracle(np.zeros(4), params, Transform.identity()), atol=1e-14)
    for _ in range(200):
        theta = RNG.uniform(-2.0, 2.0, size=4)
        base = random_base()
        np.testing.assert_allclose(fk_ee(theta, params, base).as_matrix(),
                                   fk_oracle(theta, params, base), atol=1e-12)


def test_fk_degenerate_chain_is_identity():
    params = ArmParams(joints=[DhJoint() for _ in range(4)],
                       mount=Transform.identity())
    np.testing.assert_allclose(fk_ee(np.zeros(4), params).as_matrix(),
                               np.eye(4), atol=1e-15)


def test_fk_left_equivariance():
    params = ArmParams()
    for _ in range(50):
        theta = RNG.uniform(-2, 2, size=4)
        B0, B1 = random_base(), random_base()
        lhs = fk_ee(theta, params, B1 @ B0).as_matrix()
        rhs = (B1 @ fk_ee(theta, params, B0)).as_matrix()
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_fk_batched_matches_scalar():
    params = ArmParams()
    theta = RNG.uniform(-2, 2, size=(64, 4))
    base = random_base()
    p_b = np.broadcast_to(base.translation, (64, 3))
    R_b = np.broadcast_to(base.rotation, (64, 3, 3))
    p, R = fk_ee_arrays(p_b, R_b, theta, params)
    for i in range(64):
        T = fk_ee(theta[i], params, base)
        np.testing.assert_allclose(p[i], T.translation, atol=1e-13)
        np.testing.assert_allclose(R[i], T.rotation, atol=1e-13)


def test_pitch_pitch_pitch_roll_axis_layout():
    # default mount turns joints 1-3 into (near-) pitch joints; the wrist
    # twist makes joint 4 rotate about the EE z axis
    params = ArmParams()
    frames = fk_frames(np.zeros(4), params)
    for i in range(3):
        axis = frames[i].rotation[:, 2]
        assert abs(axis[2]) < 0.25  # nearly horizontal
        assert abs(axis[1]) > 0.95  # aligned with the lateral axis
    wrist_axis = frames[3].rotation[:, 2]
    ee_z = frames[-1].rotation[:, 2]
    assert abs(wrist_axis @ ee_z) > 0.99
    assert abs(wrist_axis[1]) < 0.05  # perpendicular to the pitch axes


def test_ee_jacobian_matches_finite_differences():
    params = ArmParams()
    h = 1e-6
    for _ in range(30):
        theta = RNG.uniform(-1.5, 1.5, size=4)
        base = random_base()
        J = ee_jacobian(theta, params, base)
        T0 = fk_ee(theta, params, base)

        def ee_pose(dq):
            b = Transform(base.rotation @ exp_so3(dq[3:6]),
                          base.translation + dq[:3])
            return fk_ee(theta + dq[6:], params, b)

        J_fd = np.zeros((6, 10))
        for k in range(10):
            dq = np.zeros(10)
            dq[k] = h
            Tp, Tm = ee_pose(dq), ee_pose(-dq)
            J_fd[:3, k] = (Tp.translation - Tm.translation) / (2 * h)
            W = (Tp.rotation - Tm.rotation) / (2 * h) @ T0.rotation.T
            J_fd[3:6, k] = [W[2, 1] - W[1, 2], W[0, 2] - W[2, 0],
                            W[1, 0] - W[0, 1]]
            J_fd[3:6, k] /= 2.0
        scale = max(1.0, np.abs(J).max())
        assert np.abs(J - J_fd).max() / scale < 1e-5


def simulate_servo(theta0, cmd_fn, params, t_end, dt=0.001, bias=0.0):
    theta = np.asarray(theta0, dtype=float).copy()
    n = int(round(t_end / dt))
    for k in range(n):
        t = k * dt

        def rate(th):
            return servo_rhs(ArmState(th), cmd_fn(t), params, bias=bias)

        k1 = rate(theta)
        k2 = rate(theta + 0.5 * dt * k1)
        k3 = rate(theta + 0.5 * dt * k2)
        k4 = rate(theta + dt * k3)
        theta = theta + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return theta


def test_servo_step_response_at_time_constant():
    params = ArmParams()
    cmd = np.array([1.0, -0.8, 0.5, 1.2])
    for i in range(4):
        theta = simulate_servo(np.zeros(4), lambda t: cmd, params,
                               t_end=params.beta[i])
        expected = (1.0 - np.exp(-1.0)) * cmd[i]
        assert abs(theta[i] - expected) < 1e-3


def test_servo_steady_state_includes_bias():
    params = ArmParams()
    cmd = np.array([0.4, -0.3, 0.8, -0.6])
    bias = np.array([0.02, -0.01, 0.015, 0.03])
    theta = simulate_servo(np.zeros(4), lambda t: cmd, params, t_end=12.0,
                           bias=bias)
    np.testing.assert_allclose(theta, cmd + bias, atol=1e-6)


def test_servo_superposition():
    params = ArmParams()
    u1 = np.array([0.5, 0.2, -0.4, 0.9])
    u2 = np.array([-0.3, 0.7, 0.1, -0.5])

    def resp(u):
        return simulate_servo(np.zeros(4), lambda t: u * min(t, 1.0), params,
                              t_end=2.0)

    np.testing.assert_allclose(resp(u1 + u2), resp(u1) + resp(u2), atol=1e-10)


def test_servo_rhs_shape_validation():
    params = ArmParams()
    with pytest.raises(ValueError):
        fk_ee(np.zeros(3), params)
