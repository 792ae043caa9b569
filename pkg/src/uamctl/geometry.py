"""SO(3)/SE(3) primitives shared by every module.

Rotations are plain (3, 3) orthonormal numpy arrays; most functions also
accept a leading batch axis, i.e. (..., 3) vectors and (..., 3, 3) matrices,
which the optimizer relies on for vectorized linearization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SKEW_TOL = 1e-8


class RotationLogError(ValueError):
    """Raised when log_so3 is evaluated too close to the pi singularity."""


def hat(w: np.ndarray) -> np.ndarray:
    """Map vectors (..., 3) to skew-symmetric matrices (..., 3, 3)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(S: np.ndarray, check: bool = True) -> np.ndarray:
    """Inverse of hat. Rejects matrices that are not skew-symmetric."""
    S = np.asarray(S, dtype=float)
    if check:
        asym = np.abs(S + np.swapaxes(S, -1, -2)).max()
        if asym >= SKEW_TOL:
            raise ValueError(f"matrix is not skew-symmetric (|S + S^T| = {asym:.3e})")
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def rotation_error(R: np.ndarray, R_ref: np.ndarray) -> np.ndarray:
    """Attitude error 0.5 * vee(R_ref^T R - R^T R_ref), zero iff R == R_ref."""
    R = np.asarray(R, dtype=float)
    R_ref = np.asarray(R_ref, dtype=float)
    D = np.swapaxes(R_ref, -1, -2) @ R
    A = D - np.swapaxes(D, -1, -2)
    return 0.5 * vee(A, check=False)


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula, series-stable near zero. (..., 3) -> (..., 3, 3)."""
    w = np.asarray(w, dtype=float)
    theta2 = np.sum(w * w, axis=-1)
    theta = np.sqrt(theta2)
    # sin(t)/t and (1-cos(t))/t^2 with Taylor fallbacks below sqrt(eps)
    small = theta < 1e-5
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
                     np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
                     (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))
    W = hat(w)
    I = np.broadcast_to(np.eye(3), W.shape)
    return I + a[..., None, None] * W + b[..., None, None] * (W @ W)


def log_so3(R: np.ndarray, pi_tol: float = 1e-6) -> np.ndarray:
    """Rotation vector of R. Raises RotationLogError within pi_tol of angle pi."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    c = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(c)
    if np.any(theta > np.pi - pi_tol):
        raise RotationLogError(
            f"rotation angle {float(np.max(theta)):.6f} is within {pi_tol:.1e} of pi; "
            "the logarithm is not uniquely defined there")
    theta2 = theta * theta
    small = theta < 1e-5
    # theta / (2 sin(theta)), series: 0.5 * (1 + t^2/6 + 7 t^4/360)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(small, 0.5 + theta2 / 12.0 + 7.0 * theta2 * theta2 / 720.0,
                     theta / (2.0 * np.sin(np.where(small, 1.0, theta))))
    A = R - np.swapaxes(R, -1, -2)
    return s[..., None] * vee(A, check=False)


def project_so3(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar decomposition)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = U @ Vt
    # flip the last singular direction if the product has negative determinant
    det = np.linalg.det(D)
    if np.any(det < 0):
        U = U.copy()
        U[..., :, 2] = np.where((det < 0)[..., None], -U[..., :, 2], U[..., :, 2])
        D = U @ Vt
    return D


def orthonormalize_fast(R: np.ndarray, iters: int = 1) -> np.ndarray:
    """Newton-Schulz orthogonalization; valid for nearly-orthonormal input.

    Convergence is quadratic, so a single sweep drives integrator drift of
    1e-7 down to round-off; pass more iters for rougher matrices."""
    for _ in range(iters):
        R = 1.5 * R - 0.5 * (R @ np.swapaxes(R, -1, -2)) @ R
    return R


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = 0.5 / np.sqrt(t + 1.0)
        q = np.array([0.25 / s,
                      (R[2, 1] - R[1, 2]) * s,
                      (R[0, 2] - R[2, 0]) * s,
                      (R[1, 0] - R[0, 1]) * s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0))
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def matrix_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for a (w, x, y, z) quaternion (normalized internally)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation from roll-pitch-yaw (x-y-z intrinsic, Rz @ Ry @ Rx)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


@dataclass
class Transform:
    """Rigid transform: x_parent = rotation @ x_child + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Transform":
        RT = self.rotation.T
        return Transform(RT, -RT @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Transform":
        T = np.asarray(T, dtype=float)
        return Transform(T[:3, :3].copy(), T[:3, 3].copy())

    @staticmethod
    def identity() -> "Transform":
        return Transform()
