"""SO(3)/SE(3) rigid-transform algebra.

Rotations are 3x3 orthonormal matrices, poses are (rotation, translation)
pairs, and tangent vectors ("twists") are 6-vectors ordered [wx wy wz, vx vy vz]:
rotational part first (radians), translational part second (meters).

All array functions broadcast over leading dimensions, so the same code path
serves both scalar geometry and the stacked per-factor math in the SLAM
optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Guard band below pi where the rotation log is treated as degenerate.
_LOG_ANGLE_GUARD = 1e-9
# Angle below which Taylor expansions replace the closed-form coefficients.
_SMALL_ANGLE = 1e-6
# Composition chains longer than this get their rotation re-orthonormalized.
_RENORM_INTERVAL = 100


class DegenerateRotationError(ValueError):
    """Rotation logarithm requested at (or numerically at) angle pi."""


def so3_hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [w]x such that [w]x v = w x v."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def so3_vee(W: np.ndarray) -> np.ndarray:
    """Inverse of so3_hat for skew-symmetric input."""
    W = np.asarray(W, dtype=float)
    return np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], axis=-1)


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation vector -> rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    th = theta[..., None, None]
    W = so3_hat(w)
    WW = W @ W
    small = th < _SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - th**2 / 6.0, np.sin(th) / np.where(small, 1.0, th))
        b = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(th)) / np.where(small, 1.0, th**2))
    return np.eye(3) + a * W + b * WW


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> rotation vector (angle < pi).

    Raises DegenerateRotationError when the angle is within the guard band of
    pi, where the axis is ambiguous.
    """
    R = np.asarray(R, dtype=float)
    tr = R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2]
    cos_theta = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    # sin(theta) * axis from the skew part.
    v = 0.5 * np.stack(
        [
            R[..., 2, 1] - R[..., 1, 2],
            R[..., 0, 2] - R[..., 2, 0],
            R[..., 1, 0] - R[..., 0, 1],
        ],
        axis=-1,
    )
    sin_norm = np.linalg.norm(v, axis=-1)
    theta = np.arccos(cos_theta)
    # Near pi the arccos of a trace loses precision; recover the angle from
    # sin(theta) instead, which stays well conditioned there.
    near_pi = theta > 2.9
    theta = np.where(near_pi, np.pi - np.arcsin(np.clip(sin_norm, 0.0, 1.0)), theta)
    if np.any(theta >= np.pi - _LOG_ANGLE_GUARD):
        raise DegenerateRotationError("rotation angle at pi: axis is ambiguous")

    th = theta[..., None]
    small = th < _SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(
            small,
            1.0 + th**2 / 6.0,
            th / np.where(np.abs(np.sin(th)) < 1e-300, 1.0, np.sin(th)),
        )
    w_generic = scale * v

    # Near pi, extract the axis from the diagonal of R (stable) and fix signs
    # using the skew part.
    diag = np.stack([R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]], axis=-1)
    one_minus_cos = np.clip(1.0 - cos_theta[..., None], 1e-12, None)
    axis_sq = np.clip((diag - cos_theta[..., None]) / one_minus_cos, 0.0, None)
    axis = np.sqrt(axis_sq)
    sign = np.where(v >= 0.0, 1.0, -1.0)
    axis = axis * sign
    norm = np.linalg.norm(axis, axis=-1, keepdims=True)
    axis = axis / np.where(norm < 1e-300, 1.0, norm)
    w_near_pi = axis * th

    return np.where(near_pi[..., None], w_near_pi, w_generic)


def so3_project(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (Frobenius) via SVD, det fixed to +1."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.eye(3).copy()
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def rotation_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle ||log(b^T a)||_2 in [0, pi]; symmetric in a, b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    E = np.swapaxes(b, -1, -2) @ a
    tr = E[..., 0, 0] + E[..., 1, 1] + E[..., 2, 2]
    cos_theta = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    # Refine away from the poorly conditioned arccos ends using sin(theta).
    v = 0.5 * np.stack(
        [
            E[..., 2, 1] - E[..., 1, 2],
            E[..., 0, 2] - E[..., 2, 0],
            E[..., 1, 0] - E[..., 0, 1],
        ],
        axis=-1,
    )
    sin_norm = np.clip(np.linalg.norm(v, axis=-1), 0.0, 1.0)
    theta = np.where(theta > 2.9, np.pi - np.arcsin(sin_norm), theta)
    theta = np.where(theta < 0.3, np.arcsin(sin_norm), theta)
    return theta if theta.ndim else float(theta)


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    """Left Jacobian of SO(3): exp(w + dw) ~ exp(J dw) exp(w)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    W = so3_hat(w)
    WW = W @ W
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(theta)) / safe**2)
    c = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (theta - np.sin(theta)) / safe**3)
    return np.eye(3) + b * W + c * WW


def so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    """Inverse of so3_left_jacobian (valid for angle < pi)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    W = so3_hat(w)
    WW = W @ W
    # The closed form cancels catastrophically below ~0.3 rad (error ~eps/theta^4),
    # so the series takes over well before that.
    small = theta < 0.3
    safe = np.where(small, 1.0, theta)
    one_minus_cos = np.where(small, 1.0, 1.0 - np.cos(safe))
    t2 = theta**2
    series = (
        1.0 / 12.0 + t2 / 720.0 + t2**2 / 30240.0
        + t2**3 / 1209600.0 + t2**4 / 47900160.0
    )
    c = np.where(
        small,
        series,
        (1.0 - safe * np.sin(safe) / (2.0 * one_minus_cos)) / safe**2,
    )
    return np.eye(3) - 0.5 * W + c * WW


def _se3_q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Coupling block of the SE(3) left Jacobian (translation rows, rotation cols)."""
    ph = so3_hat(phi)
    rh = so3_hat(rho)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    small = theta < 1e-2  # the c3 closed form cancels like eps/theta^4
    safe = np.where(small, 1.0, theta)
    sin_t = np.sin(safe)
    cos_t = np.cos(safe)
    c1 = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (safe - sin_t) / safe**3)
    c2 = np.where(
        small,
        1.0 / 24.0 - theta**2 / 720.0,
        (safe**2 / 2.0 + cos_t - 1.0) / safe**4,
    )
    c3 = np.where(
        small,
        -1.0 / 120.0 + theta**2 / 5040.0,
        (safe - sin_t - safe**3 / 6.0) / safe**5,
    )
    m1 = ph @ rh + rh @ ph + ph @ rh @ ph
    m2 = ph @ ph @ rh + rh @ ph @ ph - 3.0 * (ph @ rh @ ph)
    m3 = ph @ rh @ ph @ ph + ph @ ph @ rh @ ph
    return 0.5 * rh + c1 * m1 + c2 * m2 + 0.5 * (c2 + 3.0 * c3) * m3


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    """Left Jacobian of SE(3) in [rot, trans] twist ordering."""
    xi = np.asarray(xi, dtype=float)
    phi = xi[..., :3]
    rho = xi[..., 3:]
    J = so3_left_jacobian(phi)
    Q = _se3_q_matrix(rho, phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., 3:, 3:] = J
    out[..., 3:, :3] = Q
    return out


def se3_left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """Inverse of se3_left_jacobian (angle < pi)."""
    xi = np.asarray(xi, dtype=float)
    phi = xi[..., :3]
    rho = xi[..., 3:]
    Jinv = so3_left_jacobian_inv(phi)
    Q = _se3_q_matrix(rho, phi)
    out = np.zeros(xi.shape[:-1] + (6, 6))
    out[..., :3, :3] = Jinv
    out[..., 3:, 3:] = Jinv
    out[..., 3:, :3] = -Jinv @ Q @ Jinv
    return out


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian: d/dd log(exp(xi) exp(d)) at d = 0."""
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


def se3_exp_rt(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """SE(3) exponential as a (rotation, translation) pair."""
    xi = np.asarray(xi, dtype=float)
    phi = xi[..., :3]
    rho = xi[..., 3:]
    R = so3_exp(phi)
    t = (so3_left_jacobian(phi) @ rho[..., None])[..., 0]
    return R, t


def se3_log_rt(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """SE(3) logarithm of a (rotation, translation) pair -> twist."""
    phi = so3_log(R)
    rho = (so3_left_jacobian_inv(phi) @ np.asarray(t, dtype=float)[..., None])[..., 0]
    return np.concatenate([phi, rho], axis=-1)


def se3_adjoint_rt(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Adjoint of a pose in [rot, trans] twist ordering."""
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = so3_hat(t) @ R
    return out


@dataclass(frozen=True)
class Pose3:
    """Immutable rigid transform: x_world = rotation @ x_local + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    _gen: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_rt(R: np.ndarray, t: np.ndarray) -> "Pose3":
        return Pose3(R, t)

    @staticmethod
    def from_matrix(M: np.ndarray) -> "Pose3":
        M = np.asarray(M, dtype=float)
        return Pose3(M[:3, :3], M[:3, 3])

    @staticmethod
    def from_planar(x: float, y: float, yaw: float, z: float = 0.0,
                    pitch: float = 0.0, roll: float = 0.0) -> "Pose3":
        """Pose from planar coordinates, yaw about +z, then pitch (y), roll (x)."""
        cy, sy = np.cos(yaw), np.sin(yaw)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cr, sr = np.cos(roll), np.sin(roll)
        Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        return Pose3(Rz @ Ry @ Rx, np.array([x, y, z]))

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "Pose3") -> "Pose3":
        """Group product self * other."""
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        gen = max(self._gen, other._gen) + 1
        if gen >= _RENORM_INTERVAL:
            R = so3_project(R)
            gen = 0
        return Pose3(R, t, gen)

    def __matmul__(self, other: "Pose3") -> "Pose3":
        return self.compose(other)

    def inverse(self) -> "Pose3":
        Rt = self.rotation.T
        return Pose3(Rt, -(Rt @ self.translation), self._gen)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def log(self) -> np.ndarray:
        return se3_log_rt(self.rotation, self.translation)

    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def distance_to(self, other: "Pose3") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def is_close(self, other: "Pose3", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def flat(self) -> np.ndarray:
        """Row-major rotation followed by translation (12 values), for logs."""
        return np.concatenate([self.rotation.reshape(9), self.translation])

    @staticmethod
    def from_flat(values) -> "Pose3":
        v = np.asarray(values, dtype=float)
        if v.shape != (12,):
            raise ValueError("flat pose needs 12 values")
        return Pose3(v[:9].reshape(3, 3), v[9:])


def se3_exp(xi: np.ndarray) -> Pose3:
    """SE(3) exponential map of a single twist."""
    R, t = se3_exp_rt(xi)
    return Pose3(R, t)


def se3_log(pose: Pose3) -> np.ndarray:
    """SE(3) logarithm of a pose (rotation angle < pi)."""
    return pose.log()


def format_pose(pose: Pose3) -> str:
    """17-significant-digit serialization used by the trajectory logs."""
    return " ".join(f"{v:.17g}" for v in pose.flat())


def parse_pose(text: str) -> Pose3:
    return Pose3.from_flat([float(tok) for tok in text.split()])
