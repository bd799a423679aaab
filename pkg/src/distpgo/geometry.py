"""SO(3)/SE(3) primitives: exponential/logarithm maps, skew operator,
chordal distance, and nearest-rotation projection via SVD.

Rotations are plain 3x3 numpy arrays (row-major). All functions are pure
and stateless, so they are safe to call from any number of threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-9
_SMALL_ANGLE = 1e-8
# Must be wide enough that inputs passing the trace > -1 + 1e-12 guard
# (angle below pi - 1e-6) can still reach the symmetric-part branch.
_NEAR_PI = 1e-4

I3 = np.eye(3)


def skew(theta: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix S(theta) with S(theta) @ v == cross(theta, v)."""
    x, y, z = np.asarray(theta, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(S: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` for a skew-symmetric matrix."""
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


# Generators of so(3): columns of rotation Jacobians come from these.
SO3_GENERATORS = (skew([1.0, 0.0, 0.0]), skew([0.0, 1.0, 0.0]), skew([0.0, 0.0, 1.0]))


def exp_map(theta: np.ndarray) -> np.ndarray:
    """Exponential map so(3) -> SO(3) for an axis-angle 3-vector.

    Uses the closed form I + a*S + b*S^2 with a Taylor fallback below
    the small-angle threshold so the map stays accurate near zero.
    """
    theta = np.asarray(theta, dtype=float).reshape(3)
    angle = float(np.linalg.norm(theta))
    S = skew(theta)
    if angle < _SMALL_ANGLE:
        return I3 + S + 0.5 * (S @ S)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return I3 + a * S + b * (S @ S)


def first_order_exp(theta: np.ndarray) -> np.ndarray:
    """First-order approximation I + S(theta) of the exponential map."""
    return I3 + skew(theta)


def is_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    """True when R is orthogonal with unit determinant within tol."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (
        np.linalg.norm(R.T @ R - I3) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def log_map(R: np.ndarray) -> np.ndarray:
    """Logarithm map SO(3) -> so(3), returning the axis-angle 3-vector.

    Requires trace(R) > -1 + 1e-12 (angle strictly below pi). Inputs
    within the near-pi band are handled by extracting the axis from the
    symmetric part (R + I)/2; such inputs are flagged with a warning,
    with the axis sign fixed so its first nonzero component is positive.
    """
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, tol=1e-6):
        raise ValueError("log_map input is not a rotation matrix")
    tr = float(np.trace(R))
    if tr <= -1.0 + 1e-12:
        raise ValueError("log_map undefined at rotation angle pi (trace == -1)")
    cos_angle = min(1.0, max(-1.0, 0.5 * (tr - 1.0)))
    angle = float(np.arccos(cos_angle))
    if angle < _SMALL_ANGLE:
        # theta = vee(R - R^T)/2 * (1 + angle^2/6 + O(angle^4))
        return 0.5 * vee(R - R.T) * (1.0 + angle * angle / 6.0)
    if angle > np.pi - _NEAR_PI:
        warnings.warn("log_map input within near-pi band; using symmetric-part axis",
                      RuntimeWarning, stacklevel=2)
        # At angle pi, (R + I)/2 == k k^T; read the axis off the dominant column.
        B = 0.5 * (R + I3)
        i = int(np.argmax(np.diag(B)))
        k = B[:, i] / np.sqrt(max(B[i, i], 1e-15))
        k /= np.linalg.norm(k)
        nz = np.nonzero(np.abs(k) > 1e-12)[0]
        if nz.size and k[nz[0]] < 0.0:
            k = -k
        sin_angle = 0.5 * np.linalg.norm(vee(R - R.T))
        angle = float(np.arctan2(sin_angle, cos_angle))
        return angle * k
    return angle / (2.0 * np.sin(angle)) * vee(R - R.T)


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Nearest rotation to M in Frobenius norm, via SVD with sign fix.

    When det(U V^T) == -1 the column of U paired with the smallest
    singular value is negated. Rank-deficient inputs are flagged with a
    warning; the LAPACK SVD makes the tie-break deterministic.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("project_to_so3 input must be finite")
    U, sigma, Vt = np.linalg.svd(M)
    if sigma[-1] <= 1e-12 * max(1.0, sigma[0]):
        warnings.warn("project_to_so3 input is rank deficient; projection not unique",
                      RuntimeWarning, stacklevel=2)
    d = np.sign(np.linalg.det(U @ Vt))
    if d == 0.0:
        d = 1.0
    U = U.copy()
    U[:, 2] *= d
    return U @ Vt


def chordal_residual(R_a: np.ndarray, R_b: np.ndarray, R_meas: np.ndarray) -> float:
    """Squared chordal distance ||R_b - R_a @ R_meas||_F^2 (always in [0, 8])."""
    D = R_b - R_a @ R_meas
    return float(np.sum(D * D))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid 3D transform: rotation matrix plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(I3.copy(), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """Group composition self * other."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -(self.rotation.T @ self.translation))

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def is_valid(self, tol: float = ROTATION_TOL) -> bool:
        return is_rotation(self.rotation, tol) and bool(np.all(np.isfinite(self.translation)))
