"""
Force manipulability ellipsoid and directional force capacity

The force ellipsoid of a 3x4 position Jacobian is {f : |J^T f| <= 1}, whose
shape matrix is M_F = (J J^T)^-1. Its radius along a unit direction d is
1 / sqrt(d^T J J^T d). The velocity ellipsoid {J qdot : |qdot| <= 1} has
support sqrt(d^T J J^T d) along d, so the two measures are reciprocal.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from .exceptions import DegenerateJacobian
from .skeleton import ArmState, BodyGeometry, jacobian_derivatives, position_jacobian
from .utils import ArrayLike, as_vector

logger = logging.getLogger(__name__)

REGULARIZATION = 1e-10
CONDITION_LIMIT = 1e12


class CapacityMode(str, Enum):
    """How the directional force capacity is measured"""
    RADIUS = "radius"  # ellipsoid radius along d
    PROJECTION = "projection"  # sqrt(lambda_max) * |v_max . d|


@dataclass(frozen=True)
class ForceEllipsoid:
    """Force ellipsoid with eigen-data sorted by descending eigenvalue"""

    M_F: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    velocity_matrix: np.ndarray  # regularized J J^T

    @property
    def radii(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    @property
    def volume(self) -> float:
        return float(4.0 / 3.0 * math.pi * np.prod(self.radii))

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def major_axis(self) -> np.ndarray:
        return self.eigenvectors[:, 0]

    @classmethod
    def from_matrix(cls, M_F: np.ndarray) -> "ForceEllipsoid":
        """Build from a symmetric positive-definite shape matrix"""
        M_F = np.asarray(M_F, dtype=float)
        if M_F.shape != (3, 3) or not np.allclose(M_F, M_F.T):
            raise ValueError("force ellipsoid matrix must be symmetric 3x3")
        values, vectors = _sorted_eigh(M_F)
        if values[-1] <= 0.0:
            raise ValueError("force ellipsoid matrix must be positive definite")
        return cls(M_F, values, vectors, np.linalg.inv(M_F))


def _sorted_eigh(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values, vectors = np.linalg.eigh(matrix)
    order = np.argsort(values)[::-1]
    return values[order], vectors[:, order]


def regularized_gram(J: np.ndarray) -> np.ndarray:
    """
    J J^T + sigma I with sigma = 1e-10 * trace(J J^T) / 3

    Raises:
        DegenerateJacobian: Non-finite entries, zero Jacobian, or condition
            number above 1e12 after regularization
    """
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != 3:
        raise ValueError(f"expected a 3xN Jacobian, got shape {J.shape}")
    if not np.all(np.isfinite(J)):
        raise DegenerateJacobian("Jacobian has non-finite entries")

    gram = J @ J.T
    trace = float(np.trace(gram))
    if trace <= 0.0:
        raise DegenerateJacobian("Jacobian is identically zero")

    gram = gram + REGULARIZATION * trace / 3.0 * np.eye(3)
    cond = float(np.linalg.cond(gram))
    if not math.isfinite(cond) or cond > CONDITION_LIMIT:
        raise DegenerateJacobian(
            f"J J^T condition number {cond:.3e} exceeds {CONDITION_LIMIT:.0e}",
            details={"condition_number": cond},
        )
    return gram


def force_ellipsoid(J: np.ndarray) -> ForceEllipsoid:
    """
    Force manipulability ellipsoid of a position Jacobian

    Args:
        J: 3xN position Jacobian

    Returns:
        ForceEllipsoid with M_F = (J J^T + sigma I)^-1

    Raises:
        DegenerateJacobian: J J^T is numerically singular
    """
    gram = regularized_gram(J)
    M_F = np.linalg.inv(gram)
    M_F = 0.5 * (M_F + M_F.T)
    values, vectors = _sorted_eigh(M_F)
    return ForceEllipsoid(M_F, values, vectors, gram)


def _unit(d: ArrayLike) -> np.ndarray:
    d = as_vector(d, 3, "direction")
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector (norm {np.linalg.norm(d):.6g})")
    return d


def force_capacity_along(
    ellipsoid: ForceEllipsoid, d: ArrayLike, mode: CapacityMode = CapacityMode.RADIUS
) -> float:
    """
    Force capacity of the ellipsoid along a unit direction

    Args:
        ellipsoid: Force ellipsoid
        d: Unit direction
        mode: ``radius`` returns 1/sqrt(d^T J J^T d); ``projection`` returns
            sqrt(lambda_max) * |v_max . d|

    Returns:
        Non-negative capacity, invariant to the sign of d
    """
    d = _unit(d)
    if CapacityMode(mode) is CapacityMode.PROJECTION:
        return float(math.sqrt(ellipsoid.lambda_max) * abs(ellipsoid.major_axis @ d))
    return float(1.0 / math.sqrt(d @ ellipsoid.velocity_matrix @ d))


def velocity_capacity_along(ellipsoid: ForceEllipsoid, d: ArrayLike) -> float:
    """Support of the velocity ellipsoid along d, sqrt(d^T J J^T d)"""
    d = _unit(d)
    return float(math.sqrt(d @ ellipsoid.velocity_matrix @ d))


def arm_capacity(
    state: ArmState,
    geom: BodyGeometry,
    d: ArrayLike,
    mode: CapacityMode = CapacityMode.RADIUS,
) -> Tuple[float, np.ndarray]:
    """
    Force capacity of one arm along d and its gradient with respect to q

    The radius gradient is analytic, dr/dq_j = -(d^T dJ_j)(J^T d) / (d^T J J^T d)^1.5
    (the regularization term is treated as constant). The projection mode
    uses central differences.
    """
    d = _unit(d)
    J = position_jacobian(state, geom)
    ellipsoid = force_ellipsoid(J)
    value = force_capacity_along(ellipsoid, d, mode)

    if CapacityMode(mode) is CapacityMode.PROJECTION:
        grad = np.zeros(4)
        step = 1e-6
        for j in range(4):
            offset = np.zeros(4)
            offset[j] = step
            up = force_capacity_along(force_ellipsoid(position_jacobian(ArmState(state.q + offset, state.side), geom)), d, mode)
            down = force_capacity_along(force_ellipsoid(position_jacobian(ArmState(state.q - offset, state.side), geom)), d, mode)
            grad[j] = (up - down) / (2 * step)
        return value, grad

    quad = float(d @ ellipsoid.velocity_matrix @ d)
    jt_d = J.T @ d
    dJ = jacobian_derivatives(state, geom)
    grad = np.array([-(d @ dJ[j]) @ jt_d for j in range(4)]) / quad ** 1.5
    return value, grad
