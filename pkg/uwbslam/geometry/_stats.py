import math
import numbers
from typing import Union

import numpy as np
from scipy import linalg, stats

from ..config import ParameterError
from ..config.slam_types import Vector3
from ._pose import wrap_angle

__all__ = ["Covariance3", "InvalidCovarianceError", "mahalanobis", "mahalanobis_squared", "chi2_quantile"]

_SYMMETRY_TOL = 1e-12


class InvalidCovarianceError(ValueError):
    def __init__(self, reason: str):
        super().__init__(f"Invalid covariance: {reason}.")


class Covariance3:
    """
    3x3 symmetric positive-definite covariance over (x, y, theta).

    The Cholesky factorization is the positive-definiteness check and is kept for
    whitening residuals.
    """
    __slots__ = ("_matrix", "_chol")

    def __init__(self, matrix):
        if isinstance(matrix, Covariance3):
            matrix = matrix.matrix
        m = np.array(matrix, dtype=float)
        if m.shape != (3, 3):
            raise InvalidCovarianceError(f"expected a 3x3 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidCovarianceError("non-finite entries")
        if np.max(np.abs(m - m.T)) > _SYMMETRY_TOL:
            raise InvalidCovarianceError("matrix is not symmetric")
        try:
            chol = linalg.cholesky(m, lower=True)
        except linalg.LinAlgError:
            raise InvalidCovarianceError("matrix is not positive-definite")
        m.setflags(write=False)
        chol.setflags(write=False)
        self._matrix = m
        self._chol = chol

    @classmethod
    def from_sigmas(cls, sigma_x: float, sigma_y: float, sigma_theta: float) -> "Covariance3":
        return cls(np.diag([sigma_x ** 2, sigma_y ** 2, sigma_theta ** 2]))

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol

    @property
    def information(self) -> np.ndarray:
        return linalg.cho_solve((self._chol, True), np.eye(3))

    def upper_triangle(self):
        """(xx, xy, xt, yy, yt, tt)"""
        m = self._matrix
        return m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2]

    @classmethod
    def from_upper_triangle(cls, values) -> "Covariance3":
        xx, xy, xt, yy, yt, tt = values
        return cls([[xx, xy, xt], [xy, yy, yt], [xt, yt, tt]])

    def __eq__(self, other):
        if not isinstance(other, Covariance3):
            return NotImplemented
        return np.array_equal(self._matrix, other.matrix)

    def __hash__(self):
        return hash(self._matrix.tobytes())

    def __repr__(self):
        return f"Covariance3({self._matrix.tolist()})"


def mahalanobis_squared(residual: Vector3, cov: Union[Covariance3, np.ndarray]) -> float:
    cov = cov if isinstance(cov, Covariance3) else Covariance3(cov)
    r = np.array(residual, dtype=float).reshape(3)
    r[2] = wrap_angle(r[2])
    z = linalg.solve_triangular(cov.cholesky, r, lower=True)
    return float(z @ z)


def mahalanobis(residual: Vector3, cov: Union[Covariance3, np.ndarray]) -> float:
    """
    sqrt(r^T cov^-1 r) with the heading component of ``r`` wrapped first.

    Raises:
        InvalidCovarianceError: ``cov`` is not symmetric positive-definite.
    """
    return math.sqrt(mahalanobis_squared(residual, cov))


def chi2_quantile(significance: float, dof: int) -> float:
    """
    Threshold of the chi-squared test at ``significance``: the (1 - significance)
    quantile with ``dof`` degrees of freedom.
    """
    if not isinstance(significance, numbers.Real) or not 0.0 < significance < 1.0:
        raise ParameterError("significance", significance, "a value in (0, 1)")
    if isinstance(dof, bool) or not isinstance(dof, numbers.Integral) or dof < 1:
        raise ParameterError("dof", dof, "a positive integer")
    return float(stats.chi2.isf(significance, int(dof)))
