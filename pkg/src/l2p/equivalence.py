"""Change of basis between history-weight vectors and difference expansions.

Any linear combination over the feature history equals a combination of
backward differences taken at the most recent step, and vice versa; the
change of basis is the signed lower-triangular Pascal matrix, which is its
own inverse. Conversions use triangular solves (the diagonal is exactly
+-1) rather than explicit inversion.

Ordering: weight rows are stored oldest-first (index j multiplies F(j)),
while the difference-side vector is naturally most-recent-first; the
conversion functions handle the reversal internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .core import IndexOutOfRangeError, as_feature_matrix
from .predictors import finite_difference

__all__ = [
    "MAX_CONVERSION_SIZE",
    "pascal_matrix",
    "weights_to_difference_coeffs",
    "difference_coeffs_to_weights",
    "verify_isomorphism",
    "IsomorphismReport",
]

# Pascal entries grow like C(t, t/2); past ~32 the conversions lose the
# accuracy the round-trip contract promises, so the public interface gates.
MAX_CONVERSION_SIZE = 32


def pascal_matrix(t: int) -> np.ndarray:
    """Signed lower-triangular Pascal matrix: P[k, m] = (-1)^m C(k, m).

    Invertible (unit-magnitude diagonal) and an involution: P @ P = I.
    """
    if t < 1:
        raise IndexOutOfRangeError(f"need t >= 1, got {t}")
    P = np.zeros((t, t))
    for k in range(t):
        for m in range(k + 1):
            P[k, m] = (-1.0) ** m * math.comb(k, m)
    return P


def _check_size(t: int):
    if t < 1:
        raise IndexOutOfRangeError(f"need t >= 1, got {t}")
    if t > MAX_CONVERSION_SIZE:
        raise IndexOutOfRangeError(
            f"conversion limited to t <= {MAX_CONVERSION_SIZE} "
            f"(binomial growth destroys accuracy beyond), got t={t}"
        )


def weights_to_difference_coeffs(row: Sequence[float]) -> np.ndarray:
    """Difference-expansion coefficients equivalent to a weight row.

    ``row`` is oldest-first (entry j multiplies F(j)); the result ``omega``
    satisfies sum_j row[j] F(j) == sum_i omega[i] * diff_i(F at step t-1),
    where diff_i is the order-i backward difference with unit spacing.
    """
    w = np.asarray(row, dtype=np.float64)
    t = w.size
    _check_size(t)
    w_recent_first = w[::-1]
    # omega^T = w^T P^{-1}  <=>  P^T omega = w
    P = pascal_matrix(t)
    return solve_triangular(P.T, w_recent_first, lower=False)


def difference_coeffs_to_weights(omega: Sequence[float]) -> np.ndarray:
    """Inverse conversion: w^T = omega^T P, returned oldest-first."""
    om = np.asarray(omega, dtype=np.float64)
    t = om.size
    _check_size(t)
    P = pascal_matrix(t)
    w_recent_first = P.T @ om
    return w_recent_first[::-1]


@dataclass(frozen=True)
class IsomorphismReport:
    """Outcome of evaluating both sides of the identity on real data."""

    max_relative_deviation: float
    tolerance: float
    passed: bool


def verify_isomorphism(row: Sequence[float], traj, t: int, tol: float = 1e-8,
                       omega: Optional[Sequence[float]] = None) -> IsomorphismReport:
    """Evaluate weight-space and difference-space forms on a trajectory.

    Compares sum_j row[j] F(j) against sum_i omega[i] diff_i(F at t-1) on
    rows 0..t-1 of ``traj`` and reports the max relative deviation. By
    default ``omega`` is derived from the row; pass it explicitly to check a
    claimed difference-space form (a corrupted one must fail).
    """
    data = as_feature_matrix(traj)
    w = np.asarray(row, dtype=np.float64)
    if w.size != t:
        raise IndexOutOfRangeError(f"row has length {w.size}, expected t={t}")
    if data.shape[0] < t:
        raise IndexOutOfRangeError(f"trajectory has {data.shape[0]} rows, need {t}")
    if omega is None:
        omega = weights_to_difference_coeffs(w)
    else:
        omega = np.asarray(omega, dtype=np.float64)
        if omega.size != t:
            raise IndexOutOfRangeError(f"omega has length {omega.size}, expected t={t}")
    lhs = w @ data[:t]
    rhs = np.zeros(data.shape[1])
    for i in range(t):
        if omega[i] != 0.0:
            rhs += omega[i] * finite_difference(data, t - 1, i, 1)
    scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))), 1e-300)
    deviation = float(np.max(np.abs(lhs - rhs))) / scale
    return IsomorphismReport(
        max_relative_deviation=deviation,
        tolerance=float(tol),
        passed=bool(deviation < tol),
    )
