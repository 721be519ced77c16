"""How well the current feature is linearly representable by its history.

The per-step fidelity (1 minus the relative projection residual) is the
upper bound on any linear predictor's accuracy at that step, so the profile
says whether learning linear coefficients can pay off at all.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import IndexOutOfRangeError, ZeroNormFeatureError, as_feature_matrix

__all__ = ["FidelityProfile", "project_onto_history", "relative_residual", "fidelity_profile"]

# Singular values below RANK_RCOND * sigma_max are truncated: for t > D the
# history matrix is necessarily rank-deficient and the minimum-norm solution
# is the well-defined choice.
RANK_RCOND = 1e-10


@dataclass(frozen=True)
class FidelityProfile:
    """Per-step linear representability of a trajectory.

    Entry 0 is defined as fidelity 0 / residual ||F(0)|| by convention
    (empty history spans nothing).
    """

    per_step_fidelity: Tuple[float, ...]
    per_step_residual: Tuple[float, ...]
    rank_history: Tuple[int, ...]

    def __post_init__(self):
        for f in self.per_step_fidelity:
            if not -1e-12 <= f <= 1.0 + 1e-12:
                raise ValueError(f"fidelity {f} outside [0, 1]")
        if any(r < 0 for r in self.per_step_residual):
            raise ValueError("residuals must be non-negative")

    @property
    def num_steps(self) -> int:
        return len(self.per_step_fidelity)

    def interior_fraction_at_least(self, threshold: float, lo: int, hi: int) -> float:
        """Fraction of steps t in [lo, hi] with fidelity >= threshold."""
        window = self.per_step_fidelity[lo:hi + 1]
        return sum(1 for f in window if f >= threshold) / len(window)


def project_onto_history(traj, t: int):
    """Orthogonally project row t onto the span of rows 0..t-1.

    The solve is a rank-revealing SVD least squares (minimum-norm under rank
    deficiency) rather than normal equations; history matrices become badly
    conditioned along smooth trajectories.

    Returns (projection vector, residual 2-norm, effective rank).
    """
    data = as_feature_matrix(traj)
    T = data.shape[0]
    if not 1 <= t <= T - 1:
        raise IndexOutOfRangeError(f"step {t} outside [1, {T - 1}]")
    hist = data[:t].T                    # (D, t): columns span the history
    target = data[t]
    sol, _, rank, _ = np.linalg.lstsq(hist, target, rcond=RANK_RCOND)
    projection = hist @ sol
    residual = float(np.linalg.norm(target - projection))
    return projection, residual, int(rank)


def relative_residual(traj, t: int) -> float:
    """Residual norm of the step-t projection divided by ||F(t)||."""
    data = as_feature_matrix(traj)
    norm = float(np.linalg.norm(data[t]))
    if norm == 0.0:
        raise ZeroNormFeatureError(f"row {t} has zero norm")
    _, residual, _ = project_onto_history(data, t)
    return residual / norm


def fidelity_profile(traj) -> FidelityProfile:
    """Per-step fidelity 1 - relative residual for t = 1..T-1."""
    data = as_feature_matrix(traj)
    T = data.shape[0]
    fidelity = [0.0]
    residual = [float(np.linalg.norm(data[0]))]
    ranks = [0]
    for t in range(1, T):
        _, res, rank = project_onto_history(data, t)
        norm = float(np.linalg.norm(data[t]))
        if norm == 0.0:
            raise ZeroNormFeatureError(f"row {t} has zero norm")
        rel = res / norm
        fidelity.append(max(0.0, min(1.0, 1.0 - rel)))
        residual.append(res)
        ranks.append(rank)
    return FidelityProfile(
        per_step_fidelity=tuple(fidelity),
        per_step_residual=tuple(residual),
        rank_history=tuple(ranks),
    )
