"""Shared domain types and validation.

All types are frozen dataclasses over read-only float64 numpy arrays; a
constructed value always satisfies its invariants (constructors raise
otherwise). Arrays passed in are copied, so callers cannot mutate a value
after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "L2PError",
    "NonFiniteError",
    "ShapeMismatchError",
    "NonMonotoneLabelsError",
    "HistoryUnderflowError",
    "IndexOutOfRangeError",
    "ZeroNormFeatureError",
    "InvalidSpecError",
    "DivergedError",
    "DivergedLossError",
    "SingularSystemError",
    "InsufficientHistoryError",
    "FeatureTrajectory",
    "TrajectorySet",
    "LinearCoefficients",
    "WeightMatrix",
    "CacheSchedule",
    "RunMetrics",
    "validate_trajectory",
    "as_feature_matrix",
]


class L2PError(Exception):
    """Base class for all library errors."""


class NonFiniteError(L2PError):
    """A value that must be finite is NaN or infinite."""

    def __init__(self, message: str, step: Optional[int] = None, col: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.col = col


class ShapeMismatchError(L2PError):
    """Array shapes disagree with the declared dimensions."""


class NonMonotoneLabelsError(L2PError):
    """Step labels are not strictly monotone in the declared direction."""


class HistoryUnderflowError(L2PError):
    """A coefficient term points before the start of the trajectory."""


class IndexOutOfRangeError(L2PError):
    """A step index lies outside the valid range."""


class ZeroNormFeatureError(L2PError):
    """Relative quantities are undefined for a zero-norm feature vector."""


class InvalidSpecError(L2PError):
    """Generator specification violates its parameter ranges."""


class DivergedError(L2PError):
    """An iterative rollout produced non-finite state."""


class DivergedLossError(L2PError):
    """Training loss became non-finite (learning rate too large for the data scale)."""


class SingularSystemError(L2PError):
    """The unregularized normal equations are singular."""


class InsufficientHistoryError(L2PError):
    """A predictor was asked to run with an empty cache."""


def _readonly_f64(a, shape=None, what="array") -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    if shape is not None and out.shape != shape:
        raise ShapeMismatchError(f"{what}: expected shape {shape}, got {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FeatureTrajectory:
    """A time-ordered sequence of feature vectors.

    Row index increases along the run regardless of whether the diffusion
    timestep labels increase or decrease; ``labels_descending`` is metadata
    only. Row 0 is the earliest computed step.
    """

    data: np.ndarray                  # (T, D) float64, read-only
    step_labels: np.ndarray           # (T,) float64, strictly monotone
    labels_descending: bool = True
    seed: int = 0
    source_tag: str = "external"

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2:
            raise ShapeMismatchError(f"data must be 2-D (T, D), got ndim={data.ndim}")
        T, D = data.shape
        if T < 2:
            raise ShapeMismatchError(f"need at least 2 steps, got T={T}")
        if D < 1:
            raise ShapeMismatchError(f"need at least 1 feature dim, got D={D}")
        bad = ~np.isfinite(data)
        if bad.any():
            step, col = map(int, np.argwhere(bad)[0])
            raise NonFiniteError(f"non-finite feature at step {step}, col {col}", step, col)
        labels = np.array(self.step_labels, dtype=np.float64, copy=True)
        if labels.shape != (T,):
            raise ShapeMismatchError(f"step_labels must have shape ({T},), got {labels.shape}")
        if not np.isfinite(labels).all():
            raise NonFiniteError("non-finite step label")
        diffs = np.diff(labels)
        if self.labels_descending:
            if not (diffs < 0).all():
                raise NonMonotoneLabelsError("labels must be strictly decreasing")
        else:
            if not (diffs > 0).all():
                raise NonMonotoneLabelsError("labels must be strictly increasing")
        data.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "step_labels", labels)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def num_steps(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, t: int) -> np.ndarray:
        if not 0 <= t < self.num_steps:
            raise IndexOutOfRangeError(f"step {t} outside [0, {self.num_steps})")
        return self.data[t]


def validate_trajectory(traj: FeatureTrajectory) -> None:
    """Re-check every FeatureTrajectory invariant; raises on violation.

    Constructed trajectories already satisfy the invariants; this re-runs
    the checks for values that arrived through deserialization paths.
    """
    FeatureTrajectory(
        data=traj.data,
        step_labels=traj.step_labels,
        labels_descending=traj.labels_descending,
        seed=traj.seed,
        source_tag=traj.source_tag,
    )


@dataclass(frozen=True)
class TrajectorySet:
    """A shape-homogeneous collection of trajectories plus a provenance manifest."""

    trajectories: Tuple[FeatureTrajectory, ...]
    manifest: Tuple[dict, ...] = ()

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ShapeMismatchError("TrajectorySet must be non-empty")
        T, D = trajs[0].num_steps, trajs[0].dim
        for i, tr in enumerate(trajs):
            if (tr.num_steps, tr.dim) != (T, D):
                raise ShapeMismatchError(
                    f"trajectory {i} has shape ({tr.num_steps}, {tr.dim}), expected ({T}, {D})"
                )
        manifest = tuple(self.manifest) if self.manifest else tuple(
            {"seed": tr.seed, "tag": tr.source_tag} for tr in trajs
        )
        if len(manifest) != len(trajs):
            raise ShapeMismatchError("manifest length must match trajectory count")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "manifest", manifest)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def num_steps(self) -> int:
        return self.trajectories[0].num_steps

    @property
    def dim(self) -> int:
        return self.trajectories[0].dim

    def features(self) -> np.ndarray:
        """Stack all trajectories into one (n, T, D) array."""
        return np.stack([tr.data for tr in self.trajectories])


@dataclass(frozen=True)
class LinearCoefficients:
    """A sparse map from non-positive history offsets to scalar weights.

    Offsets are relative to the step the coefficients are applied at; they
    are unique, sorted descending (0, -1, -2, ...), and colliding offsets
    have already been merged by summation (see ``from_pairs``).
    """

    terms: Tuple[Tuple[int, float], ...]
    normalization_tag: str = ""

    def __post_init__(self):
        terms = tuple((int(o), float(w)) for o, w in self.terms)
        if not terms:
            raise ShapeMismatchError("LinearCoefficients needs at least one term")
        offsets = [o for o, _ in terms]
        if any(o > 0 for o in offsets):
            raise IndexOutOfRangeError(f"offsets must be <= 0, got {offsets}")
        if len(set(offsets)) != len(offsets):
            raise ShapeMismatchError(f"duplicate offsets: {offsets}")
        if offsets != sorted(offsets, reverse=True):
            raise ShapeMismatchError(f"offsets must be sorted descending: {offsets}")
        if not all(math.isfinite(w) for _, w in terms):
            raise NonFiniteError("non-finite coefficient weight")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[int, float]], tag: str = "") -> "LinearCoefficients":
        """Build coefficients from possibly colliding (offset, weight) pairs.

        Weights landing on the same offset are merged by summation, the
        unique faithful merge for a linear form.
        """
        merged: dict = {}
        for o, w in pairs:
            merged[int(o)] = merged.get(int(o), 0.0) + float(w)
        terms = tuple(sorted(merged.items(), key=lambda kv: -kv[0]))
        return cls(terms=terms, normalization_tag=tag)

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(o for o, _ in self.terms)

    @property
    def weights(self) -> Tuple[float, ...]:
        return tuple(w for _, w in self.terms)

    def weight_sum(self) -> float:
        return float(sum(w for _, w in self.terms))

    def min_offset(self) -> int:
        return self.terms[-1][0]


@dataclass(frozen=True)
class WeightMatrix:
    """Strictly lower-triangular per-step weights.

    Row ``t`` (for target steps t = 1..T-1) holds the t weights applied to
    steps 0..t-1; no entry for a step j >= t is ever stored, so future
    leakage is impossible by construction.
    """

    num_steps: int
    rows: Tuple[np.ndarray, ...]

    def __post_init__(self):
        T = int(self.num_steps)
        if T < 2:
            raise ShapeMismatchError(f"need T >= 2, got {T}")
        rows = tuple(_readonly_f64(r, shape=(i + 1,), what=f"row {i + 1}")
                     for i, r in enumerate(self.rows))
        if len(rows) != T - 1:
            raise ShapeMismatchError(f"expected {T - 1} rows, got {len(rows)}")
        for i, r in enumerate(rows):
            if not np.isfinite(r).all():
                raise NonFiniteError(f"non-finite weight in row {i + 1}")
        object.__setattr__(self, "num_steps", T)
        object.__setattr__(self, "rows", rows)

    def row(self, t: int) -> np.ndarray:
        """Weights for target step t (length t)."""
        if not 1 <= t <= self.num_steps - 1:
            raise IndexOutOfRangeError(f"target step {t} outside [1, {self.num_steps - 1}]")
        return self.rows[t - 1]

    def entry_count(self) -> int:
        return sum(r.size for r in self.rows)


@dataclass(frozen=True)
class CacheSchedule:
    """Partition of steps into computed anchors and predicted (skipped) steps."""

    num_steps: int
    anchors: Tuple[int, ...]
    interval_tag: Optional[int] = None

    def __post_init__(self):
        T = int(self.num_steps)
        anchors = tuple(sorted(set(int(a) for a in self.anchors)))
        if T < 1:
            raise ShapeMismatchError(f"need T >= 1, got {T}")
        if not anchors or anchors[0] != 0:
            raise IndexOutOfRangeError("anchors must contain step 0")
        if anchors[-1] >= T or anchors[0] < 0:
            raise IndexOutOfRangeError(f"anchors must lie in [0, {T}), got {anchors}")
        object.__setattr__(self, "num_steps", T)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(
            self, "interval_tag", None if self.interval_tag is None else int(self.interval_tag)
        )
        object.__setattr__(self, "_aset", frozenset(anchors))

    def is_anchor(self, t: int) -> bool:
        return t in self._aset

    @property
    def skipped(self) -> Tuple[int, ...]:
        return tuple(t for t in range(self.num_steps) if t not in self._aset)


@dataclass(frozen=True)
class RunMetrics:
    """Fidelity plus cost accounting for one cached run (or dataset average)."""

    per_step_mse: Tuple[float, ...]
    aggregate_mse: float
    psnr_db: float                    # math.inf sentinel when aggregate_mse == 0
    flops_full: float
    flops_cached: float
    flops_reduction: float
    cache_bytes_peak: int

    def __post_init__(self):
        per_step = tuple(float(v) for v in self.per_step_mse)
        if any(v < 0 or not math.isfinite(v) for v in per_step):
            raise NonFiniteError("per-step MSE must be finite and non-negative")
        if self.flops_cached > 0:
            expect = self.flops_full / self.flops_cached
            if not math.isclose(self.flops_reduction, expect, rel_tol=1e-12, abs_tol=1e-12):
                raise ShapeMismatchError(
                    f"flops_reduction {self.flops_reduction} != flops_full/flops_cached {expect}"
                )
        if (self.aggregate_mse == 0.0) != (self.psnr_db == math.inf):
            raise ShapeMismatchError("psnr_db must be +inf exactly when aggregate_mse is 0")
        object.__setattr__(self, "per_step_mse", per_step)


def as_feature_matrix(x) -> np.ndarray:
    """Coerce a trajectory or 2-D array to a finite float64 (T, D) matrix."""
    if isinstance(x, FeatureTrajectory):
        return x.data
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D feature matrix, got ndim={a.ndim}")
    if not np.isfinite(a).all():
        raise NonFiniteError("non-finite value in feature matrix")
    return a
