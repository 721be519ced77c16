"""Fixed-coefficient forecasting rules and their consolidated linear form.

Sign convention: every coefficient formula here is written for history at
rows anchor, anchor-N, ..., and its offset parameter ``k`` points toward
OLDER rows, i.e. the consolidated weights applied at ``anchor`` reproduce
an affine signal's value at row ``anchor - k``. Rollout-time forecasting of
a later row ``anchor + d`` therefore evaluates the same algebra at
``k = -d`` (see the cache predictors at the bottom).
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np

from .core import (
    FeatureTrajectory,
    HistoryUnderflowError,
    InsufficientHistoryError,
    LinearCoefficients,
    WeightMatrix,
    as_feature_matrix,
)

__all__ = [
    "finite_difference",
    "taylor_coefficients",
    "taylor_predict_direct",
    "foca_predictor_coefficients",
    "foca_corrected_coefficients",
    "foca_predict_direct",
    "apply_linear",
    "CacheState",
    "CachePredictor",
    "NaiveReusePredictor",
    "TaylorPredictor",
    "FocaPredictor",
    "LearnedWeightPredictor",
    "parse_predictor_spec",
]

log = logging.getLogger("l2p.predictors")


def finite_difference(traj, anchor: int, order: int, interval: int = 1) -> np.ndarray:
    """Backward difference of order ``order`` over a stencil spaced ``interval``.

    Returns sum_{j=0..order} (-1)^j C(order, j) F(anchor - j*interval).
    """
    data = as_feature_matrix(traj)
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    if anchor - order * interval < 0 or anchor >= data.shape[0]:
        raise HistoryUnderflowError(
            f"difference of order {order} at anchor {anchor} needs row "
            f"{anchor - order * interval}"
        )
    out = np.zeros(data.shape[1])
    for j in range(order + 1):
        coeff = (-1.0) ** j * math.comb(order, j)
        out += coeff * data[anchor - j * interval]
    return out


def taylor_coefficients(order: int, interval: int, offset: int) -> LinearCoefficients:
    """Consolidated truncated-expansion weights over offsets 0, -N, ..., -mN.

    alpha_0 = 1 + sum_{i=1..m} (-k)^i / (i! N^i)
    alpha_j = sum_{i=j..m} (-k)^i (-1)^j C(i, j) / (i! N^i),   j >= 1

    with m=order, N=interval, k=offset. The weights always sum to 1, so
    constant signals are reproduced exactly for every (m, N, k).
    """
    m, N, k = order, interval, offset
    if m < 0:
        raise ValueError(f"order must be >= 0, got {m}")
    if N < 1:
        raise ValueError(f"interval must be >= 1, got {N}")
    pairs = []
    a0 = 1.0 + sum((-k) ** i / (math.factorial(i) * N ** i) for i in range(1, m + 1))
    pairs.append((0, a0))
    for j in range(1, m + 1):
        aj = sum(
            (-k) ** i * (-1) ** j * math.comb(i, j) / (math.factorial(i) * N ** i)
            for i in range(j, m + 1)
        )
        pairs.append((-j * N, aj))
    return LinearCoefficients.from_pairs(pairs, tag=f"taylor(m={m},N={N},k={k})")


def taylor_predict_direct(traj, anchor: int, order: int, interval: int,
                          offset: int) -> np.ndarray:
    """Reference path for ``taylor_coefficients``: expansion via differences.

    Evaluates F(anchor) + sum_{i=1..m} diff_i(anchor) / (i! N^i) * (-k)^i,
    with diff_i computed by ``finite_difference``. Serves as the brute-force
    oracle for the consolidation identity.
    """
    m, N, k = order, interval, offset
    data = as_feature_matrix(traj)
    if anchor - m * N < 0:
        raise HistoryUnderflowError(f"order {m} expansion at anchor {anchor} underflows")
    out = data[anchor].copy()
    for i in range(1, m + 1):
        diff = finite_difference(data, anchor, i, N)
        out += diff * ((-k) ** i / (math.factorial(i) * N ** i))
    return out


def foca_predictor_coefficients() -> LinearCoefficients:
    """Three-point predictor weights (7/3, -5/3, 1/3) at offsets (0, -1, -2).

    This is the two-step backward-differentiation extrapolation with its
    derivative replaced by the three-point backward stencil; it advances
    one row and is exact on affine signals.
    """
    return LinearCoefficients.from_pairs(
        [(0, 7.0 / 3.0), (-1, -5.0 / 3.0), (-2, 1.0 / 3.0)], tag="foca-predictor"
    )


def foca_corrected_coefficients(interval: int) -> LinearCoefficients:
    """Predictor-corrector weights consolidated into one linear form.

    The trapezoidal correction averages the three-point derivative stencils
    at rows anchor-N and anchor+1 (the latter evaluated on the predictor's
    own output), which consolidates to weights
    (7/4, -1, 1/4, 3/4, -1, 1/4) at offsets (0, -1, -2, -N, -N-1, -N-2).
    For N <= 2 colliding offsets merge by summation.
    """
    N = interval
    if N < 1:
        raise ValueError(f"interval must be >= 1, got {N}")
    pred = foca_predictor_coefficients()
    pairs = [(off, 0.75 * w) for off, w in pred.terms]   # 3/4 * predictor
    pairs.append((-1, 0.25))
    pairs.extend([(-N, 0.75), (-N - 1, -1.0), (-N - 2, 0.25)])
    return LinearCoefficients.from_pairs(pairs, tag=f"foca-corrected(N={N})")


def foca_predict_direct(traj, anchor: int, interval: int) -> np.ndarray:
    """Reference path for ``foca_corrected_coefficients``: run the pipeline.

    Numerically executes predict (three-point derivative at the anchor),
    then correct (trapezoid over the derivative stencils at anchor-N and at
    the predicted row), without consolidating any coefficients.
    """
    N = interval
    data = as_feature_matrix(traj)
    if anchor - (N + 2) < 0:
        raise HistoryUnderflowError(
            f"corrected predictor at anchor {anchor} needs row {anchor - (N + 2)}"
        )

    def bdf2_derivative(f0, f1, f2):
        return (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * N)

    d_anchor = bdf2_derivative(data[anchor], data[anchor - 1], data[anchor - 2])
    predicted = (4.0 / 3.0) * data[anchor] - (1.0 / 3.0) * data[anchor - 1] \
        + (2.0 * N / 3.0) * d_anchor
    d_old = bdf2_derivative(data[anchor - N], data[anchor - N - 1], data[anchor - N - 2])
    d_new = bdf2_derivative(predicted, data[anchor], data[anchor - 1])
    return data[anchor] + (N / 2.0) * (d_old + d_new)


def apply_linear(traj, anchor: int, coeffs: LinearCoefficients) -> np.ndarray:
    """Evaluate sum_j weight_j * F(anchor + offset_j)."""
    data = as_feature_matrix(traj)
    if anchor >= data.shape[0] or anchor < 0:
        raise HistoryUnderflowError(f"anchor {anchor} outside trajectory")
    if anchor + coeffs.min_offset() < 0:
        raise HistoryUnderflowError(
            f"offset {coeffs.min_offset()} at anchor {anchor} reaches before row 0"
        )
    out = np.zeros(data.shape[1])
    for off, w in coeffs.terms:
        out += w * data[anchor + off]
    return out


# ---------------------------------------------------------------------------
# Cache-consuming predictors used by rollouts and dataset evaluation.
# ---------------------------------------------------------------------------


class CacheState:
    """What a predictor may look at when forecasting step ``target``.

    ``features[r]`` holds the cached feature of every row r < target
    (computed at anchors, predicted at skipped steps), ``anchors`` lists the
    rows that were actually computed, and ``interval`` is the uniform anchor
    spacing when the schedule has one.
    """

    def __init__(self, features: np.ndarray, anchors: Sequence[int],
                 interval: Optional[int] = None):
        self.features = features        # (T, D); rows >= target are undefined
        self.anchors = list(anchors)
        self.interval = interval
        self._aset_len = -1
        self._aset: frozenset = frozenset()

    def add_anchor(self, row: int) -> None:
        self.anchors.append(row)

    def anchor_set(self) -> frozenset:
        if self._aset_len != len(self.anchors):
            self._aset = frozenset(self.anchors)
            self._aset_len = len(self.anchors)
        return self._aset

    def last_anchor(self, target: int) -> int:
        for a in reversed(self.anchors):
            if a < target:
                return a
        raise InsufficientHistoryError(f"no anchor before step {target}")


class CachePredictor:
    """Interface for forecasting a skipped step from cached history."""

    name = "base"

    def predict(self, state: CacheState, target: int) -> np.ndarray:
        raise NotImplementedError

    def cache_rows(self, num_steps: int, interval: Optional[int] = None) -> int:
        """History rows the predictor needs retained (memory accounting)."""
        raise NotImplementedError


class NaiveReusePredictor(CachePredictor):
    """Reuse the most recent computed anchor feature unchanged."""

    name = "naive"

    def predict(self, state: CacheState, target: int) -> np.ndarray:
        return state.features[state.last_anchor(target)]

    def cache_rows(self, num_steps: int, interval: Optional[int] = None) -> int:
        return 1


class TaylorPredictor(CachePredictor):
    """Order-m expansion over the most recent uniformly spaced anchors.

    Only computed anchors enter the stencil. Early in a run, when fewer
    than order+1 anchors exist, the order falls back to the highest
    satisfiable value (logged once per fallback).
    """

    def __init__(self, order: int = 2):
        if order < 0:
            raise ValueError(f"order must be >= 0, got {order}")
        self.order = order

    @property
    def name(self) -> str:
        return f"taylor:{self.order}"

    def predict(self, state: CacheState, target: int) -> np.ndarray:
        a = state.last_anchor(target)
        N = state.interval
        if N is None:
            raise InsufficientHistoryError("expansion stencil needs a uniform schedule")
        avail = 0
        while avail < self.order and a - (avail + 1) * N >= 0 and \
                (a - (avail + 1) * N) in state.anchor_set():
            avail += 1
        m = min(self.order, avail)
        if m < self.order:
            log.debug("order fallback %d -> %d at step %d", self.order, m, target)
        # forward prediction of row a + d evaluates the expansion at k = -d
        coeffs = taylor_coefficients(m, N, -(target - a))
        out = np.zeros(state.features.shape[1])
        for off, w in coeffs.terms:
            out += w * state.features[a + off]
        return out

    def cache_rows(self, num_steps: int, interval: Optional[int] = None) -> int:
        return self.order + 1


class FocaPredictor(CachePredictor):
    """Predictor-corrector rule advancing one row at a time.

    The stencil consumes consecutive cached rows (its own prior predictions
    at skipped steps), matching step-by-step forecasting. Warmup falls back
    along corrected -> plain predictor -> affine extrapolation -> reuse,
    the highest-order variant the available history satisfies.
    """

    name = "foca"

    def predict(self, state: CacheState, target: int) -> np.ndarray:
        a = target - 1
        N = state.interval
        feats = state.features
        if N is not None and a - (N + 2) >= 0:
            coeffs = foca_corrected_coefficients(N)
        elif a - 2 >= 0:
            coeffs = foca_predictor_coefficients()
            log.debug("corrector fallback to plain predictor at step %d", target)
        elif a - 1 >= 0:
            coeffs = LinearCoefficients.from_pairs([(0, 2.0), (-1, -1.0)], tag="affine")
            log.debug("corrector fallback to affine extrapolation at step %d", target)
        elif a >= 0:
            coeffs = LinearCoefficients.from_pairs([(0, 1.0)], tag="reuse")
            log.debug("corrector fallback to reuse at step %d", target)
        else:
            raise InsufficientHistoryError(f"no history before step {target}")
        out = np.zeros(feats.shape[1])
        for off, w in coeffs.terms:
            out += w * feats[a + off]
        return out

    def cache_rows(self, num_steps: int, interval: Optional[int] = None) -> int:
        return (interval or 1) + 3


class LearnedWeightPredictor(CachePredictor):
    """Trained per-step weights over the full cached history.

    Consumes cached values at skipped steps too (its own prior predictions),
    so every row of the weight matrix is applicable at inference.
    """

    name = "l2p"

    def __init__(self, weights: WeightMatrix):
        self.weights = weights

    def predict(self, state: CacheState, target: int) -> np.ndarray:
        row = self.weights.row(target)
        return row @ state.features[:target]

    def cache_rows(self, num_steps: int, interval: Optional[int] = None) -> int:
        return num_steps - 1


def parse_predictor_spec(spec: str, load_weights=None) -> CachePredictor:
    """Parse a CLI-style predictor spec: naive | taylor:m | foca | l2p:PATH."""
    if spec == "naive":
        return NaiveReusePredictor()
    if spec == "foca":
        return FocaPredictor()
    if spec.startswith("taylor:"):
        return TaylorPredictor(order=int(spec.split(":", 1)[1]))
    if spec == "taylor":
        return TaylorPredictor()
    if spec.startswith("l2p:"):
        if load_weights is None:
            raise ValueError("l2p predictor spec needs a weight loader")
        return LearnedWeightPredictor(load_weights(spec.split(":", 1)[1]))
    raise ValueError(f"unknown predictor spec {spec!r}")
