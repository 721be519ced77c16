"""Caching schedules, cached rollouts on the toy denoiser, cost accounting.

The FLOPs model counts one full evaluation per anchor and one (optionally
nonzero) predictor overhead per skipped step, so a uniform interval-N
schedule with free prediction reports the idealized N-fold reduction.
Deployed caching systems realize less (warmup steps stay fully computed,
predictors cost a little), e.g. roughly 7.1x rather than the ideal 10x at
N=10; the model intentionally reports the bound and leaves realized cost
to measurement.
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from .core import CacheSchedule, RunMetrics, ShapeMismatchError
from .predictors import CachePredictor, CacheState
from .surrogate import ToyDenoiser, initial_state, rollout_denoiser

__all__ = [
    "uniform_schedule",
    "cached_rollout",
    "flops_accounting",
    "cache_memory_accounting",
    "psnr",
    "psnr_from_mse",
]


def uniform_schedule(T: int, interval: int) -> CacheSchedule:
    """Anchors at 0, N, 2N, ... within 0..T-1."""
    if T < 1:
        raise ShapeMismatchError(f"need T >= 1, got {T}")
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    return CacheSchedule(
        num_steps=T,
        anchors=tuple(range(0, T, interval)),
        interval_tag=interval,
    )


def flops_accounting(T: int, schedule: CacheSchedule, cost_per_step: float,
                     predictor_overhead_per_step: float = 0.0
                     ) -> Tuple[float, float, float]:
    """(flops_full, flops_cached, reduction) under the per-step cost model."""
    if cost_per_step < 0 or predictor_overhead_per_step < 0:
        raise ValueError("costs must be >= 0")
    if schedule.num_steps != T:
        raise ShapeMismatchError(f"schedule has T={schedule.num_steps}, asked about T={T}")
    n_anchor = len(schedule.anchors)
    n_skip = T - n_anchor
    flops_full = T * cost_per_step
    flops_cached = n_anchor * cost_per_step + n_skip * predictor_overhead_per_step
    reduction = flops_full / flops_cached if flops_cached > 0 else math.inf
    return flops_full, flops_cached, reduction


def cache_memory_accounting(T: int, D: int, predictor: CachePredictor,
                            bytes_per_scalar: int = 4, copies: int = 1,
                            interval: Optional[int] = None) -> int:
    """Peak cache bytes: retained history rows x D x scalar size x copies.

    Reuse keeps one row, an order-m expansion keeps its m+1 stencil values,
    the corrector keeps a sliding window of interval+3 rows, and the learned
    predictor keeps every prior row (up to T-1). ``copies`` covers runtimes
    that retain more than one copy of the cache (the accounting model does
    not guess a runtime's retention policy).
    """
    if bytes_per_scalar < 1 or copies < 1:
        raise ValueError("bytes_per_scalar and copies must be >= 1")
    rows = predictor.cache_rows(T, interval=interval)
    rows = min(rows, max(T - 1, 1))
    return int(rows) * int(D) * int(bytes_per_scalar) * int(copies)


def psnr_from_mse(mse: float, peak: float) -> float:
    """10 log10(peak^2 / mse); +inf sentinel when mse is zero."""
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    if mse < 0:
        raise ValueError(f"mse must be >= 0, got {mse}")
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _payload(x) -> np.ndarray:
    from .core import FeatureTrajectory

    if isinstance(x, FeatureTrajectory):
        return x.data
    return np.asarray(x, dtype=np.float64)


def psnr(reference, test, peak: float) -> float:
    """PSNR in dB between two equally shaped trajectories or arrays."""
    ref, tst = _payload(reference), _payload(test)
    if ref.shape != tst.shape:
        raise ShapeMismatchError(f"shape {ref.shape} vs {tst.shape}")
    mse = float(np.mean((ref - tst) ** 2))
    return psnr_from_mse(mse, peak)


def cached_rollout(model: ToyDenoiser, T: int, init_seed: int,
                   schedule: CacheSchedule, predictor: CachePredictor,
                   mode: str = "closed", cost_per_step: float = 1.0,
                   predictor_overhead: float = 0.0, bytes_per_scalar: int = 4
                   ) -> Tuple[np.ndarray, RunMetrics]:
    """Run the denoiser with caching and score it against the full rollout.

    At anchors the model is evaluated and the feature cached; at skipped
    steps the predictor's output substitutes for the model. In ``closed``
    mode (the default) predictions feed the state update, so errors compound
    exactly as in accelerated inference and anchors recompute from the
    drifted state. In ``open`` mode the true features drive the state and
    predictions are only scored.
    """
    if mode not in ("open", "closed"):
        raise ValueError(f"mode must be 'open' or 'closed', got {mode!r}")
    if schedule.num_steps != T:
        raise ShapeMismatchError(f"schedule has T={schedule.num_steps}, rollout has T={T}")
    if not isinstance(predictor, CachePredictor):
        from .predictors import LearnedWeightPredictor

        predictor = LearnedWeightPredictor(predictor)
    full_traj, full_final = rollout_denoiser(model, T, init_seed)
    truth = full_traj.data

    d = model.dim
    x = initial_state(model, init_seed)
    cache = np.zeros((T, d))
    state = CacheState(cache, [], schedule.interval_tag)
    per_step_mse = np.zeros(T)
    for step in range(T):
        if schedule.is_anchor(step):
            feat = model.feature(x, step)
            state.add_anchor(step)
        else:
            feat = predictor.predict(state, step)
        cache[step] = feat
        per_step_mse[step] = float(np.mean((feat - truth[step]) ** 2))
        if mode == "closed":
            x = x + model.step_gain * feat
        else:
            x = x + model.step_gain * truth[step]

    aggregate = float(per_step_mse.mean())
    peak = float(np.max(np.abs(truth))) or 1.0
    flops_full, flops_cached, reduction = flops_accounting(
        T, schedule, cost_per_step, predictor_overhead
    )
    skipped = T - len(schedule.anchors)
    cache_bytes = cache_memory_accounting(
        T, d, predictor, bytes_per_scalar, interval=schedule.interval_tag
    ) if skipped else 0
    metrics = RunMetrics(
        per_step_mse=tuple(per_step_mse),
        aggregate_mse=aggregate,
        psnr_db=psnr_from_mse(aggregate, peak),
        flops_full=flops_full,
        flops_cached=flops_cached,
        flops_reduction=reduction,
        cache_bytes_peak=cache_bytes,
    )
    return x, metrics
