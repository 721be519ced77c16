"""Schedules, cached rollouts, and the FLOPs / cache-memory / PSNR models."""

import math

import numpy as np
import pytest

from l2p.core import ShapeMismatchError
from l2p.learner import init_weights
from l2p.predictors import (
    FocaPredictor,
    LearnedWeightPredictor,
    NaiveReusePredictor,
    TaylorPredictor,
)
from l2p.schedule import (
    cache_memory_accounting,
    cached_rollout,
    flops_accounting,
    psnr,
    uniform_schedule,
)
from l2p.surrogate import make_toy_denoiser, rollout_denoiser


class TestUniformSchedule:
    def test_interval_five(self):
        s = uniform_schedule(50, 5)
        assert s.anchors == tuple(range(0, 50, 5))
        assert len(s.anchors) == 10
        assert s.interval_tag == 5

    def test_interval_one_everything_anchored(self):
        s = uniform_schedule(10, 1)
        assert s.anchors == tuple(range(10))
        assert s.skipped == ()

    def test_interval_seven(self):
        s = uniform_schedule(50, 7)
        assert s.anchors == (0, 7, 14, 21, 28, 35, 42, 49)
        assert len(s.anchors) == 8


class TestFlopsAccounting:
    def test_free_prediction_reduction_is_interval(self):
        full, cached, red = flops_accounting(50, uniform_schedule(50, 5), 1.0, 0.0)
        assert (full, cached, red) == (50.0, 10.0, 5.0)

    def test_interval_one_no_reduction(self):
        _, _, red = flops_accounting(50, uniform_schedule(50, 1), 1.0, 0.0)
        assert red == 1.0

    def test_interval_ten_ideal_bound(self):
        _, _, red = flops_accounting(50, uniform_schedule(50, 10), 1.0, 0.0)
        assert red == 10.0

    def test_overhead_keeps_identity(self):
        sched = uniform_schedule(50, 5)
        full, cached, red = flops_accounting(50, sched, 7.0, 0.5)
        assert cached == 10 * 7.0 + 40 * 0.5
        assert red == full / cached
        assert red >= 1.0  # overhead below cost per step


class TestCacheMemoryAccounting:
    def test_taylor_window(self):
        assert cache_memory_accounting(50, 64, TaylorPredictor(1), 4) == 2 * 64 * 4

    def test_learned_full_history(self):
        w = init_weights(50)
        assert cache_memory_accounting(50, 64, LearnedWeightPredictor(w), 4) == 49 * 64 * 4

    def test_naive_single_row(self):
        assert cache_memory_accounting(50, 8, NaiveReusePredictor(), 8) == 8 * 8

    def test_corrector_sliding_window(self):
        assert cache_memory_accounting(50, 8, FocaPredictor(), 4, interval=5) == 8 * 8 * 4

    def test_copies_multiplier(self):
        one = cache_memory_accounting(50, 8, NaiveReusePredictor(), 4, copies=1)
        two = cache_memory_accounting(50, 8, NaiveReusePredictor(), 4, copies=2)
        assert two == 2 * one


class TestPsnr:
    def test_identical_inputs_infinite(self):
        x = np.ones((4, 3))
        assert psnr(x, x, peak=1.0) == math.inf

    def test_mse_equal_peak_squared_is_zero_db(self):
        ref = np.zeros((2, 2))
        test = np.full((2, 2), 3.0)
        assert abs(psnr(ref, test, peak=3.0)) < 1e-12

    def test_closed_form_thirty_db(self):
        ref = np.zeros(1000)
        test = ref + math.sqrt(1e-3)
        assert abs(psnr(ref, test, peak=1.0) - 30.0) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros((2, 2)), np.zeros((3, 2)), peak=1.0)

    def test_peak_must_be_positive(self):
        with pytest.raises(ValueError):
            psnr(np.zeros(3), np.ones(3), peak=0.0)


class TestCachedRollout:
    def test_all_anchor_schedule_bit_identical(self, toy_model):
        """With nothing skipped the cached run IS the full run."""
        T = 50
        full_traj, full_final = rollout_denoiser(toy_model, T, 7)
        final, metrics = cached_rollout(toy_model, T, 7, uniform_schedule(T, 1),
                                        NaiveReusePredictor())
        assert np.array_equal(final, full_final)
        assert metrics.aggregate_mse == 0.0
        assert metrics.psnr_db == math.inf

    def test_interval_one_metrics_identical_across_predictors(self, toy_model):
        sched = uniform_schedule(50, 1)
        results = [
            cached_rollout(toy_model, 50, 3, sched, p)[1]
            for p in (NaiveReusePredictor(), TaylorPredictor(2), FocaPredictor())
        ]
        assert results[0] == results[1] == results[2]

    def test_open_mode_anchors_exact(self, toy_model):
        """Without feedback, anchor features match the full rollout exactly."""
        T = 50
        full_traj, _ = rollout_denoiser(toy_model, T, 7)
        sched = uniform_schedule(T, 5)
        _, metrics = cached_rollout(toy_model, T, 7, sched, NaiveReusePredictor(),
                                    mode="open")
        for a in sched.anchors:
            assert metrics.per_step_mse[a] == 0.0

    def test_closed_mode_anchors_recompute_from_drifted_state(self, toy_model):
        T = 50
        sched = uniform_schedule(T, 5)
        _, metrics = cached_rollout(toy_model, T, 7, sched, NaiveReusePredictor(),
                                    mode="closed")
        late_anchor_mse = [metrics.per_step_mse[a] for a in sched.anchors[2:]]
        assert max(late_anchor_mse) > 0.0

    def test_forecasting_beats_reuse_at_interval_five(self, toy_model):
        """Order-2 expansion under-errs plain reuse end to end (seed 7)."""
        T = 50
        sched = uniform_schedule(T, 5)
        _, m_taylor = cached_rollout(toy_model, T, 7, sched, TaylorPredictor(2))
        _, m_reuse = cached_rollout(toy_model, T, 7, sched, NaiveReusePredictor())
        assert m_taylor.aggregate_mse < m_reuse.aggregate_mse

    def test_trained_weights_not_worse_than_taylor(self, toy_model, trained_denoiser):
        W, _ = trained_denoiser
        sched = uniform_schedule(50, 5)
        _, m_l2p = cached_rollout(toy_model, 50, 7, sched, LearnedWeightPredictor(W))
        _, m_taylor = cached_rollout(toy_model, 50, 7, sched, TaylorPredictor(2))
        assert m_l2p.aggregate_mse <= m_taylor.aggregate_mse

    def test_schedule_length_must_match(self, toy_model):
        with pytest.raises(ShapeMismatchError):
            cached_rollout(toy_model, 50, 0, uniform_schedule(40, 5), NaiveReusePredictor())
