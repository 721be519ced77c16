"""Domain-type construction and invariant enforcement."""

import math

import numpy as np
import pytest

from l2p.core import (
    CacheSchedule,
    FeatureTrajectory,
    IndexOutOfRangeError,
    LinearCoefficients,
    NonFiniteError,
    NonMonotoneLabelsError,
    RunMetrics,
    ShapeMismatchError,
    TrajectorySet,
    WeightMatrix,
    validate_trajectory,
)


def make_traj(data, labels=None, descending=True):
    data = np.asarray(data, dtype=float)
    if labels is None:
        T = data.shape[0]
        labels = 1.0 - np.arange(T) / (T - 1)
    return FeatureTrajectory(data=data, step_labels=labels, labels_descending=descending)


class TestFeatureTrajectory:
    def test_minimal_valid(self):
        tr = make_traj([[0.0], [1.0]], labels=[1.0, 0.98])
        validate_trajectory(tr)
        assert tr.num_steps == 2 and tr.dim == 1

    def test_nan_rejected_with_location(self):
        with pytest.raises(NonFiniteError) as exc:
            make_traj([[0.0, 1.0], [np.nan, 2.0]], labels=[1.0, 0.5])
        assert exc.value.step == 1 and exc.value.col == 0

    def test_equal_labels_rejected(self):
        with pytest.raises(NonMonotoneLabelsError):
            make_traj([[0.0], [1.0]], labels=[1.0, 1.0])

    def test_wrong_direction_rejected(self):
        with pytest.raises(NonMonotoneLabelsError):
            make_traj([[0.0], [1.0]], labels=[0.0, 1.0], descending=True)
        # same labels fine when declared ascending
        make_traj([[0.0], [1.0]], labels=[0.0, 1.0], descending=False)

    def test_single_step_rejected(self):
        with pytest.raises(ShapeMismatchError):
            make_traj([[1.0]], labels=[1.0])

    def test_immutable_after_construction(self):
        src = np.array([[0.0], [1.0]])
        tr = make_traj(src, labels=[1.0, 0.5])
        with pytest.raises(ValueError):
            tr.data[0, 0] = 5.0
        src[0, 0] = 9.0  # caller mutation does not leak in
        assert tr.data[0, 0] == 0.0

    def test_row_bounds(self):
        tr = make_traj([[0.0], [1.0]], labels=[1.0, 0.5])
        with pytest.raises(IndexOutOfRangeError):
            tr.row(2)


class TestTrajectorySet:
    def test_requires_homogeneous_shapes(self):
        a = make_traj(np.zeros((3, 2)), labels=[1.0, 0.5, 0.0])
        b = make_traj(np.zeros((4, 2)), labels=[1.0, 0.6, 0.3, 0.0])
        with pytest.raises(ShapeMismatchError):
            TrajectorySet(trajectories=(a, b))

    def test_rejects_empty(self):
        with pytest.raises(ShapeMismatchError):
            TrajectorySet(trajectories=())

    def test_manifest_autofilled(self):
        a = make_traj(np.zeros((3, 2)), labels=[1.0, 0.5, 0.0])
        ts = TrajectorySet(trajectories=(a,))
        assert ts.manifest[0]["seed"] == a.seed
        assert ts.features().shape == (1, 3, 2)


class TestLinearCoefficients:
    def test_from_pairs_merges_collisions_by_summation(self):
        c = LinearCoefficients.from_pairs([(0, 1.0), (-2, 0.25), (-2, 0.75), (-1, -1.0)])
        assert c.offsets == (0, -1, -2)
        assert c.weights == (1.0, -1.0, 1.0)

    def test_positive_offset_rejected(self):
        with pytest.raises(IndexOutOfRangeError):
            LinearCoefficients(terms=((1, 1.0),))

    def test_unsorted_rejected(self):
        with pytest.raises(ShapeMismatchError):
            LinearCoefficients(terms=((-2, 1.0), (0, 1.0)))

    def test_nonfinite_weight_rejected(self):
        with pytest.raises(NonFiniteError):
            LinearCoefficients(terms=((0, math.inf),))


class TestWeightMatrix:
    def test_row_lengths_enforced(self):
        with pytest.raises(ShapeMismatchError):
            WeightMatrix(num_steps=3, rows=(np.array([1.0]), np.array([1.0])))

    def test_strict_lower_triangular_storage(self):
        w = WeightMatrix(num_steps=4, rows=(np.array([1.0]), np.array([0.0, 1.0]),
                                            np.array([0.0, 0.0, 1.0])))
        assert w.row(3).shape == (3,)
        assert w.entry_count() == 6
        with pytest.raises(IndexOutOfRangeError):
            w.row(4)


class TestCacheSchedule:
    def test_anchor_zero_required(self):
        with pytest.raises(IndexOutOfRangeError):
            CacheSchedule(num_steps=5, anchors=(1, 3))

    def test_dedup_and_sort(self):
        s = CacheSchedule(num_steps=6, anchors=(0, 4, 2, 4))
        assert s.anchors == (0, 2, 4)
        assert s.skipped == (1, 3, 5)
        assert s.is_anchor(2) and not s.is_anchor(3)


class TestRunMetrics:
    def test_reduction_consistency_enforced(self):
        with pytest.raises(ShapeMismatchError):
            RunMetrics(per_step_mse=(0.0,), aggregate_mse=0.0, psnr_db=math.inf,
                       flops_full=10.0, flops_cached=2.0, flops_reduction=3.0,
                       cache_bytes_peak=0)

    def test_psnr_sentinel_rule(self):
        RunMetrics(per_step_mse=(0.0,), aggregate_mse=0.0, psnr_db=math.inf,
                   flops_full=10.0, flops_cached=2.0, flops_reduction=5.0,
                   cache_bytes_peak=0)
        with pytest.raises(ShapeMismatchError):
            RunMetrics(per_step_mse=(1.0,), aggregate_mse=1.0, psnr_db=math.inf,
                       flops_full=10.0, flops_cached=2.0, flops_reduction=5.0,
                       cache_bytes_peak=0)
