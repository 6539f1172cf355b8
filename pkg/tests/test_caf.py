"""Content-aware filter schedule and policy."""

import numpy as np
import pytest

from splat2d.caf import apply_caf_policy, filter_variance_for_new
from splat2d.densify import grow, prune, sparse_init


class TestFilterVariance:
    def test_normalization_point(self):
        # H*W = alpha * N  ->  s = 1
        assert filter_variance_for_new(64, 32, 64, alpha=32.0) == 1.0

    def test_direct_evaluation(self):
        assert filter_variance_for_new(768, 512, 5000, alpha=32.0) == 393216 / 160000

    def test_doubling_count_halves_variance(self):
        for n in (1, 7, 500, 4096):
            s = filter_variance_for_new(100, 77, n)
            assert filter_variance_for_new(100, 77, 2 * n) == s / 2

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            filter_variance_for_new(8, 8, 0)
        with pytest.raises(ValueError):
            filter_variance_for_new(8, 8, 10, alpha=0.0)


class TestPolicy:
    def test_disabled_overwrites_everything(self):
        cloud = sparse_init(20, 16, 16, np.random.default_rng(0))
        apply_caf_policy(cloud, enabled=False, constant_s=0.5)
        np.testing.assert_array_equal(cloud.filter_variances, np.full(10, 0.5))

    def test_enabled_leaves_creation_values(self):
        cloud = sparse_init(20, 16, 16, np.random.default_rng(0))
        before = cloud.filter_variances.copy()
        apply_caf_policy(cloud, enabled=True)
        np.testing.assert_array_equal(cloud.filter_variances, before)

    def test_rejects_negative_constant(self):
        cloud = sparse_init(4, 8, 8, np.random.default_rng(0))
        with pytest.raises(ValueError):
            apply_caf_policy(cloud, enabled=False, constant_s=-1.0)

    def test_survivors_keep_values_through_prune(self):
        rng = np.random.default_rng(1)
        # zero filter variance so that indefinite direct draws stay invalid
        cloud = sparse_init(200, 16, 16, rng, caf_enabled=False, constant_filter_variance=0.0)
        cloud.filter_variances = rng.uniform(0.0, 0.05, cloud.n)
        before = cloud.filter_variances.copy()
        pruned, removed = prune(cloud)
        assert removed > 0
        assert set(pruned.filter_variances) <= set(before)

    def test_variance_non_increasing_without_pruning(self):
        rng = np.random.default_rng(2)
        gt = np.random.default_rng(3).random((16, 16, 3))
        cloud = sparse_init(64, 16, 16, rng)
        for _ in range(5):
            cloud = grow(cloud, gt, np.zeros_like(gt), rng)
        s = cloud.filter_variances
        assert np.all(np.diff(s) <= 0.0)

    def test_new_variance_bounded_by_survivors_with_pruning(self):
        rng = np.random.default_rng(4)
        gt = np.random.default_rng(5).random((16, 16, 3))
        cloud = sparse_init(64, 16, 16, rng)
        for _ in range(5):
            cloud, _ = prune(cloud)
            grown = grow(cloud, gt, np.zeros_like(gt), rng)
            if grown.n > cloud.n:
                new_s = grown.filter_variances[cloud.n :]
                assert new_s.max() <= cloud.filter_variances.max()
            cloud = grown
