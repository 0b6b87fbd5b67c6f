"""Response-range reliability interval."""

import numpy as np
import pytest

from dtanet.domain import ADRange, DomainError, check_ad, fit_ad, fit_ad_per_task


class TestFit:
    def test_kinase_training_range(self):
        # range [5.0, 10.796] pads out to [4.131, 11.665]
        ad = fit_ad([5.0, 7.3, 10.796])
        assert abs(ad.lower - 4.131) < 1e-3
        assert abs(ad.upper - 11.665) < 1e-3
        assert abs(ad.range_size - 5.796) < 1e-12

    def test_simple_formula(self):
        ad = fit_ad([0.0, 10.0])
        assert ad.lower == -1.5
        assert ad.upper == 11.5

    def test_degenerate_rejected(self):
        with pytest.raises(DomainError, match="distinct"):
            fit_ad([3.0, 3.0, 3.0])
        with pytest.raises(DomainError):
            fit_ad([1.0])

    def test_width_is_1_3_times_range(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            values = rng.normal(size=rng.integers(2, 40))
            if np.unique(values).size < 2:
                continue
            ad = fit_ad(values)
            width = ad.upper - ad.lower
            assert abs(width - 1.3 * ad.range_size) < 1e-12

    def test_training_values_strictly_inside(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            values = rng.uniform(-5, 15, size=20)
            ad = fit_ad(values)
            assert all(check_ad(ad, v) for v in values)


class TestCheck:
    def test_predicted_validation_range_all_inside(self):
        ad = fit_ad([5.0, 10.796])
        for value in np.linspace(4.558, 10.123, 50):
            assert check_ad(ad, value)

    def test_boundary_is_outside(self):
        ad = fit_ad([0.0, 10.0])
        assert not check_ad(ad, ad.lower)
        assert not check_ad(ad, ad.upper)

    def test_midpoint_inside(self):
        ad = fit_ad([0.0, 10.0])
        assert check_ad(ad, (ad.lower + ad.upper) / 2.0)

    def test_far_values_outside(self):
        ad = fit_ad([0.0, 10.0])
        assert not check_ad(ad, -100.0)
        assert not check_ad(ad, 100.0)


class TestPerTask:
    def test_mixed_tasks(self):
        y = np.array([[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]])
        w = np.ones((3, 2))
        ranges = fit_ad_per_task(y, w)
        assert isinstance(ranges[0], ADRange)
        assert ranges[1] is None  # constant -> no usable range

    def test_masked_rows_ignored(self):
        y = np.array([[1.0], [100.0], [2.0]])
        w = np.array([[1.0], [0.0], [1.0]])
        (ad,) = fit_ad_per_task(y, w)
        assert ad.source_max == 2.0
