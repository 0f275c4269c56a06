"""Tests for estimates module"""

import math

import numpy as np
import pytest

from nlkw_lab.core.entities import MCEstimate
from nlkw_lab.core.errors import ParameterError
from nlkw_lab.core.estimates import estimate, paired_difference, sample_covariance


class TestEstimate:
    """Tests for estimate function"""

    def test_mean_and_stderr(self):
        """Test sample mean and ddof=1 standard error"""
        result = estimate([1.0, 2.0, 3.0, 4.0])
        assert result.mean == 2.5
        assert result.n == 4
        assert result.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)

    def test_single_sample_has_infinite_stderr(self):
        """Test that one sample gives an infinite standard error"""
        result = estimate([3.0])
        assert result.mean == 3.0
        assert math.isinf(result.stderr)

    def test_rejects_empty_input(self):
        """Test that zero samples raise ParameterError"""
        with pytest.raises(ParameterError, match="zero samples"):
            estimate([])


class TestPairedDifference:
    """Tests for paired_difference function"""

    def test_common_noise_cancels(self):
        """Test that shared noise does not enter the standard error"""
        rng = np.random.default_rng(3)
        noise = rng.normal(size=1000)
        result = paired_difference(noise + 1.0, noise)
        assert result.mean == pytest.approx(1.0)
        assert result.stderr == pytest.approx(0.0, abs=1e-12)

    def test_rejects_size_mismatch(self):
        """Test that samples of different sizes are rejected"""
        with pytest.raises(ParameterError, match="differ in size"):
            paired_difference([1.0, 2.0], [1.0])


class TestSampleCovariance:
    """Tests for sample_covariance function"""

    def test_covariance_of_correlated_normals(self):
        """Test Cov(X, 0.5 X + Y) = 0.5"""
        rng = np.random.default_rng(4)
        x = rng.normal(size=20000)
        y = 0.5 * x + rng.normal(size=20000)
        assert sample_covariance(x, y).within(0.5, k=3.0)


class TestMCEstimate:
    """Tests for MCEstimate helpers"""

    def test_z_score_and_within(self):
        """Test distance in standard errors"""
        est = MCEstimate(mean=1.0, stderr=0.5, n=10)
        assert est.z_score(0.0) == 2.0
        assert est.within(0.0, k=2.0)
        assert not est.within(0.0, k=1.9)

    def test_zero_stderr(self):
        """Test z_score with an exact estimate"""
        est = MCEstimate(mean=1.0, stderr=0.0, n=10)
        assert est.z_score(1.0) == 0.0
        assert math.isinf(est.z_score(0.0))
