"""Tests for kw_projection module"""

import numpy as np
import pytest

from nlkw_lab.core import kw_projection, path_engine
from nlkw_lab.core.errors import NumericError, ParameterError
from nlkw_lab.core.integrators import build_strategy


@pytest.fixture(scope="module")
def batch():
    grid = path_engine.build_grid(1.0, 16)
    return path_engine.simulate_batch(grid, 4000, 0.5, 77)


class TestPayoffs:
    """Tests for payoff registry and evaluation"""

    def test_example_payoff(self, batch):
        """Test H = (W1_T)^2 - T and its zero mean"""
        payoff = kw_projection.get_payoff("example")
        values = payoff.evaluate(batch)
        np.testing.assert_array_equal(values, batch.w1[:, -1] ** 2 - 1.0)
        assert abs(values.mean()) < 4.0 * values.std() / np.sqrt(values.size)

    def test_unknown_payoff(self):
        """Test that unknown payoff names are rejected"""
        with pytest.raises(ParameterError, match="unknown payoff"):
            kw_projection.get_payoff("call")


class TestAnalyticKW:
    """Tests for analytic_kw and analytic_kw_example"""

    def test_example_matches_discrete_oracle(self, batch):
        """Test lambda^2 of the example against its exact grid value"""
        kw = kw_projection.analytic_kw_example(0.5, batch)
        oracle = kw_projection.discrete_lambda_sq(0.5, 1.0, 16)
        assert kw.lambda_sq.within(oracle, k=3.0)
        np.testing.assert_array_equal(kw.h.values, 2.0 * 0.5 * batch.w1[:, :-1])

    def test_terminal_driver_has_no_residual(self, batch):
        """Test that H = W_T is represented exactly with h = 1"""
        kw = kw_projection.analytic_kw(kw_projection.get_payoff("terminal-w"), batch)
        assert np.all(kw.residual == 0.0)
        assert kw.lambda_sq.mean == 0.0

    def test_rho_mismatch(self, batch):
        """Test that rho must match the batch"""
        with pytest.raises(ParameterError, match="does not match"):
            kw_projection.analytic_kw_example(0.3, batch)

    @pytest.mark.parametrize(
        "rho,T,n_steps,expected",
        [(0.0, 1.0, 1, 2.0), (1.0, 2.0, 4, 2.0), (0.5, 1.0, 1_000_000, 1.5)],
    )
    def test_discrete_lambda_sq(self, rho, T, n_steps, expected):
        """Test the grid oracle at simple points and its continuous limit"""
        assert kw_projection.discrete_lambda_sq(rho, T, n_steps) == pytest.approx(
            expected, rel=1e-5
        )


class TestRegressionKW:
    """Tests for regression_kw and fit_regression"""

    def test_terminal_driver_regression(self, batch):
        """Test that H = W_T regresses on int 1 dW with coefficient 1"""
        kw = kw_projection.regression_kw(
            kw_projection.get_payoff("terminal-w"), ["const"], batch
        )
        assert kw.feature_names == ["const"]
        assert kw.coefficients[0] == pytest.approx(1.0, abs=1e-8)
        assert kw.lambda_sq.mean < 1e-12

    def test_example_recovers_two_rho(self, batch):
        """Test that the w1 coefficient approaches 2 rho and lambda^2 the oracle"""
        kw = kw_projection.regression_kw(
            kw_projection.get_payoff("example"), ["const", "w1"], batch
        )
        assert kw.coefficients[1] == pytest.approx(1.0, abs=0.2)
        assert len(kw.coefficient_stderr) == 2
        assert kw.lambda_sq.within(kw_projection.discrete_lambda_sq(0.5, 1.0, 16), k=5.0)

    def test_in_sample_residual_decreases_with_features(self, batch):
        """Test that nested bases never increase the in-sample residual"""
        payoff = kw_projection.get_payoff("example")
        small = kw_projection.regression_kw(payoff, ["const"], batch)
        large = kw_projection.regression_kw(payoff, ["const", "w1", "w1*t"], batch)
        assert large.in_sample_lambda_sq.mean <= small.in_sample_lambda_sq.mean

    def test_fit_regression_rejects_bad_input(self):
        """Test the argument checks of fit_regression"""
        design = np.ones((50, 2))
        target = np.zeros(50)
        with pytest.raises(ParameterError, match="at least one feature"):
            kw_projection.fit_regression(np.empty((50, 0)), target)
        with pytest.raises(ParameterError, match="holdout_fraction"):
            kw_projection.fit_regression(design, target, holdout_fraction=1.0)
        with pytest.raises(ParameterError, match="target has shape"):
            kw_projection.fit_regression(design, np.zeros(49))
        with pytest.raises(ParameterError, match="at least 20 paths"):
            kw_projection.fit_regression(design[:15], target[:15])

    def test_vanishing_design(self):
        """Test that an all-zero design raises NumericError"""
        with pytest.raises(NumericError, match="rank-deficient"):
            kw_projection.solve_ridge(np.zeros((40, 2)), np.ones(40), 1e-10)

    def test_ridge_solution_close_to_least_squares(self):
        """Test that a tiny ridge leaves ordinary least squares unchanged"""
        rng = np.random.default_rng(2)
        design = rng.normal(size=(500, 3))
        target = design @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=500) * 0.1
        beta = kw_projection.solve_ridge(design, target, 1e-10)
        expected, *_ = np.linalg.lstsq(design, target, rcond=None)
        np.testing.assert_allclose(beta, expected, rtol=1e-6)


class TestBasis:
    """Tests for feature parsing"""

    def test_product_feature(self, batch):
        """Test that "w1*t" multiplies its factors"""
        feature = kw_projection.parse_feature("w1*t")
        prefix = batch.prefix(4)
        np.testing.assert_array_equal(feature(prefix), prefix.w1 * prefix.t[None, :])

    def test_unknown_feature(self):
        """Test that unknown factors are rejected"""
        with pytest.raises(ParameterError, match="unknown feature 'w3'"):
            kw_projection.parse_basis(["w1", "w3"])

    def test_duplicate_features(self):
        """Test that a basis lists each feature once"""
        with pytest.raises(ParameterError, match="duplicate"):
            kw_projection.parse_basis(["w1", "w1"])


class TestStrongOrthogonality:
    """Tests for strong_orthogonality_check"""

    def test_residual_orthogonal_to_integrals(self, batch):
        """Test E[lambda int alpha dW] = 0 for bounded predictable alpha"""
        kw = kw_projection.analytic_kw_example(0.5, batch)
        tests = [
            build_strategy(batch, lambda k, p: np.ones(p.n_paths)),
            build_strategy(batch, lambda k, p: np.tanh(p.w1[:, -1])),
            build_strategy(batch, lambda k, p: np.cos(p.w[:, -1])),
        ]
        results = kw_projection.strong_orthogonality_check(kw.residual, batch, tests)
        assert len(results) == 3
        assert all(r.within(0.0, k=3.0) for r in results)

    def test_randomized_bounded_strategies(self, batch):
        """Test the residual against ten random bounded predictable strategies"""
        kw = kw_projection.analytic_kw_example(0.5, batch)
        rng = np.random.default_rng(2718)
        tests = []
        for a, b, c in rng.uniform(-1.5, 1.5, size=(10, 3)):
            tests.append(
                build_strategy(
                    batch, lambda k, p, a=a, b=b, c=c: np.tanh(a * p.w1[:, -1] + b * p.w[:, -1] + c)
                )
            )
        results = kw_projection.strong_orthogonality_check(kw.residual, batch, tests)
        assert len(results) == 10
        assert all(r.within(0.0, k=3.0) for r in results)
