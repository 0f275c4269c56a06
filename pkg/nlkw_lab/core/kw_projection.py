"""Kunita-Watanabe decomposition H = int h dW + lambda^H, analytic and by regression"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np
import scipy.linalg

from nlkw_lab.core.entities import KWDecomposition, MCEstimate, PathBatch, PathPrefix, StrategyPath
from nlkw_lab.core.errors import NumericError, ParameterError
from nlkw_lab.core.estimates import estimate
from nlkw_lab.core.integrators import ito_integral, left_nodes

FeatureMap = Callable[[PathPrefix], np.ndarray]


# --- Payoffs ---


class Payoff:
    """Square-integrable H with E[H] = 0 and an optional analytic KW integrand"""

    name = "payoff"
    has_integrand = False

    def evaluate(self, batch: PathBatch) -> np.ndarray:
        raise NotImplementedError

    def integrand(self, prefix: PathPrefix, rho: float) -> np.ndarray:
        """h at the last node of the prefix, per path"""
        raise NotImplementedError


class ExamplePayoff(Payoff):
    """H_T = (W1_T)^2 - T, whose projection integrand on W is 2 rho W1"""

    name = "example"
    has_integrand = True

    def evaluate(self, batch: PathBatch) -> np.ndarray:
        w1_T = batch.w1[:, -1]
        return w1_T * w1_T - batch.grid.horizon

    def integrand(self, prefix: PathPrefix, rho: float) -> np.ndarray:
        return 2.0 * rho * prefix.w1


class TerminalDriverPayoff(Payoff):
    """H = W_T, already an integral against W with h = 1"""

    name = "terminal-w"
    has_integrand = True

    def evaluate(self, batch: PathBatch) -> np.ndarray:
        return batch.w[:, -1].copy()

    def integrand(self, prefix: PathPrefix, rho: float) -> np.ndarray:
        return np.ones_like(prefix.w)


_PAYOFFS: Dict[str, Payoff] = {
    "example": ExamplePayoff(),
    "terminal-w": TerminalDriverPayoff(),
}


def get_payoff(name: str) -> Payoff:
    try:
        return _PAYOFFS[name]
    except KeyError:
        raise ParameterError(
            f"unknown payoff '{name}', expected one of {sorted(_PAYOFFS)}"
        ) from None


# --- Regression features ---

_BASE_FEATURES: Dict[str, FeatureMap] = {
    "const": lambda p: np.ones_like(p.w),
    "w1": lambda p: p.w1,
    "w": lambda p: p.w,
    "w1_sq": lambda p: p.w1 * p.w1,
    "t": lambda p: np.broadcast_to(p.t, p.w.shape),
}


@dataclass(frozen=True)
class Feature:
    """Named feature map evaluated on every node of a prefix"""

    name: str
    factors: tuple

    def __call__(self, prefix: PathPrefix) -> np.ndarray:
        value = np.ones_like(prefix.w)
        for factor in self.factors:
            value = value * _BASE_FEATURES[factor](prefix)
        return value


def parse_feature(name: str) -> Feature:
    """Parse a feature name such as "w1", "t" or a product "w1*t" """
    factors = tuple(part.strip() for part in name.split("*"))
    for factor in factors:
        if factor not in _BASE_FEATURES:
            raise ParameterError(
                f"unknown feature '{factor}' in '{name}', expected products of {sorted(_BASE_FEATURES)}"
            )
    return Feature(name=name, factors=factors)


def parse_basis(names: Sequence[str]) -> List[Feature]:
    if len(set(names)) != len(names):
        raise ParameterError(f"duplicate features in basis {list(names)}")
    return [parse_feature(name) for name in names]


def feature_strategy(feature: FeatureMap, batch: PathBatch) -> StrategyPath:
    """phi evaluated at the left endpoint of every interval"""
    return StrategyPath(grid=batch.grid, values=feature(left_nodes(batch)))


# --- Decompositions ---


def analytic_kw(payoff: Payoff, batch: PathBatch) -> KWDecomposition:
    """Decomposition from the payoff's analytic integrand"""
    if not payoff.has_integrand:
        raise ParameterError(f"payoff '{payoff.name}' has no analytic integrand")
    h = StrategyPath(
        grid=batch.grid, values=payoff.integrand(left_nodes(batch), batch.rho)
    )
    residual = payoff.evaluate(batch) - ito_integral(h, batch.w, batch.grid).terminal
    return KWDecomposition(h=h, lambda_sq=estimate(residual * residual), residual=residual)


def analytic_kw_example(rho: float, batch: PathBatch) -> KWDecomposition:
    """h_s = 2 rho W1_s for H_T = (W1_T)^2 - T"""
    if rho != batch.rho:
        raise ParameterError(f"rho={rho} does not match the batch's rho={batch.rho}")
    return analytic_kw(get_payoff("example"), batch)


def feature_integrals(features: Sequence[FeatureMap], batch: PathBatch) -> np.ndarray:
    """Design matrix X[:, i] = int phi_i dW, one row per path"""
    columns = [
        ito_integral(feature_strategy(feature, batch), batch.w, batch.grid).terminal
        for feature in features
    ]
    return np.column_stack(columns) if columns else np.empty((batch.n_paths, 0))


def solve_ridge(design: np.ndarray, target: np.ndarray, ridge: float) -> np.ndarray:
    """Coefficients minimizing the mean of (target - design beta)^2.

    The normal equations get a ridge of ridge * trace / dim; directions the
    ridge cannot rescue (an all-zero design) raise NumericError.
    """
    n, dim = design.shape
    gram = design.T @ design / n
    trace = float(np.trace(gram))
    if dim == 0:
        return np.empty(0)
    if not math.isfinite(trace) or trace <= 0.0:
        raise NumericError("regression design is rank-deficient: all features vanish")
    eigenvalues = scipy.linalg.eigvalsh(gram)
    if np.any(eigenvalues <= -1e-12 * trace):
        raise NumericError("regression design is not positive semidefinite")
    shift = ridge * trace / dim
    if np.min(np.diag(gram)) <= shift:
        raise NumericError("regression design is rank-deficient: a feature vanishes")
    rhs = design.T @ target / n
    return scipy.linalg.solve(gram + shift * np.eye(dim), rhs, assume_a="pos")


def coefficient_stderr(design: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Least-squares standard errors sigma^2 (X'X)^{-1}"""
    n, dim = design.shape
    if dim == 0:
        return np.empty(0)
    sigma_sq = float(residual @ residual) / max(n - dim, 1)
    covariance = sigma_sq * scipy.linalg.pinvh(design.T @ design)
    return np.sqrt(np.clip(np.diag(covariance), 0.0, None))


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares fit of H on the integrals int phi_i dW"""

    coefficients: np.ndarray
    coefficient_stderr: np.ndarray
    residual: np.ndarray
    n_fit: int
    lambda_sq: MCEstimate
    in_sample_lambda_sq: MCEstimate


def fit_regression(
    design: np.ndarray,
    target: np.ndarray,
    holdout_fraction: float = 0.5,
    ridge: float = 1e-10,
) -> RegressionFit:
    """Fit on the leading share of rows, report the residual on the held-out rest"""
    n, dim = design.shape
    if dim == 0:
        raise ParameterError("regression needs at least one feature")
    if not 0.0 < holdout_fraction < 1.0:
        raise ParameterError(f"holdout_fraction must lie in (0, 1), got {holdout_fraction}")
    if target.shape != (n,):
        raise ParameterError(f"target has shape {target.shape}, expected ({n},)")
    if n < 10 * dim:
        raise ParameterError(f"regression needs at least {10 * dim} paths, got {n}")

    n_fit = min(max(int(round(n * (1.0 - holdout_fraction))), dim), n - 1)
    beta = solve_ridge(design[:n_fit], target[:n_fit], ridge)
    residual = target - design @ beta
    in_sample = residual[:n_fit]
    held_out = residual[n_fit:]
    return RegressionFit(
        coefficients=beta,
        coefficient_stderr=coefficient_stderr(design[:n_fit], in_sample),
        residual=residual,
        n_fit=n_fit,
        lambda_sq=estimate(held_out * held_out),
        in_sample_lambda_sq=estimate(in_sample * in_sample),
    )


def regression_kw(
    payoff: Payoff,
    basis: Sequence[str],
    batch: PathBatch,
    holdout_fraction: float = 0.5,
    ridge: float = 1e-10,
) -> KWDecomposition:
    """Least squares of H on the integrals int phi_i dW.

    Coefficients are fitted on the leading share of paths and the residual
    E[(H - int h dW)^2] is reported on the held-out rest.
    """
    features = parse_basis(basis)
    if not features:
        raise ParameterError("regression needs at least one feature")
    fit = fit_regression(
        feature_integrals(features, batch),
        payoff.evaluate(batch),
        holdout_fraction=holdout_fraction,
        ridge=ridge,
    )

    h_values = np.zeros((batch.n_paths, batch.grid.n_steps))
    prefix = left_nodes(batch)
    for coefficient, feature in zip(fit.coefficients, features):
        h_values = h_values + coefficient * feature(prefix)

    return KWDecomposition(
        h=StrategyPath(grid=batch.grid, values=h_values),
        lambda_sq=fit.lambda_sq,
        residual=fit.residual,
        coefficients=[float(b) for b in fit.coefficients],
        coefficient_stderr=[float(s) for s in fit.coefficient_stderr],
        feature_names=[f.name for f in features],
        in_sample_lambda_sq=fit.in_sample_lambda_sq,
    )


def strong_orthogonality_check(
    residual: np.ndarray, batch: PathBatch, test_strategies: Sequence[StrategyPath]
) -> List[MCEstimate]:
    """E[residual * int alpha dW] for each bounded predictable test strategy"""
    return [
        estimate(residual * ito_integral(alpha, batch.w, batch.grid).terminal)
        for alpha in test_strategies
    ]


def discrete_lambda_sq(rho: float, T: float, n_steps: int) -> float:
    """E[(lambda^H_T)^2] of the example on a uniform grid with n_steps steps.

    The continuous value 2 (1 - rho^2) T^2 picks up two O(1/N) terms on the
    grid: the left-point sum loses a factor (1 - 1/N) and the discrete
    quadratic variation of W1 adds 2 T^2 / N.
    """
    return 2.0 * (1.0 - rho * rho) * T * T * (1.0 - 1.0 / n_steps) + 2.0 * T * T / n_steps
