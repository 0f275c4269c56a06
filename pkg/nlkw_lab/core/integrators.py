"""Discrete stochastic integrals on a time grid.

Both integrals share one kernel. For a step strategy theta, the increments
M(t_k, theta_k) - M(t_{k-1}, theta_k) are summed in the rearranged form

    running[k] = M(t_k, theta_k) - M(t_0, theta_1)
                 + sum_{j<k} (M(t_j, theta_j) - M(t_j, theta_{j+1}))

which equals the plain sum of increments. The jump terms vanish exactly
wherever theta does not change, so constant strategies telescope without
rounding error, and the Ito sum is the special case M(t, x) = x * B_t.
"""

from typing import Callable, Union

import numpy as np

from nlkw_lab.core.entities import (
    IntegralResult,
    MCEstimate,
    PathBatch,
    PathBundle,
    PathPrefix,
    StrategyPath,
    TimeGrid,
)
from nlkw_lab.core.errors import ShapeError
from nlkw_lab.core.estimates import paired_difference

StrategyCallback = Callable[[int, PathPrefix], np.ndarray]


def _as_batch(path: Union[PathBatch, PathBundle]) -> PathBatch:
    return path.as_batch() if isinstance(path, PathBundle) else path


def _telescoped(end: np.ndarray, begin: np.ndarray) -> np.ndarray:
    """Running sums of end[:, k] - begin[:, k] in rearranged form"""
    n_paths, n_steps = end.shape
    cumulative = np.zeros((n_paths, n_steps))
    if n_steps > 1:
        np.cumsum(end[:, :-1] - begin[:, 1:], axis=1, out=cumulative[:, 1:])
    running = np.zeros((n_paths, n_steps + 1))
    running[:, 1:] = (end - begin[:, :1]) + cumulative
    return running


def _check_strategy(theta: StrategyPath, grid: TimeGrid, n_paths: int) -> np.ndarray:
    if not theta.grid.same_as(grid):
        raise ShapeError("strategy and path live on different grids")
    if theta.n_paths not in (1, n_paths):
        raise ShapeError(
            f"strategy has {theta.n_paths} paths, integrator has {n_paths}"
        )
    return np.broadcast_to(theta.values, (n_paths, grid.n_steps))


def ito_integral(h: StrategyPath, driver: np.ndarray, grid: TimeGrid) -> IntegralResult:
    """Left-point sums running[k] = sum_{j<=k} h_j (B_j - B_{j-1})"""
    driver = np.asarray(driver, dtype=np.float64)
    if driver.ndim == 1:
        driver = driver[None, :]
    if driver.ndim != 2 or driver.shape[1] != grid.n_steps + 1:
        raise ShapeError(
            f"driver must have {grid.n_steps + 1} nodes per path, got shape {driver.shape}"
        )
    values = _check_strategy(h, grid, driver.shape[0])
    end = values * driver[:, 1:]
    begin = values * driver[:, :-1]
    return IntegralResult(running=_telescoped(end, begin))


def nonlinear_integral(
    family, theta: StrategyPath, path: Union[PathBatch, PathBundle]
) -> IntegralResult:
    """Integral of theta against the family {M(x)} along each path"""
    batch = _as_batch(path)
    values = _check_strategy(theta, batch.grid, batch.n_paths)
    nodes = batch.grid.nodes
    end = family.evaluate(nodes[None, 1:], batch.w[:, 1:], values)
    begin = family.evaluate(nodes[None, :-1], batch.w[:, :-1], values)
    return IntegralResult(running=_telescoped(end, begin))


def isometry_gap(h: StrategyPath, driver: np.ndarray, grid: TimeGrid) -> MCEstimate:
    """Estimate of E[(int h dB)^2] - E[sum h_j^2 dt_j] for a Brownian driver"""
    integral = ito_integral(h, driver, grid).terminal
    values = np.broadcast_to(h.values, (integral.size, grid.n_steps))
    compensator = (values * values) @ grid.steps
    return paired_difference(integral * integral, compensator)


def quadratic_variation(driver: np.ndarray) -> np.ndarray:
    """Realized sum of squared increments of every path"""
    increments = np.diff(np.asarray(driver, dtype=np.float64), axis=-1)
    return np.sum(increments * increments, axis=-1)


def build_strategy(batch: PathBatch, callback: StrategyCallback) -> StrategyPath:
    """Evaluate a callback on path prefixes only.

    For interval (t_{k-1}, t_k] the callback receives k and the prefix of
    nodes 0..k-1, so the resulting strategy is predictable by construction.
    """
    n_steps = batch.grid.n_steps
    values = np.empty((batch.n_paths, n_steps))
    for k in range(1, n_steps + 1):
        values[:, k - 1] = np.broadcast_to(
            np.asarray(callback(k, batch.prefix(k - 1)), dtype=np.float64),
            (batch.n_paths,),
        )
    return StrategyPath(grid=batch.grid, values=values)


def left_nodes(batch: PathBatch) -> PathPrefix:
    """Prefix of nodes 0..N-1, the left endpoints of all intervals"""
    return batch.prefix(batch.grid.n_steps - 1)


def strategy_from_left_values(grid: TimeGrid, values: np.ndarray) -> StrategyPath:
    """Strategy whose column k-1 was computed from node k-1 values"""
    return StrategyPath(grid=grid, values=values)
