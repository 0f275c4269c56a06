"""Reproducible correlated Brownian paths on time grids.

Every path draws its increments from its own Philox stream keyed by
(master_seed, path_id), so a batch does not depend on how it was split into
chunks or on the order in which chunks are generated.
"""

import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from nlkw_lab.core.entities import MCEstimate, PathBatch, TimeGrid
from nlkw_lab.core.errors import ParameterError
from nlkw_lab.core.estimates import estimate, sample_covariance


def build_grid(T: float, n_steps: int) -> TimeGrid:
    """Uniform grid with n_steps steps on [0, T]"""
    if not (isinstance(T, (int, float)) and math.isfinite(T) and T > 0):
        raise ParameterError(f"horizon T must be positive, got {T}")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ParameterError(f"n_steps must be a positive integer, got {n_steps}")
    return TimeGrid(nodes=np.linspace(0.0, float(T), int(n_steps) + 1))


def path_generator(master_seed: int, path_id: int) -> np.random.Generator:
    """Counter-based stream of one path"""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(path_id,))
    return np.random.Generator(np.random.Philox(seq))


def _validate(n_paths: int, rho: float, master_seed: int) -> None:
    if int(n_paths) != n_paths or n_paths < 1:
        raise ParameterError(f"n_paths must be a positive integer, got {n_paths}")
    if not (math.isfinite(rho) and 0.0 <= rho <= 1.0):
        raise ParameterError(f"rho must lie in [0, 1], got {rho}")
    if int(master_seed) != master_seed or master_seed < 0:
        raise ParameterError(f"master_seed must be a non-negative integer, got {master_seed}")


def simulate_batch(
    grid: TimeGrid,
    n_paths: int,
    rho: float,
    master_seed: int,
    first_path_id: int = 0,
) -> PathBatch:
    """Simulate paths first_path_id .. first_path_id + n_paths - 1"""
    _validate(n_paths, rho, master_seed)
    n_steps = grid.n_steps
    scale = np.sqrt(grid.steps)
    path_ids = np.arange(first_path_id, first_path_id + n_paths, dtype=np.int64)
    # Children carry spawn keys (first_path_id + j,), the keys of path_generator.
    root = np.random.SeedSequence(master_seed, n_children_spawned=first_path_id)
    z = np.empty((n_paths, 2, n_steps))
    for row, child in enumerate(root.spawn(n_paths)):
        np.random.Generator(np.random.Philox(child)).standard_normal(out=z[row])
    inc1 = z[:, 0, :] * scale
    inc2 = z[:, 1, :] * scale

    w1 = np.zeros((n_paths, n_steps + 1))
    w2 = np.zeros((n_paths, n_steps + 1))
    np.cumsum(inc1, axis=1, out=w1[:, 1:])
    np.cumsum(inc2, axis=1, out=w2[:, 1:])
    return PathBatch(
        grid=grid,
        rho=float(rho),
        master_seed=int(master_seed),
        path_ids=path_ids,
        w1=w1,
        w2=w2,
    )


def iter_path_chunks(
    grid: TimeGrid, n_paths: int, rho: float, master_seed: int, chunk_paths: int
) -> Iterator[PathBatch]:
    """Yield consecutive sub-batches covering path ids 0..n_paths-1"""
    _validate(n_paths, rho, master_seed)
    if chunk_paths < 1:
        raise ParameterError(f"chunk_paths must be positive, got {chunk_paths}")
    for start in range(0, n_paths, chunk_paths):
        size = min(chunk_paths, n_paths - start)
        yield simulate_batch(grid, size, rho, master_seed, first_path_id=start)


def chunk_bounds(n_paths: int, chunk_paths: int) -> List[Tuple[int, int]]:
    """(first_path_id, size) of every chunk"""
    return [
        (start, min(chunk_paths, n_paths - start))
        for start in range(0, n_paths, chunk_paths)
    ]


def terminal_moments(w1_T: np.ndarray, w_T: np.ndarray) -> Dict[str, MCEstimate]:
    """Moments of the terminal values used to sanity-check simulated paths"""
    return {
        "mean_w1_T": estimate(w1_T),
        "mean_w_T": estimate(w_T),
        "second_moment_w_T": estimate(w_T * w_T),
        "cov_w_T_w1_T": sample_covariance(w_T, w1_T),
    }


def batch_moments(batch: PathBatch) -> Dict[str, MCEstimate]:
    return terminal_moments(batch.w1[:, -1], batch.w[:, -1])
