"""Binary dump of path batches.

Layout (little-endian): a fixed header (magic "NLKW", version u32, n_paths,
N, T, rho, master_seed) followed by w1 and then w2 as row-major
(n_paths, N + 1) float64 arrays. w is recomputed on load.
"""

import os
from typing import Tuple

import numpy as np

from nlkw_lab.core.entities import PathBatch, TimeGrid
from nlkw_lab.core.errors import OutputError, ParameterError
from nlkw_lab.core.file_exporter import validate_output_path
from nlkw_lab.core.path_engine import build_grid, iter_path_chunks

MAGIC = b"NLKW"
VERSION = 1

HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("n_paths", "<u8"),
        ("n_steps", "<u8"),
        ("T", "<f8"),
        ("rho", "<f8"),
        ("master_seed", "<u8"),
    ]
)


def _header(n_paths: int, grid: TimeGrid, rho: float, master_seed: int) -> np.ndarray:
    if not grid.is_uniform:
        raise ParameterError("only uniform grids can be dumped")
    header = np.zeros(1, dtype=HEADER)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["n_paths"] = n_paths
    header["n_steps"] = grid.n_steps
    header["T"] = grid.horizon
    header["rho"] = rho
    header["master_seed"] = master_seed
    return header


class PathWriter:
    """Writes a dump chunk by chunk; chunks land at their path_id rows"""

    def __init__(self, path: str, grid: TimeGrid, n_paths: int, rho: float, master_seed: int):
        self.path = validate_output_path(path)
        self.grid = grid
        self.n_paths = n_paths
        header = _header(n_paths, grid, rho, master_seed)
        shape = (2, n_paths, grid.n_steps + 1)
        try:
            with open(self.path, "wb") as f:
                f.write(header.tobytes())
                f.truncate(HEADER.itemsize + int(np.prod(shape)) * 8)
            self._data = np.memmap(
                self.path, dtype="<f8", mode="r+", offset=HEADER.itemsize, shape=shape
            )
        except OSError as e:
            raise OutputError(self.path, str(e)) from e

    def write(self, batch: PathBatch) -> None:
        if not batch.grid.same_as(self.grid):
            raise ParameterError("chunk lives on a different grid than the dump")
        rows = batch.path_ids
        if rows.size and (rows[0] < 0 or rows[-1] >= self.n_paths):
            raise ParameterError("chunk path ids fall outside the dump")
        self._data[0, rows] = batch.w1
        self._data[1, rows] = batch.w2

    def close(self) -> None:
        self._data.flush()
        del self._data

    def __enter__(self) -> "PathWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def save_batch(path: str, batch: PathBatch) -> int:
    """Dump a whole batch; its path ids must be 0..n-1"""
    if batch.n_paths and (batch.path_ids[0] != 0 or batch.path_ids[-1] != batch.n_paths - 1):
        raise ParameterError("only batches starting at path id 0 can be dumped")
    with PathWriter(path, batch.grid, batch.n_paths, batch.rho, batch.master_seed) as writer:
        writer.write(batch)
    return os.path.getsize(writer.path)


def load_batch(path: str) -> PathBatch:
    try:
        with open(path, "rb") as f:
            raw = f.read(HEADER.itemsize)
            if len(raw) < HEADER.itemsize:
                raise ParameterError(f"{path} is too short for a path dump header")
            header = np.frombuffer(raw, dtype=HEADER)[0]
            if header["magic"] != MAGIC:
                raise ParameterError(f"{path} is not a path dump")
            if int(header["version"]) != VERSION:
                raise ParameterError(f"unsupported dump version {int(header['version'])}")
            n_paths = int(header["n_paths"])
            n_steps = int(header["n_steps"])
            count = 2 * n_paths * (n_steps + 1)
            data = np.fromfile(f, dtype="<f8", count=count)
    except OSError as e:
        raise OutputError(path, str(e)) from e
    if data.size != count:
        raise ParameterError(f"{path} is truncated: {data.size} of {count} values")
    data = data.reshape(2, n_paths, n_steps + 1).astype(np.float64)
    return PathBatch(
        grid=build_grid(float(header["T"]), n_steps),
        rho=float(header["rho"]),
        master_seed=int(header["master_seed"]),
        path_ids=np.arange(n_paths, dtype=np.int64),
        w1=data[0],
        w2=data[1],
    )


def dump_paths(
    grid: TimeGrid,
    n_paths: int,
    rho: float,
    master_seed: int,
    chunk_paths: int,
    path: str,
) -> Tuple[np.ndarray, np.ndarray]:
    """Simulate chunk by chunk into a dump; returns terminal w1 and w per path"""
    w1_T = np.empty(n_paths)
    w_T = np.empty(n_paths)
    with PathWriter(path, grid, n_paths, rho, master_seed) as writer:
        for batch in iter_path_chunks(grid, n_paths, rho, master_seed, chunk_paths):
            writer.write(batch)
            w1_T[batch.path_ids] = batch.w1[:, -1]
            w_T[batch.path_ids] = batch.w[:, -1]
    return w1_T, w_T
