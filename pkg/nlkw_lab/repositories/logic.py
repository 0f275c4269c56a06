"""Repository layer logic with dependency injection"""

import os
import platform
import time
import traceback
from importlib import metadata
from typing import Any, Callable, Dict, List, Optional, Tuple

from nlkw_lab import __version__
from nlkw_lab.core import logic_base
from nlkw_lab.core.async_funcs import map_in_threads
from nlkw_lab.core.entities import (
    ExperimentConfig,
    FamilyReport,
    KWReport,
    PathBatch,
    RunSummary,
    SimulateReport,
    SweepReport,
    TimeGrid,
)
from nlkw_lab.core.errors import (
    CapabilityError,
    ConfigError,
    NlkwError,
    OutputError,
    ParameterError,
    ShapeError,
    StageError,
)
from nlkw_lab.core.file_exporter import (
    LADDER_FIELDS,
    NODE_FIELDS,
    RESIDUAL_FIELDS,
    export_to_csv,
    export_to_json,
    ladder_rows,
    node_rows,
    plot_ladder,
    plot_residual,
    residual_rows,
)
from nlkw_lab.core.path_engine import chunk_bounds, simulate_batch
from nlkw_lab.repositories import config, log, path_store

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


# --- Private implementation functions ---
async def _map_chunks_impl(
    grid: TimeGrid,
    n_paths: int,
    rho: float,
    master_seed: int,
    func: Callable[[PathBatch], Any],
) -> List[Any]:
    """Simulate and process chunks on worker threads, results in path order"""
    settings = config.get_settings()
    bounds = chunk_bounds(n_paths, settings.chunk_paths)

    def run(bound: Tuple[int, int]) -> Any:
        start, size = bound
        batch = simulate_batch(grid, size, rho, master_seed, first_path_id=start)
        result = func(batch)
        log.get_logger().debug("Processed paths %d..%d", start, start + size - 1)
        return result

    _logger_info(
        f"Processing {len(bounds)} chunks of up to {settings.chunk_paths} paths on {settings.threads} threads"
    )
    return await map_in_threads(run, bounds, settings.threads)


def _simulate_impl(grid: TimeGrid, n_paths: int, rho: float, master_seed: int) -> PathBatch:
    return simulate_batch(grid, n_paths, rho, master_seed)


def _dump_paths_impl(
    grid: TimeGrid, n_paths: int, rho: float, master_seed: int, path: str
):
    settings = config.get_settings()
    return path_store.dump_paths(grid, n_paths, rho, master_seed, settings.chunk_paths, path)


def _get_versions_impl() -> Dict[str, str]:
    versions = {"nlkw_lab": __version__, "python": platform.python_version()}
    for package in ("numpy", "scipy", "pydantic", "matplotlib"):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def _out(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, name)


async def _emit_run(summary: RunSummary, out_dir: str) -> List[str]:
    written = [_out(out_dir, "summary.json"), _out(out_dir, "nodes.csv")]
    await export_to_json(summary, written[0])
    await export_to_csv(node_rows(summary.nodes), written[1], NODE_FIELDS)
    if summary.representation is not None:
        written.append(_out(out_dir, "ladder.csv"))
        await export_to_csv(ladder_rows(summary.representation), written[-1], LADDER_FIELDS)
        if summary.config.emit_plots:
            written.append(_out(out_dir, "ladder.svg"))
            plot_ladder(summary.representation, written[-1])
    return written


async def _emit_sweep(report: SweepReport, out_dir: str) -> List[str]:
    written = [_out(out_dir, "sweep.json"), _out(out_dir, "residual.csv")]
    await export_to_json(report, written[0])
    await export_to_csv(residual_rows(report.points), written[1], RESIDUAL_FIELDS)
    if report.config.emit_plots:
        written.append(_out(out_dir, "residual.svg"))
        plot_residual(report.points, written[-1])
    return written


async def _emit_simulate(report: SimulateReport, out_dir: str) -> List[str]:
    written = [_out(out_dir, "moments.json")]
    await export_to_json(report, written[0])
    return written


async def _emit_family(report: FamilyReport, out_dir: str) -> List[str]:
    written = [_out(out_dir, "family.json"), _out(out_dir, "ladder.csv")]
    await export_to_json(report, written[0])
    await export_to_csv(ladder_rows(report.representation), written[1], LADDER_FIELDS)
    if report.config.emit_plots:
        written.append(_out(out_dir, "ladder.svg"))
        plot_ladder(report.representation, written[-1])
    return written


async def _emit_kw(report: KWReport, out_dir: str) -> List[str]:
    written = [_out(out_dir, "kw.json")]
    await export_to_json(report, written[0])
    return written


# --- Logger functions ---
def _logger_info(message: str):
    """Log info message"""
    log.get_logger().info(message)


def _logger_warning(message: str):
    """Log warning message"""
    log.get_logger().warning(message)


# --- Create public functions with dependency injection ---
_run_pipeline_impl = logic_base.create_run_pipeline(
    map_chunks=_map_chunks_impl,
    simulate=_simulate_impl,
    emit=_emit_run,
    get_versions=_get_versions_impl,
    logger=_logger_info,
    clock=time.perf_counter,
)

_sweep_rho_impl = logic_base.create_sweep_rho(
    map_chunks=_map_chunks_impl,
    emit=_emit_sweep,
    get_versions=_get_versions_impl,
    logger=_logger_info,
    clock=time.perf_counter,
)

_simulate_command_impl = logic_base.create_simulate(
    dump_paths=_dump_paths_impl,
    emit=_emit_simulate,
    get_versions=_get_versions_impl,
    logger=_logger_info,
    clock=time.perf_counter,
)

_verify_family_impl = logic_base.create_verify_family(
    emit=_emit_family,
    get_versions=_get_versions_impl,
    logger=_logger_warning,
    clock=time.perf_counter,
)

_kw_impl = logic_base.create_kw(
    map_chunks=_map_chunks_impl,
    emit=_emit_kw,
    get_versions=_get_versions_impl,
    logger=_logger_info,
    clock=time.perf_counter,
)


# --- Error mapping ---
def unwrap_error(error: BaseException) -> BaseException:
    return error.cause if isinstance(error, StageError) else error


def exit_code_for(error: BaseException) -> int:
    """0 success, 2 config or parameter error, 3 numeric or other error, 4 I/O error"""
    cause = unwrap_error(error)
    if isinstance(cause, (OutputError, OSError)):
        return EXIT_IO
    if isinstance(cause, (ConfigError, ParameterError, ShapeError, CapabilityError)):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def error_report(error: BaseException) -> Dict[str, Optional[str]]:
    """Structured description of a failure for stderr"""
    cause = unwrap_error(error)
    report: Dict[str, Optional[str]] = {
        "stage": error.stage if isinstance(error, StageError) else None,
        "error": type(cause).__name__,
        "message": str(cause),
    }
    if isinstance(cause, ConfigError):
        report["key"] = cause.key
    if isinstance(cause, OutputError):
        report["path"] = cause.path
    return report


def _log_failure(operation: str, error: BaseException) -> None:
    logger = log.get_logger()
    logger.error(f"Error occurred during {operation}: {error}")
    if not isinstance(unwrap_error(error), NlkwError):
        logger.error("".join(traceback.format_exception(error)))


# --- Public API with error handling ---
async def run_pipeline(
    config_: ExperimentConfig, out_dir: Optional[str] = None, represent: bool = True
) -> RunSummary:
    """Full pipeline; represent=False skips the representation ladder"""
    try:
        return await _run_pipeline_impl(config_, out_dir, represent)
    except Exception as e:
        _log_failure("run_pipeline", e)
        raise


async def sweep_rho(config_: ExperimentConfig, out_dir: Optional[str] = None) -> SweepReport:
    try:
        return await _sweep_rho_impl(config_, out_dir)
    except Exception as e:
        _log_failure("sweep_rho", e)
        raise


async def simulate(config_: ExperimentConfig, out_dir: str) -> SimulateReport:
    try:
        return await _simulate_command_impl(config_, out_dir)
    except Exception as e:
        _log_failure("simulate", e)
        raise


async def verify_family(
    config_: ExperimentConfig, out_dir: Optional[str] = None
) -> FamilyReport:
    try:
        return await _verify_family_impl(config_, out_dir)
    except Exception as e:
        _log_failure("verify_family", e)
        raise


async def kw(config_: ExperimentConfig, out_dir: Optional[str] = None) -> KWReport:
    try:
        return await _kw_impl(config_, out_dir)
    except Exception as e:
        _log_failure("kw", e)
        raise
