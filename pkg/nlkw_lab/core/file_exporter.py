"""Export run results to CSV, JSON and SVG files"""

import csv
import os
from typing import Any, Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from pydantic import BaseModel  # noqa: E402

from nlkw_lab.core.entities import (  # noqa: E402
    NodeRecord,
    RepresentationReport,
    SweepPoint,
)
from nlkw_lab.core.errors import OutputError  # noqa: E402

NODE_FIELDS = ["t", "h", "theta", "mode", "gap"]
LADDER_FIELDS = ["N", "rmse"]
RESIDUAL_FIELDS = ["rho", "quantity", "mean", "stderr"]

plt.rcParams.update({"svg.hashsalt": "nlkw", "svg.fonttype": "none"})


def validate_output_path(output_path: str) -> str:
    """
    Validate and normalize an output path, creating its parent directory.

    Args:
        output_path: The path where the file will be saved

    Returns:
        Normalized absolute path

    Raises:
        OutputError: If the path is invalid or cannot be created
    """
    normalized = os.path.normpath(os.path.abspath(os.path.normpath(output_path)))

    system_dirs = [
        "/etc",
        "/usr",
        "/bin",
        "/sbin",
        "/System",
        "/Windows",
        "/Program Files",
    ]
    for sys_dir in system_dirs:
        if normalized == sys_dir or normalized.startswith(sys_dir + os.sep):
            raise OutputError(output_path, f"cannot write to system directory {sys_dir}")

    parent_dir = os.path.dirname(normalized)
    if parent_dir and not os.path.exists(parent_dir):
        try:
            os.makedirs(parent_dir, exist_ok=True)
        except OSError as e:
            raise OutputError(parent_dir, f"cannot create directory: {e}") from e

    return normalized


def _serialize_value(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


async def export_to_csv(
    rows: Sequence[Dict[str, Any]], output_path: str, fieldnames: List[str]
) -> int:
    """
    Export rows to a CSV file with a fixed header.

    Returns:
        Size of the created file in bytes
    """
    validated_path = validate_output_path(output_path)
    try:
        with open(validated_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({key: _serialize_value(row.get(key)) for key in fieldnames})
    except OSError as e:
        raise OutputError(validated_path, str(e)) from e
    return os.path.getsize(validated_path)


async def export_to_json(data: BaseModel, output_path: str) -> int:
    """Write a pydantic model as indented JSON; output is deterministic"""
    validated_path = validate_output_path(output_path)
    try:
        with open(validated_path, "w", encoding="utf-8") as f:
            f.write(data.model_dump_json(indent=2))
            f.write("\n")
    except OSError as e:
        raise OutputError(validated_path, str(e)) from e
    return os.path.getsize(validated_path)


def node_rows(records: Sequence[NodeRecord]) -> List[Dict[str, Any]]:
    return [record.model_dump() for record in records]


def ladder_rows(report: RepresentationReport) -> List[Dict[str, Any]]:
    return [{"N": rung.n_steps, "rmse": rung.rmse} for rung in report.rungs]


def residual_rows(sweep: Sequence[SweepPoint]) -> List[Dict[str, Any]]:
    """One row per (rho, quantity); quantities are objective and floor"""
    rows = []
    for point in sweep:
        for quantity, value in (("objective", point.objective), ("floor", point.lambda_sq)):
            rows.append(
                {
                    "rho": point.rho,
                    "quantity": quantity,
                    "mean": value.mean,
                    "stderr": value.stderr,
                }
            )
    return rows


def _save_svg(fig, output_path: str) -> int:
    validated_path = validate_output_path(output_path)
    try:
        fig.savefig(validated_path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise OutputError(validated_path, str(e)) from e
    finally:
        plt.close(fig)
    return os.path.getsize(validated_path)


def plot_ladder(report: RepresentationReport, output_path: str) -> int:
    """Log-log RMSE against N for the representation ladder"""
    fig, ax = plt.subplots(figsize=(6, 4))
    n = [rung.n_steps for rung in report.rungs]
    rmse = [max(rung.rmse, 1e-300) for rung in report.rungs]
    (line,) = ax.loglog(n, rmse, marker="o", label=f"{report.family}, x={report.x:g}")
    line.set_gid("series-rmse")
    ax.set_xlabel("N")
    ax.set_ylabel("RMSE")
    ax.set_title(f"Representation ladder ({report.target})")
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, output_path)


def plot_residual(sweep: Sequence[SweepPoint], output_path: str) -> int:
    """Objective and KW floor against rho"""
    fig, ax = plt.subplots(figsize=(6, 4))
    rho = [point.rho for point in sweep]
    series = {
        "objective": [point.objective.mean for point in sweep],
        "floor": [point.lambda_sq.mean for point in sweep],
    }
    for quantity, values in series.items():
        (line,) = ax.plot(rho, values, marker="o", label=quantity)
        line.set_gid(f"series-{quantity}")
    ax.set_xlabel("rho")
    ax.set_ylabel("E[residual^2]")
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, output_path)
