# converter.py: Converts run results to markdown for the console
from typing import List, Optional

from nlkw_lab.core.entities import (
    DirectionalReport,
    FamilyReport,
    KWReport,
    MCEstimate,
    ModeCounts,
    OptimizationReport,
    RepresentationReport,
    RunSummary,
    SimulateReport,
    SweepPoint,
    SweepReport,
)


def format_estimate(value: Optional[MCEstimate]) -> str:
    """mean ± s.e. (n)"""
    if value is None:
        return "n/a"
    return f"{value.mean:.6g} ± {value.stderr:.2g} (n={value.n})"


def _create_markdown_header(title: str, level: int = 2) -> str:
    """Create markdown header with specified level"""
    prefix = "#" * level
    return f"{prefix} {title}\n"


def _add_optional_field(
    result: List[str], label: str, value, format_func=None
) -> None:
    """Add optional field to result list if value exists"""
    if value is not None:
        formatted_value = format_func(value) if format_func else value
        result.append(f"**{label}:** {formatted_value}\n")


def convert_mode_counts_to_markdown(counts: ModeCounts) -> str:
    result = [_create_markdown_header("Pointwise solve", 3)]
    result.append("| Mode | Nodes |")
    result.append("|------|-------|")
    result.append(f"| root | {counts.root} |")
    result.append(f"| stationary | {counts.stationary} |")
    result.append("")
    result.append(f"**Root fraction:** {counts.root_fraction:.4f}\n")
    if counts.multi_root:
        result.append(f"**Multi-root tie-breaks:** {counts.multi_root}\n")
    if counts.unresolved:
        result.append(f"**Stationary nodes above tol_stat:** {counts.unresolved}\n")
    result.append(f"**Max product residual:** {counts.max_product_residual:.3g}\n")
    return "\n".join(result)


def convert_ladder_to_markdown(report: RepresentationReport) -> str:
    """Ladder table with RMSE and refinement ratios"""
    result = [
        _create_markdown_header(
            f"Representation ladder: `{report.family}` x={report.x:g} ({report.target})", 3
        )
    ]
    result.append("| N | RMSE | Ratio |")
    result.append("|---|------|-------|")
    for rung in report.rungs:
        ratio = f"{rung.ratio:.3f}" if rung.ratio is not None else ""
        result.append(f"| {rung.n_steps} | {rung.rmse:.3e} | {ratio} |")
    result.append("")
    result.append(f"**Converged:** {'yes' if report.converged else 'no'}\n")
    return "\n".join(result)


def convert_directional_to_markdown(report: DirectionalReport) -> str:
    result = [_create_markdown_header("Directional derivative", 3)]
    result.append("| eps | Finite difference | Analytic | Paired difference |")
    result.append("|-----|-------------------|----------|-------------------|")
    for rung in report.rungs:
        result.append(
            f"| {rung.eps:g} | {format_estimate(rung.finite_difference)} | {format_estimate(rung.analytic)} | {format_estimate(rung.difference)} |"
        )
    result.append("")
    result.append(f"**Truncation at smallest eps:** {report.truncation:.3e}\n")
    result.append(f"**Agrees:** {'yes' if report.agrees else 'no'}\n")
    return "\n".join(result)


def convert_parametric_to_markdown(report: OptimizationReport) -> str:
    result = [_create_markdown_header("Parametric policy", 3)]
    beta = ", ".join(f"{b:.6g}" for b in report.beta) or "(none)"
    result.append(f"**beta:** [{beta}]\n")
    result.append(
        f"**Evaluations:** {report.evaluations} ({'converged' if report.converged else 'budget exhausted'})\n"
    )
    result.append(f"**In-sample objective:** {report.in_sample_objective:.6g}\n")
    result.append(
        f"**Out-of-sample objective:** {format_estimate(report.out_of_sample.objective)}\n"
    )
    return "\n".join(result)


def convert_sweep_to_markdown(sweep: List[SweepPoint]) -> str:
    result = [_create_markdown_header("Correlation sweep", 3)]
    result.append("| rho | Floor | Objective | Excess |")
    result.append("|-----|-------|-----------|--------|")
    for point in sweep:
        result.append(
            f"| {point.rho:g} | {format_estimate(point.lambda_sq)} | {format_estimate(point.objective)} | {format_estimate(point.excess)} |"
        )
    return "\n".join(result) + "\n"


def convert_summary_to_markdown(summary: RunSummary) -> str:
    """Convert a run summary to markdown format"""
    config = summary.config
    result = [_create_markdown_header(f"Run: family `{summary.family}`, payoff `{config.payoff}`")]
    result.append(
        f"T={config.T:g}, N={config.n_steps}, paths={config.n_paths}, rho={config.rho:g}, seed={config.master_seed}\n"
    )
    result.append(f"**KW floor E[lambda^2]:** {format_estimate(summary.lambda_sq)}\n")
    if summary.kw is not None:
        _add_optional_field(
            result, "Regression floor", summary.kw.regression_lambda_sq, format_estimate
        )
        if summary.kw.coefficients:
            coefficients = ", ".join(
                f"{name}={value:.6g}" for name, value in summary.kw.coefficients.items()
            )
            result.append(f"**Regression coefficients:** {coefficients}\n")
    result.append(f"**Objective:** {format_estimate(summary.objective)}\n")
    result.append(f"**Excess over floor:** {format_estimate(summary.excess)}\n")
    result.append(f"**Orthogonality:** {format_estimate(summary.orthogonality)}\n")
    _add_optional_field(result, "Objective at theta=0", summary.zero_objective, format_estimate)

    if summary.mode_counts is not None:
        result.append(convert_mode_counts_to_markdown(summary.mode_counts))
    if summary.parametric is not None:
        result.append(convert_parametric_to_markdown(summary.parametric))
    if summary.directional is not None:
        result.append(convert_directional_to_markdown(summary.directional))
    if summary.representation is not None:
        result.append(convert_ladder_to_markdown(summary.representation))

    result.append(f"**Wall clock:** {summary.wall_clock_seconds:.2f} s\n")
    return "\n".join(result)


def convert_sweep_report_to_markdown(report: SweepReport) -> str:
    config = report.config
    result = [_create_markdown_header(f"Sweep: family `{report.family}`, payoff `{config.payoff}`")]
    result.append(
        f"T={config.T:g}, N={config.n_steps}, paths={config.n_paths}, seed={config.master_seed}\n"
    )
    result.append(convert_sweep_to_markdown(report.points))
    result.append(f"**Wall clock:** {report.wall_clock_seconds:.2f} s\n")
    return "\n".join(result)


def convert_simulate_to_markdown(report: SimulateReport) -> str:
    config = report.config
    result = [_create_markdown_header("Simulated paths")]
    result.append(
        f"T={config.T:g}, N={config.n_steps}, paths={config.n_paths}, rho={config.rho:g}, seed={config.master_seed}\n"
    )
    result.append("| Moment | Estimate |")
    result.append("|--------|----------|")
    for name, value in report.moments.items():
        result.append(f"| {name} | {format_estimate(value)} |")
    result.append("")
    _add_optional_field(result, "Paths file", report.paths_file)
    return "\n".join(result)


def convert_family_to_markdown(report: FamilyReport) -> str:
    result = [_create_markdown_header(f"Family: `{report.family}`")]
    result.append(
        f"**E[M(T, x)] at x={report.representation.x:g}:** {format_estimate(report.martingale)}\n"
    )
    result.append(convert_ladder_to_markdown(report.representation))
    if report.derivative_identity is not None:
        result.append(convert_ladder_to_markdown(report.derivative_identity))
    if report.derivative is not None:
        result.append(_create_markdown_header("Derivative check", 3))
        _add_optional_field(
            result, "Max relative error dM/dx", report.derivative.max_d_eval_error, "{:.3e}".format
        )
        _add_optional_field(
            result,
            "Max relative error d_mu/dx",
            report.derivative.max_d_integrand_error,
            "{:.3e}".format,
        )
    if report.holder is not None:
        result.append(_create_markdown_header("Holder estimate", 3))
        _add_optional_field(result, "delta", report.holder.delta_hat, "{:.4f}".format)
        _add_optional_field(result, "K", report.holder.k_hat, "{:.4g}".format)
        _add_optional_field(result, "Note", report.holder.note)
    return "\n".join(result)


def convert_kw_to_markdown(report: KWReport) -> str:
    result = [_create_markdown_header(f"KW decomposition: payoff `{report.config.payoff}`")]
    result.append(f"**Analytic floor:** {format_estimate(report.kw.lambda_sq)}\n")
    _add_optional_field(result, "Grid closed form", report.discrete_lambda_sq, "{:.6g}".format)
    _add_optional_field(
        result, "Regression floor (held out)", report.kw.regression_lambda_sq, format_estimate
    )
    if report.kw.coefficients:
        result.append("| Feature | Coefficient | s.e. |")
        result.append("|---------|-------------|------|")
        stderr = report.kw.coefficient_stderr or {}
        for name, value in report.kw.coefficients.items():
            result.append(f"| {name} | {value:.6g} | {stderr.get(name, float('nan')):.2g} |")
        result.append("")
    if report.orthogonality:
        result.append(_create_markdown_header("Strong orthogonality", 3))
        for name, value in report.orthogonality.items():
            result.append(f"- {name}: {format_estimate(value)}")
    return "\n".join(result)
