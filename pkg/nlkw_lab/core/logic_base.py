"""Pure experiment logic with dependency injection via higher-order functions"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from nlkw_lab.core.entities import (
    DirectionalRung,
    ExperimentConfig,
    FamilyReport,
    KWReport,
    KWSummary,
    MCEstimate,
    ModeCounts,
    NodeRecord,
    PathBatch,
    RunSummary,
    SimulateReport,
    StrategyPath,
    SweepPoint,
    SweepReport,
    TimeGrid,
)
from nlkw_lab.core.errors import NlkwError, StageError
from nlkw_lab.core.estimates import estimate
from nlkw_lab.core.families import (
    MartingaleFamily,
    derivative_identity_check,
    get_family,
    holder_estimate,
    ladder_batches,
    martingale_check,
    representation_check,
    sample_derivative_check,
)
from nlkw_lab.core.integrators import ito_integral, left_nodes
from nlkw_lab.core.kw_projection import (
    Payoff,
    analytic_kw,
    discrete_lambda_sq,
    feature_integrals,
    fit_regression,
    get_payoff,
    parse_basis,
)
from nlkw_lab.core.optimizer import (
    ObjectiveSamples,
    ParametricPolicy,
    SolverSettings,
    StrategySource,
    build_pointwise_strategy,
    central_difference,
    directional_report,
    directional_rung,
    objective_samples,
    optimize_parametric,
    report_from_samples,
)
from nlkw_lab.core.path_engine import build_grid, terminal_moments

R = TypeVar("R")

# Type aliases for dependency functions
MapChunksFunc = Callable[
    [TimeGrid, int, float, int, Callable[[PathBatch], R]], Awaitable[List[R]]
]
SimulateFunc = Callable[[TimeGrid, int, float, int], PathBatch]
DumpPathsFunc = Callable[[TimeGrid, int, float, int, str], Tuple[np.ndarray, np.ndarray]]
EmitFunc = Callable[[R, str], Awaitable[List[str]]]
VersionsFunc = Callable[[], Dict[str, str]]
ClockFunc = Callable[[], float]
LoggerFunc = Callable[[str], None]

# Bounded predictable strategies used to test strong orthogonality.
ORTHOGONALITY_TESTS: Dict[str, Callable] = {
    "const": lambda p: np.ones_like(p.w),
    "tanh_w1": lambda p: np.tanh(p.w1),
    "cos_w": lambda p: np.cos(p.w),
}


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Attribute any failure inside the block to a pipeline stage"""
    try:
        yield
    except StageError:
        raise
    except (NlkwError, ArithmeticError, ValueError, TypeError, OSError) as e:
        raise StageError(name, e) from e


def solver_settings(config: ExperimentConfig) -> SolverSettings:
    return SolverSettings(
        x_max=config.x_max,
        x_cap=max(config.x_cap, config.x_max),
        tol_root_scale=config.tol_root_scale,
        tol_stat=config.tol_stat,
        scan_points=config.scan_points,
    )


@dataclass
class ChunkResult:
    """Per-path samples of one chunk; merged in path order"""

    kw_residual: np.ndarray
    design: np.ndarray
    target: np.ndarray
    samples: ObjectiveSamples
    finite_differences: List[np.ndarray] = field(default_factory=list)
    analytic: Optional[np.ndarray] = None
    counts: Optional[ModeCounts] = None
    nodes: List[NodeRecord] = field(default_factory=list)


def evaluate_chunk(
    batch: PathBatch,
    config: ExperimentConfig,
    family: MartingaleFamily,
    payoff: Payoff,
    source: Optional[StrategySource] = None,
    eps_ladder: Sequence[float] = (),
) -> ChunkResult:
    """Decompose, optimize and verify on one chunk of paths.

    Without a strategy source the pointwise strategy is built from the
    analytic KW integrand.
    """
    with stage("decompose"):
        kw = analytic_kw(payoff, batch)
        design = feature_integrals(parse_basis(config.basis), batch)

    counts = None
    nodes: List[NodeRecord] = []
    with stage("optimize"):
        if source is None:
            pointwise = build_pointwise_strategy(family, kw, batch, solver_settings(config))
            theta: StrategyPath = pointwise.strategy
            counts = pointwise.counts
            if batch.path_ids[0] == 0:
                nodes = pointwise.node_records(0)
        else:
            theta = source if isinstance(source, StrategyPath) else source(batch)

    with stage("verify"):
        samples = objective_samples(family, theta, payoff, batch)
        finite_differences = [
            central_difference(family, theta, samples.payoff, batch, eps)
            for eps in eps_ladder
        ]
        analytic = -2.0 * samples.residual * samples.derivative_integral

    return ChunkResult(
        kw_residual=kw.residual,
        design=design,
        target=samples.payoff,
        samples=samples,
        finite_differences=finite_differences,
        analytic=analytic if eps_ladder else None,
        counts=counts,
        nodes=nodes,
    )


def merge_counts(counts: Sequence[Optional[ModeCounts]]) -> Optional[ModeCounts]:
    present = [c for c in counts if c is not None]
    if not present:
        return None
    return ModeCounts(
        root=sum(c.root for c in present),
        stationary=sum(c.stationary for c in present),
        multi_root=sum(c.multi_root for c in present),
        unresolved=sum(c.unresolved for c in present),
        max_product_residual=max(c.max_product_residual for c in present),
    )


def _kw_summary(config: ExperimentConfig, results: Sequence[ChunkResult]) -> KWSummary:
    kw_residual = np.concatenate([r.kw_residual for r in results])
    design = np.concatenate([r.design for r in results])
    target = np.concatenate([r.target for r in results])
    fit = fit_regression(design, target, config.holdout_fraction, config.ridge)
    return KWSummary(
        lambda_sq=estimate(kw_residual * kw_residual),
        regression_lambda_sq=fit.lambda_sq,
        coefficients=dict(zip(config.basis, (float(b) for b in fit.coefficients))),
        coefficient_stderr=dict(
            zip(config.basis, (float(s) for s in fit.coefficient_stderr))
        ),
    )


def _parametric_source(
    config: ExperimentConfig,
    family: MartingaleFamily,
    payoff: Payoff,
    grid: TimeGrid,
    simulate: SimulateFunc,
    logger: LoggerFunc,
):
    """Fit the parametric policy on its own batch, independent of the main paths"""
    with stage("simulate"):
        fit_batch = simulate(grid, config.parametric_paths, config.rho, config.master_seed + 1)
        fresh_batch = simulate(grid, config.parametric_paths, config.rho, config.master_seed + 2)
    with stage("optimize"):
        policy = ParametricPolicy(tuple(config.policy_features))
        beta, report = optimize_parametric(
            family,
            policy,
            payoff,
            fit_batch,
            config.budget,
            fresh_batch,
            kw_fresh=analytic_kw(payoff, fresh_batch),
        )
    if not report.converged:
        logger(
            f"Parametric optimization stopped after {report.evaluations} evaluations without converging"
        )
    return policy.bind(beta), report


def create_run_pipeline(
    map_chunks: MapChunksFunc,
    simulate: SimulateFunc,
    emit: EmitFunc,
    get_versions: VersionsFunc,
    logger: LoggerFunc,
    clock: ClockFunc,
) -> Callable[[ExperimentConfig, Optional[str], bool], Awaitable[RunSummary]]:
    """Create run_pipeline function with injected dependencies"""

    async def run_pipeline(
        config: ExperimentConfig, out_dir: Optional[str] = None, represent: bool = True
    ) -> RunSummary:
        """simulate -> decompose -> optimize -> verify -> represent -> emit"""
        start = clock()
        with stage("simulate"):
            grid = build_grid(config.T, config.n_steps)
            family = get_family(config.effective_family)
            payoff = get_payoff(config.payoff)

        parametric = None
        source: Optional[StrategySource] = None
        if config.strategy == "parametric":
            source, parametric = _parametric_source(
                config, family, payoff, grid, simulate, logger
            )

        logger(
            f"Evaluating {config.n_paths} paths on {config.n_steps} steps with family '{family.name}'"
        )
        with stage("simulate"):
            results: List[ChunkResult] = await map_chunks(
                grid,
                config.n_paths,
                config.rho,
                config.master_seed,
                lambda batch: evaluate_chunk(
                    batch, config, family, payoff, source, config.eps_ladder
                ),
            )

        with stage("decompose"):
            kw = _kw_summary(config, results)
            kw_residual = np.concatenate([r.kw_residual for r in results])

        with stage("verify"):
            samples = ObjectiveSamples.concatenate([r.samples for r in results])
            objective = report_from_samples(samples, kw_residual)
            analytic = np.concatenate([r.analytic for r in results])
            rungs: List[DirectionalRung] = [
                directional_rung(
                    eps, np.concatenate([r.finite_differences[i] for r in results]), analytic
                )
                for i, eps in enumerate(config.eps_ladder)
            ]
            directional = directional_report(rungs)
            zero_objective = estimate(samples.payoff * samples.payoff)
        counts = merge_counts([r.counts for r in results])
        if counts is not None:
            logger(
                f"Pointwise solve: {counts.root} root, {counts.stationary} stationary, {counts.multi_root} multi-root nodes"
            )
            if counts.unresolved:
                logger(f"{counts.unresolved} stationary nodes reached the bracket cap")

        representation = None
        if represent:
            with stage("represent"):
                batches = ladder_batches(
                    config.T, config.ladder, config.ladder_paths, config.rho, config.master_seed
                )
                representation = representation_check(
                    family, config.representation_x, batches
                )

        assert objective.excess is not None
        summary = RunSummary(
            config=config,
            family=family.name,
            lambda_sq=kw.lambda_sq,
            kw=kw,
            objective=objective.objective,
            orthogonality=objective.orthogonality,
            excess=objective.excess,
            zero_objective=zero_objective,
            mode_counts=counts,
            parametric=parametric,
            directional=directional,
            representation=representation,
            nodes=[node for r in results for node in r.nodes],
            versions=get_versions(),
        )
        summary.wall_clock_seconds = clock() - start
        logger(f"Run finished in {summary.wall_clock_seconds:.2f} s")

        if out_dir is not None:
            with stage("emit"):
                written = await emit(summary, out_dir)
            logger(f"Wrote {len(written)} files to {out_dir}")
        return summary

    return run_pipeline


def create_sweep_rho(
    map_chunks: MapChunksFunc,
    emit: EmitFunc,
    get_versions: VersionsFunc,
    logger: LoggerFunc,
    clock: ClockFunc,
) -> Callable[[ExperimentConfig, Optional[str]], Awaitable[SweepReport]]:
    """Create sweep_rho function with injected dependencies"""

    async def sweep_rho(config: ExperimentConfig, out_dir: Optional[str] = None) -> SweepReport:
        """KW floor and optimal objective for every rho of config.rho_sweep"""
        start = clock()
        with stage("simulate"):
            grid = build_grid(config.T, config.n_steps)
            family = get_family(config.effective_family)
            payoff = get_payoff(config.payoff)

        points: List[SweepPoint] = []
        for rho in config.rho_sweep:
            point_config = config.model_copy(update={"rho": rho})
            with stage("simulate"):
                results: List[ChunkResult] = await map_chunks(
                    grid,
                    config.n_paths,
                    rho,
                    config.master_seed,
                    lambda batch: evaluate_chunk(batch, point_config, family, payoff),
                )
            with stage("verify"):
                kw_residual = np.concatenate([r.kw_residual for r in results])
                samples = ObjectiveSamples.concatenate([r.samples for r in results])
                report = report_from_samples(samples, kw_residual)
            assert report.lambda_floor is not None and report.excess is not None
            points.append(
                SweepPoint(
                    rho=rho,
                    lambda_sq=report.lambda_floor,
                    objective=report.objective,
                    excess=report.excess,
                )
            )
            logger(f"rho={rho:g}: floor {report.lambda_floor.mean:.6g}, objective {report.objective.mean:.6g}")

        result = SweepReport(
            config=config, family=family.name, points=points, versions=get_versions()
        )
        result.wall_clock_seconds = clock() - start
        if out_dir is not None:
            with stage("emit"):
                await emit(result, out_dir)
        return result

    return sweep_rho


def create_simulate(
    dump_paths: DumpPathsFunc,
    emit: EmitFunc,
    get_versions: VersionsFunc,
    logger: LoggerFunc,
    clock: ClockFunc,
) -> Callable[[ExperimentConfig, str], Awaitable[SimulateReport]]:
    """Create simulate function with injected dependencies"""

    async def simulate(config: ExperimentConfig, out_dir: str) -> SimulateReport:
        """Dump the configured batch and report its terminal moments"""
        start = clock()
        with stage("simulate"):
            grid = build_grid(config.T, config.n_steps)
        with stage("emit"):
            paths_file = f"{out_dir.rstrip('/')}/paths.nlkw"
            w1_T, w_T = dump_paths(
                grid, config.n_paths, config.rho, config.master_seed, paths_file
            )
        logger(f"Dumped {config.n_paths} paths to {paths_file}")
        report = SimulateReport(
            config=config,
            moments=terminal_moments(w1_T, w_T),
            paths_file=paths_file,
            versions=get_versions(),
        )
        report.wall_clock_seconds = clock() - start
        with stage("emit"):
            await emit(report, out_dir)
        return report

    return simulate


def create_verify_family(
    emit: EmitFunc,
    get_versions: VersionsFunc,
    logger: LoggerFunc,
    clock: ClockFunc,
) -> Callable[[ExperimentConfig, Optional[str]], Awaitable[FamilyReport]]:
    """Create verify_family function with injected dependencies"""

    async def verify_family(config: ExperimentConfig, out_dir: Optional[str] = None) -> FamilyReport:
        """Martingale, representation, derivative and Holder checks of a family"""
        start = clock()
        with stage("simulate"):
            family = get_family(config.effective_family)
            batches = ladder_batches(
                config.T, config.ladder, config.ladder_paths, config.rho, config.master_seed
            )
        with stage("represent"):
            representation = representation_check(family, config.representation_x, batches)
            identity = None
            if family.has_d_integrand:
                identity = derivative_identity_check(family, config.representation_x, batches)
        with stage("verify"):
            finest = batches[-1]
            martingale = martingale_check(family, config.representation_x, finest)
            derivative = None
            if family.has_d_evaluate or family.has_d_integrand:
                derivative = sample_derivative_check(
                    family,
                    config.derivative_points,
                    config.derivative_bump,
                    T=config.T,
                    seed=config.master_seed,
                )
            holder = None
            if family.has_d_evaluate:
                holder = holder_estimate(family, finest, config.holder_x_grid)

        if not representation.converged:
            logger(f"Representation ladder of '{family.name}' does not converge")
        report = FamilyReport(
            config=config,
            family=family.name,
            martingale=martingale,
            representation=representation,
            derivative_identity=identity,
            derivative=derivative,
            holder=holder,
            versions=get_versions(),
        )
        report.wall_clock_seconds = clock() - start
        if out_dir is not None:
            with stage("emit"):
                await emit(report, out_dir)
        return report

    return verify_family


def _orthogonality_samples(kw_residual: np.ndarray, batch: PathBatch) -> Dict[str, np.ndarray]:
    prefix = left_nodes(batch)
    return {
        name: kw_residual
        * ito_integral(StrategyPath(grid=batch.grid, values=alpha(prefix)), batch.w, batch.grid).terminal
        for name, alpha in ORTHOGONALITY_TESTS.items()
    }


def create_kw(
    map_chunks: MapChunksFunc,
    emit: EmitFunc,
    get_versions: VersionsFunc,
    logger: LoggerFunc,
    clock: ClockFunc,
) -> Callable[[ExperimentConfig, Optional[str]], Awaitable[KWReport]]:
    """Create kw function with injected dependencies"""

    def decompose_chunk(batch: PathBatch, config: ExperimentConfig, payoff: Payoff):
        with stage("decompose"):
            kw = analytic_kw(payoff, batch)
            design = feature_integrals(parse_basis(config.basis), batch)
        with stage("verify"):
            tests = _orthogonality_samples(kw.residual, batch)
        return kw.residual, design, payoff.evaluate(batch), tests

    async def kw_report(config: ExperimentConfig, out_dir: Optional[str] = None) -> KWReport:
        """Analytic floor, regression floor and strong-orthogonality checks"""
        start = clock()
        with stage("simulate"):
            grid = build_grid(config.T, config.n_steps)
            payoff = get_payoff(config.payoff)
            results = await map_chunks(
                grid,
                config.n_paths,
                config.rho,
                config.master_seed,
                lambda batch: decompose_chunk(batch, config, payoff),
            )
        with stage("decompose"):
            kw_residual = np.concatenate([r[0] for r in results])
            fit = fit_regression(
                np.concatenate([r[1] for r in results]),
                np.concatenate([r[2] for r in results]),
                config.holdout_fraction,
                config.ridge,
            )
        orthogonality: Dict[str, MCEstimate] = {
            name: estimate(np.concatenate([r[3][name] for r in results]))
            for name in ORTHOGONALITY_TESTS
        }
        summary = KWSummary(
            lambda_sq=estimate(kw_residual * kw_residual),
            regression_lambda_sq=fit.lambda_sq,
            coefficients=dict(zip(config.basis, (float(b) for b in fit.coefficients))),
            coefficient_stderr=dict(
                zip(config.basis, (float(s) for s in fit.coefficient_stderr))
            ),
        )
        oracle = None
        if config.payoff == "example" and grid.is_uniform:
            oracle = discrete_lambda_sq(config.rho, config.T, config.n_steps)
        logger(f"KW floor {summary.lambda_sq.mean:.6g} ± {summary.lambda_sq.stderr:.2g}")
        report = KWReport(
            config=config,
            kw=summary,
            discrete_lambda_sq=oracle,
            orthogonality=orthogonality,
            versions=get_versions(),
        )
        report.wall_clock_seconds = clock() - start
        if out_dir is not None:
            with stage("emit"):
                await emit(report, out_dir)
        return report

    return kw_report
