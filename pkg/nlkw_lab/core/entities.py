# entities.py: Defines data structures for paths, strategies, reports and settings
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator

from nlkw_lab.core.errors import ParameterError, ShapeError

FamilyName = Literal["linear", "exp", "exp-as-printed"]
PayoffName = Literal["example", "terminal-w"]
StrategyKind = Literal["pointwise", "parametric"]
SolveMode = Literal["root", "stationary"]


def _frozen(array: np.ndarray) -> np.ndarray:
    """Return a read-only float64 view of the array"""
    out = np.asarray(array, dtype=np.float64)
    if out.flags.writeable:
        out = out.view()
        out.flags.writeable = False
    return out


class LogSetting(BaseModel):
    """Model indicating log configuration completion"""

    log_to_console: bool = Field(False, description="Whether to output logs to console")
    enable_file_logging: bool = Field(
        False, description="Whether to enable file logging"
    )


class MCEstimate(BaseModel):
    """Monte Carlo estimate of an expectation"""

    model_config = ConfigDict(frozen=True)

    mean: float = Field(..., description="Sample mean")
    stderr: float = Field(..., description="Standard error of the sample mean")
    n: int = Field(..., description="Number of samples")

    def z_score(self, value: float = 0.0) -> float:
        """Distance between the mean and value in standard errors"""
        if self.stderr == 0.0:
            return 0.0 if self.mean == value else math.inf
        return abs(self.mean - value) / self.stderr

    def within(self, value: float = 0.0, k: float = 3.0) -> bool:
        """Whether value lies within k standard errors of the mean"""
        return abs(self.mean - value) <= k * self.stderr


# --- Path substrate ---


@dataclass(frozen=True)
class TimeGrid:
    """Increasing time nodes t_0 = 0 < t_1 < ... < t_N = T"""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ParameterError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ParameterError("the first grid node must be 0")
        if not np.all(np.diff(nodes) > 0.0):
            raise ParameterError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", _frozen(nodes))

    @classmethod
    def from_nodes(cls, nodes) -> "TimeGrid":
        return cls(nodes=np.asarray(nodes, dtype=np.float64))

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return int(self.nodes.size - 1)

    @property
    def steps(self) -> np.ndarray:
        """Step sizes t_k - t_{k-1}, k = 1..N"""
        return np.diff(self.nodes)

    @property
    def is_uniform(self) -> bool:
        expected = np.linspace(0.0, self.horizon, self.n_steps + 1)
        return bool(np.allclose(self.nodes, expected, rtol=0.0, atol=1e-14))

    def same_as(self, other: "TimeGrid") -> bool:
        return self.nodes.shape == other.nodes.shape and bool(
            np.array_equal(self.nodes, other.nodes)
        )


@dataclass(frozen=True)
class PathBundle:
    """One correlated Brownian triple (w1, w2, w) on a grid"""

    grid: TimeGrid
    w1: np.ndarray
    w2: np.ndarray
    rho: float
    path_id: int
    seed_material: Tuple[int, int]

    @property
    def w(self) -> np.ndarray:
        return self.rho * self.w1 + math.sqrt(1.0 - self.rho * self.rho) * self.w2

    def as_batch(self) -> "PathBatch":
        """Wrap this path as a single-path batch"""
        return PathBatch(
            grid=self.grid,
            rho=self.rho,
            master_seed=self.seed_material[0],
            path_ids=np.array([self.path_id], dtype=np.int64),
            w1=self.w1[None, :],
            w2=self.w2[None, :],
        )


@dataclass(frozen=True)
class PathPrefix:
    """Read-only path information up to and including node k for every path"""

    k: int
    t: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w: np.ndarray

    @property
    def n_paths(self) -> int:
        return int(self.w.shape[0])


@dataclass(frozen=True)
class PathBatch:
    """Batch of paths stored row-wise: arrays have shape (n_paths, N + 1)"""

    grid: TimeGrid
    rho: float
    master_seed: int
    path_ids: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        expected = (self.path_ids.size, self.grid.n_steps + 1)
        if w1.shape != expected or w2.shape != expected:
            raise ShapeError(
                f"path arrays must have shape {expected}, got {w1.shape} and {w2.shape}"
            )
        w = self.rho * w1 + math.sqrt(1.0 - self.rho * self.rho) * w2
        object.__setattr__(self, "w1", _frozen(w1))
        object.__setattr__(self, "w2", _frozen(w2))
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(
            self, "path_ids", np.asarray(self.path_ids, dtype=np.int64)
        )

    def __len__(self) -> int:
        return int(self.path_ids.size)

    @property
    def n_paths(self) -> int:
        return len(self)

    def path(self, i: int) -> PathBundle:
        return PathBundle(
            grid=self.grid,
            w1=self.w1[i],
            w2=self.w2[i],
            rho=self.rho,
            path_id=int(self.path_ids[i]),
            seed_material=(self.master_seed, int(self.path_ids[i])),
        )

    def prefix(self, k: int) -> PathPrefix:
        """Information available at node k: nodes 0..k of every path"""
        if not 0 <= k <= self.grid.n_steps:
            raise ParameterError(f"prefix node {k} outside 0..{self.grid.n_steps}")
        return PathPrefix(
            k=k,
            t=self.grid.nodes[: k + 1],
            w1=self.w1[:, : k + 1],
            w2=self.w2[:, : k + 1],
            w=self.w[:, : k + 1],
        )

    def subset(self, start: int, stop: int) -> "PathBatch":
        return PathBatch(
            grid=self.grid,
            rho=self.rho,
            master_seed=self.master_seed,
            path_ids=self.path_ids[start:stop],
            w1=self.w1[start:stop],
            w2=self.w2[start:stop],
        )

    @classmethod
    def concatenate(cls, batches: List["PathBatch"]) -> "PathBatch":
        if not batches:
            raise ParameterError("cannot concatenate an empty list of batches")
        first = batches[0]
        for other in batches[1:]:
            if not other.grid.same_as(first.grid) or other.rho != first.rho:
                raise ShapeError("batches differ in grid or rho")
        return cls(
            grid=first.grid,
            rho=first.rho,
            master_seed=first.master_seed,
            path_ids=np.concatenate([b.path_ids for b in batches]),
            w1=np.concatenate([b.w1 for b in batches]),
            w2=np.concatenate([b.w2 for b in batches]),
        )


# --- Strategies and integrals ---


@dataclass(frozen=True)
class StrategyPath:
    """Predictable step process; values[:, k-1] applies on (t_{k-1}, t_k]"""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] != self.grid.n_steps:
            raise ShapeError(
                f"strategy needs {self.grid.n_steps} values per path, got shape {values.shape}"
            )
        object.__setattr__(self, "values", _frozen(values))

    @property
    def n_paths(self) -> int:
        return int(self.values.shape[0])

    def shifted(self, eps: float) -> "StrategyPath":
        return StrategyPath(grid=self.grid, values=self.values + eps)


@dataclass(frozen=True)
class IntegralResult:
    """Running values of a discrete integral, running[:, 0] = 0"""

    running: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.running[:, -1]


@dataclass(frozen=True)
class KWDecomposition:
    """H = int h dW + lambda^H with an estimate of E[(lambda^H_T)^2]"""

    h: StrategyPath
    lambda_sq: MCEstimate
    residual: np.ndarray
    coefficients: Optional[List[float]] = None
    coefficient_stderr: Optional[List[float]] = None
    feature_names: Optional[List[str]] = None
    in_sample_lambda_sq: Optional[MCEstimate] = None


# --- Reports ---


class PointwiseSolveReport(BaseModel):
    """Result of one pointwise solve of the product condition"""

    theta: float = Field(..., description="Selected strategy value")
    mode: SolveMode = Field(..., description="root or stationary")
    gap: float = Field(..., description="|h_s - mu(s, theta)|")
    root_count: int = Field(..., description="Number of roots resolved in the bracket")
    bracket: Tuple[float, float] = Field(..., description="Bracket finally searched")


class ModeCounts(BaseModel):
    """Aggregate node counts of a pointwise strategy"""

    root: int = 0
    stationary: int = 0
    multi_root: int = Field(0, description="Nodes where a tie-break between roots applied")
    unresolved: int = Field(
        0, description="Stationary nodes with |d_mu| above tol_stat (bracket cap reached)"
    )
    max_product_residual: float = Field(
        0.0, description="max |(h - mu) d_mu| over all nodes"
    )

    @property
    def total(self) -> int:
        return self.root + self.stationary

    @property
    def root_fraction(self) -> float:
        return self.root / self.total if self.total else 0.0


class ObjectiveReport(BaseModel):
    """Monte Carlo view of the L2 approximation problem at one strategy"""

    objective: MCEstimate = Field(..., description="E[(H - int M(ds, theta))^2]")
    orthogonality: MCEstimate = Field(
        ..., description="E[(H - int M(ds, theta)) int dM/dx(ds, theta)]"
    )
    lambda_floor: Optional[MCEstimate] = Field(
        None, description="E[(lambda^H_T)^2] from the KW decomposition"
    )
    excess: Optional[MCEstimate] = Field(
        None, description="Paired estimate of objective minus the floor"
    )


class DirectionalRung(BaseModel):
    eps: float
    finite_difference: MCEstimate
    analytic: MCEstimate
    difference: MCEstimate = Field(..., description="Paired FD minus analytic")


class DirectionalReport(BaseModel):
    """Finite-difference slope of F(eps) against -2 E[L^H int dM/dx]"""

    rungs: List[DirectionalRung]
    agrees: bool = Field(
        ..., description="Agreement within 3 s.e. at the smallest eps, truncation included"
    )
    truncation: float = Field(
        0.0, description="Estimated central-difference truncation at the smallest eps"
    )


class LadderRung(BaseModel):
    n_steps: int
    rmse: float
    ratio: Optional[float] = Field(None, description="RMSE of previous rung / this RMSE")


class RepresentationReport(BaseModel):
    """RMSE of Euler sums against the closed form under grid refinement"""

    family: str
    x: float
    target: Literal["integrand", "derivative"] = "integrand"
    rungs: List[LadderRung]
    converged: bool = Field(..., description="Whether the ladder shows RMSE -> 0")


class DerivativePoint(BaseModel):
    t: float
    x: float
    w: float
    d_eval_error: Optional[float] = None
    d_integrand_error: Optional[float] = None


class DerivativeReport(BaseModel):
    """Analytic derivatives against central finite differences"""

    family: str
    bump: float
    points: List[DerivativePoint]
    max_d_eval_error: Optional[float] = None
    max_d_integrand_error: Optional[float] = None


class HolderEstimate(BaseModel):
    """Empirical Holder constant and exponent of x -> dM/dx(T, x)"""

    k_hat: Optional[float] = None
    delta_hat: Optional[float] = None
    fraction_delta_above: Optional[float] = Field(
        None, description="Fraction of paths with delta_hat >= 0.9"
    )
    usable_paths: int = 0
    note: Optional[str] = None


class OptimizationReport(BaseModel):
    """Outcome of the parametric Nelder-Mead search"""

    beta: List[float]
    converged: bool
    evaluations: int
    in_sample_objective: float
    out_of_sample: ObjectiveReport


class NodeRecord(BaseModel):
    t: float
    h: float
    theta: float
    mode: SolveMode
    gap: float


class KWSummary(BaseModel):
    lambda_sq: MCEstimate
    regression_lambda_sq: Optional[MCEstimate] = None
    coefficients: Optional[Dict[str, float]] = None
    coefficient_stderr: Optional[Dict[str, float]] = None


class SweepPoint(BaseModel):
    rho: float
    lambda_sq: MCEstimate
    objective: MCEstimate
    excess: MCEstimate


# --- Configuration ---


class ExperimentConfig(BaseModel):
    """Validated experiment configuration"""

    model_config = ConfigDict(extra="forbid")

    T: float = Field(1.0, description="Horizon")
    n_steps: int = Field(512, description="Number of grid steps")
    n_paths: int = Field(100000, description="Number of Monte Carlo paths")
    rho: float = Field(0.5, description="Correlation between W and W1")
    master_seed: int = Field(20180228, description="Master seed for path streams")
    family: FamilyName = Field("exp", description="Martingale family")
    payoff: PayoffName = Field("example", description="Payoff to approximate")
    basis: List[str] = Field(
        default_factory=lambda: ["w1"], description="Regression features for KW"
    )
    strategy: StrategyKind = Field("pointwise", description="Strategy construction")
    policy_features: List[str] = Field(
        default_factory=lambda: ["const"],
        description="Features of the parametric policy",
    )
    budget: int = Field(200, description="Objective evaluations for Nelder-Mead")
    parametric_paths: int = Field(
        10000, description="Paths in the common-random-number batch"
    )
    tol_root_scale: float = Field(1e-10, description="tol_root = scale * (1 + |h|)")
    tol_stat: float = Field(1e-8, description="Stationarity tolerance on d_mu")
    x_max: float = Field(50.0, description="Initial half-width of the solve bracket")
    x_cap: float = Field(800.0, description="Largest half-width after expansion")
    scan_points: int = Field(64, description="Scan points per side without analytic zeros")
    eps_ladder: List[float] = Field(
        default_factory=lambda: [0.1, 0.05, 0.025],
        description="Perturbations for the directional derivative",
    )
    ladder: List[int] = Field(
        default_factory=lambda: [64, 256, 1024],
        description="Grid sizes of the representation ladder",
    )
    ladder_paths: int = Field(2000, description="Paths per ladder rung")
    representation_x: float = Field(1.0, description="x of the representation ladder")
    derivative_points: int = Field(100, description="Random points in derivative_check")
    derivative_bump: float = Field(1e-5, description="Central difference step")
    holder_x_grid: List[float] = Field(
        default_factory=lambda: [0.5, 0.501, 0.502, 0.504, 0.508],
        description=(
            "x values for the Holder estimate; the default clusters near 0.5, "
            "a grid across [-1, 1] gives delta_hat near 0.9"
        ),
    )
    holdout_fraction: float = Field(0.5, description="Held-out share for regression KW")
    ridge: float = Field(1e-10, description="Trace-scaled ridge parameter")
    rho_sweep: List[float] = Field(
        default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 10)],
        description="Correlations for sweep-rho",
    )
    use_as_printed_family: bool = Field(
        False, description="Replace the exp family by its as-printed variant"
    )
    emit_plots: bool = Field(True, description="Write SVG plots")
    output_dir: Optional[str] = Field(None, description="Output directory")

    @field_validator("T")
    @classmethod
    def _positive_horizon(cls, v: float) -> float:
        if not math.isfinite(v) or v <= 0.0:
            raise ValueError("T must be positive")
        return v

    @field_validator("n_steps", "ladder_paths", "budget", "derivative_points")
    @classmethod
    def _positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("n_paths", "parametric_paths")
    @classmethod
    def _enough_paths(cls, v: int, info: ValidationInfo) -> int:
        if v < 100:
            raise ValueError(f"{info.field_name} below minimum 100")
        return v

    @field_validator("rho")
    @classmethod
    def _unit_rho(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        return v

    @field_validator("rho_sweep")
    @classmethod
    def _unit_rho_list(cls, v: List[float]) -> List[float]:
        if not v or any(not 0.0 <= r <= 1.0 for r in v):
            raise ValueError("every rho must lie in [0, 1]")
        return v

    @field_validator("tol_root_scale", "tol_stat", "derivative_bump", "ridge")
    @classmethod
    def _positive_float(cls, v: float) -> float:
        if not v > 0.0:
            raise ValueError("must be positive")
        return v

    @field_validator("x_max", "x_cap")
    @classmethod
    def _positive_bracket(cls, v: float) -> float:
        if not (math.isfinite(v) and v > 0.0):
            raise ValueError("must be positive and finite")
        return v

    @field_validator("scan_points")
    @classmethod
    def _scan(cls, v: int) -> int:
        if v < 4:
            raise ValueError("must be at least 4")
        return v

    @field_validator("eps_ladder")
    @classmethod
    def _eps(cls, v: List[float]) -> List[float]:
        if not v or any(e <= 0.0 for e in v):
            raise ValueError("eps values must be positive")
        return v

    @field_validator("ladder")
    @classmethod
    def _ladder(cls, v: List[int]) -> List[int]:
        if len(v) < 2 or any(n < 1 for n in v) or sorted(v) != v:
            raise ValueError("ladder needs at least two increasing grid sizes")
        return v

    @field_validator("holder_x_grid")
    @classmethod
    def _holder_grid(cls, v: List[float]) -> List[float]:
        if len(set(v)) < 3:
            raise ValueError("needs at least 3 distinct points")
        return v

    @field_validator("holdout_fraction")
    @classmethod
    def _holdout(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("must lie strictly between 0 and 1")
        return v

    @property
    def effective_family(self) -> str:
        if self.use_as_printed_family and self.family == "exp":
            return "exp-as-printed"
        return self.family


class RunSummary(BaseModel):
    """Everything a run reports; reproducible from the config and code version"""

    config: ExperimentConfig
    family: str
    lambda_sq: MCEstimate
    kw: Optional[KWSummary] = None
    objective: MCEstimate
    orthogonality: MCEstimate
    excess: MCEstimate
    zero_objective: Optional[MCEstimate] = None
    mode_counts: Optional[ModeCounts] = None
    parametric: Optional[OptimizationReport] = None
    directional: Optional[DirectionalReport] = None
    representation: Optional[RepresentationReport] = None
    nodes: List[NodeRecord] = Field(default_factory=list)
    versions: Dict[str, str] = Field(default_factory=dict)
    wall_clock_seconds: float = 0.0


class SweepReport(BaseModel):
    """Floor and objective over a list of correlations"""

    config: ExperimentConfig
    family: str
    points: List[SweepPoint]
    versions: Dict[str, str] = Field(default_factory=dict)
    wall_clock_seconds: float = 0.0


class SimulateReport(BaseModel):
    """Moments of a simulated batch and where its paths were dumped"""

    config: ExperimentConfig
    moments: Dict[str, MCEstimate]
    paths_file: Optional[str] = None
    versions: Dict[str, str] = Field(default_factory=dict)
    wall_clock_seconds: float = 0.0


class FamilyReport(BaseModel):
    """Checks of one martingale family"""

    config: ExperimentConfig
    family: str
    martingale: MCEstimate = Field(..., description="E[M(T, x)] at representation_x")
    representation: RepresentationReport
    derivative_identity: Optional[RepresentationReport] = None
    derivative: Optional[DerivativeReport] = None
    holder: Optional[HolderEstimate] = None
    versions: Dict[str, str] = Field(default_factory=dict)
    wall_clock_seconds: float = 0.0


class KWReport(BaseModel):
    """Analytic and regression KW decompositions of the payoff"""

    config: ExperimentConfig
    kw: KWSummary
    discrete_lambda_sq: Optional[float] = Field(
        None, description="Closed-form floor on the grid (example payoff only)"
    )
    orthogonality: Dict[str, MCEstimate] = Field(
        default_factory=dict,
        description="E[lambda^H_T int alpha dW] for bounded test strategies",
    )
    versions: Dict[str, str] = Field(default_factory=dict)
    wall_clock_seconds: float = 0.0


class Settings(BaseModel):
    """Class for managing application settings"""

    threads: int = Field(1, description="Worker threads for chunked Monte Carlo")
    chunk_paths: int = Field(4096, description="Paths simulated per chunk")
    output_dir: str = Field("nlkw_output", description="Default output directory")
    enable_file_logging: bool = Field(
        False, description="Whether to enable file logging"
    )
    log_dir: Optional[str] = Field(None, description="Directory for the log file")

