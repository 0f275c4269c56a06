"""L2 approximation of H by nonlinear integrals int M(ds, theta_s).

With H = int h dW + lambda^H and M(x) = int mu(s, x) dW, the objective splits
into E[(lambda^H_T)^2] + E int (h_s - mu(s, theta_s))^2 ds, so the optimal
strategy is found node by node: theta either solves mu(s, theta) = h_s or sits
at a stationary point of x -> mu(s, x) (the product condition
(h_s - mu(s, theta)) d_mu(s, theta) = 0).
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import elementwise, minimize

from nlkw_lab.core.entities import (
    DirectionalReport,
    DirectionalRung,
    KWDecomposition,
    MCEstimate,
    ModeCounts,
    NodeRecord,
    ObjectiveReport,
    OptimizationReport,
    PathBatch,
    PointwiseSolveReport,
    StrategyPath,
)
from nlkw_lab.core.errors import ParameterError
from nlkw_lab.core.estimates import estimate, paired_difference
from nlkw_lab.core.families import MartingaleFamily, PathLike, driver_value
from nlkw_lab.core.integrators import left_nodes, nonlinear_integral
from nlkw_lab.core.kw_projection import Feature, Payoff, parse_basis

MIN_PATHS = 100
# Relative rounding level below which a paired difference is noise.
ROUNDING_FLOOR = 1e-9
# Elements times partition points handled per vectorized solve.
_SOLVE_BUDGET = 1 << 21


@dataclass(frozen=True)
class SolverSettings:
    x_max: float = 50.0
    x_cap: float = 800.0
    tol_root_scale: float = 1e-10
    tol_stat: float = 1e-8
    scan_points: int = 64


@dataclass(frozen=True)
class NodeSolution:
    """Vectorized pointwise solve; all arrays share the targets' shape"""

    theta: np.ndarray
    is_root: np.ndarray
    gap: np.ndarray
    root_count: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class PointwiseStrategy:
    """Strategy built node by node plus per-node solver diagnostics"""

    strategy: StrategyPath
    targets: np.ndarray
    is_root: np.ndarray
    gap: np.ndarray
    root_count: np.ndarray
    counts: ModeCounts

    def node_records(self, row: int = 0) -> List[NodeRecord]:
        nodes = self.strategy.grid.nodes[:-1]
        return [
            NodeRecord(
                t=float(nodes[k]),
                h=float(self.targets[row, k]),
                theta=float(self.strategy.values[row, k]),
                mode="root" if self.is_root[row, k] else "stationary",
                gap=float(self.gap[row, k]),
            )
            for k in range(nodes.size)
        ]


@dataclass(frozen=True)
class ObjectiveSamples:
    """Per-path pieces of the objective; residual is L^H = H - int M(ds, theta)"""

    payoff: np.ndarray
    integral: np.ndarray
    derivative_integral: np.ndarray
    residual: np.ndarray

    @classmethod
    def concatenate(cls, parts: Sequence["ObjectiveSamples"]) -> "ObjectiveSamples":
        return cls(
            payoff=np.concatenate([p.payoff for p in parts]),
            integral=np.concatenate([p.integral for p in parts]),
            derivative_integral=np.concatenate([p.derivative_integral for p in parts]),
            residual=np.concatenate([p.residual for p in parts]),
        )


# --- Pointwise solver ---


def _scan_fractions(points: int) -> np.ndarray:
    """Fractions in [0, 1], denser near 0"""
    u = np.linspace(0.0, 1.0, points + 1)
    return np.sinh(4.0 * u) / np.sinh(4.0)


def _partition(
    family: MartingaleFamily,
    t: np.ndarray,
    w: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    anchor: np.ndarray,
    scan_points: int,
) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Points splitting [anchor, upper] and [lower, anchor] into pieces.

    Returns the right points ascending from the anchor, the left points
    descending from it, and whether the pieces are known to be monotone.
    """
    critical = family.critical_points(t, w)
    a, lo, hi = anchor[:, None], lower[:, None], upper[:, None]
    if critical is not None:
        right = np.sort(np.concatenate([a, np.clip(critical, a, hi), hi], axis=1), axis=1)
        left = np.sort(np.concatenate([lo, np.clip(critical, lo, a), a], axis=1), axis=1)
        return right, left[:, ::-1], True
    u = _scan_fractions(scan_points)[None, :]
    return a + (hi - a) * u, a - (a - lo) * u, False


def _count_roots(points: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Strict sign changes plus exact zeros over the distinct partition points"""
    distinct = np.ones(points.shape, dtype=bool)
    distinct[:, 1:] = points[:, 1:] != points[:, :-1]
    strict = np.count_nonzero(np.sign(g[:, :-1]) * np.sign(g[:, 1:]) < 0.0, axis=1)
    return strict + np.count_nonzero((g == 0.0) & distinct, axis=1)


def _first_sign_change(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Index of the first piece whose ends bracket a root, walking outward"""
    change = np.sign(g[:, :-1]) * np.sign(g[:, 1:]) <= 0.0
    return change.any(axis=1), np.argmax(change, axis=1)


def _root_in(
    family: MartingaleFamily,
    t: np.ndarray,
    w: np.ndarray,
    h: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    ga: np.ndarray,
    gb: np.ndarray,
) -> np.ndarray:
    """Root of mu(t, w, .) = h between a and b, where ga * gb <= 0"""
    root = np.where(ga == 0.0, a, b)
    open_ = (ga != 0.0) & (gb != 0.0)
    if np.any(open_):
        left = np.minimum(a[open_], b[open_])
        right = np.maximum(a[open_], b[open_])

        def gap(x, t_, w_, h_):
            return family.integrand(t_, w_, x) - h_

        result = elementwise.find_root(
            gap, (left, right), args=(t[open_], w[open_], h[open_])
        )
        root[open_] = result.x
    return root


def _refine_minimum(
    family: MartingaleFamily,
    t: np.ndarray,
    w: np.ndarray,
    h: np.ndarray,
    points: np.ndarray,
    best: np.ndarray,
) -> np.ndarray:
    """Bracketed minimum search of (mu - h)^2 around the best scan point"""
    rows = np.arange(points.shape[0])
    x = points[rows, best]
    interior = (best > 0) & (best < points.shape[1] - 1)
    if not np.any(interior):
        return x
    r = rows[interior]
    x1 = points[r, best[interior] - 1]
    x2 = points[r, best[interior]]
    x3 = points[r, best[interior] + 1]
    strict = (x1 < x2) & (x2 < x3)
    if not np.any(strict):
        return x

    def squared_gap(x_, t_, w_, h_):
        d = family.integrand(t_, w_, x_) - h_
        return d * d

    idx = r[strict]
    result = elementwise.find_minimum(
        squared_gap,
        (x1[strict], x2[strict], x3[strict]),
        args=(t[idx], w[idx], h[idx]),
    )
    refined = np.where(result.success, result.x, x2[strict])
    if family.has_d_integrand:
        # Polish onto the zero of d_mu when it is bracketed by the scan neighbours.
        d1 = family.d_integrand(t[idx], w[idx], x1[strict])
        d3 = family.d_integrand(t[idx], w[idx], x3[strict])
        bracketed = d1 * d3 < 0.0
        if np.any(bracketed):
            polish = elementwise.find_root(
                lambda x_, t_, w_: family.d_integrand(t_, w_, x_),
                (x1[strict][bracketed], x3[strict][bracketed]),
                args=(t[idx][bracketed], w[idx][bracketed]),
            )
            refined[bracketed] = np.where(
                polish.success, polish.x, refined[bracketed]
            )
    better = squared_gap(refined, t[idx], w[idx], h[idx]) <= squared_gap(
        x2[strict], t[idx], w[idx], h[idx]
    ) * (1.0 + 1e-12)
    x[idx] = np.where(better, refined, x2[strict])
    return x


def _solve_once(
    family: MartingaleFamily,
    t: np.ndarray,
    w: np.ndarray,
    h: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    settings: SolverSettings,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    anchor = np.clip(0.0, lower, upper)
    right, left, monotone = _partition(
        family, t, w, lower, upper, anchor, settings.scan_points
    )
    tc, wc, hc = t[:, None], w[:, None], h[:, None]
    g_right = family.integrand(tc, wc, right) - hc
    g_left = family.integrand(tc, wc, left) - hc

    found_r, piece_r = _first_sign_change(g_right)
    found_l, piece_l = _first_sign_change(g_left)
    rows = np.arange(h.size)
    root_count = _count_roots(
        np.concatenate([left[:, ::-1], right[:, 1:]], axis=1),
        np.concatenate([g_left[:, ::-1], g_right[:, 1:]], axis=1),
    )

    root_r = np.full_like(h, np.inf)
    root_l = np.full_like(h, np.inf)
    if np.any(found_r):
        i = rows[found_r]
        p = piece_r[found_r]
        root_r[found_r] = _root_in(
            family, t[i], w[i], h[i],
            right[i, p], right[i, p + 1], g_right[i, p], g_right[i, p + 1],
        )
    if np.any(found_l):
        i = rows[found_l]
        p = piece_l[found_l]
        root_l[found_l] = _root_in(
            family, t[i], w[i], h[i],
            left[i, p], left[i, p + 1], g_left[i, p], g_left[i, p + 1],
        )
    is_root = found_r | found_l
    # Smallest |x| wins; ties go to the non-negative root.
    take_left = np.abs(root_l) < np.abs(root_r)
    theta = np.where(take_left, root_l, root_r)

    stationary = ~is_root
    if np.any(stationary):
        s = rows[stationary]
        points = np.concatenate([left[s, ::-1], right[s, 1:]], axis=1)
        g = np.concatenate([g_left[s, ::-1], g_right[s, 1:]], axis=1)
        best = np.argmin(np.abs(g), axis=1)
        if monotone:
            theta[s] = points[np.arange(s.size), best]
        else:
            theta[s] = _refine_minimum(family, t[s], w[s], h[s], points, best)

    gap = np.abs(family.integrand(t, w, theta) - h)
    tol_root = settings.tol_root_scale * (1.0 + np.abs(h))
    is_root = is_root & (gap <= tol_root)
    return theta, is_root, gap, root_count


def _widening_sides(
    family: MartingaleFamily,
    t: np.ndarray,
    w: np.ndarray,
    h: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    settings: SolverSettings,
) -> Tuple[np.ndarray, np.ndarray]:
    """Bracket sides past which |mu - h| still falls and mu can still reach h"""
    g_lo = family.integrand(t, w, lower) - h
    g_hi = family.integrand(t, w, upper) - h
    out_lo = family.integrand(t, w, lower - 1e-3 * np.maximum(np.abs(lower), 1.0)) - h
    out_hi = family.integrand(t, w, upper + 1e-3 * np.maximum(np.abs(upper), 1.0)) - h
    grow_lo = np.abs(out_lo) < np.abs(g_lo)
    grow_hi = np.abs(out_hi) < np.abs(g_hi)
    limits = family.integrand_limits(t, w)
    if limits is not None:
        # A limit on the same side of h as the edge value rules out a crossing.
        grow_lo &= np.sign(limits[0] - h) != np.sign(g_lo)
        grow_hi &= np.sign(limits[1] - h) != np.sign(g_hi)
    return grow_lo & (lower > -settings.x_cap), grow_hi & (upper < settings.x_cap)


def solve_pointwise_nodes(
    family: MartingaleFamily,
    t,
    w,
    targets,
    settings: SolverSettings = SolverSettings(),
    bracket: Optional[Tuple[float, float]] = None,
) -> NodeSolution:
    """Minimize (h - mu(t, x))^2 over x for every element of the inputs.

    A node without a root grows each side of its bracket by its own width
    while the gap keeps shrinking outward and the family's limit on that side
    lies beyond h, up to x_cap. Closed-form inverses skip the search.
    """
    if not family.has_integrand:
        raise ParameterError(f"family '{family.name}' has no analytic integrand")
    h = np.asarray(targets, dtype=np.float64)
    shape = h.shape
    t_flat, w_flat, h_flat = (
        np.ravel(np.broadcast_to(np.asarray(v, dtype=np.float64), shape)).copy()
        for v in (t, w, h)
    )
    lo0, hi0 = bracket if bracket is not None else (-settings.x_max, settings.x_max)
    if not (math.isfinite(lo0) and math.isfinite(hi0)):
        raise ParameterError(f"bracket must be finite, got {(lo0, hi0)}")
    if not lo0 < hi0:
        raise ParameterError(f"empty bracket {(lo0, hi0)}")

    m = h_flat.size
    lower = np.full(m, float(lo0))
    upper = np.full(m, float(hi0))
    theta = np.zeros(m)
    is_root = np.zeros(m, dtype=bool)
    gap = np.zeros(m)
    root_count = np.zeros(m, dtype=np.int64)

    pending = np.arange(m)
    closed = family.inverse_integrand(t_flat, w_flat, h_flat)
    if closed is not None:
        direct = np.isfinite(closed) & (closed >= lower) & (closed <= upper)
        theta[direct] = closed[direct]
        is_root[direct] = True
        gap[direct] = np.abs(
            family.integrand(t_flat[direct], w_flat[direct], closed[direct]) - h_flat[direct]
        )
        root_count[direct] = 1
        pending = pending[~direct]

    while pending.size:
        th, rt, gp, rc = _solve_once(
            family, t_flat[pending], w_flat[pending], h_flat[pending],
            lower[pending], upper[pending], settings,
        )
        theta[pending], is_root[pending], gap[pending], root_count[pending] = th, rt, gp, rc
        grow_lo, grow_hi = _widening_sides(
            family, t_flat[pending], w_flat[pending], h_flat[pending],
            lower[pending], upper[pending], settings,
        )
        grow_lo &= ~rt
        grow_hi &= ~rt
        lo, hi = lower[pending], upper[pending]
        lower[pending] = np.where(
            grow_lo, np.maximum(lo - np.maximum(np.abs(lo), 1.0), -settings.x_cap), lo
        )
        upper[pending] = np.where(
            grow_hi, np.minimum(hi + np.maximum(np.abs(hi), 1.0), settings.x_cap), hi
        )
        pending = pending[grow_lo | grow_hi]

    return NodeSolution(
        theta=theta.reshape(shape),
        is_root=is_root.reshape(shape),
        gap=gap.reshape(shape),
        root_count=root_count.reshape(shape),
        lower=lower.reshape(shape),
        upper=upper.reshape(shape),
    )


def pointwise_solve(
    family: MartingaleFamily,
    target: float,
    t: float,
    path: PathLike,
    bracket: Tuple[float, float] = (-50.0, 50.0),
    tol_root: Optional[float] = None,
    tol_stat: float = 1e-8,
    x_cap: float = 800.0,
) -> PointwiseSolveReport:
    """Solve one node given the information available at t.

    path is the driver value W_t, a path with t on its grid, or a one-path
    prefix ending at t.
    """
    w = driver_value(t, path)
    scale = 1e-10 if tol_root is None else tol_root / (1.0 + abs(target))
    settings = SolverSettings(
        x_max=max(abs(bracket[0]), abs(bracket[1])),
        x_cap=max(x_cap, abs(bracket[0]), abs(bracket[1])),
        tol_root_scale=scale,
        tol_stat=tol_stat,
    )
    solution = solve_pointwise_nodes(
        family, t, w, np.asarray([target]), settings, bracket=bracket
    )
    return PointwiseSolveReport(
        theta=float(solution.theta[0]),
        mode="root" if solution.is_root[0] else "stationary",
        gap=float(solution.gap[0]),
        root_count=int(solution.root_count[0]),
        bracket=(float(solution.lower[0]), float(solution.upper[0])),
    )


def build_pointwise_strategy(
    family: MartingaleFamily,
    kw: KWDecomposition,
    batch: PathBatch,
    settings: SolverSettings = SolverSettings(),
) -> PointwiseStrategy:
    """Apply the pointwise solve at every (path, node) with target h"""
    targets = np.broadcast_to(kw.h.values, (batch.n_paths, batch.grid.n_steps))
    prefix = left_nodes(batch)
    t = np.broadcast_to(prefix.t[None, :], targets.shape)
    w = prefix.w

    scanned = family.critical_points(0.0, 0.0) is None
    points = 2 * (settings.scan_points + 1) if scanned else 6
    block = max(1, _SOLVE_BUDGET // max(1, batch.n_paths * points))
    theta = np.empty(targets.shape)
    is_root = np.empty(targets.shape, dtype=bool)
    gap = np.empty(targets.shape)
    root_count = np.empty(targets.shape, dtype=np.int64)
    for start in range(0, targets.shape[1], block):
        cols = slice(start, start + block)
        solution = solve_pointwise_nodes(family, t[:, cols], w[:, cols], targets[:, cols], settings)
        theta[:, cols] = solution.theta
        is_root[:, cols] = solution.is_root
        gap[:, cols] = solution.gap
        root_count[:, cols] = solution.root_count

    residual = np.zeros_like(theta)
    unresolved = 0
    if family.has_d_integrand:
        slope = family.d_integrand(t, w, theta)
        residual = (targets - family.integrand(t, w, theta)) * slope
        unresolved = int(np.count_nonzero(~is_root & (np.abs(slope) > settings.tol_stat)))
    counts = ModeCounts(
        root=int(is_root.sum()),
        stationary=int((~is_root).sum()),
        multi_root=int((root_count > 1).sum()),
        unresolved=unresolved,
        max_product_residual=float(np.max(np.abs(residual))) if residual.size else 0.0,
    )
    return PointwiseStrategy(
        strategy=StrategyPath(grid=batch.grid, values=theta),
        targets=np.array(targets),
        is_root=is_root,
        gap=gap,
        root_count=root_count,
        counts=counts,
    )


# --- Objective ---

StrategySource = Union[StrategyPath, Callable[[PathBatch], StrategyPath]]


def _resolve(source: StrategySource, batch: PathBatch) -> StrategyPath:
    return source if isinstance(source, StrategyPath) else source(batch)


def objective_samples(
    family: MartingaleFamily,
    source: StrategySource,
    payoff: Payoff,
    batch: PathBatch,
) -> ObjectiveSamples:
    theta = _resolve(source, batch)
    h_T = payoff.evaluate(batch)
    integral = nonlinear_integral(family, theta, batch).terminal
    derivative = nonlinear_integral(family.derivative(), theta, batch).terminal
    return ObjectiveSamples(
        payoff=h_T,
        integral=integral,
        derivative_integral=derivative,
        residual=h_T - integral,
    )


def report_from_samples(
    samples: ObjectiveSamples, floor_residual: Optional[np.ndarray] = None
) -> ObjectiveReport:
    squared = samples.residual * samples.residual
    report = ObjectiveReport(
        objective=estimate(squared),
        orthogonality=estimate(samples.residual * samples.derivative_integral),
    )
    if floor_residual is not None:
        floor = floor_residual * floor_residual
        report.lambda_floor = estimate(floor)
        report.excess = paired_difference(squared, floor)
    return report


def objective_mc(
    family: MartingaleFamily,
    source: StrategySource,
    payoff: Payoff,
    batch: PathBatch,
    kw: Optional[KWDecomposition] = None,
) -> ObjectiveReport:
    """Estimates of E[(H - int M(ds, theta))^2] and of the orthogonality product"""
    if batch.n_paths < MIN_PATHS:
        raise ParameterError(
            f"objective needs at least {MIN_PATHS} paths, got {batch.n_paths}"
        )
    samples = objective_samples(family, source, payoff, batch)
    return report_from_samples(samples, None if kw is None else kw.residual)


def zero_strategy(batch: PathBatch) -> StrategyPath:
    return StrategyPath(grid=batch.grid, values=np.zeros((1, batch.grid.n_steps)))


def central_difference(
    family: MartingaleFamily,
    theta: StrategyPath,
    payoff_values: np.ndarray,
    batch: PathBatch,
    eps: float,
) -> np.ndarray:
    """Per-path ((L^H(theta + eps))^2 - (L^H(theta - eps))^2) / (2 eps)"""
    up = payoff_values - nonlinear_integral(family, theta.shifted(eps), batch).terminal
    down = payoff_values - nonlinear_integral(family, theta.shifted(-eps), batch).terminal
    return (up * up - down * down) / (2.0 * eps)


def directional_rung(eps: float, finite_difference: np.ndarray, analytic: np.ndarray) -> DirectionalRung:
    """Both estimates come from the same paths, so their difference is paired"""
    fd = estimate(finite_difference)
    an = estimate(analytic)
    paired = paired_difference(finite_difference, analytic)
    floor = ROUNDING_FLOOR * (1.0 + abs(fd.mean) + abs(an.mean))
    return DirectionalRung(
        eps=eps,
        finite_difference=fd,
        analytic=an,
        difference=MCEstimate(
            mean=paired.mean, stderr=max(paired.stderr, floor), n=paired.n
        ),
    )


def directional_report(rungs: List[DirectionalRung]) -> DirectionalReport:
    """Agreement at the smallest eps, allowing for the O(eps^2) truncation.

    The truncation of the central difference at the smallest eps is taken
    from its change against the next rung.
    """
    ordered = sorted(rungs, key=lambda r: r.eps)
    smallest = ordered[0]
    truncation = 0.0
    if len(ordered) > 1 and ordered[1].eps > smallest.eps:
        change = ordered[1].finite_difference.mean - smallest.finite_difference.mean
        truncation = abs(change) * smallest.eps**2 / (ordered[1].eps**2 - smallest.eps**2)
    band = 3.0 * math.hypot(smallest.difference.stderr, truncation)
    return DirectionalReport(
        rungs=rungs,
        agrees=abs(smallest.difference.mean) <= band,
        truncation=truncation,
    )


def directional_derivative_check(
    family: MartingaleFamily,
    theta: StrategyPath,
    payoff: Payoff,
    batch: PathBatch,
    eps_ladder: Sequence[float] = (0.1, 0.05, 0.025),
) -> DirectionalReport:
    """d/de F(e), F(e) = E[(H - int M(ds, theta + e))^2], against -2 E[L^H int dM/dx].

    All rungs reuse the same batch (common random numbers).
    """
    if not eps_ladder or any(e <= 0.0 for e in eps_ladder):
        raise ParameterError("eps ladder needs positive values")
    base = objective_samples(family, theta, payoff, batch)
    analytic = -2.0 * base.residual * base.derivative_integral
    rungs = [
        directional_rung(
            eps, central_difference(family, theta, base.payoff, batch, eps), analytic
        )
        for eps in eps_ladder
    ]
    return directional_report(rungs)


# --- Parametric fallback ---


@dataclass(frozen=True)
class ParametricPolicy:
    """theta_k = sum_i beta_i phi_i(t_{k-1}, prefix)"""

    feature_names: Tuple[str, ...]
    features: Tuple[Feature, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(parse_basis(list(self.feature_names))))

    @property
    def dimension(self) -> int:
        return len(self.features)

    def feature_values(self, batch: PathBatch) -> np.ndarray:
        prefix = left_nodes(batch)
        if not self.features:
            return np.zeros((0, batch.n_paths, batch.grid.n_steps))
        return np.stack([feature(prefix) for feature in self.features])

    def strategy(self, batch: PathBatch, beta, values: Optional[np.ndarray] = None) -> StrategyPath:
        beta = np.asarray(beta, dtype=np.float64)
        if beta.size != self.dimension:
            raise ParameterError(f"policy has {self.dimension} parameters, got {beta.size}")
        if values is None:
            values = self.feature_values(batch)
        theta = np.tensordot(beta, values, axes=1) if beta.size else np.zeros(
            (batch.n_paths, batch.grid.n_steps)
        )
        return StrategyPath(grid=batch.grid, values=theta)

    def bind(self, beta) -> Callable[[PathBatch], StrategyPath]:
        """Strategy source with fixed parameters"""
        frozen = np.asarray(beta, dtype=np.float64).copy()
        return lambda batch: self.strategy(batch, frozen)


def optimize_parametric(
    family: MartingaleFamily,
    policy: ParametricPolicy,
    payoff: Payoff,
    batch: PathBatch,
    budget: int,
    fresh_batch: PathBatch,
    beta0: Optional[Sequence[float]] = None,
    kw_fresh: Optional[KWDecomposition] = None,
) -> Tuple[np.ndarray, OptimizationReport]:
    """Nelder-Mead with one restart on a fixed batch; report on a fresh batch"""
    if budget < 1:
        raise ParameterError(f"budget must be positive, got {budget}")
    values = policy.feature_values(batch)
    h_T = payoff.evaluate(batch)

    def objective(beta: np.ndarray) -> float:
        theta = policy.strategy(batch, beta, values)
        residual = h_T - nonlinear_integral(family, theta, batch).terminal
        return float(np.mean(residual * residual))

    if policy.dimension == 0:
        beta = np.empty(0)
        converged, evaluations, best = True, 1, objective(beta)
    else:
        start = np.zeros(policy.dimension) if beta0 is None else np.asarray(beta0, dtype=np.float64)
        evaluations, converged = 0, False
        beta, best = start, math.inf
        for _ in range(2):
            remaining = budget - evaluations
            if remaining <= 0:
                break
            result = minimize(
                objective,
                beta,
                method="Nelder-Mead",
                options={"maxfev": remaining, "xatol": 1e-6, "fatol": 1e-12},
            )
            evaluations += int(result.nfev)
            if result.fun <= best:
                beta, best = np.asarray(result.x, dtype=np.float64), float(result.fun)
            converged = bool(result.success)

    report = objective_mc(family, policy.bind(beta), payoff, fresh_batch, kw_fresh)
    return beta, OptimizationReport(
        beta=[float(b) for b in beta],
        converged=converged,
        evaluations=evaluations,
        in_sample_objective=best,
        out_of_sample=report,
    )


def finite_difference_gradient(
    family: MartingaleFamily,
    policy: ParametricPolicy,
    beta: Sequence[float],
    payoff: Payoff,
    batch: PathBatch,
    bump: float = 1e-4,
) -> List[MCEstimate]:
    """Central differences of the objective in every parameter, per-path samples"""
    beta = np.asarray(beta, dtype=np.float64)
    values = policy.feature_values(batch)
    h_T = payoff.evaluate(batch)
    gradient = []
    for i in range(beta.size):
        step = np.zeros_like(beta)
        step[i] = bump
        up = h_T - nonlinear_integral(family, policy.strategy(batch, beta + step, values), batch).terminal
        down = h_T - nonlinear_integral(family, policy.strategy(batch, beta - step, values), batch).terminal
        gradient.append(estimate((up * up - down * down) / (2.0 * bump)))
    return gradient


def zero_strategy_objective(
    family: MartingaleFamily, payoff: Payoff, batch: PathBatch
) -> MCEstimate:
    """Objective at theta = 0, which is E[H^2] since M(t, 0) = 0"""
    return objective_mc(family, zero_strategy(batch), payoff, batch).objective


def excess_term(
    family: MartingaleFamily,
    source: StrategySource,
    payoff: Payoff,
    batch: PathBatch,
    kw: KWDecomposition,
) -> MCEstimate:
    """Paired estimate of the objective minus E[(lambda^H_T)^2]"""
    report = objective_mc(family, source, payoff, batch, kw)
    assert report.excess is not None
    return report.excess
