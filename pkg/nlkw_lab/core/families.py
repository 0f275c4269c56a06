"""Martingale families {M(x)} and checks of their representation M(x) = int mu(s, x) dW_s.

The built-in families depend on the path only through the driver value W_t
at the evaluation node, so every evaluator takes (t, w, x) arrays that
broadcast against each other. The representation driver is B = W.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from nlkw_lab.core.entities import (
    DerivativePoint,
    DerivativeReport,
    HolderEstimate,
    LadderRung,
    MCEstimate,
    PathBatch,
    PathBundle,
    PathPrefix,
    RepresentationReport,
    StrategyPath,
)
from nlkw_lab.core.errors import CapabilityError, NumericError, ParameterError
from nlkw_lab.core.estimates import estimate
from nlkw_lab.core.integrators import ito_integral
from nlkw_lab.core.path_engine import build_grid, simulate_batch

EXPONENT_LIMIT = 700.0


class MartingaleFamily:
    """Evaluators for M(t, x), mu(t, x) and their x-derivatives"""

    name = "family"
    has_integrand = False
    has_d_integrand = False
    has_d_evaluate = False

    def evaluate(self, t, w, x) -> np.ndarray:
        raise NotImplementedError

    def integrand(self, t, w, x) -> np.ndarray:
        raise CapabilityError(f"family '{self.name}' has no analytic integrand")

    def d_integrand(self, t, w, x) -> np.ndarray:
        raise CapabilityError(f"family '{self.name}' has no analytic d_integrand")

    def d_evaluate(self, t, w, x) -> np.ndarray:
        raise CapabilityError(f"family '{self.name}' has no analytic d_evaluate")

    def critical_points(self, t, w) -> Optional[np.ndarray]:
        """Zeros of x -> d_integrand(t, w, x), last axis sorted; None if unknown"""
        return None

    def integrand_limits(self, t, w) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Limits of mu(t, x) as x -> -inf and x -> +inf; None if unknown"""
        return None

    def inverse_integrand(self, t, w, h) -> Optional[np.ndarray]:
        """Closed-form smallest |x| with mu(t, x) = h, NaN where there is none"""
        return None

    def derivative(self) -> "MartingaleFamily":
        """Family x -> dM/dx(x) with integrand d_mu/dx"""
        return DerivativeFamily(self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class DerivativeFamily(MartingaleFamily):
    """View of a family through its x-derivative"""

    def __init__(self, base: MartingaleFamily):
        self.base = base
        self.name = f"d_{base.name}"
        self.has_integrand = base.has_d_integrand
        self.has_d_integrand = False
        self.has_d_evaluate = False

    def evaluate(self, t, w, x) -> np.ndarray:
        return self.base.d_evaluate(t, w, x)

    def integrand(self, t, w, x) -> np.ndarray:
        return self.base.d_integrand(t, w, x)


class LinearFamily(MartingaleFamily):
    """M(t, x) = x W_t: the classical Kunita-Watanabe setting"""

    name = "linear"
    has_integrand = True
    has_d_integrand = True
    has_d_evaluate = True

    def evaluate(self, t, w, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * np.asarray(w, dtype=np.float64)

    def integrand(self, t, w, x) -> np.ndarray:
        x, _ = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(w))
        return x.astype(np.float64, copy=True)

    def d_integrand(self, t, w, x) -> np.ndarray:
        x, _ = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(w))
        return np.ones_like(x, dtype=np.float64)

    def d_evaluate(self, t, w, x) -> np.ndarray:
        w, _ = np.broadcast_arrays(np.asarray(w, dtype=np.float64), np.asarray(x))
        return w.astype(np.float64, copy=True)

    def critical_points(self, t, w) -> np.ndarray:
        shape = np.broadcast_shapes(np.shape(t), np.shape(w))
        return np.empty(shape + (0,))

    def integrand_limits(self, t, w) -> Tuple[np.ndarray, np.ndarray]:
        shape = np.broadcast_shapes(np.shape(t), np.shape(w))
        return np.full(shape, -np.inf), np.full(shape, np.inf)

    def inverse_integrand(self, t, w, h) -> np.ndarray:
        shape = np.broadcast_shapes(np.shape(t), np.shape(w), np.shape(h))
        return np.broadcast_to(np.asarray(h, dtype=np.float64), shape).copy()


class ExponentialFamily(MartingaleFamily):
    """M(t, x) = exp(x W_t - t x^2 / 2) - 1 with its Ito integrand.

    Ito's formula gives dM = x exp(x W_t - t x^2 / 2) dW, i.e.
    mu(t, x) = x (M(t, x) + 1).
    """

    name = "exp"
    has_integrand = True
    has_d_integrand = True
    has_d_evaluate = True

    @staticmethod
    def exponent(t, w, x) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        e = x * w - t * x * x / 2.0
        if np.any(e > EXPONENT_LIMIT):
            t_b, x_b, e_b = np.broadcast_arrays(t, x, e)
            where = np.unravel_index(int(np.argmax(e_b)), e_b.shape)
            raise NumericError(
                "exponent exceeds overflow guard",
                t=float(t_b[where]),
                x=float(x_b[where]),
            )
        return np.maximum(e, -EXPONENT_LIMIT)

    def evaluate(self, t, w, x) -> np.ndarray:
        return np.expm1(self.exponent(t, w, x))

    def integrand(self, t, w, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * np.exp(self.exponent(t, w, x))

    def d_integrand(self, t, w, x) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return (1.0 + x * w - x * x * t) * np.exp(self.exponent(t, w, x))

    def d_evaluate(self, t, w, x) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return (w - x * t) * np.exp(self.exponent(t, w, x))

    def critical_points(self, t, w) -> np.ndarray:
        # Roots of t x^2 - W x - 1 = 0; at t = 0 the integrand is x and has none.
        t, w = np.broadcast_arrays(
            np.asarray(t, dtype=np.float64), np.asarray(w, dtype=np.float64)
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            q = w + np.copysign(np.sqrt(w * w + 4.0 * t), w)
            first = q / (2.0 * t)
            second = -2.0 / q
        lower = np.where(t > 0.0, np.minimum(first, second), -np.inf)
        upper = np.where(t > 0.0, np.maximum(first, second), np.inf)
        return np.stack([lower, upper], axis=-1)

    def integrand_limits(self, t, w) -> Tuple[np.ndarray, np.ndarray]:
        # mu decays to 0 on both sides once t > 0; at (0, 0) it is x. NaN: unknown.
        t, w = np.broadcast_arrays(
            np.asarray(t, dtype=np.float64), np.asarray(w, dtype=np.float64)
        )
        start = (t == 0.0) & (w == 0.0)
        low = np.where(t > 0.0, 0.0, np.where(start, -np.inf, np.nan))
        high = np.where(t > 0.0, 0.0, np.where(start, np.inf, np.nan))
        return low, high

    def inverse_integrand(self, t, w, h) -> np.ndarray:
        t, w, h = np.broadcast_arrays(
            np.asarray(t, dtype=np.float64),
            np.asarray(w, dtype=np.float64),
            np.asarray(h, dtype=np.float64),
        )
        return np.where((t == 0.0) & (w == 0.0), h, np.nan)

    def integrand_range(self, t, w) -> Tuple[np.ndarray, np.ndarray]:
        """Lowest and highest value of x -> mu(t, x); infinite at t = 0"""
        points = self.critical_points(t, w)
        t_b = np.broadcast_to(np.asarray(t, dtype=np.float64), points.shape[:-1])
        w_b = np.broadcast_to(np.asarray(w, dtype=np.float64), points.shape[:-1])
        finite = t_b > 0.0
        safe = np.where(np.isfinite(points), points, 0.0)
        low = np.where(finite, self.integrand(t_b, w_b, safe[..., 0]), -np.inf)
        high = np.where(finite, self.integrand(t_b, w_b, safe[..., 1]), np.inf)
        return low, high


class AsPrintedExponentialFamily(ExponentialFamily):
    """Same M, with the integrand x M(t, x) and derivative M (1 + x W - x^2 t).

    These integrands do not represent M; the representation ladder shows
    the Euler sums settle at a positive distance from M(T, x).
    """

    name = "exp-as-printed"

    def integrand(self, t, w, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.evaluate(t, w, x)

    def d_integrand(self, t, w, x) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return (1.0 + x * w - x * x * t) * self.evaluate(t, w, x)

    def critical_points(self, t, w) -> None:
        return None

    def integrand_limits(self, t, w) -> Tuple[np.ndarray, np.ndarray]:
        # x M(t, x) behaves like -x far out once t > 0; M vanishes at (0, 0).
        t, w = np.broadcast_arrays(
            np.asarray(t, dtype=np.float64), np.asarray(w, dtype=np.float64)
        )
        start = (t == 0.0) & (w == 0.0)
        low = np.where(t > 0.0, np.inf, np.where(start, 0.0, np.nan))
        high = np.where(t > 0.0, -np.inf, np.where(start, 0.0, np.nan))
        return low, high

    def inverse_integrand(self, t, w, h) -> None:
        return None


_FAMILIES: Dict[str, MartingaleFamily] = {
    "linear": LinearFamily(),
    "exp": ExponentialFamily(),
    "exp-as-printed": AsPrintedExponentialFamily(),
}


def get_family(name: str) -> MartingaleFamily:
    try:
        return _FAMILIES[name]
    except KeyError:
        raise ParameterError(
            f"unknown family '{name}', expected one of {sorted(_FAMILIES)}"
        ) from None


def family_names() -> List[str]:
    return sorted(_FAMILIES)


PathLike = Union[float, PathBundle, PathPrefix]


def driver_value(t: float, path: PathLike) -> float:
    """W_t read from a float, one path (t a grid node) or a one-path prefix ending at t"""
    if isinstance(path, PathBundle):
        matches = np.flatnonzero(path.grid.nodes == t)
        if matches.size == 0:
            raise ParameterError(f"t={t} is not a node of the path's grid")
        return float(path.w[int(matches[0])])
    if isinstance(path, PathPrefix):
        if path.n_paths != 1:
            raise ParameterError(f"prefix must hold one path, got {path.n_paths}")
        if path.t[-1] != t:
            raise ParameterError(f"prefix ends at t={path.t[-1]}, not t={t}")
        return float(path.w[0, -1])
    w = float(path)
    if not math.isfinite(w):
        raise ParameterError(f"driver value must be finite, got {w}")
    return w


def eval_family(family: MartingaleFamily, t: float, x: float, path: PathBundle) -> float:
    """M(t, x) along one path; t must be a node of the path's grid"""
    if not math.isfinite(x):
        raise ParameterError(f"x must be finite, got {x}")
    return float(family.evaluate(t, driver_value(t, path), x))


def martingale_check(family: MartingaleFamily, x: float, batch: PathBatch) -> MCEstimate:
    """Estimate of E[M(T, x)], which is 0 for a family in M^2_0"""
    return estimate(family.evaluate(batch.grid.horizon, batch.w[:, -1], x))


def ladder_batches(
    T: float, ladder: Sequence[int], n_paths: int, rho: float, master_seed: int
) -> List[PathBatch]:
    """One batch per grid size of the refinement ladder"""
    return [
        simulate_batch(build_grid(T, n), n_paths, rho, master_seed) for n in ladder
    ]


def _euler_rmse(family: MartingaleFamily, x: float, batch: PathBatch) -> float:
    nodes = batch.grid.nodes
    left = family.integrand(nodes[None, :-1], batch.w[:, :-1], x)
    euler = ito_integral(
        StrategyPath(grid=batch.grid, values=left), batch.w, batch.grid
    ).terminal
    exact = family.evaluate(batch.grid.horizon, batch.w[:, -1], x)
    return float(np.sqrt(np.mean((euler - exact) ** 2)))


def representation_check(
    family: MartingaleFamily,
    x: float,
    batches: Sequence[PathBatch],
    target: str = "integrand",
) -> RepresentationReport:
    """RMSE of sum mu(t_{j-1}, x) dW_j - M(T, x) over a refinement ladder.

    With target="derivative" the same ladder checks
    sum d_mu(t_{j-1}, x) dW_j against dM/dx(T, x).
    """
    if target not in ("integrand", "derivative"):
        raise ParameterError(f"unknown target '{target}'")
    checked = family.derivative() if target == "derivative" else family
    if not checked.has_integrand:
        raise CapabilityError(f"family '{checked.name}' has no analytic integrand")
    if len(batches) < 2:
        raise ParameterError("a refinement ladder needs at least two grids")

    rungs: List[LadderRung] = []
    for batch in sorted(batches, key=lambda b: b.grid.n_steps):
        rmse = _euler_rmse(checked, x, batch)
        ratio = None
        if rungs and rmse > 0.0:
            ratio = rungs[-1].rmse / rmse
        rungs.append(LadderRung(n_steps=batch.grid.n_steps, rmse=rmse, ratio=ratio))

    return RepresentationReport(
        family=family.name,
        x=float(x),
        target=target,  # type: ignore[arg-type]
        rungs=rungs,
        converged=_ladder_converges(rungs),
    )


def _ladder_converges(rungs: List[LadderRung]) -> bool:
    """RMSE at rounding level, or shrinking at every rung with the top ratio
    within 20% of sqrt(refinement factor)"""
    if rungs[-1].rmse <= 1e-12:
        return True
    if any(r.ratio is None or r.ratio <= 1.0 for r in rungs[1:]):
        return False
    top = rungs[-1]
    expected = math.sqrt(top.n_steps / rungs[-2].n_steps)
    return 0.8 * expected <= top.ratio <= 1.2 * expected  # type: ignore[operator]


def _relative_error(analytic: float, approx: float) -> float:
    return abs(analytic - approx) / max(abs(analytic), 1.0)


def derivative_check(
    family: MartingaleFamily, t: float, x: float, path: PathLike, bump: float
) -> DerivativePoint:
    """Analytic dM/dx and d_mu/dx against central differences at one point.

    path is the driver value W_t, a path with t on its grid, or a one-path
    prefix ending at t.
    """
    if not bump > 0.0:
        raise ParameterError(f"bump must be positive, got {bump}")
    w = driver_value(t, path)
    if not (family.has_d_evaluate or family.has_d_integrand):
        raise CapabilityError(f"family '{family.name}' has no analytic derivatives")
    point = DerivativePoint(t=t, x=x, w=w)
    if family.has_d_evaluate:
        fd = (family.evaluate(t, w, x + bump) - family.evaluate(t, w, x - bump)) / (
            2.0 * bump
        )
        point.d_eval_error = _relative_error(float(family.d_evaluate(t, w, x)), float(fd))
    if family.has_d_integrand:
        fd = (family.integrand(t, w, x + bump) - family.integrand(t, w, x - bump)) / (
            2.0 * bump
        )
        point.d_integrand_error = _relative_error(
            float(family.d_integrand(t, w, x)), float(fd)
        )
    return point


def sample_derivative_check(
    family: MartingaleFamily,
    n_points: int,
    bump: float,
    T: float = 1.0,
    x_range: Tuple[float, float] = (-2.0, 2.0),
    seed: int = 0,
) -> DerivativeReport:
    """derivative_check at random (t, x, W_t) with t in (0, T] and W_t ~ N(0, t)"""
    rng = np.random.Generator(np.random.Philox(seed))
    t = T * (1.0 - rng.random(n_points))
    x = rng.uniform(x_range[0], x_range[1], n_points)
    w = rng.standard_normal(n_points) * np.sqrt(t)
    points = [
        derivative_check(family, float(ti), float(xi), float(wi), bump)
        for ti, xi, wi in zip(t, x, w)
    ]
    eval_errors = [p.d_eval_error for p in points if p.d_eval_error is not None]
    integrand_errors = [
        p.d_integrand_error for p in points if p.d_integrand_error is not None
    ]
    return DerivativeReport(
        family=family.name,
        bump=bump,
        points=points,
        max_d_eval_error=max(eval_errors) if eval_errors else None,
        max_d_integrand_error=max(integrand_errors) if integrand_errors else None,
    )


def holder_estimate(
    family: MartingaleFamily, batch: PathBatch, x_grid: Sequence[float]
) -> HolderEstimate:
    """Per-path log-log fit of |dM/dx(T, x) - dM/dx(T, y)| against |x - y|.

    Diagnostic only: the slope estimates the Holder exponent and the
    intercept the log of the constant.
    """
    xs = np.unique(np.asarray(x_grid, dtype=np.float64))
    if xs.size < 3:
        raise ParameterError("x_grid needs at least 3 distinct points")
    if not family.has_d_evaluate:
        raise CapabilityError(f"family '{family.name}' has no analytic d_evaluate")

    derivative = family.d_evaluate(batch.grid.horizon, batch.w[:, -1:], xs[None, :])
    i, j = np.triu_indices(xs.size, k=1)
    log_dx = np.broadcast_to(np.log(np.abs(xs[i] - xs[j])), (batch.n_paths, i.size))
    diff = np.abs(derivative[:, i] - derivative[:, j])
    usable = diff > 0.0
    log_dd = np.log(np.where(usable, diff, 1.0))

    count = usable.sum(axis=1)
    weight = usable.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_x = (weight * log_dx).sum(axis=1) / count
        mean_y = (weight * log_dd).sum(axis=1) / count
        cx = np.where(usable, log_dx - mean_x[:, None], 0.0)
        cy = np.where(usable, log_dd - mean_y[:, None], 0.0)
        sxx = (cx * cx).sum(axis=1)
        slope = (cx * cy).sum(axis=1) / sxx
    valid = (count >= 2) & (sxx > 0.0)
    if not np.any(valid):
        return HolderEstimate(usable_paths=0, note="derivative constant in x")

    delta = slope[valid]
    log_k = mean_y[valid] - delta * mean_x[valid]
    return HolderEstimate(
        k_hat=float(np.mean(np.exp(log_k))),
        delta_hat=float(np.mean(delta)),
        fraction_delta_above=float(np.mean(delta >= 0.9)),
        usable_paths=int(valid.sum()),
    )


def derivative_identity_check(
    family: MartingaleFamily, x: float, batches: Sequence[PathBatch]
) -> RepresentationReport:
    """Ladder of sum d_mu(t_{j-1}, x) dW_j against dM/dx(T, x)"""
    return representation_check(family, x, batches, target="derivative")
