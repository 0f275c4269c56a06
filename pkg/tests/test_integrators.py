"""Tests for integrators module"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlkw_lab.core import integrators, path_engine
from nlkw_lab.core.entities import PathBatch, StrategyPath, TimeGrid
from nlkw_lab.core.errors import ShapeError
from nlkw_lab.core.families import get_family


@pytest.fixture
def batch():
    grid = path_engine.build_grid(1.0, 32)
    return path_engine.simulate_batch(grid, 200, 0.5, 17)


class TestItoIntegral:
    """Tests for ito_integral function"""

    def test_constant_strategy_telescopes(self, batch):
        """Test that a constant strategy integrates to c (B_T - B_0) exactly"""
        theta = StrategyPath(grid=batch.grid, values=np.full(batch.grid.n_steps, 0.75))
        result = integrators.ito_integral(theta, batch.w, batch.grid)
        np.testing.assert_array_equal(result.terminal, 0.75 * batch.w[:, -1])
        assert np.all(result.running[:, 0] == 0.0)

    def test_matches_plain_left_point_sum(self, batch):
        """Test against sum h_j (B_j - B_{j-1})"""
        rng = np.random.default_rng(0)
        values = rng.normal(size=(batch.n_paths, batch.grid.n_steps))
        result = integrators.ito_integral(
            StrategyPath(grid=batch.grid, values=values), batch.w, batch.grid
        )
        expected = np.sum(values * np.diff(batch.w, axis=1), axis=1)
        np.testing.assert_allclose(result.terminal, expected, rtol=0.0, atol=1e-12)

    def test_accepts_single_driver_path(self):
        """Test that a 1-D driver is treated as one path"""
        grid = TimeGrid.from_nodes([0.0, 0.5, 1.0])
        theta = StrategyPath(grid=grid, values=[2.0, -1.0])
        result = integrators.ito_integral(theta, np.array([0.0, 1.0, 3.0]), grid)
        np.testing.assert_array_equal(result.running, [[0.0, 2.0, 0.0]])

    def test_rejects_driver_with_wrong_length(self, batch):
        """Test that a driver of the wrong length raises ShapeError"""
        theta = StrategyPath(grid=batch.grid, values=np.zeros(batch.grid.n_steps))
        with pytest.raises(ShapeError, match="nodes per path"):
            integrators.ito_integral(theta, batch.w[:, :-1], batch.grid)

    def test_rejects_strategy_on_other_grid(self, batch):
        """Test that a strategy built on another grid raises ShapeError"""
        other = path_engine.build_grid(2.0, batch.grid.n_steps)
        theta = StrategyPath(grid=other, values=np.zeros(other.n_steps))
        with pytest.raises(ShapeError, match="different grids"):
            integrators.ito_integral(theta, batch.w, batch.grid)

    def test_rejects_strategy_with_wrong_path_count(self, batch):
        """Test that a strategy for another number of paths raises ShapeError"""
        theta = StrategyPath(grid=batch.grid, values=np.zeros((3, batch.grid.n_steps)))
        with pytest.raises(ShapeError, match="paths"):
            integrators.ito_integral(theta, batch.w, batch.grid)


class TestNonlinearIntegral:
    """Tests for nonlinear_integral function"""

    def test_linear_family_equals_ito(self, batch):
        """Test that the linear family reproduces the Ito sum bit for bit"""
        rng = np.random.default_rng(1)
        theta = StrategyPath(
            grid=batch.grid, values=rng.normal(size=(batch.n_paths, batch.grid.n_steps))
        )
        nonlinear = integrators.nonlinear_integral(get_family("linear"), theta, batch)
        ito = integrators.ito_integral(theta, batch.w, batch.grid)
        np.testing.assert_array_equal(nonlinear.running, ito.running)

    def test_constant_strategy_gives_terminal_value(self, batch):
        """Test that a constant x integrates to M(T, x) - M(0, x)"""
        family = get_family("exp")
        theta = StrategyPath(grid=batch.grid, values=np.full(batch.grid.n_steps, 0.8))
        result = integrators.nonlinear_integral(family, theta, batch)
        expected = family.evaluate(1.0, batch.w[:, -1], 0.8) - family.evaluate(0.0, 0.0, 0.8)
        np.testing.assert_array_equal(result.terminal, expected)

    def test_single_path_bundle(self, batch):
        """Test that a PathBundle integrates like row i of the batch"""
        family = get_family("exp")
        theta = StrategyPath(grid=batch.grid, values=np.linspace(-1, 1, batch.grid.n_steps))
        whole = integrators.nonlinear_integral(family, theta, batch)
        single = integrators.nonlinear_integral(family, theta, batch.path(4))
        np.testing.assert_array_equal(single.running[0], whole.running[4])


class TestIsometry:
    """Tests for isometry_gap and quadratic_variation"""

    @pytest.mark.parametrize(
        "name,callback",
        [
            ("tanh_w1", lambda k, prefix: np.tanh(prefix.w1[:, -1])),
            ("one", lambda k, prefix: np.ones(prefix.n_paths)),
            ("w1", lambda k, prefix: prefix.w1[:, -1]),
            ("sign_w", lambda k, prefix: np.sign(prefix.w[:, -1])),
        ],
    )
    def test_isometry_gap_is_zero_in_expectation(self, name, callback):
        """Test E[(int h dW)^2] = E[int h^2 dt] for a predictable h"""
        grid = path_engine.build_grid(1.0, 16)
        batch = path_engine.simulate_batch(grid, 4000, 0.5, 5)
        h = integrators.build_strategy(batch, callback)
        gap = integrators.isometry_gap(h, batch.w, grid)
        assert gap.within(0.0, k=3.0), name

    def test_constant_integrand_gap(self):
        """Test that h = 1 leaves the gap W_T^2 - T path by path"""
        grid = path_engine.build_grid(1.0, 16)
        batch = path_engine.simulate_batch(grid, 500, 0.5, 5)
        h = StrategyPath(grid=grid, values=np.ones(grid.n_steps))
        gap = integrators.isometry_gap(h, batch.w, grid)
        assert gap.mean == pytest.approx(float(np.mean(batch.w[:, -1] ** 2)) - 1.0)

    def test_quadratic_variation_close_to_horizon(self):
        """Test that the realized quadratic variation of W is near T"""
        grid = path_engine.build_grid(2.0, 2048)
        batch = path_engine.simulate_batch(grid, 50, 0.3, 9)
        qv = integrators.quadratic_variation(batch.w)
        assert qv.shape == (50,)
        assert abs(float(np.mean(qv)) - 2.0) < 0.05


class TestBuildStrategy:
    """Tests for build_strategy and helpers"""

    def test_callback_sees_only_past_nodes(self, batch):
        """Test that interval k receives the prefix of nodes 0..k-1"""
        seen = []

        def callback(k, prefix):
            seen.append((k, prefix.k, prefix.w.shape[1]))
            return prefix.w[:, -1]

        theta = integrators.build_strategy(batch, callback)
        assert seen[0] == (1, 0, 1)
        assert seen[-1] == (batch.grid.n_steps, batch.grid.n_steps - 1, batch.grid.n_steps)
        np.testing.assert_array_equal(theta.values, batch.w[:, :-1])

    def test_scalar_callback_broadcasts(self, batch):
        """Test that a scalar return value applies to all paths"""
        theta = integrators.build_strategy(batch, lambda k, prefix: float(k))
        np.testing.assert_array_equal(theta.values[:, 2], np.full(batch.n_paths, 3.0))

    def test_left_nodes_and_strategy_from_left_values(self, batch):
        """Test vectorized strategies from left endpoint values"""
        prefix = integrators.left_nodes(batch)
        assert prefix.k == batch.grid.n_steps - 1
        np.testing.assert_array_equal(prefix.t, batch.grid.nodes[:-1])
        theta = integrators.strategy_from_left_values(batch.grid, prefix.w1 * 2.0)
        assert theta.values.shape == (batch.n_paths, batch.grid.n_steps)

    def test_strategy_rejects_wrong_width(self, batch):
        """Test that StrategyPath checks the number of intervals"""
        with pytest.raises(ShapeError, match="values per path"):
            StrategyPath(grid=batch.grid, values=np.zeros(batch.grid.n_steps + 1))


def perturb_after(batch: PathBatch, k: int, shift: float) -> PathBatch:
    """Same paths up to node k, every later increment moved by shift"""
    w1 = np.array(batch.w1)
    w2 = np.array(batch.w2)
    w1[:, k + 1 :] += shift * np.arange(1, batch.grid.n_steps - k + 1)
    w2[:, k + 1 :] -= shift * np.arange(1, batch.grid.n_steps - k + 1)
    return PathBatch(
        grid=batch.grid,
        rho=batch.rho,
        master_seed=batch.master_seed,
        path_ids=batch.path_ids,
        w1=w1,
        w2=w2,
    )


class TestAdaptedness:
    """Tests that integrals up to node k only read nodes 0..k"""

    def test_running_integral_ignores_later_increments(self, batch):
        """Test that running[0..k] survives a change of the path after node k"""
        k = 12
        family = get_family("exp")
        moved = perturb_after(batch, k, 0.3)
        theta = integrators.build_strategy(batch, lambda j, p: np.tanh(p.w[:, -1]))
        theta_moved = integrators.build_strategy(moved, lambda j, p: np.tanh(p.w[:, -1]))
        np.testing.assert_array_equal(theta.values[:, : k + 1], theta_moved.values[:, : k + 1])
        before = integrators.nonlinear_integral(family, theta, batch).running
        after = integrators.nonlinear_integral(family, theta_moved, moved).running
        np.testing.assert_array_equal(before[:, : k + 1], after[:, : k + 1])
        assert not np.array_equal(before[:, -1], after[:, -1])


class TestIntegralProperties:
    """Property-based tests of the integrators"""

    @settings(max_examples=25, deadline=None)
    @given(
        value=st.floats(min_value=-3.0, max_value=3.0),
        n_steps=st.integers(min_value=1, max_value=40),
        seed=st.integers(min_value=0, max_value=2**32),
    )
    def test_constant_strategy_telescopes(self, value, n_steps, seed):
        """Test that a constant theta integrates to M(T, theta) - M(0, theta)"""
        family = get_family("exp")
        grid = path_engine.build_grid(1.0, n_steps)
        batch = path_engine.simulate_batch(grid, 5, 0.5, seed)
        theta = StrategyPath(grid=grid, values=np.full(n_steps, value))
        result = integrators.nonlinear_integral(family, theta, batch)
        expected = family.evaluate(1.0, batch.w[:, -1], value) - family.evaluate(0.0, 0.0, value)
        np.testing.assert_allclose(result.terminal, expected, rtol=1e-9, atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(
        n_steps=st.integers(min_value=1, max_value=40),
        seed=st.integers(min_value=0, max_value=2**32),
    )
    def test_linear_family_is_ito_integral(self, n_steps, seed):
        """Test that M(x) = x W turns the nonlinear integral into int theta dW"""
        grid = path_engine.build_grid(1.0, n_steps)
        batch = path_engine.simulate_batch(grid, 5, 0.5, seed)
        theta = integrators.build_strategy(batch, lambda k, p: np.cos(p.w1[:, -1]))
        nonlinear = integrators.nonlinear_integral(get_family("linear"), theta, batch)
        ito = integrators.ito_integral(theta, batch.w, grid)
        np.testing.assert_allclose(nonlinear.running, ito.running, rtol=1e-9, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(
        k=st.integers(min_value=0, max_value=7),
        shift=st.floats(min_value=-1.0, max_value=1.0).filter(lambda s: s != 0.0),
        seed=st.integers(min_value=0, max_value=2**32),
    )
    def test_adaptedness(self, k, shift, seed):
        """Test that changing the path after node k leaves running[0..k] alone"""
        grid = path_engine.build_grid(1.0, 8)
        batch = path_engine.simulate_batch(grid, 4, 0.5, seed)
        moved = perturb_after(batch, k, shift)
        family = get_family("exp")
        theta = integrators.build_strategy(batch, lambda j, p: np.sin(p.w1[:, -1]))
        theta_moved = integrators.build_strategy(moved, lambda j, p: np.sin(p.w1[:, -1]))
        before = integrators.nonlinear_integral(family, theta, batch).running
        after = integrators.nonlinear_integral(family, theta_moved, moved).running
        np.testing.assert_array_equal(before[:, : k + 1], after[:, : k + 1])
