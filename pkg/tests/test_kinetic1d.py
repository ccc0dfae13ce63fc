import math

import numpy as np
import pytest
from scipy import integrate

from kinex.errors import ConfigError, DataError, DomainError, StabilityError
from kinex.kinetic1d import (
    Equilibrium,
    Grid1D,
    GridDensity1D,
    _checked_step_values,
    dirac_density,
    gain,
    load_density,
    rhs,
    save_density,
    self_convolution,
    solve,
    step_euler,
    uniform_density,
)
from kinex.moments import m2_closed_form

from conftest import compact_random_density


def gain_quadrature_oracle(density_fn, x):
    """Adaptive quadrature of the defining double integral of the gain term."""
    import warnings

    def conv(m):
        return integrate.quad(lambda z: density_fn(z) * density_fn(m - z), 0.0, m)[0]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, _ = integrate.quad(lambda m: conv(m) / m, x, 80.0, limit=200)
    return value


class TestGrid:
    def test_nodes_are_midpoints(self):
        g = Grid1D(2.0, 16)
        assert g.dx == 0.125
        assert np.allclose(g.nodes, (np.arange(16) + 0.5) * 0.125)

    def test_from_spacing_rejects_incommensurate(self):
        with pytest.raises(ConfigError):
            Grid1D.from_spacing(1.0, 0.3)

    def test_too_few_cells(self):
        with pytest.raises(ConfigError):
            Grid1D(1.0, 8)

    def test_density_validation(self):
        g = Grid1D(2.0, 16)
        with pytest.raises(DataError):
            GridDensity1D(g, np.ones(15))
        with pytest.raises(DataError):
            GridDensity1D(g, np.full(16, np.nan))
        with pytest.raises(DomainError):
            GridDensity1D(g, np.full(16, -1.0))


class TestGain:
    def test_equilibrium_fixed_point(self):
        grid = Grid1D.from_spacing(20.0, 0.005)
        q = Equilibrium(1.0).on_grid(grid)
        residual = np.max(np.abs(gain(q).values - q.values))
        assert residual <= 5 * grid.dx

    def test_equilibrium_against_quadrature_oracle(self, grid_coarse):
        q = Equilibrium(1.0).on_grid(grid_coarse)
        g = gain(q)
        for idx in np.linspace(5, grid_coarse.n_cells - 40, 10, dtype=int):
            x = grid_coarse.nodes[idx]
            oracle = gain_quadrature_oracle(lambda z: math.exp(-z), x)
            assert abs(g.values[idx] - oracle) < 5e-4

    def test_uniform_analytic_values(self, grid_fine, uniform02):
        # piecewise closed form: ln2 - x/4 on [0,2], ln(4/x) + (x-4)/4 on [2,4]
        g = gain(uniform02)
        x = grid_fine.nodes
        inner = x < 2.0
        outer = (x > 2.0) & (x < 4.0)
        assert abs(g.values[0] - (math.log(2.0) - x[0] / 4)) < 1e-4
        assert np.max(np.abs(g.values[inner] - (np.log(2.0) - x[inner] / 4))) < 1e-3
        assert np.max(np.abs(g.values[outer] - (np.log(4 / x[outer]) + (x[outer] - 4) / 4))) < 1e-3

    def test_uniform_quadrature_oracle(self):
        grid = Grid1D.from_spacing(20.0, 0.02)
        q = uniform_density(grid, 0.0, 2.0)
        g = gain(q)

        def u02(z):
            return 0.5 if 0.0 <= z < 2.0 else 0.0

        for x_target in (0.5, 1.7, 3.1):
            idx = int(x_target / grid.dx)
            oracle = gain_quadrature_oracle(u02, grid.nodes[idx])
            assert abs(g.values[idx] - oracle) < 1e-3

    def test_spike_becomes_uniform(self):
        grid = Grid1D.from_spacing(8.0, 0.01)
        q = dirac_density(grid, 2.0)
        a = q.mean
        g = gain(q, mass_check=False)
        inside = grid.nodes < 2 * a
        assert np.max(np.abs(g.values[inside] - 1.0 / (2 * a))) < 1e-12
        assert np.all(g.values[grid.nodes > 2 * a + grid.dx] == 0.0)

    def test_mass_is_squared(self, grid_fine):
        q = compact_random_density(grid_fine, seed=3)
        sub = GridDensity1D(grid_fine, 0.7 * q.values)  # sub-probability
        assert abs(gain(sub, mass_check=False).mass - sub.mass**2) < 1e-12

    def test_monotone_nonincreasing(self, grid_fine):
        for seed in range(5):
            q = compact_random_density(grid_fine, seed)
            g = gain(q)
            assert np.all(np.diff(g.values) <= 1e-15)

    def test_rejects_wild_mass(self, grid_fine, exp1):
        with pytest.raises(DomainError):
            gain(GridDensity1D(grid_fine, 0.5 * exp1.values))  # mass 0.5

    def test_negative_input_rejected_at_construction(self, grid_fine):
        values = np.ones(grid_fine.n_cells)
        values[3] = -0.5
        with pytest.raises(DomainError):
            GridDensity1D(grid_fine, values)

    def test_fft_matches_direct(self):
        for n_cells in (64, 256, 512):
            grid = Grid1D(20.0, n_cells)
            q = Equilibrium(1.0).on_grid(grid)
            direct = self_convolution(q, "direct")
            fft = self_convolution(q, "fft")
            assert np.max(np.abs(direct - fft)) < 1e-12

    def test_refinement_halves_residual(self):
        residuals = []
        for dx in (0.01, 0.005):
            grid = Grid1D.from_spacing(20.0, dx)
            q = Equilibrium(1.0).on_grid(grid)
            residuals.append(np.max(np.abs(gain(q).values - q.values)))
        assert residuals[0] / residuals[1] >= 1.8


class TestRhs:
    def test_equilibrium_residual_small(self, grid_coarse):
        q = Equilibrium(1.0).on_grid(grid_coarse)
        assert np.max(np.abs(rhs(q))) <= 5 * grid_coarse.dx

    def test_integrals_vanish(self, grid_fine):
        q = compact_random_density(grid_fine, seed=11)
        r = rhs(q)
        dx = grid_fine.dx
        assert abs(np.sum(r) * dx) < 1e-12  # mass conservation
        assert abs(np.sum(grid_fine.nodes * r) * dx) < 1e-12  # mean conservation


class TestStepEuler:
    def test_fixed_point(self, exp1):
        stepped = step_euler(exp1, 0.5)
        assert np.max(np.abs(stepped.values - exp1.values)) <= 5 * exp1.grid.dx

    def test_mass_preserved_one_step(self, uniform02):
        stepped = step_euler(uniform02, 0.1)
        assert abs(stepped.mass - uniform02.mass) < 1e-12

    @pytest.mark.parametrize("dt", [0.0, -0.1])
    def test_dt_guard(self, uniform02, dt):
        with pytest.raises(ConfigError):
            step_euler(uniform02, dt)

    def test_dt_above_one_is_a_stability_error(self, uniform02):
        with pytest.raises(StabilityError):
            step_euler(uniform02, 1.5)

    def test_negativity_clipping_and_abort(self):
        clipped, lost = _checked_step_values(np.array([1.0, -5e-15, 2.0]), 0.1)
        assert clipped[1] == 0.0 and 0 < lost < 1e-14
        with pytest.raises(StabilityError):
            _checked_step_values(np.array([1.0, -1e-6]), 0.1)

    def test_never_negative_along_solve(self, uniform02):
        traj = solve(uniform02, 2.0, 0.5, snapshot_times=np.arange(0, 2.1, 0.5))
        for snap in traj.snapshots:
            assert snap.values.min() >= 0.0
        assert traj.clipped_mass == 0.0


class TestSolve:
    def test_equilibrium_stationary(self, exp1):
        # the normalized grid exponential is an exact discrete fixed point up
        # to the truncation leak, which the quadratic mass flow amplifies
        # like e^t: short horizons are near-exact, t = 10 stays small
        q0 = exp1.normalized()
        assert np.max(np.abs(solve(q0, 2.0, 0.05).final.values - q0.values)) < 1e-8
        assert np.max(np.abs(solve(q0, 10.0, 0.05).final.values - q0.values)) < 1e-4

    def test_uniform_relaxes_to_equilibrium(self):
        from kinex.diagnostics import wasserstein1

        # x_max = 40: the truncation leak is amplified like e^t by the
        # quadratic mass flow, so long horizons need more headroom
        grid = Grid1D.from_spacing(40.0, 0.01)
        q0 = uniform_density(grid, 0.0, 2.0)
        eq = Equilibrium(1.0).on_grid(grid).normalized()
        traj = solve(q0, 30.0, 0.05)
        assert wasserstein1(traj.final.normalized(), eq) < 1e-2

    def test_m2_matches_closed_form(self, uniform02):
        times = np.arange(0.0, 10.5, 1.0)
        traj = solve(uniform02, 10.0, 0.01, snapshot_times=times)
        m2 = traj.moment_series(2)
        expected = m2_closed_form(np.array(traj.times), uniform02.mean, uniform02.moment(2))
        assert np.max(np.abs(m2 - expected) / expected) < 0.01

    def test_conservation_budgets(self, uniform02):
        traj = solve(uniform02, 10.0, 0.05)
        assert abs(traj.final.mass - uniform02.mass) < 1e-6
        assert abs(traj.final.mean - uniform02.mean) < 1e-4

    def test_snapshots_never_alias_live_state(self, uniform02):
        # densities are immutable, so a recorded snapshot can never change
        # under further stepping, and its buffer rejects writes
        traj = solve(uniform02, 1.0, 0.5, snapshot_times=[0.5])
        mid = traj.snapshots[-1]
        frozen = mid.values.copy()
        solve(mid, 1.0, 0.5)
        assert np.array_equal(mid.values, frozen)
        with pytest.raises(ValueError):
            mid.values[0] = 99.0

    def test_snapshot_window_validated(self, uniform02):
        with pytest.raises(ConfigError):
            solve(uniform02, 1.0, 0.5, snapshot_times=[2.0])


def test_density_csv_roundtrip(tmp_path, uniform02):
    path = str(tmp_path / "density.csv")
    save_density(uniform02, path)
    back = load_density(path)
    assert back.grid == uniform02.grid
    assert np.array_equal(back.values, uniform02.values)
