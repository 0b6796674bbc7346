import numpy as np
import pytest

from fracmap.checks import random_unit_field
from fracmap.constants import FracParams
from fracmap.errors import ConfigError, NumericalError, PreconditionError
from fracmap.lattice import build_lattice, preset_field, preset_function
from fracmap.nonlocal_ops import conservation_sweep, energy, frac_laplacian_strong
from fracmap.solver import SolverConfig, minimize, solve_linear, stationarity_residual


@pytest.fixture(scope="module")
def line_lattice():
    ext = preset_function("constant", 1, 3, value=[0.0, 0.0, 1.0])
    return build_lattice(FracParams(1, 0.4, 3), 1 / 16, 1.0, 2.0, shape="box", tail_mode="exterior-function", exterior=ext)


@pytest.fixture(scope="module")
def line_solution(line_lattice):
    lat = line_lattice
    u0 = preset_field(lat, "constant", value=[0.0, 0.0, 1.0])
    u0[lat.omega_idx] = random_unit_field(lat, 3, seed=4)[lat.omega_idx]
    u, rep = minimize(u0, lat, SolverConfig(tol_tangential=1e-8))
    return u0, u, rep


def test_energy_history_nonincreasing(line_solution):
    _, _, rep = line_solution
    h = np.asarray(rep.energy_history)
    assert np.all(np.diff(h) <= 0)
    assert rep.converged and rep.tangential_residual <= 1e-8
    assert rep.energy == pytest.approx(h[-1], rel=1e-10)


def test_output_is_unit_and_exterior_fixed(line_lattice, line_solution):
    u0, u, _ = line_solution
    assert np.max(np.abs(np.linalg.norm(u, axis=1) - 1)) <= 1e-12
    assert np.array_equal(u[line_lattice.ext_idx], u0[line_lattice.ext_idx])


def test_minimizer_is_constant_matching_exterior(line_lattice, line_solution):
    # constant exterior data: the unique minimizer is that constant
    _, u, rep = line_solution
    assert rep.energy < 1e-12
    assert np.allclose(u[line_lattice.omega_idx], [0, 0, 1], atol=1e-5)


def test_critical_point_diagnostics():
    # step exterior data (-e1 left, e1 right) forces a half turn inside
    ext = preset_function("step", 1, 2)
    lat = build_lattice(FracParams(1, 0.5, 2), 1 / 16, 1.0, 2.0, shape="box", tail_mode="exterior-function", exterior=ext)
    x = lat.coords[:, 0]
    th = np.where(lat.omega_mask, 0.5 * np.pi * (1 - x) + 0.3 * np.sin(np.pi * x), np.where(x > 0, 0.0, np.pi))
    u0 = np.stack([np.cos(th), np.sin(th)], axis=1)
    u, rep = minimize(u0, lat, SolverConfig(tol_tangential=1e-7))
    assert rep.converged
    assert conservation_sweep(lat, u) < 1e-6
    assert stationarity_residual(lat, u) < 1e-4


def test_gradient_matches_finite_differences(line_lattice):
    lat = line_lattice
    u = random_unit_field(lat, 3, seed=9)
    lap = frac_laplacian_strong(lat, u)
    rng = np.random.default_rng(0)
    t = 1e-6
    for a in rng.choice(lat.n_omega, 20, replace=False):
        p = lat.omega_idx[a]
        for c in range(3):
            e = np.zeros_like(u)
            e[p, c] = t
            fd = (energy(lat, u + e) - energy(lat, u - e)) / (2 * t)
            assert fd == pytest.approx(lat.cell_volume * lap[a, c], rel=1e-5, abs=1e-12)


def test_sign_flip_descent_for_scalar_maps():
    lat = build_lattice(FracParams(1, 0.25, 1), 1 / 16, 1.0, 2.0, shape="box", tail_mode="zero")
    u0 = preset_field(lat, "random-perturbation", seed=1)
    u, rep = minimize(u0, lat)
    assert rep.converged
    assert np.all(np.diff(rep.energy_history) < 0)
    assert set(np.unique(u)) <= {-1.0, 1.0}
    # no single flip lowers the energy
    E = energy(lat, u)
    for p in lat.omega_idx[::7]:
        v = u.copy()
        v[p] = -v[p]
        assert energy(lat, v) >= E - 1e-12


def test_solve_linear_constant_and_residual():
    lat = build_lattice(FracParams(2, 0.6, 1), 1 / 8, 1.0, 2.0, tail_mode="constant-exterior", exterior=[2.0])
    u0 = np.full((lat.N, 1), 2.0)
    u0[lat.omega_idx] = 0.0
    w, info = solve_linear(u0, lat)
    assert np.allclose(w[lat.omega_idx], 2.0, atol=1e-8)
    rhs = np.random.default_rng(2).standard_normal(lat.n_omega)
    w, info = solve_linear(u0, lat, rhs=rhs)
    lap = frac_laplacian_strong(lat, w[:, None])[:, 0]
    assert np.max(np.abs(lap - rhs)) <= 1e-7 * np.max(np.abs(rhs))


def test_config_and_input_errors(line_lattice):
    with pytest.raises(ConfigError):
        SolverConfig(backtrack_factor=1.5)
    with pytest.raises(ConfigError):
        SolverConfig(tol_tangential=0.0)
    lat = line_lattice
    with pytest.raises(PreconditionError):
        minimize(2 * random_unit_field(lat, 3), lat)
    with pytest.raises(ConfigError):
        minimize(random_unit_field(lat, 2), lat)


def test_line_search_stall_is_reported(line_lattice):
    lat = line_lattice
    u0 = random_unit_field(lat, 3, seed=3)
    with pytest.raises(NumericalError) as exc:
        minimize(u0, lat, SolverConfig(initial_step=1e8, max_backtracks=1, bb_steps=False))
    assert "iterations" in exc.value.report
