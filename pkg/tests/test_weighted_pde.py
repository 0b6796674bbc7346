import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from fracmap.constants import FracParams
from fracmap.errors import ConfigError
from fracmap.extension import build_halfspace_grid, extend
from fracmap.lattice import build_lattice, preset_field
from fracmap.weighted_pde import (
    build_weighted_grid,
    check_energy_monotonicity,
    check_max_principle,
    grid_energy,
    pde_residual,
    solve_weighted_dirichlet,
    z_symmetry_defect,
)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_linear_in_x_is_reproduced(s):
    g = build_weighted_grid(FracParams(1, s, 1), 1.0, 1.0, 1 / 8)
    sol = solve_weighted_dirichlet(g, lambda x, z: x[:, :1])
    x, _ = g.coords()
    assert np.max(np.abs(sol.values[..., 0] - x[..., 0])) < 1e-9


def test_unweighted_case_is_five_point_laplace():
    g = build_weighted_grid(FracParams(1, 0.5, 1), 1.0, 1.0, 0.5)
    B = np.zeros(g.shape)
    B[0, :] = 1.0
    sol = solve_weighted_dirichlet(g, B)
    T = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(3, 3))
    A = sp.kron(T, sp.eye(3)) + sp.kron(sp.eye(3), T)
    b = np.zeros((3, 3))
    b[0, :] = 1.0
    ref = np.linalg.solve(A.toarray(), b.reshape(-1)).reshape(3, 3)
    assert np.max(np.abs(sol.values[1:-1, 1:-1, 0] - ref)) < 1e-12


@settings(max_examples=10, deadline=None)
@given(s=st.floats(0.1, 0.9), seed=st.integers(0, 2**16))
def test_max_principle_and_symmetry(s, seed):
    g = build_weighted_grid(FracParams(1, s, 1), 1.0, 1.0, 1 / 8)
    B = np.random.default_rng(seed).random(g.shape)
    assert check_max_principle(solve_weighted_dirichlet(g, B))["pass"]
    Bs = B + np.flip(B, axis=1)
    assert z_symmetry_defect(solve_weighted_dirichlet(g, Bs)) <= 1e-12


def test_solution_minimizes_energy():
    g = build_weighted_grid(FracParams(2, 0.3, 1), 0.5, 0.5, 1 / 8)
    rng = np.random.default_rng(0)
    B = rng.random(g.shape)
    sol = solve_weighted_dirichlet(g, B)
    bm = g.boundary_mask()
    E0 = grid_energy(g, sol.values)
    for _ in range(3):
        pert = sol.values[..., 0] + 0.01 * rng.standard_normal(g.shape) * ~bm
        assert grid_energy(g, pert) > E0


def test_energy_ratio_monotone_for_linear_data():
    g = build_weighted_grid(FracParams(1, 0.25, 1), 1.0, 1.0, 1 / 32)
    sol = solve_weighted_dirichlet(g, lambda x, z: x[:, :1] + 0.3 * x[:, :1] ** 2)
    rep = check_energy_monotonicity(sol, np.linspace(0.2, 0.9, 8))
    assert rep["pass"]


def test_monotonicity_requires_symmetry_below_half():
    g = build_weighted_grid(FracParams(1, 0.25, 1), 1.0, 1.0, 1 / 4, symmetric=False)
    sol = solve_weighted_dirichlet(g, lambda x, z: x[:, :1])
    with pytest.raises(ConfigError):
        check_energy_monotonicity(sol, [0.25, 0.5])


def test_poisson_extension_residual_decreases():
    res = []
    for h in (1 / 8, 1 / 16):
        lat = build_lattice(FracParams(1, 0.5, 1), h, 4.0, 8.0, shape="box")
        v = extend(preset_field(lat, "gaussian"), build_halfspace_grid(lat, 48))
        res.append(pde_residual(v, (2.0, 0.25, 2.0)))
    assert res[0] / res[1] >= 2.0


def test_grid_validation():
    p = FracParams(1, 0.5, 1)
    with pytest.raises(ConfigError):
        build_weighted_grid(p, 1.0, 1.0, 0.3)
    g = build_weighted_grid(p, 1.0, 1.0, 0.25)
    with pytest.raises(ConfigError):
        solve_weighted_dirichlet(g, np.zeros((3, 3)))
