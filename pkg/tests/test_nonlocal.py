import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracmap.checks import exactness_suite, random_test_function, random_unit_field
from fracmap.constants import FracParams
from fracmap.errors import ConfigError, PreconditionError
from fracmap.lattice import ball_mask, build_lattice, preset_field
from fracmap.nonlocal_ops import (
    conservation_residual,
    conservation_sweep,
    el_residual,
    energy,
    energy_increment,
    frac_laplacian_strong,
    frac_laplacian_weak,
    frac_perimeter,
    lagrange_multiplier,
    local_energy,
    s_gradient,
    s_gradients,
)


def small_lattice(n=1, s=0.5, d=2, h=None, tail="zero", exterior=None):
    h = h or (1 / 16 if n == 1 else 1 / 4)
    return build_lattice(FracParams(n, s, d), h, 1.0, 1.5, shape="box", tail_mode=tail, exterior=exterior)


@settings(max_examples=12, deadline=None)
@given(s=st.floats(0.05, 0.95), n=st.integers(1, 2), seed=st.integers(0, 2**16))
def test_identities_hold_to_rounding(s, n, seed):
    rep = exactness_suite(small_lattice(n, s), d=3, seed=seed)
    bad = {k: v["residual"] for k, v in rep.items() if not v["pass"]}
    assert not bad


def test_perimeter_is_half_the_energy_over_gamma():
    lat = build_lattice(FracParams(2, 0.3, 1), 1 / 8, 1.0, 1.5, shape="ball")
    E_mask = np.linalg.norm(lat.coords - [0.2, 0.0], axis=1) < 0.6
    chi = np.where(E_mask, 1.0, -1.0)
    P = frac_perimeter(lat, E_mask)
    assert energy(lat, chi, tail=False) == pytest.approx(2 * lat.params.gamma_ns * P, rel=1e-13)


def test_constant_field_is_critical():
    lat = small_lattice(2, 0.4, 2, tail="constant-exterior", exterior=[0.0, 1.0])
    u = preset_field(lat, "constant", value=[0.0, 1.0])
    assert energy(lat, u) == 0.0
    _, sup, _ = el_residual(lat, u)
    assert sup < 1e-12
    assert conservation_sweep(lat, u) < 1e-12


def test_weak_matches_finite_difference_of_energy():
    lat = small_lattice(1, 0.35, 2, tail="exterior-function", exterior=lambda x: np.tile([0.6, 0.8], (len(x), 1)))
    u = random_unit_field(lat, 2, seed=7)
    phi = np.zeros_like(u)
    phi[lat.omega_idx] = np.random.default_rng(1).standard_normal((lat.n_omega, 2))
    t = 1e-6
    fd = (energy(lat, u + t * phi) - energy(lat, u - t * phi)) / (2 * t)
    assert fd == pytest.approx(frac_laplacian_weak(lat, u, phi), rel=1e-7)


def test_energy_increment_exact():
    lat = small_lattice(2, 0.6, 3, tail="exterior-function", exterior=lambda x: np.tile([1.0, 0, 0], (len(x), 1)))
    u = random_unit_field(lat, 3, seed=11)
    delta = np.zeros_like(u)
    delta[lat.omega_idx] = 0.3 * np.random.default_rng(2).standard_normal((lat.n_omega, 3))
    assert energy_increment(lat, u, delta) == pytest.approx(energy(lat, u + delta) - energy(lat, u), rel=1e-11)


def test_multiplier_is_sum_of_gradient_squares():
    lat = small_lattice(2, 0.5, 3)
    u = random_unit_field(lat, 3)
    lam = lagrange_multiplier(lat, u)
    total = np.zeros(lat.n_omega)
    for g in s_gradients(lat, u):
        total += np.sum(g.inner**2 * lat.mu, axis=1) / lat.cell_volume
    assert np.allclose(lam, total, rtol=1e-12)


def test_local_energy_on_all_of_omega_is_energy():
    lat = small_lattice(2, 0.5, 2)
    u = random_unit_field(lat, 2)
    assert local_energy(lat, u, lat.omega_mask) == pytest.approx(energy(lat, u), rel=1e-13)
    D = ball_mask(lat, [0, 0], 0.5) & lat.omega_mask
    assert 0 < local_energy(lat, u, D) < energy(lat, u)


def test_conservation_forms_with_tail():
    ext = lambda x: np.tile([0.0, 1.0], (len(x), 1))
    lat = small_lattice(1, 0.5, 2, tail="exterior-function", exterior=ext)
    u = random_unit_field(lat, 2, seed=5)
    phi = random_test_function(lat, seed=6)
    a, b = conservation_residual(lat, u, phi, 0, 1)
    assert a == pytest.approx(b, rel=1e-11)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_gaussian_energy_refines_towards_seminorm(s):
    # E(u, R) = [u]^2 / 2 with [u]^2 = 2^{s-1/2} Gamma(s+1/2) for exp(-x^2)
    exact = 0.5 * 2 ** (s - 0.5) * math.gamma(s + 0.5)
    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        lat = build_lattice(FracParams(1, s, 1), h, 4.0, 8.0, shape="box", tail_mode="constant-exterior", exterior=[0.0])
        errs.append(abs(energy(lat, preset_field(lat, "gaussian")) / exact - 1))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 1.3
    assert errs[2] < 0.1


def test_strong_is_dual_to_weak_componentwise():
    lat = small_lattice(2, 0.3, 2)
    u = random_unit_field(lat, 2)
    phi = np.zeros_like(u)
    phi[lat.omega_idx, 1] = 1.0
    lhs = frac_laplacian_weak(lat, u, phi)
    rhs = lat.cell_volume * np.sum(frac_laplacian_strong(lat, u)[:, 1])
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_errors():
    lat = small_lattice(1, 0.5, 2)
    u = random_unit_field(lat, 2)
    bad_phi = np.ones_like(u)
    with pytest.raises(PreconditionError):
        frac_laplacian_weak(lat, u, bad_phi)
    with pytest.raises(ConfigError):
        s_gradient(lat, u)
    with pytest.raises(ConfigError):
        energy(lat, u[:-1])
