"""Algebraic identities of the lattice operators, evaluated on random unit fields.

Every identity holds exactly in the discrete setting, so the residuals are
rounding error; the suite backs the ``check`` command and the test-suite.
"""
from __future__ import annotations

import numpy as np

from .constants import FracParams
from .lattice import Lattice, build_lattice, normalize
from .nonlocal_ops import (
    conservation_residual,
    decomposition_residual,
    energy,
    frac_laplacian_strong,
    frac_laplacian_weak,
    frac_perimeter,
    integrate_nodes,
    odot,
    s_gradient,
)

DEFAULT_SEED = 0x5EED


def _rel(a, b) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def random_unit_field(lat: Lattice, d: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return normalize(rng.standard_normal((lat.N, d)))


def random_test_function(lat: Lattice, seed: int = DEFAULT_SEED + 1) -> np.ndarray:
    rng = np.random.default_rng(seed)
    phi = np.zeros(lat.N)
    phi[lat.omega_idx] = rng.standard_normal(lat.omega_idx.size)
    return phi


def exactness_suite(lat: Lattice, d: int = 3, seed: int = DEFAULT_SEED, tol: float = 1e-11) -> dict:
    """Residuals of the discrete identities; each entry has ``residual`` and ``pass``.

    The lattice tail is ignored (pair sums only). ``perimeter`` checks
    ``E(chi_E - chi_{E^c}) = 2 gamma P`` with ``P`` the three-class ordered-pair
    sum; the ratio ``E / (gamma P)`` is reported alongside.
    """
    d = max(int(d), 2)
    u = random_unit_field(lat, d, seed)
    phi = random_test_function(lat, seed + 1)
    om, ex = lat.omega_idx, lat.ext_idx
    out = {}

    grads = [s_gradient(lat, u[:, c]) for c in range(d)]
    anti = 0.0
    scale = 0.0
    for g in grads:
        io = g.inner[:, om]
        anti = max(anti, float(np.max(np.abs(io + io.T))), float(np.max(np.abs(g.outer + g.inner[:, ex].T))))
        scale = max(scale, float(np.max(np.abs(g.inner))))
    out["antisymmetry"] = anti / scale

    E = energy(lat, u, tail=False)
    out["norm_energy"] = _rel(sum(g.norm2() for g in grads), 2.0 * E)

    weak = frac_laplacian_weak(lat, u[:, :1], phi, tail=False)
    strong = integrate_nodes(lat, frac_laplacian_strong(lat, u[:, :1], tail=False)[:, 0] * phi[om])
    out["weak_strong_duality"] = _rel(weak, strong)
    ibp = integrate_nodes(lat, odot(grads[0], s_gradient(lat, phi)))
    out["odot_integration_by_parts"] = _rel(weak, ibp)

    out["decomposition"] = decomposition_residual(lat, u)["relative"]

    pairing, cross = conservation_residual(lat, u, phi, 0, 1, tail=False)
    out["conservation_forms"] = _rel(pairing, cross)

    E_mask = lat.coords[:, 0] > 0.1 * lat.L
    chi = np.where(E_mask, 1.0, -1.0)
    E_chi = energy(lat, chi, tail=False)
    P = frac_perimeter(lat, E_mask)
    g = lat.params.gamma_ns
    out["perimeter"] = _rel(E_chi, 2.0 * g * P)

    report = {k: {"residual": float(v), "pass": bool(v <= tol)} for k, v in out.items()}
    report["perimeter"]["energy_over_gamma_P"] = float(E_chi / (g * P))
    return report


def suite_lattice(n: int, s: float, h: float, L: float, L_ext: float | None = None, shape: str = "box") -> Lattice:
    return build_lattice(FracParams(n, s, 1), h, L, L_ext, shape=shape)
