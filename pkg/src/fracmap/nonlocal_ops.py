"""Discrete nonlocal calculus on a :class:`~fracmap.lattice.Lattice`.

Fields are ``(N, d)`` arrays (scalars may be passed as ``(N,)``). Node-valued
results on Omega are ``(N_omega, ...)`` arrays ordered like
``lattice.omega_idx``. Pair fields store the two blocks of the active pair set
``(R^n x R^n) minus (Omega^c x Omega^c)``: rows in Omega against every node,
and exterior rows against Omega.

The pair sums are evaluated elementwise (not through expanded quadratic
forms), so the algebraic identities between these operators hold to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError
from .lattice import Lattice, as_field, check_unit

CHUNK_ROWS = 256


@dataclass
class PairField:
    """Real values on ordered active pairs.

    ``inner[a, q]`` is the value at ``(omega_idx[a], q)``; ``outer[b, a]`` at
    ``(ext_idx[b], omega_idx[a])``.
    """

    lattice: Lattice
    inner: np.ndarray
    outer: np.ndarray

    def norm2(self) -> float:
        """Discrete ``L^2_od`` norm squared: sum of ``F^2 h^{2n} / |x - y|^n``."""
        lat = self.lattice
        mu_out = lat.mu[:, lat.ext_idx].T
        return float(np.sum(self.inner**2 * lat.mu) + np.sum(self.outer**2 * mu_out))

    def __neg__(self):
        return PairField(self.lattice, -self.inner, -self.outer)

    def value(self, p: int, q: int) -> float:
        lat = self.lattice
        if lat.omega_mask[p]:
            return float(self.inner[np.searchsorted(lat.omega_idx, p), q])
        if lat.omega_mask[q]:
            return float(self.outer[np.searchsorted(lat.ext_idx, p), np.searchsorted(lat.omega_idx, q)])
        raise ConfigError("pair lies in Omega^c x Omega^c")


def _chunks(n_rows):
    for start in range(0, n_rows, CHUNK_ROWS):
        yield slice(start, min(start + CHUNK_ROWS, n_rows))


def _row_sums(lat: Lattice, u: np.ndarray):
    """Per Omega row: sums of ``w |u_i - u_j|^2`` over all j and over j in Omega."""
    om = lat.omega_idx
    s_all = np.empty(om.size)
    s_in = np.empty(om.size)
    for sl in _chunks(om.size):
        diff = u[om[sl]][:, None, :] - u[None, :, :]
        sq = np.sum(diff * diff, axis=-1) * lat.w[sl]
        s_all[sl] = sq.sum(axis=1)
        s_in[sl] = sq[:, om].sum(axis=1)
    return s_all, s_in


def _tail_energy_density(lat: Lattice, u: np.ndarray) -> np.ndarray:
    """Per Omega node ``tau |u_i|^2 - 2 u_i . m_i + q_i`` (zero without a tail)."""
    if lat.tail is None:
        return np.zeros(lat.n_omega)
    t = lat.tail
    uo = u[lat.omega_idx]
    return t.tau * np.sum(uo * uo, axis=1) - 2.0 * np.sum(uo * t.m, axis=1) + t.q


def _use_tail(lat: Lattice, u: np.ndarray, tail: bool) -> bool:
    if not tail or lat.tail is None:
        return False
    if u.shape[1] != lat.tail.m.shape[1]:
        raise ConfigError("tail terms need a field with the lattice target dimension; pass tail=False")
    return True


def _check_shape(lat: Lattice, u: np.ndarray) -> np.ndarray:
    u = as_field(u)
    if u.shape[0] != lat.N:
        raise ConfigError(f"field has {u.shape[0]} nodes, lattice has {lat.N}")
    return u


def energy(lat: Lattice, u, tail: bool = True) -> float:
    """Discrete s-Dirichlet energy of ``u`` in Omega (exterior values are data)."""
    u = _check_shape(lat, u)
    g = lat.params.gamma_ns
    s_all, s_in = _row_sums(lat, u)
    e = 0.25 * g * float(np.sum(2.0 * s_all - s_in))
    if _use_tail(lat, u, tail):
        e += 0.5 * g * float(np.sum(_tail_energy_density(lat, u)))
    return e


def local_energy(lat: Lattice, u, D_mask, tail: bool = True) -> float:
    """Energy of ``u`` in a sub-region ``D`` of Omega: pairs not both outside ``D``."""
    u = _check_shape(lat, u)
    D = np.asarray(D_mask, dtype=bool).reshape(-1)
    if np.any(D & ~lat.omega_mask):
        raise ConfigError("region must lie inside Omega")
    rows = np.nonzero(D[lat.omega_idx])[0]
    cols = np.nonzero(D)[0]
    total = 0.0
    for start in range(0, rows.size, CHUNK_ROWS):
        r = rows[start : start + CHUNK_ROWS]
        diff = u[lat.omega_idx[r]][:, None, :] - u[None, :, :]
        sq = np.sum(diff * diff, axis=-1) * lat.w[r]
        total += 2.0 * sq.sum() - sq[:, cols].sum()
    e = 0.25 * lat.params.gamma_ns * total
    if _use_tail(lat, u, tail):
        e += 0.5 * lat.params.gamma_ns * float(np.sum(_tail_energy_density(lat, u)[rows]))
    return e


def energy_increment(lat: Lattice, u, delta, lap=None) -> float:
    """``energy(u + delta) - energy(u)`` for ``delta`` supported in Omega.

    Uses the exact quadratic expansion so that tiny decrements are not lost to
    cancellation; ``lap`` may pass a precomputed strong Laplacian of ``u``.
    """
    u = _check_shape(lat, u)
    delta = _check_shape(lat, delta)
    if lap is None:
        lap = frac_laplacian_strong(lat, u)
    dz = np.zeros_like(delta)
    dz[lat.omega_idx] = delta[lat.omega_idx]
    lin = lat.cell_volume * float(np.sum(lap * dz[lat.omega_idx]))
    quad = energy(lat, dz, tail=False)
    if lat.tail is not None:
        dzo = dz[lat.omega_idx]
        quad += 0.5 * lat.params.gamma_ns * float(np.sum(lat.tail.tau * np.sum(dzo * dzo, axis=1)))
    return lin + quad


def s_gradient(lat: Lattice, u) -> PairField:
    """``d_s u(p, q) = sqrt(gamma/2) (u_p - u_q) / |x_p - x_q|^s`` for a scalar field."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 2:
        if u.shape[1] != 1:
            raise ConfigError("s_gradient takes a scalar field; apply it per component")
        u = u[:, 0]
    if u.shape[0] != lat.N:
        raise ConfigError("field does not match lattice")
    c = np.sqrt(0.5 * lat.params.gamma_ns)
    om, ex = lat.omega_idx, lat.ext_idx
    inner = c * (u[om][:, None] - u[None, :]) * lat.rs
    outer = c * (u[ex][:, None] - u[om][None, :]) * lat.rs[:, ex].T
    return PairField(lat, inner, outer)


def odot(F: PairField, G: PairField) -> np.ndarray:
    """Pointwise product ``(F . G)(p) = sum_q F G h^n / |x_p - x_q|^n`` on all nodes."""
    if F.lattice is not G.lattice:
        raise ConfigError("pair fields live on different lattices")
    lat = F.lattice
    hn = lat.cell_volume
    out = np.zeros(lat.N)
    out[lat.omega_idx] = np.sum(F.inner * G.inner * lat.mu, axis=1) / hn
    out[lat.ext_idx] = np.sum(F.outer * G.outer * lat.mu[:, lat.ext_idx].T, axis=1) / hn
    return out


def integrate_nodes(lat: Lattice, values) -> float:
    return lat.cell_volume * float(np.sum(values))


def _check_support(lat: Lattice, phi: np.ndarray):
    if np.any(phi[lat.ext_idx] != 0):
        raise PreconditionError("test function must vanish outside Omega")


def frac_laplacian_weak(lat: Lattice, u, phi, tail: bool = True) -> float:
    """``<(-Delta)^s u, phi>`` as the symmetric pair sum (phi supported in Omega)."""
    u = _check_shape(lat, u)
    phi = _check_shape(lat, phi)
    if phi.shape[1] != u.shape[1]:
        raise ConfigError("u and phi must have the same number of components")
    _check_support(lat, phi)
    om = lat.omega_idx
    total = 0.0
    for sl in _chunks(om.size):
        du = u[om[sl]][:, None, :] - u[None, :, :]
        dp = phi[om[sl]][:, None, :] - phi[None, :, :]
        prod = np.sum(du * dp, axis=-1) * lat.w[sl]
        total += 2.0 * prod.sum() - prod[:, om].sum()
    val = 0.5 * lat.params.gamma_ns * total
    if _use_tail(lat, u, tail):
        t = lat.tail
        uo, po = u[om], phi[om]
        val += lat.params.gamma_ns * float(np.sum((t.tau[:, None] * uo - t.m) * po))
    return val


def frac_laplacian_strong(lat: Lattice, u, tail: bool = True) -> np.ndarray:
    """``((-Delta)^s_h u)_i = gamma sum_j (u_i - u_j) w_ij / h^n`` on Omega nodes."""
    u = _check_shape(lat, u)
    om = lat.omega_idx
    rowsum = lat.w.sum(axis=1)
    val = rowsum[:, None] * u[om] - lat.w @ u
    if _use_tail(lat, u, tail):
        val += lat.tail.tau[:, None] * u[om] - lat.tail.m
    return lat.params.gamma_ns * val / lat.cell_volume


def lagrange_multiplier(lat: Lattice, u, tail: bool = True, check: bool = True) -> np.ndarray:
    """``lambda_i = (gamma/2) sum_j |u_i - u_j|^2 w_ij / h^n`` on Omega nodes."""
    u = _check_shape(lat, u)
    if check:
        check_unit(u)
    s_all, _ = _row_sums(lat, u)
    lam = s_all
    if _use_tail(lat, u, tail):
        lam = lam + _tail_energy_density(lat, u)
    return 0.5 * lat.params.gamma_ns * lam / lat.cell_volume


def tangential(u_omega: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project ``v`` onto the tangent spaces ``u_i^perp``."""
    return v - np.sum(v * u_omega, axis=1)[:, None] * u_omega


def el_residual(lat: Lattice, u, tail: bool = True):
    """Euler-Lagrange residual ``r = (-Delta)^s_h u - lambda u`` on Omega.

    Returns ``(r, sup|r|, sup|tangential part of r|)``.
    """
    u = _check_shape(lat, u)
    check_unit(u)
    lap = frac_laplacian_strong(lat, u, tail=tail)
    lam = lagrange_multiplier(lat, u, tail=tail, check=False)
    uo = u[lat.omega_idx]
    r = lap - lam[:, None] * uo
    rt = tangential(uo, r)
    return r, float(np.max(np.linalg.norm(r, axis=1))), float(np.max(np.linalg.norm(rt, axis=1)))


def s_gradients(lat: Lattice, u) -> list[PairField]:
    u = as_field(u)
    return [s_gradient(lat, u[:, k]) for k in range(u.shape[1])]


def omega_field(lat: Lattice, u, i: int, j: int, grads=None) -> PairField:
    """``Omega^{ij}(p, q) = u^i_p d_s u^j(p, q) - u^j_p d_s u^i(p, q)``."""
    u = as_field(u)
    d = u.shape[1]
    if not (0 <= i < d and 0 <= j < d):
        raise ConfigError(f"component indices must lie in [0, {d})")
    if grads is None:
        grads = {k: s_gradient(lat, u[:, k]) for k in {i, j}}
    gi, gj = grads[i], grads[j]
    om, ex = lat.omega_idx, lat.ext_idx
    inner = u[om, i][:, None] * gj.inner - u[om, j][:, None] * gi.inner
    outer = u[ex, i][:, None] * gj.outer - u[ex, j][:, None] * gi.outer
    return PairField(lat, inner, outer)


def t_field(lat: Lattice, u) -> np.ndarray:
    """``T^i(p) = (gamma/4) sum_q |u_p - u_q|^2 (u^i_p - u^i_q) w_pq / h^n`` on Omega."""
    u = _check_shape(lat, u)
    om = lat.omega_idx
    out = np.empty((om.size, u.shape[1]))
    for sl in _chunks(om.size):
        diff = u[om[sl]][:, None, :] - u[None, :, :]
        sq = np.sum(diff * diff, axis=-1) * lat.w[sl]
        out[sl] = np.einsum("pq,pqk->pk", sq, diff)
    return 0.25 * lat.params.gamma_ns * out / lat.cell_volume


def decomposition_residual(lat: Lattice, u) -> dict:
    """Check ``lambda u^i = sum_j Omega^{ij} . d_s u^j + T^i`` on Omega (pair terms only).

    The identity is algebraic given ``|u| = 1``; a non-unit field shows up as
    an O(1) residual, which is reported rather than raised.
    """
    u = _check_shape(lat, u)
    d = u.shape[1]
    om = lat.omega_idx
    grads = s_gradients(lat, u)
    gd = dict(enumerate(grads))
    lam = np.zeros(om.size)
    for g in grads:
        lam += odot(g, g)[om]
    T = t_field(lat, u)
    res = np.empty((om.size, d))
    for i in range(d):
        acc = np.zeros(om.size)
        for j in range(d):
            if i != j:
                acc += odot(omega_field(lat, u, i, j, gd), grads[j])[om]
        res[:, i] = lam * u[om, i] - acc - T[:, i]
    sup = float(np.max(np.abs(res)))
    lam_sup = float(np.max(lam))
    return {
        "residual": sup,
        "relative": sup / (1.0 + lam_sup),
        "lambda_sup": lam_sup,
        "unit_defect": float(np.max(np.abs(np.linalg.norm(u, axis=1) - 1.0))),
    }


def conservation_residual(lat: Lattice, u, phi, i: int, j: int, tail: bool = True) -> tuple[float, float]:
    """Pair ``div_s Omega^{ij}`` with a scalar test function ``phi``.

    Returns ``(pairing, cross)``: ``sum_p h^n (Omega^{ij} . d_s phi)(p)`` and
    ``<(-Delta)^s u^j, u^i phi> - <(-Delta)^s u^i, u^j phi>``. With ``tail`` the
    exterior beyond the lattice box enters both as a virtual node.
    """
    u = _check_shape(lat, u)
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.shape[0] != lat.N:
        raise ConfigError("test function does not match lattice")
    _check_support(lat, phi[:, None])
    if i == j:
        return 0.0, 0.0
    Om = omega_field(lat, u, i, j)
    dphi = s_gradient(lat, phi)
    pairing = integrate_nodes(lat, odot(Om, dphi))
    ui, uj = u[:, i], u[:, j]
    cross = frac_laplacian_weak(lat, uj, ui * phi, tail=False) - frac_laplacian_weak(lat, ui, uj * phi, tail=False)
    if _use_tail(lat, u, tail):
        om = lat.omega_idx
        t = lat.tail
        g = lat.params.gamma_ns
        pairing += g * float(np.sum(phi[om] * (u[om, j] * t.m[:, i] - u[om, i] * t.m[:, j])))
        cross += g * float(
            np.sum((t.tau * u[om, j] - t.m[:, j]) * ui[om] * phi[om] - (t.tau * u[om, i] - t.m[:, i]) * uj[om] * phi[om])
        )
    return pairing, cross


def conservation_sweep(lat: Lattice, u, tail: bool = True) -> float:
    """Max over single-node indicators in Omega and ``i < j`` of the conservation pairing.

    Evaluated in closed form: for ``phi = 1_{x_m}`` the pairing collapses to
    ``h^n (u^i (-Delta)^s u^j - u^j (-Delta)^s u^i)`` at ``m``.
    """
    u = _check_shape(lat, u)
    lap = frac_laplacian_strong(lat, u, tail=tail)
    uo = u[lat.omega_idx]
    d = u.shape[1]
    best = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            v = lat.cell_volume * (uo[:, i] * lap[:, j] - uo[:, j] * lap[:, i])
            best = max(best, float(np.max(np.abs(v))))
    return best


def frac_perimeter(lat: Lattice, E_mask) -> float:
    """Fractional 2s-perimeter of ``E`` relative to Omega.

    Sum of the kernel over ordered pairs ``(x in E, y in E^c)`` in the three
    classes ``(Omega, Omega)``, ``(Omega^c, Omega)`` and ``(Omega, Omega^c)``.
    """
    E = np.asarray(E_mask, dtype=bool).reshape(-1)
    if E.shape[0] != lat.N:
        raise ConfigError("set mask does not match lattice")
    om, ex = lat.omega_idx, lat.ext_idx
    Eo = E[om]
    # (E in Omega) x (E^c anywhere)
    total = float(np.sum(lat.w[Eo][:, ~E]))
    # (E outside Omega) x (E^c in Omega): columns of the exterior block
    Ex = E[ex]
    total += float(np.sum(lat.w[~Eo][:, ex[Ex]]))
    return total
