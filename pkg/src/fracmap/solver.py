"""Sphere-constrained minimization of the lattice energy and the linear s-harmonic solve."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import linalg as spla

from .errors import ConfigError, NumericalError
from .lattice import Lattice, as_field, check_unit
from .nonlocal_ops import energy, energy_increment, frac_laplacian_strong, tangential
from .extension import lattice_gradient

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    max_iters: int = 20000
    tol_tangential: float = 1e-6
    initial_step: float = 1.0  # in units of 1 / max diagonal of the Laplacian
    backtrack_factor: float = 0.5
    armijo_c: float = 1e-4
    seed: int = 0
    bb_steps: bool = True  # Barzilai-Borwein trial step, still accepted only through Armijo
    max_backtracks: int = 60

    def __post_init__(self):
        if self.max_iters < 0 or not self.tol_tangential > 0 or not self.initial_step > 0:
            raise ConfigError("max_iters >= 0, tol_tangential > 0 and initial_step > 0 required")
        if not 0 < self.backtrack_factor < 1 or not 0 < self.armijo_c < 1:
            raise ConfigError("backtrack_factor and armijo_c must lie in (0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    iterations: int = 0
    energy: float = 0.0
    energy_history: list = field(default_factory=list)
    tangential_residual: float = 0.0
    accepted: int = 0
    rejected: int = 0
    converged: bool = False
    message: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _diag(lat: Lattice) -> np.ndarray:
    """Diagonal of the discrete Laplacian per Omega node (a curvature bound)."""
    d = lat.w.sum(axis=1)
    if lat.tail is not None:
        d = d + lat.tail.tau
    return lat.params.gamma_ns * d / lat.cell_volume


def _tangent_gradient(lat: Lattice, u: np.ndarray):
    lap = frac_laplacian_strong(lat, u)
    g = tangential(u[lat.omega_idx], lap)
    return lap, g


def minimize(u0, lat: Lattice, config: SolverConfig | None = None):
    """Projected gradient descent with renormalization and Armijo backtracking.

    Exterior nodes keep their values. Returns ``(u, SolveReport)``. For
    ``d = 1`` the sphere is ``{-1, 1}`` and a greedy sign-flip descent is used.
    """
    config = config or SolverConfig()
    u = as_field(u0).copy()
    if u.shape != (lat.N, lat.d):
        raise ConfigError(f"initial field must have shape {(lat.N, lat.d)}")
    check_unit(u)
    u[lat.omega_idx] /= np.linalg.norm(u[lat.omega_idx], axis=1)[:, None]
    if lat.d == 1:
        return _flip_descent(u, lat, config)

    om = lat.omega_idx
    hn = lat.cell_volume
    rep = SolveReport()
    E = energy(lat, u)
    rep.energy_history.append(E)
    tau0 = config.initial_step / float(np.max(_diag(lat)))
    tau = tau0
    lap, g = _tangent_gradient(lat, u)
    res = float(np.max(np.linalg.norm(g, axis=1)))
    prev = None
    while True:
        if res <= config.tol_tangential:
            rep.converged = True
            rep.message = "tangential residual below tolerance"
            break
        if rep.iterations >= config.max_iters:
            rep.message = "maximum iterations reached"
            break
        rep.iterations += 1
        if config.bb_steps and prev is not None:
            du, dg = prev
            den = float(np.sum(du * dg))
            if den > 0:
                tau = min(float(np.sum(du * du)) / den, 1e3 * tau0)
            else:
                tau = tau0
        gnorm2 = hn * float(np.sum(g * g))
        accepted = False
        for _ in range(config.max_backtracks):
            trial = u[om] - tau * g
            nrm = np.linalg.norm(trial, axis=1)
            if np.min(nrm) < 1e-8:
                rep.rejected += 1
                tau *= 0.5
                continue
            delta = np.zeros_like(u)
            delta[om] = trial / nrm[:, None] - u[om]
            dE = energy_increment(lat, u, delta, lap=lap)
            # directional derivative of the retraction curve at 0 is -g
            if dE <= -config.armijo_c * tau * gnorm2 and dE <= 0.0:
                accepted = True
                break
            rep.rejected += 1
            tau *= config.backtrack_factor
        if not accepted:
            rep.message = "step size underflow"
            rep.tangential_residual = res
            rep.energy = E
            raise NumericalError("line search stalled", rep.as_dict())
        u_old_om = u[om].copy()
        u = u + delta
        E = E + dE
        if E > rep.energy_history[-1]:
            raise NumericalError("energy increased on an accepted step", rep.as_dict())
        rep.energy_history.append(E)
        rep.accepted += 1
        g_old = g
        lap, g = _tangent_gradient(lat, u)
        prev = (u[om] - u_old_om, g - g_old)
        res = float(np.max(np.linalg.norm(g, axis=1)))
    # the history is accumulated from exact increments; report a fresh evaluation too
    rep.energy = energy(lat, u)
    rep.tangential_residual = res
    log.info("minimize: %s after %d iterations, residual %.3e", rep.message, rep.iterations, res)
    return u, rep


def _flip_descent(u: np.ndarray, lat: Lattice, config: SolverConfig):
    """Greedy single-node sign flips while one strictly lowers the energy."""
    om = lat.omega_idx
    hn = lat.cell_volume
    g = lat.params.gamma_ns
    self_term = 2.0 * g * (lat.w.sum(axis=1) + (lat.tail.tau if lat.tail is not None else 0.0))
    rep = SolveReport()
    E = energy(lat, u)
    rep.energy_history.append(E)
    while True:
        lap = frac_laplacian_strong(lat, u)[:, 0]
        dE = -2.0 * u[om, 0] * hn * lap + self_term
        k = int(np.argmin(dE))
        if dE[k] >= -1e-14 * max(abs(E), 1e-300):
            rep.converged = True
            rep.message = "no improving sign flip"
            break
        if rep.iterations >= config.max_iters:
            rep.message = "maximum iterations reached"
            break
        rep.iterations += 1
        u[om[k]] = -u[om[k]]
        E = E + float(dE[k])
        rep.energy_history.append(E)
        rep.accepted += 1
    rep.energy = energy(lat, u)
    rep.energy_history[-1] = rep.energy
    rep.tangential_residual = 0.0
    return u, rep


def _linear_system(lat: Lattice):
    om, ex = lat.omega_idx, lat.ext_idx
    g = lat.params.gamma_ns / lat.cell_volume
    W_in = lat.w[:, om]
    A = -g * W_in
    A[np.arange(om.size), np.arange(om.size)] += _diag(lat)
    return A, g * lat.w[:, ex]


def solve_linear(u0, lat: Lattice, rhs=None, config: SolverConfig | None = None, rtol: float = 1e-10):
    """Solve ``(-Delta)^s_h w = rhs`` on Omega with ``w = u0`` outside (scalar fields).

    Returns ``(w, info)`` with the CG iteration count and relative residual.
    """
    u0 = as_field(u0)
    if u0.shape[1] != 1:
        raise ConfigError("solve_linear takes a scalar field")
    if lat.tail is not None and lat.tail.m.shape[1] != 1:
        raise ConfigError("lattice tail has the wrong target dimension for a scalar solve")
    om, ex = lat.omega_idx, lat.ext_idx
    rhs = np.zeros(om.size) if rhs is None else np.asarray(rhs, dtype=float).reshape(-1)
    if rhs.size == lat.N:
        rhs = rhs[om]
    if rhs.size != om.size:
        raise ConfigError("rhs must be given on Omega nodes or on all nodes")
    A, B = _linear_system(lat)
    b = rhs + B @ u0[ex, 0]
    if lat.tail is not None:
        b = b + lat.params.gamma_ns * lat.tail.m[:, 0] / lat.cell_volume
    dinv = 1.0 / np.diag(A)
    M = spla.LinearOperator(A.shape, matvec=lambda r: dinv * r)
    count = [0]
    bnorm = float(np.linalg.norm(b))
    w = u0[:, 0].copy()
    if bnorm == 0.0:
        w[om] = 0.0
        return w, {"iterations": 0, "relative_residual": 0.0}
    max_iters = (config.max_iters if config else 100 * om.size) or 100 * om.size
    x, info = spla.cg(A, b, x0=u0[om, 0].copy(), rtol=rtol, atol=0.0, maxiter=max_iters, M=M,
                      callback=lambda xk: count.__setitem__(0, count[0] + 1))
    res = float(np.linalg.norm(A @ x - b) / bnorm)
    if info != 0:
        raise NumericalError("CG did not converge", {"iterations": count[0], "relative_residual": res})
    w[om] = x
    return w, {"iterations": count[0], "relative_residual": res}


def stationarity_residual(lat: Lattice, u) -> float:
    """Max over single-node coordinate fields ``X = e_l 1_{x_m}`` of the inner variation.

    Uses ``-<(-Delta)^s_h u, X . P_u grad_h u>``, where ``P_u`` projects onto
    the tangent space (the continuum ``X . grad u`` is tangent for unit maps),
    normalized by ``|X|_inf * energy(u)``.
    """
    u = as_field(u)
    E = energy(lat, u)
    if E <= 0.0:
        return 0.0
    om = lat.omega_idx
    lap = frac_laplacian_strong(lat, u)
    grad = lattice_gradient(lat, u)[om]  # (N_omega, d, n)
    uo = u[om]
    grad_t = grad - uo[:, :, None] * np.einsum("pc,pcj->pj", uo, grad)[:, None, :]
    vals = lat.cell_volume * np.abs(np.einsum("pc,pcj->pj", lap, grad_t))
    return float(np.max(vals)) / E
