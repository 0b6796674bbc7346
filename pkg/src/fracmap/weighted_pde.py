"""Finite differences for ``div(|z|^a grad w) = 0`` on boxes in R^{n+1}.

Nodes sit at ``(i h_x, j h_z)``; z-faces are at ``(j + 1/2) h_z`` and never
touch ``z = 0``, so their weights ``|z|^a`` stay finite. Faces normal to x lie
on node levels; they carry the exact average of ``|z|^a`` over the node's
z-cell, which is finite for every ``a > -1`` even on the level ``z = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .constants import FracParams
from .errors import ConfigError, NumericalError


@dataclass(eq=False)
class WeightedGrid:
    params: FracParams
    hx: float
    hz: float
    nx: int  # x nodes at i hx, |i| <= nx per axis
    nz: int  # z nodes at j hz, -nz <= j <= nz (symmetric) or 0 <= j <= nz
    symmetric: bool = True
    center: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.center.size == 0:
            self.center = np.zeros(self.params.n)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def a(self) -> float:
        return self.params.a

    @property
    def z(self) -> np.ndarray:
        lo = -self.nz if self.symmetric else 0
        return np.arange(lo, self.nz + 1) * self.hz

    @property
    def x_axis(self) -> np.ndarray:
        return np.arange(-self.nx, self.nx + 1) * self.hx

    @property
    def shape(self) -> tuple:
        return (2 * self.nx + 1,) * self.n + (self.z.size,)

    def coords(self):
        """``(x, z)`` arrays of shapes ``shape + (n,)`` and ``shape``."""
        axes = [self.x_axis + c for c in self.center] + [self.z]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh[:-1], axis=-1), mesh[-1]

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for ax in range(self.n + 1):
            sl = [slice(None)] * (self.n + 1)
            sl[ax] = 0
            m[tuple(sl)] = True
            sl[ax] = -1
            m[tuple(sl)] = True
        return m

    def weight_integral(self, lo, hi):
        """``int_lo^hi |z|^a dz`` for ``lo <= hi`` (either sign)."""
        a1 = 1.0 + self.a
        F = lambda t: np.sign(t) * np.abs(t) ** a1 / a1
        return F(np.asarray(hi, dtype=float)) - F(np.asarray(lo, dtype=float))

    def z_face_weights(self) -> np.ndarray:
        zf = 0.5 * (self.z[1:] + self.z[:-1])
        return np.abs(zf) ** self.a

    def x_face_weights(self) -> np.ndarray:
        """Average of ``|z|^a`` over each node's z-cell (clipped to the box)."""
        z = self.z
        lo = np.maximum(z - 0.5 * self.hz, z[0])
        hi = np.minimum(z + 0.5 * self.hz, z[-1])
        return self.weight_integral(lo, hi) / self.hz


def build_weighted_grid(
    params: FracParams,
    half_width: float,
    height: float,
    hx: float,
    hz: float | None = None,
    symmetric: bool = True,
    center=None,
) -> WeightedGrid:
    """Box ``[-half_width, half_width]^n x [-height, height]`` (or ``[0, height]``)."""
    hz = hx if hz is None else hz
    nx = int(round(half_width / hx))
    nz = int(round(height / hz))
    if nx < 1 or nz < 1:
        raise ConfigError("weighted grid needs at least one interior node per axis")
    if abs(nx * hx - half_width) > 1e-9 * half_width or abs(nz * hz - height) > 1e-9 * height:
        raise ConfigError("box sizes must be integer multiples of the spacings")
    c = np.zeros(params.n) if center is None else np.asarray(center, dtype=float).reshape(params.n)
    return WeightedGrid(params, float(hx), float(hz), nx, nz, symmetric, c)


def _face_coefficients(grid: WeightedGrid):
    """Conductances per axis: arrays of the face shapes (``np.diff`` along that axis)."""
    n = grid.n
    vol = grid.hx**n * grid.hz
    coefs = []
    wx = grid.x_face_weights()
    for ax in range(n):
        shp = list(grid.shape)
        shp[ax] -= 1
        c = np.broadcast_to(wx * vol / grid.hx**2, tuple(shp))
        coefs.append(c)
    wz = grid.z_face_weights()
    shp = list(grid.shape)
    shp[-1] -= 1
    coefs.append(np.broadcast_to(wz * vol / grid.hz**2, tuple(shp)))
    return coefs


def assemble(grid: WeightedGrid):
    """Sparse stiffness matrix of the face-weighted energy on all nodes."""
    N = int(np.prod(grid.shape))
    idx = np.arange(N).reshape(grid.shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    for ax, c in enumerate(_face_coefficients(grid)):
        lo = [slice(None)] * (grid.n + 1)
        hi = [slice(None)] * (grid.n + 1)
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        p = idx[tuple(lo)].reshape(-1)
        q = idx[tuple(hi)].reshape(-1)
        cv = np.asarray(c).reshape(-1)
        rows += [p, q]
        cols += [q, p]
        vals += [-cv, -cv]
        np.add.at(diag, p, cv)
        np.add.at(diag, q, cv)
    rows.append(np.arange(N))
    cols.append(np.arange(N))
    vals.append(diag)
    K = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    return K


def grid_energy(grid: WeightedGrid, w, region=None) -> float:
    """``(delta_s / 2) sum`` of face conductance times squared differences.

    ``region(x, z) -> bool`` selects faces by their midpoints.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == grid.n + 1:
        w = w[..., None]
    total = 0.0
    x, z = grid.coords()
    for ax, c in enumerate(_face_coefficients(grid)):
        d = np.diff(w, axis=ax)
        e = np.sum(d * d, axis=-1) * c
        if region is not None:
            lo = [slice(None)] * (grid.n + 1)
            lo[ax] = slice(0, -1)
            xm, zm = x[tuple(lo)].copy(), z[tuple(lo)].copy()
            if ax < grid.n:
                xm[..., ax] += 0.5 * grid.hx
            else:
                zm = zm + 0.5 * grid.hz
            e = e[region(xm, zm)]
        total += float(e.sum())
    return 0.5 * grid.params.delta_s * total


@dataclass
class WeightedSolution:
    grid: WeightedGrid
    values: np.ndarray  # shape + (d,)
    iterations: list
    residual: float
    residual_history: list


def _boundary_values(grid: WeightedGrid, boundary) -> np.ndarray:
    if callable(boundary):
        x, z = grid.coords()
        vals = np.asarray(boundary(x.reshape(-1, grid.n), z.reshape(-1)), dtype=float)
        vals = vals.reshape(grid.shape + (-1,))
    else:
        vals = np.asarray(boundary, dtype=float)
        if vals.shape[: grid.n + 1] != grid.shape:
            raise ConfigError("boundary array does not match the weighted grid")
        if vals.ndim == grid.n + 1:
            vals = vals[..., None]
    bm = grid.boundary_mask()
    if not np.all(np.isfinite(vals[bm])):
        raise ConfigError("boundary values must be finite")
    return vals


def solve_weighted_dirichlet(grid: WeightedGrid, boundary, rtol: float = 1e-10, max_iter: int | None = None) -> WeightedSolution:
    """Minimize the face-weighted energy with the boundary nodes fixed (Jacobi-preconditioned CG).

    ``boundary`` is an array over all nodes (only boundary entries are read) or a
    callable ``(x, z) -> values``.
    """
    vals = _boundary_values(grid, boundary)
    K = assemble(grid)
    bm = grid.boundary_mask().reshape(-1)
    inner = np.nonzero(~bm)[0]
    bnd = np.nonzero(bm)[0]
    A = K[inner][:, inner].tocsr()
    Kb = K[inner][:, bnd]
    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda r: dinv * r)
    max_iter = 100 * max(inner.size, 1) if max_iter is None else max_iter
    flat = vals.reshape(-1, vals.shape[-1]).copy()
    its, hist_all, worst = [], [], 0.0
    for c in range(flat.shape[1]):
        b = -Kb @ flat[bnd, c]
        hist = []
        count = [0]

        def cb(xk):
            count[0] += 1
            hist.append(float(np.linalg.norm(b - A @ xk)))

        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            x = np.zeros(inner.size)
        else:
            x, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=max_iter, M=M, callback=cb)
            if info != 0:
                res = float(np.linalg.norm(b - A @ x) / bnorm)
                raise NumericalError(
                    "weighted CG did not converge",
                    {"iterations": count[0], "relative_residual": res, "component": c},
                )
        res = float(np.linalg.norm(b - A @ x) / bnorm) if bnorm > 0 else 0.0
        worst = max(worst, res)
        flat[inner, c] = x
        its.append(count[0])
        hist_all.append(hist)
    return WeightedSolution(grid, flat.reshape(vals.shape), its, worst, hist_all)


def check_max_principle(sol: WeightedSolution, tol: float = 1e-12) -> dict:
    """Interior values of each component within the boundary range."""
    bm = sol.grid.boundary_mask()
    v = sol.values
    out = {"pass": True, "components": []}
    for c in range(v.shape[-1]):
        vb = v[..., c][bm]
        vi = v[..., c][~bm]
        lo, hi = float(vb.min()), float(vb.max())
        excess = max(0.0, lo - float(vi.min()), float(vi.max()) - hi) if vi.size else 0.0
        ok = excess <= tol * max(1.0, abs(lo), abs(hi))
        out["components"].append({"boundary_min": lo, "boundary_max": hi, "excess": excess, "pass": ok})
        out["pass"] &= ok
    return out


def z_symmetry_defect(sol: WeightedSolution) -> float:
    if not sol.grid.symmetric:
        raise ConfigError("grid is not symmetric in z")
    v = sol.values
    return float(np.max(np.abs(v - np.flip(v, axis=sol.grid.n))))


def check_energy_monotonicity(sol: WeightedSolution, radii, tol: float = 0.02) -> dict:
    """``r^{-(n+2-2s)} int_{B_r} |z|^a |grad w|^2`` at the grid centre; relative negative increments."""
    grid = sol.grid
    p = grid.params
    if p.s < 0.5 and not grid.symmetric:
        raise ConfigError("for s < 1/2 the centred monotonicity needs a z-symmetric grid")
    radii = np.asarray(radii, dtype=float)
    c = grid.center

    def ball(r):
        return lambda x, z: np.sum((x - c) ** 2, axis=-1) + z * z <= r * r * (1 + 1e-12)

    # grid_energy carries delta_s/2; undo it to get the plain weighted integral
    scale = 2.0 / p.delta_s
    ratios = np.array([scale * grid_energy(grid, sol.values, ball(r)) / r ** (p.n + 2 - 2 * p.s) for r in radii])
    inc = np.diff(ratios)
    ref = max(float(np.max(np.abs(ratios))), 1e-300)
    worst = float(max(0.0, -inc.min() / ref)) if inc.size else 0.0
    return {"radii": radii.tolist(), "ratios": ratios.tolist(), "max_relative_decrease": worst, "pass": worst <= tol}


def pde_residual(v, window=None) -> float:
    """Sup of the discrete ``-z^{-a} div(z^a grad v)`` over interior sample points of an extension field.

    Uses the same edge weights as the extension's weighted energy; the flux
    balance at each node is divided by its dual-cell weight. ``window`` =
    ``(x_half_width, z_lo, z_hi)`` restricts the sup to a fixed physical region.
    """
    grid = v.grid
    lat = grid.lattice
    n, h = lat.n, lat.h
    V = v.values  # (M + 1, *x_shape, d)
    zz = grid.zz
    M = grid.levels
    dz = np.diff(zz)
    wv = grid.weight_integral(zz[:-1], zz[1:]) / dz**2  # per h^n
    wh = grid.weight_integral(grid.bounds[:-1], grid.bounds[1:]) / h**2
    zb = (-1,) + (1,) * n
    core = (slice(1, M),) + (slice(1, -1),) * n
    c = V[core]
    flux = (V[(slice(2, M + 1),) + (slice(1, -1),) * n] - c) * wv[1:].reshape(zb + (1,)) + (
        V[(slice(0, M - 1),) + (slice(1, -1),) * n] - c
    ) * wv[:-1].reshape(zb + (1,))
    for l in range(n):
        up = [slice(1, M)] + [slice(1, -1)] * n
        dn = [slice(1, M)] + [slice(1, -1)] * n
        up[l + 1] = slice(2, None)
        dn[l + 1] = slice(0, -2)
        flux = flux + (V[tuple(up)] + V[tuple(dn)] - 2 * c) * wh[:-1].reshape(zb + (1,))
    dual = grid.weight_integral(0.5 * (zz[:-2] + zz[1:-1]), 0.5 * (zz[1:-1] + zz[2:]))
    res = np.sqrt(np.sum(flux**2, axis=-1)) / dual.reshape(zb)
    keep = np.ones(res.shape, dtype=bool)
    if window is not None:
        xw, z_lo, z_hi = window
        X = grid.x_coords[(slice(1, -1),) * n]
        zk = grid.z[:-1].reshape(zb)
        keep = (np.max(np.abs(X), axis=-1)[None] <= xw + 1e-12) & (zk >= z_lo) & (zk <= z_hi)
    if not np.any(keep):
        raise ConfigError("residual window contains no interior sample point")
    return float(np.max(res[keep]))
