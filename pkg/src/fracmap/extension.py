"""Poisson-kernel extension to the upper half-space and weighted-energy densities.

The extension is sampled on a :class:`HalfSpaceGrid`: the lattice nodes of a
centred target box times geometrically graded z-cells. Level 0 is the trace
``z = 0``; level ``k >= 1`` sits at the midpoint ``z_k`` of the cell
``[b_{k-1}, b_k]``. The kernel weight of a source node is the exact kernel
mass of its lattice cell; the mass falling outside the lattice box goes to the
exterior data, so each (node, level) row is a convex combination with unit
total mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize, special, stats
from scipy.signal import fftconvolve

from .errors import ConfigError
from .lattice import Lattice, _exterior_callable, as_field, exterior_shells
from .nonlocal_ops import frac_laplacian_strong, local_energy


def poisson_kernel(x, z, n: int, s: float, sigma: float | None = None):
    """``sigma_{n,s} z^{2s} / (|x|^2 + z^2)^{(n+2s)/2}``; ``x`` has trailing axis ``n``."""
    from .constants import sigma_ns

    if sigma is None:
        sigma = sigma_ns(n, s)
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1) if x.ndim and x.shape[-1] == n else x * x
    return sigma * z ** (2 * s) * (r2 + z * z) ** (-(n + 2 * s) / 2)


def _mixture_nodes(s: float, step: float = 0.05):
    """Quadrature for the Gamma(s, 1) law on a log scale, weights summing to 1.

    The kernel is a scale mixture of Gaussians: variance ``z^2 / (2 g)`` with
    ``g ~ Gamma(s, 1)``; this is what makes cell masses separable per node.
    """
    t_lo = (math.log(1e-18) + math.lgamma(s)) / s
    t = np.arange(t_lo, math.log(80.0), step)
    g = np.exp(t)
    w = np.exp(s * t - g - math.lgamma(s))
    return g, w / w.sum()


def _axis_masses(R: int, h: float, std: np.ndarray) -> np.ndarray:
    """Gaussian masses of the cells ``[(j - 1/2) h, (j + 1/2) h]``, ``|j| <= R``; shape ``(Q, 2R+1)``."""
    j = np.abs(np.arange(-R, R + 1))
    lo = (j - 0.5) * h
    hi = (j + 0.5) * h
    sd = std[:, None]
    # upper-tail differences keep far cells accurate
    out = special.ndtr(-np.maximum(lo, 0.0) / sd) - special.ndtr(-hi / sd)
    centre = j == 0
    out[:, centre] = special.ndtr(0.5 * h / sd) - special.ndtr(-0.5 * h / sd)
    return out


def cell_mass_table(n: int, s: float, h: float, R: int, z: float) -> np.ndarray:
    """Kernel mass of every lattice cell at integer offsets ``[-R, R]^n`` for height ``z``."""
    if n == 1:
        nu = 2 * s
        c = math.sqrt(nu) / z
        j = np.abs(np.arange(-R, R + 1))
        out = stats.t.sf(c * np.maximum(j - 0.5, 0.0) * h, nu) - stats.t.sf(c * (j + 0.5) * h, nu)
        out[j == 0] = 1.0 - 2.0 * stats.t.sf(c * 0.5 * h, nu)
        return out
    g, w = _mixture_nodes(s)
    A = _axis_masses(R, h, z / np.sqrt(2.0 * g))
    if n == 2:
        return (A * w[:, None]).T @ A
    letters = "abcdefgh"[:n]
    expr = "q," + ",".join("q" + c for c in letters) + "->" + letters
    return np.einsum(expr, w, *([A] * n))


def box_tail_mass(x: np.ndarray, B: float, n: int, s: float, z: float) -> np.ndarray:
    """Kernel mass outside ``[-B, B]^n`` for targets ``x`` (shape ``(P, n)``) at height ``z``."""
    x = np.atleast_2d(x)
    if n == 1:
        nu = 2 * s
        c = math.sqrt(nu) / z
        return stats.t.sf(c * (B - x[:, 0]), nu) + stats.t.sf(c * (B + x[:, 0]), nu)
    g, w = _mixture_nodes(s)
    sd = z / np.sqrt(2.0 * g)
    log_in = np.zeros((x.shape[0], g.size))
    for k in range(n):
        # grid targets repeat coordinates along each axis
        xs, inv = np.unique(x[:, k], return_inverse=True)
        with np.errstate(divide="ignore"):
            out_k = special.ndtr(-(B - xs)[:, None] / sd) + special.ndtr(-(B + xs)[:, None] / sd)
            log_in += np.log1p(-out_k)[inv]
    return -np.expm1(log_in) @ w


@dataclass(eq=False)
class HalfSpaceGrid:
    lattice: Lattice
    bounds: np.ndarray  # b_0 = 0 < b_1 < ... < b_M
    mt: int  # target box half-width in nodes

    @property
    def levels(self) -> int:
        return self.bounds.size - 1

    @property
    def z(self) -> np.ndarray:
        """Cell midpoints ``z_1 .. z_M``."""
        return 0.5 * (self.bounds[1:] + self.bounds[:-1])

    @property
    def zz(self) -> np.ndarray:
        """All sample heights including the trace: ``[0, z_1, ..., z_M]``."""
        return np.concatenate([[0.0], self.z])

    @property
    def z_max(self) -> float:
        return float(self.bounds[-1])

    @property
    def x_shape(self) -> tuple:
        return (2 * self.mt + 1,) * self.lattice.n

    @property
    def x_extent(self) -> float:
        return self.mt * self.lattice.h

    @property
    def target_idx(self) -> np.ndarray:
        lat = self.lattice
        ax = np.arange(lat.m - self.mt, lat.m + self.mt + 1)
        sub = np.ix_(*([ax] * lat.n))
        return np.arange(lat.N).reshape(lat.grid_shape)[sub].reshape(-1)

    @property
    def x_coords(self) -> np.ndarray:
        return self.lattice.coords[self.target_idx].reshape(self.x_shape + (self.lattice.n,))

    def weight_integral(self, lo, hi) -> np.ndarray:
        """``int_lo^hi z^a dz``."""
        a1 = 2.0 - 2.0 * self.lattice.params.s
        return (np.asarray(hi) ** a1 - np.asarray(lo) ** a1) / a1

    def describe(self) -> dict:
        return {"levels": self.levels, "z_max": self.z_max, "first_width": float(self.bounds[1]), "x_extent": self.x_extent}


def build_halfspace_grid(
    lat: Lattice,
    levels: int = 48,
    z_max: float | None = None,
    first_width: float | None = None,
    ratio: float | None = None,
    x_extent: float | None = None,
) -> HalfSpaceGrid:
    """Geometric z-cells with first width ``first_width`` (default ``h/4``).

    With ``ratio`` unset, the ratio is solved so the last bound equals ``z_max``
    (default ``L_ext``); uniform cells are used if ``levels * first_width``
    already reaches ``z_max``. Targets are the nodes with ``|x|_inf <= x_extent``.
    """
    if levels < 4:
        raise ConfigError("need at least 4 z-levels")
    h = lat.h
    z_max = lat.L_ext if z_max is None else float(z_max)
    first_width = 0.25 * h if first_width is None else float(first_width)
    if not (z_max > 0 and first_width > 0):
        raise ConfigError("z_max and first_width must be positive")
    if ratio is None:
        if levels * first_width >= z_max:
            widths = np.full(levels, z_max / levels)
        else:
            f = lambda r: first_width * (r**levels - 1.0) / (r - 1.0) - z_max
            ratio = optimize.brentq(f, 1.0 + 1e-12, 10.0, xtol=1e-15)
            widths = first_width * ratio ** np.arange(levels)
    else:
        if ratio < 1.0:
            raise ConfigError("z ratio must be >= 1")
        widths = first_width * ratio ** np.arange(levels)
    bounds = np.concatenate([[0.0], np.cumsum(widths)])
    if x_extent is None:
        mt = lat.m
    else:
        mt = int(math.ceil(x_extent / h - 1e-9))
        if mt > lat.m or mt < 1:
            raise ConfigError("x_extent must lie in [h, L_ext]")
    return HalfSpaceGrid(lattice=lat, bounds=bounds, mt=mt)


@dataclass(eq=False)
class ExtensionField:
    """Values on ``[trace] + levels``: shape ``(M + 1, *x_shape, d)``."""

    grid: HalfSpaceGrid
    values: np.ndarray

    @classmethod
    def from_function(cls, grid: HalfSpaceGrid, func):
        """Sample ``func(x, z)`` (``x`` of shape ``(P, n)``, ``z`` of shape ``(P,)``)."""
        x = grid.x_coords.reshape(-1, grid.lattice.n)
        vals = []
        for zk in grid.zz:
            vals.append(np.asarray(func(x, np.full(x.shape[0], zk)), dtype=float).reshape(x.shape[0], -1))
        v = np.stack(vals).reshape((grid.levels + 1,) + grid.x_shape + (-1,))
        return cls(grid, v)


def extend(u, grid: HalfSpaceGrid, n_shells: int = 10, shell_q: int = 4) -> ExtensionField:
    """Poisson extension of the lattice field ``u`` (exterior handled by the lattice tail mode)."""
    lat = grid.lattice
    u = as_field(u)
    if u.shape[0] != lat.N:
        raise ConfigError("field does not match lattice")
    n, s, h, m, mt = lat.n, lat.params.s, lat.h, lat.m, grid.mt
    d = u.shape[1]
    ug = lat.to_grid(u)
    ones = np.ones(lat.grid_shape)
    xt = grid.x_coords.reshape(-1, n)
    B = lat.box_halfwidth
    out = np.empty((grid.levels + 1,) + grid.x_shape + (d,))
    out[0] = ug[(slice(m - mt, m + mt + 1),) * n]

    ext_func = None
    if lat.tail_mode == "constant-exterior":
        c = np.asarray(lat.exterior, dtype=float).reshape(-1)
    elif lat.tail_mode == "exterior-function":
        ext_func = _exterior_callable(lat.exterior, lat.d)
        pts, vols = exterior_shells(n, B, q=shell_q, n_shells=n_shells)
        fvals = np.asarray(ext_func(pts), dtype=float).reshape(pts.shape[0], -1)
        # squared distances do not depend on z: compute once per target chunk
        chunks = list(_row_chunks(xt.shape[0], pts.shape[0]))
        r2 = [np.maximum(np.sum(xt[sl] ** 2, axis=1)[:, None] + np.sum(pts**2, axis=1)[None, :] - 2.0 * xt[sl] @ pts.T, 0.0) for sl in chunks]
        expo = -(n + 2 * s) / 2

    for k, zk in enumerate(grid.z, start=1):
        T = cell_mass_table(n, s, h, m + mt, zk)
        mass = fftconvolve(ones, T, mode="valid").reshape(-1)
        acc = np.stack([fftconvolve(ug[..., c_], T, mode="valid").reshape(-1) for c_ in range(d)], axis=1)
        tail = box_tail_mass(xt, B, n, s, zk)
        if lat.tail_mode == "constant-exterior":
            acc += tail[:, None] * c[None, :]
        elif ext_func is not None:
            tv = np.empty_like(acc)
            for sl, d2 in zip(chunks, r2):
                # the constant and z^{2s} cancel in the normalized average
                K = np.power(d2 + zk * zk, expo) * vols[None, :]
                tv[sl] = (K @ fvals) / K.sum(axis=1)[:, None]
            acc += tail[:, None] * tv
        # enforce unit total mass per row
        out[k] = (acc / (mass + tail)[:, None]).reshape(grid.x_shape + (d,))
    return ExtensionField(grid, out)


def _row_chunks(rows, cols, budget=4_000_000):
    step = max(1, budget // max(cols, 1))
    for start in range(0, rows, step):
        yield slice(start, min(rows, start + step))


# ---------------------------------------------------------------------------
# weighted energy on edges


@dataclass
class EdgeEnergies:
    """Per-edge energy contributions (without the ``delta_s / 2`` factor) and midpoints.

    ``vertical[k]`` joins levels ``k`` and ``k + 1``; ``horizontal[l][k]`` joins
    neighbours along axis ``l`` at level ``k + 1``.
    """

    vertical: np.ndarray  # (M, *x_shape)
    vertical_z: np.ndarray  # (M,)
    horizontal: list  # n arrays (M, *x_shape with axis l shortened by 1)
    horizontal_z: np.ndarray  # (M,)
    factor: float


def edge_energies(v: ExtensionField) -> EdgeEnergies:
    grid = v.grid
    lat = grid.lattice
    h, n = lat.h, lat.n
    V = v.values
    zz = grid.zz
    dz = np.diff(zz)
    wv = grid.weight_integral(zz[:-1], zz[1:])
    shape_b = (-1,) + (1,) * n
    dV = np.diff(V, axis=0)
    vert = np.sum(dV * dV, axis=-1) / (dz * dz).reshape(shape_b) * wv.reshape(shape_b) * h**n
    wh = grid.weight_integral(grid.bounds[:-1], grid.bounds[1:])
    horiz = []
    for l in range(n):
        dH = np.diff(V[1:], axis=l + 1)
        horiz.append(np.sum(dH * dH, axis=-1) / h**2 * wh.reshape(shape_b) * h**n)
    return EdgeEnergies(vert, 0.5 * (zz[:-1] + zz[1:]), horiz, grid.z.copy(), 0.5 * lat.params.delta_s)


def _edge_points(v: ExtensionField):
    """Yield ``(energy array, x midpoints (..., n), z midpoints broadcastable)`` for each edge family."""
    grid = v.grid
    n = grid.lattice.n
    h = grid.lattice.h
    ee = edge_energies(v)
    X = grid.x_coords
    zb = (-1,) + (1,) * n
    yield ee.vertical, X[None], ee.vertical_z.reshape(zb)
    for l in range(n):
        sl = [slice(None)] * n
        sl[l] = slice(0, -1)
        Xl = X[tuple(sl)].copy()
        Xl[..., l] += 0.5 * h
        yield ee.horizontal[l], Xl[None], ee.horizontal_z.reshape(zb)


def weighted_energy(v: ExtensionField, region=None) -> float:
    """``(delta_s / 2) * sum z^a |grad v|^2`` over the edges whose midpoint lies in ``region``.

    ``region`` is None (whole grid) or a callable ``(x, z) -> bool array`` with
    ``x`` of shape ``(..., n)`` and ``z`` broadcastable against it.
    """
    total = 0.0
    for e, x, z in _edge_points(v):
        if region is None:
            total += float(e.sum())
        else:
            mask = np.broadcast_to(region(x, z), e.shape)
            total += float(e[mask].sum())
    return 0.5 * v.grid.lattice.params.delta_s * total


def half_ball(x0, r):
    x0 = np.asarray(x0, dtype=float)

    def region(x, z):
        return np.sum((x - x0) ** 2, axis=-1) + z * z <= r * r * (1 + 1e-12)

    return region


def _check_ball_fits(grid: HalfSpaceGrid, x0, r):
    x0 = np.asarray(x0, dtype=float)
    if np.max(np.abs(x0)) + r > grid.x_extent + 1e-9 * grid.lattice.h or r > grid.z_max * (1 + 1e-12):
        raise ConfigError(f"half-ball of radius {r} at {x0.tolist()} leaves the extension grid")


def density_Theta(v: ExtensionField, x0, r: float) -> float:
    """``r^{2s-n}`` times the weighted energy of the half-ball ``B_r^+((x0, 0))``."""
    _check_ball_fits(v.grid, x0, r)
    p = v.grid.lattice.params
    return r ** (2 * p.s - p.n) * weighted_energy(v, half_ball(x0, r))


def density_theta_small(lat: Lattice, u, x0, r: float) -> float:
    """``r^{2s-n}`` times the lattice energy of ``u`` in ``D_r(x0)`` (needs ``D_r`` inside Omega)."""
    from .lattice import ball_mask

    D = ball_mask(lat, x0, r)
    if np.any(D & ~lat.omega_mask):
        raise ConfigError("D_r(x0) must lie inside Omega")
    p = lat.params
    return r ** (2 * p.s - p.n) * local_energy(lat, u, D)


def theta_profile(v: ExtensionField, x0, radii) -> np.ndarray:
    """``Theta(r)`` for many radii at one centre via a single sorted cumulative sum."""
    radii = np.asarray(radii, dtype=float)
    for r in radii:
        _check_ball_fits(v.grid, x0, r)
    x0 = np.asarray(x0, dtype=float)
    dist, en = [], []
    for e, x, z in _edge_points(v):
        dd = np.sqrt(np.sum((x - x0) ** 2, axis=-1) + z * z)
        dist.append(np.broadcast_to(dd, e.shape).reshape(-1))
        en.append(e.reshape(-1))
    dist = np.concatenate(dist)
    en = np.concatenate(en)
    order = np.argsort(dist, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(en[order])])
    k = np.searchsorted(dist[order], radii * (1 + 1e-12), side="right")
    p = v.grid.lattice.params
    return radii ** (2 * p.s - p.n) * 0.5 * p.delta_s * cum[k]


def theta_map(v: ExtensionField, r: float) -> np.ndarray:
    """``Theta(r)`` centred at every target node; NaN where the half-ball leaves the grid."""
    grid = v.grid
    lat = grid.lattice
    n, h = lat.n, lat.h
    R = int(math.ceil(r / h)) + 1
    ax = np.arange(-R, R + 1) * h
    J = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)
    ee = edge_energies(v)
    out = np.zeros(grid.x_shape)
    r2 = r * r * (1 + 1e-12)
    families = [(ee.vertical, ee.vertical_z, None)] + [(ee.horizontal[l], ee.horizontal_z, l) for l in range(n)]
    for e, zs, l in families:
        Jl = J.copy()
        if l is not None:
            Jl[..., l] += 0.5 * h
        d2 = np.sum(Jl * Jl, axis=-1)
        for k, zk in enumerate(zs):
            if zk * zk > r2:
                continue
            fp = (d2 + zk * zk <= r2).astype(float)
            layer = e[k]
            if l is not None:
                pad = [(0, 0)] * n
                pad[l] = (0, 1)
                layer = np.pad(layer, pad)
            out += ndimage.correlate(layer, fp, mode="constant", cval=0.0)
    p = lat.params
    theta = r ** (2 * p.s - p.n) * 0.5 * p.delta_s * out
    X = grid.x_coords
    bad = np.max(np.abs(X), axis=-1) + r > grid.x_extent + 1e-9 * h
    if r > grid.z_max * (1 + 1e-12):
        bad[...] = True
    theta[bad] = np.nan
    return theta


def _node_gradients(v: ExtensionField):
    """Central-difference gradient at the sample points of levels ``1..M``: shape ``(M, *x_shape, d, n+1)``."""
    grid = v.grid
    n, h = grid.lattice.n, grid.lattice.h
    V = v.values
    grads = [np.gradient(V, h, axis=l + 1) for l in range(n)]
    gz = np.gradient(V, grid.zz, axis=0)
    g = np.stack(grads + [gz], axis=-1)
    return g[1:]


def _cell_weights(grid: HalfSpaceGrid):
    """``h^n int_{b_{k-1}}^{b_k} z^a`` per level ``k = 1..M``."""
    return grid.weight_integral(grid.bounds[:-1], grid.bounds[1:]) * grid.lattice.h**grid.lattice.n


def remainder_between(v: ExtensionField, x0, rho: float, r: float) -> float:
    """``delta_s`` times the quadrature of ``z^a |(X - X0).grad u^e|^2 / |X - X0|^{n+2-2s}`` on ``B_r^+ minus B_rho^+``."""
    grid = v.grid
    p = grid.lattice.params
    n = p.n
    g = _node_gradients(v)
    X = grid.x_coords - np.asarray(x0, dtype=float)
    z = grid.z.reshape((-1,) + (1,) * n)
    Y = np.concatenate([np.broadcast_to(X[None], (grid.levels,) + X.shape), np.broadcast_to(z[..., None], (grid.levels,) + grid.x_shape + (1,))], axis=-1)
    rad = np.sqrt(np.sum(Y * Y, axis=-1))
    radial = np.einsum("...dj,...j->...d", g, Y)
    W = _cell_weights(grid).reshape((-1,) + (1,) * n)
    integrand = np.sum(radial * radial, axis=-1) / rad ** (n + 2 - 2 * p.s) * W
    mask = (rad > rho * (1 + 1e-12)) & (rad <= r * (1 + 1e-12))
    return p.delta_s * float(integrand[mask].sum())


@dataclass
class DensityProfile:
    center: np.ndarray
    radii: np.ndarray
    theta_vals: np.ndarray
    theta_small_vals: np.ndarray
    remainder: np.ndarray  # per interval (r_{k-1}, r_k]
    remainder_gap: np.ndarray  # |Delta Theta - remainder| per interval
    violation: float  # largest negative increment of Theta (>= 0)
    h: float
    s: float
    xi: float = field(default=float("nan"))

    def to_csv(self) -> str:
        rows = ["r,Theta,theta_small,remainder_gap"]
        gaps = np.concatenate([[np.nan], self.remainder_gap])
        for r, T, t, g in zip(self.radii, self.theta_vals, self.theta_small_vals, gaps):
            rows.append(f"{r:.17g},{T:.17g},{t:.17g},{g:.17g}")
        return "\n".join(rows) + "\n"

    def as_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "radii": self.radii.tolist(),
            "Theta": self.theta_vals.tolist(),
            "theta_small": self.theta_small_vals.tolist(),
            "remainder": self.remainder.tolist(),
            "remainder_gap": self.remainder_gap.tolist(),
            "violation": self.violation,
            "xi_estimate": self.xi,
        }


def monotonicity_profile(v: ExtensionField, u, x0, radii) -> DensityProfile:
    """Theta, theta and the monotonicity remainder at the given radii around ``x0``.

    ``theta_small`` is NaN where ``D_r(x0)`` leaves Omega.
    """
    grid = v.grid
    lat = grid.lattice
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(np.diff(radii) <= 0):
        raise ConfigError("radii must be strictly increasing")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    theta = theta_profile(v, x0, radii)
    small = np.empty_like(theta)
    for i, r in enumerate(radii):
        try:
            small[i] = density_theta_small(lat, u, x0, r)
        except ConfigError:
            small[i] = np.nan
    rem = np.array([remainder_between(v, x0, radii[i - 1], radii[i]) for i in range(1, radii.size)])
    inc = np.diff(theta)
    violation = float(max(0.0, -inc.min())) if inc.size else 0.0
    prof = DensityProfile(
        center=x0,
        radii=radii,
        theta_vals=theta,
        theta_small_vals=small,
        remainder=rem,
        remainder_gap=np.abs(inc - rem),
        violation=violation,
        h=lat.h,
        s=lat.params.s,
    )
    prof.xi = xi_estimate(prof)
    return prof


def xi_exponent(s: float) -> float:
    """Leading power of ``Theta(r) - Xi`` for data smooth up to the boundary."""
    return min(2.0, 4.0 * s)


def xi_from_values(radii, theta, h: float, s: float, min_radius: float | None = None) -> float:
    radii = np.asarray(radii, dtype=float)
    theta = np.asarray(theta, dtype=float)
    min_radius = 4 * h if min_radius is None else min_radius
    ok = (radii >= min_radius * (1 - 1e-12)) & np.isfinite(theta)
    r, t = radii[ok][:3], theta[ok][:3]
    if r.size == 0:
        return float("nan")
    if r.size == 1:
        return max(0.0, float(t[0]))
    A = np.stack([np.ones_like(r), r ** xi_exponent(s)], axis=1)
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    return max(0.0, float(coef[0]))


def xi_estimate(profile: DensityProfile) -> float:
    """Extrapolate ``Theta(r) = Xi + c r^p`` over the 3 smallest radii ``>= 4h``; clamped at 0."""
    return xi_from_values(profile.radii, profile.theta_vals, profile.h, profile.s)


def default_xi_radii(h: float) -> np.ndarray:
    return np.array([4.0, 6.0, 8.0]) * h


# ---------------------------------------------------------------------------
# first inner variation


def vertical_cutoff(z, z_max: float):
    """C^1 profile: 1 below ``z_max / 4``, 0 above ``z_max / 2``; returns ``(eta, eta')``."""
    z = np.asarray(z, dtype=float)
    q = 0.25 * z_max
    t = np.clip((z - q) / q, 0.0, 1.0)
    eta = 1.0 - (3 * t**2 - 2 * t**3)
    deta = np.where((z > q) & (z < 2 * q), -(6 * t - 6 * t**2) / q, 0.0)
    return eta, deta


def lattice_gradient(lat: Lattice, u) -> np.ndarray:
    """Central-difference gradient on the lattice grid, shape ``(N, d, n)``."""
    u = as_field(u)
    G = lat.to_grid(u)
    gs = [np.gradient(G, lat.h, axis=l) for l in range(lat.n)]
    return np.stack(gs, axis=-1).reshape(lat.N, u.shape[1], lat.n)


def first_inner_variation(v: ExtensionField, u, X) -> tuple[float, float]:
    """Two evaluations of the first inner variation of the energy along ``X``.

    A: extension-side quadrature with the field ``(X eta(z), 0)``.
    B: ``-<(-Delta)^s_h u, X . grad_h u>`` (the flow ``u o phi_{-t}`` moves ``u``
    by ``-X . grad u`` to first order).
    """
    grid = v.grid
    lat = grid.lattice
    n = lat.n
    X = np.asarray(X, dtype=float).reshape(lat.N, n)
    if np.any(X[lat.ext_idx] != 0):
        raise ConfigError("X must vanish outside Omega")
    u = as_field(u)
    # A
    Xg = X[grid.target_idx].reshape(grid.x_shape + (n,))
    outside = np.ones(lat.N, dtype=bool)
    outside[grid.target_idx] = False
    if np.any(X[outside] != 0):
        raise ConfigError("X support exceeds the extension target box")
    dX = np.stack([np.gradient(Xg, lat.h, axis=l) for l in range(n)], axis=-1)  # (..., i, j)
    divX = np.trace(dX, axis1=-2, axis2=-1)
    g = _node_gradients(v)  # (M, ..., d, n+1)
    eta, deta = vertical_cutoff(grid.z, grid.z_max)
    zb = (-1,) + (1,) * n
    gx = g[..., :n]
    gz = g[..., n]
    grad2 = np.sum(g * g, axis=(-1, -2))
    # sum_{i,j<=n} (d_i u . d_j u) d_j X_i
    Gram = np.einsum("...ci,...cj->...ij", gx, gx)
    term_x = np.einsum("...ij,...ij->...", Gram, dX[None])
    term_z = np.einsum("...ci,...c,...i->...", gx, gz, np.broadcast_to(Xg[None], gx.shape[:-2] + (n,)))
    integrand = grad2 * divX[None] * eta.reshape(zb) - 2.0 * (eta.reshape(zb) * term_x + deta.reshape(zb) * term_z)
    W = _cell_weights(grid).reshape(zb)
    A = 0.5 * lat.params.delta_s * float(np.sum(integrand * W))
    # B
    lap = frac_laplacian_strong(lat, u)
    grad = lattice_gradient(lat, u)[lat.omega_idx]
    Xdu = np.einsum("pcj,pj->pc", grad, X[lat.omega_idx])
    B = -lat.cell_volume * float(np.sum(lap * Xdu))
    return A, B
