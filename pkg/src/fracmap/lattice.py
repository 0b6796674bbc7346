"""Truncated uniform lattice on R^n with the singular pair kernel.

Nodes sit at ``h * k`` for integer ``k`` in ``[-m, m]^n`` (``m h = L_ext``).
Only rows of Omega nodes are stored: every discrete nonlocal sum runs over
pairs with at least one point in Omega, and the pairs ``(exterior, Omega)``
are recovered from the transpose of the exterior columns.

Measure convention: a node sum carries ``h^n``; a pair weight ``w_ij`` already
contains ``h^{2n}``, so that ``w_ij = h^{2n} |x_i - x_j|^{-(n+2s)}`` away from
the diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constants import FracParams, sphere_area
from .errors import ConfigError, PreconditionError, ResourceError

TAIL_MODES = ("zero", "constant-exterior", "exterior-function")
SHAPES = ("ball", "box")
PRESETS = (
    "constant",
    "hedgehog",
    "char-ball",
    "step",
    "winding",
    "smooth",
    "gaussian",
    "random-perturbation",
)

DEFAULT_MAX_PAIRS = 60_000_000


@dataclass
class Tail:
    """Interaction of each Omega node with the data beyond the lattice box.

    ``tau_i = h^n int_{y outside box} |x_i - y|^{-(n+2s)} dy`` and ``m``/``q`` are
    the same integrals weighted by ``u(y)`` and ``|u(y)|^2``. They act like a
    virtual exterior node, so energy, Laplacian and multiplier stay consistent.
    """

    tau: np.ndarray
    m: np.ndarray
    q: np.ndarray


@dataclass(eq=False)
class Lattice:
    params: FracParams
    h: float
    L: float
    L_ext: float
    cutoff: int
    subsamples: int
    shape: str
    tail_mode: str
    m: int
    coords: np.ndarray  # (N, n)
    index: np.ndarray  # (N, n) integer grid coordinates
    omega_mask: np.ndarray  # (N,)
    omega_idx: np.ndarray
    ext_idx: np.ndarray
    w: np.ndarray  # (N_omega, N) pair weights, zero on the diagonal
    rs: np.ndarray  # (N_omega, N) sqrt(w / mu), the s-gradient scaling
    mu: np.ndarray  # (N_omega, N) off-diagonal measure h^{2n} / |x_i - x_j|^n
    tail: Tail | None = None
    exterior: object = None

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def N(self) -> int:
        return self.coords.shape[0]

    @property
    def n_omega(self) -> int:
        return self.omega_idx.size

    @property
    def grid_shape(self) -> tuple:
        return (2 * self.m + 1,) * self.n

    @property
    def box_halfwidth(self) -> float:
        """Half-width of the union of lattice cells, ``L_ext + h/2``."""
        return self.L_ext + 0.5 * self.h

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    def to_grid(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        return values.reshape(self.grid_shape + values.shape[1:])

    def nearest_node(self, point) -> int:
        k = np.rint(np.asarray(point, dtype=float) / self.h).astype(int)
        if np.any(np.abs(k) > self.m):
            raise ConfigError(f"point {point} lies outside the lattice box")
        return int(np.ravel_multi_index(tuple(k + self.m), self.grid_shape))

    def describe(self) -> dict:
        return {
            "n": self.n,
            "s": self.params.s,
            "d": self.d,
            "h": self.h,
            "L": self.L,
            "L_ext": self.L_ext,
            "cutoff": self.cutoff,
            "subsamples": self.subsamples,
            "shape": self.shape,
            "tail_mode": self.tail_mode,
            "nodes": self.N,
            "omega_nodes": self.n_omega,
        }


def kernel_table(n: int, s: float, h: float, radius: int, cutoff: int, subsamples: int):
    """Pair weights indexed by integer offsets in ``[-radius, radius]^n``.

    Offsets with sup-norm at most ``cutoff`` use the kernel averaged over the
    target cell (``subsamples`` midpoints per axis); the others use the point
    kernel. Returns ``(w, mu)`` arrays of shape ``(2 radius + 1,)*n``.
    """
    ax = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    off = np.stack(grids, axis=-1).astype(float)
    r = np.sqrt(np.sum(off**2, axis=-1)) * h
    with np.errstate(divide="ignore"):
        w = h ** (2 * n) * r ** (-(n + 2 * s))
        mu = h ** (2 * n) * r ** (-n)
    sup = np.max(np.abs(off), axis=-1)
    near = (sup <= cutoff) & (sup > 0)
    if np.any(near):
        sub = (np.arange(subsamples) + 0.5) / subsamples - 0.5
        sg = np.stack(np.meshgrid(*([sub] * n), indexing="ij"), axis=-1).reshape(-1, n)
        for idx in zip(*np.nonzero(near)):
            y = (off[idx] + sg) * h
            w[idx] = h ** (2 * n) * np.mean(np.sum(y * y, axis=1) ** (-(n + 2 * s) / 2))
    centre = (radius,) * n
    w[centre] = 0.0
    mu[centre] = 0.0
    return w, mu


def exterior_shells(n: int, B: float, q: int | None = None, n_shells: int = 20):
    """Midpoint quadrature of the complement of the box ``[-B, B]^n``.

    Shell ``k`` covers ``[-2^{k+1}B, 2^{k+1}B]^n`` minus ``[-2^k B, 2^k B]^n``
    with cells of side ``2^k B / q``. Returns ``(points, volumes)``.
    """
    if q is None:
        q = 6 if n <= 2 else 3
    pts, vols = [], []
    base = (np.arange(4 * q) + 0.5) / q - 2.0  # centres in units of the inner half-width
    g = np.stack(np.meshgrid(*([base] * n), indexing="ij"), axis=-1).reshape(-1, n)
    keep = np.max(np.abs(g), axis=1) > 1.0
    g = g[keep]
    for k in range(n_shells):
        scale = B * 2.0**k
        pts.append(g * scale)
        vols.append(np.full(g.shape[0], (scale / q) ** n))
    return np.concatenate(pts), np.concatenate(vols)


def box_complement_integral(x: np.ndarray, B: float, n: int, s: float, n_angles: int = 4096) -> np.ndarray:
    """``int_{y outside [-B,B]^n} |x - y|^{-(n+2s)} dy`` for points inside the box.

    Uses the radial closed form ``R(theta)^{-2s} / (2s)`` along each ray, where
    ``R`` is the exit distance; n = 1 is exact, n = 2 integrates over angles.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if n == 1:
        return ((B - x[:, 0]) ** (-2 * s) + (B + x[:, 0]) ** (-2 * s)) / (2 * s)
    if n == 2:
        th = (np.arange(n_angles) + 0.5) * (2 * np.pi / n_angles)
        c, sn = np.cos(th), np.sin(th)
        out = np.empty(x.shape[0])
        with np.errstate(divide="ignore"):
            for i, (px, py) in enumerate(x):
                tx = np.where(c > 0, (B - px) / c, np.where(c < 0, (-B - px) / c, np.inf))
                ty = np.where(sn > 0, (B - py) / sn, np.where(sn < 0, (-B - py) / sn, np.inf))
                R = np.minimum(tx, ty)
                out[i] = np.mean(R ** (-2 * s)) * 2 * np.pi / (2 * s)
        return out
    raise ConfigError("closed-form box complement is available for n <= 2 only")


def _exterior_callable(exterior, d: int) -> Callable:
    if callable(exterior):
        return exterior
    c = np.asarray(exterior, dtype=float).reshape(-1)
    if c.size != d:
        raise ConfigError(f"exterior value must have {d} components")
    return lambda pts: np.broadcast_to(c, (pts.shape[0], d))


def build_tail(lat: Lattice, tail_mode: str, exterior) -> Tail | None:
    if tail_mode == "zero":
        return None
    if exterior is None:
        raise ConfigError(f"tail_mode {tail_mode!r} needs exterior data")
    n, s, d, h = lat.n, lat.params.s, lat.d, lat.h
    B = lat.box_halfwidth
    x = lat.coords[lat.omega_idx]
    exact = box_complement_integral(x, B, n, s) if n <= 2 else None
    if tail_mode == "constant-exterior":
        if exact is None:
            raise ConfigError("constant-exterior tail is implemented for n <= 2")
        c = np.asarray(exterior, dtype=float).reshape(-1)
        if c.size != d:
            raise ConfigError(f"exterior value must have {d} components")
        tau = h**n * exact
        return Tail(tau=tau, m=tau[:, None] * c[None, :], q=tau * float(c @ c))
    func = _exterior_callable(exterior, d)
    pts, vols = exterior_shells(n, B)
    vals = np.asarray(func(pts), dtype=float).reshape(pts.shape[0], d)
    diff = x[:, None, :] - pts[None, :, :]
    K = np.sum(diff * diff, axis=-1) ** (-(n + 2 * s) / 2) * vols[None, :]
    if exact is not None:
        # redistribute the mass beyond the last shell proportionally
        K *= (exact / K.sum(axis=1))[:, None]
    tau = h**n * K.sum(axis=1)
    return Tail(tau=tau, m=h**n * (K @ vals), q=h**n * (K @ np.sum(vals * vals, axis=1)))


def build_lattice(
    params: FracParams,
    h: float,
    L: float,
    L_ext: float | None = None,
    cutoff: int = 2,
    subsamples: int = 4,
    shape: str = "ball",
    tail_mode: str = "zero",
    exterior=None,
    max_pairs: int = DEFAULT_MAX_PAIRS,
) -> Lattice:
    """Build nodes, the Omega mask and the pair kernel.

    ``exterior`` supplies the data beyond the lattice box for the tail modes:
    a constant vector (``constant-exterior``) or a callable mapping ``(P, n)``
    points to ``(P, d)`` values (``exterior-function``).
    """
    if L_ext is None:
        L_ext = 2.0 * L
    if not h > 0:
        raise ConfigError("h must be positive")
    if not 0 < L <= L_ext:
        raise ConfigError("need 0 < L <= L_ext")
    if cutoff < 1 or subsamples < 1:
        raise ConfigError("cutoff and subsamples must be >= 1")
    if shape not in SHAPES:
        raise ConfigError(f"unknown domain shape {shape!r}")
    if tail_mode not in TAIL_MODES:
        raise ConfigError(f"unknown tail mode {tail_mode!r}")
    m = int(round(L_ext / h))
    if abs(m * h - L_ext) > 1e-9 * max(L_ext, 1.0):
        raise ConfigError("L_ext must be an integer multiple of h")
    n, s = params.n, params.s
    side = 2 * m + 1

    ax = np.arange(-m, m + 1)
    index = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
    coords = index * h
    tol = 1e-9 * h
    if shape == "ball":
        omega = np.sqrt(np.sum(coords**2, axis=1)) <= L + tol
    else:
        omega = np.max(np.abs(coords), axis=1) <= L + tol
    omega_idx = np.nonzero(omega)[0]
    ext_idx = np.nonzero(~omega)[0]
    if omega_idx.size == 0:
        raise ConfigError("Omega contains no lattice node")
    if ext_idx.size == 0:
        raise ConfigError("no exterior collar: enlarge L_ext")
    N = coords.shape[0]
    if omega_idx.size * N > max_pairs:
        raise ResourceError(
            f"{omega_idx.size} x {N} pair weights exceed the configured maximum {max_pairs}"
        )

    w_tab, mu_tab = kernel_table(n, s, h, 2 * m, cutoff, subsamples)
    w_flat, mu_flat = w_tab.reshape(-1), mu_tab.reshape(-1)
    tab_side = 4 * m + 1
    lin = np.zeros((omega_idx.size, N), dtype=np.int64)
    for k in range(n):
        lin *= tab_side
        lin += index[omega_idx, k][:, None] - index[None, :, k] + 2 * m
    w = w_flat[lin]
    mu = mu_flat[lin]
    del lin
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = np.where(mu > 0, np.sqrt(w / np.where(mu > 0, mu, 1.0)), 0.0)

    lat = Lattice(
        params=params,
        h=float(h),
        L=float(L),
        L_ext=float(m * h),
        cutoff=int(cutoff),
        subsamples=int(subsamples),
        shape=shape,
        tail_mode=tail_mode,
        m=m,
        coords=coords,
        index=index,
        omega_mask=omega,
        omega_idx=omega_idx,
        ext_idx=ext_idx,
        w=w,
        rs=rs,
        mu=mu,
        exterior=exterior,
    )
    assert side**n == N
    lat.tail = build_tail(lat, tail_mode, exterior)
    return lat


# ---------------------------------------------------------------------------
# fields


def as_field(u: np.ndarray) -> np.ndarray:
    """Return ``u`` as an ``(N, d)`` float array (scalars become ``d = 1``)."""
    u = np.asarray(u, dtype=float)
    return u[:, None] if u.ndim == 1 else u


def unit_defect(u: np.ndarray) -> float:
    u = as_field(u)
    return float(np.max(np.abs(np.sqrt(np.sum(u * u, axis=1)) - 1.0)))


def check_unit(u: np.ndarray, tol: float = 1e-10) -> None:
    err = unit_defect(u)
    if err > tol:
        raise PreconditionError(f"field is not unit-norm (max defect {err:.3e})")


def normalize(u: np.ndarray) -> np.ndarray:
    u = as_field(u)
    return u / np.sqrt(np.sum(u * u, axis=1))[:, None]


def _e1(d):
    e = np.zeros(d)
    e[0] = 1.0
    return e


def _embed(vals: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros((vals.shape[0], d))
    out[:, : vals.shape[1]] = vals
    return out


def preset_function(name: str, n: int, d: int, **opts) -> Callable[[np.ndarray], np.ndarray]:
    """Return the preset as a function of points ``(P, n) -> (P, d)``.

    The same callable serves as exterior data for the tail and the extension.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")

    if name == "constant":
        c = np.asarray(opts.get("value", _e1(d)), dtype=float).reshape(-1)
        if c.size != d:
            raise ConfigError(f"constant value must have {d} components")
        return lambda x: np.tile(c, (np.atleast_2d(x).shape[0], 1))

    if name == "hedgehog":
        if n < 2 or d < n:
            raise ConfigError("hedgehog needs n >= 2 and d >= n")

        def hedgehog(x):
            x = np.atleast_2d(x)
            r = np.sqrt(np.sum(x * x, axis=1))
            out = _embed(x / np.where(r > 0, r, 1.0)[:, None], d)
            out[r <= 1e-12 * max(1.0, np.max(r))] = _e1(d)
            return out

        return hedgehog

    if name in ("char-ball", "step"):
        radius = float(opts.get("radius", 1.0))
        plus = np.asarray(opts.get("a", _e1(d)), dtype=float).reshape(-1)
        minus = np.asarray(opts.get("b", -_e1(d)), dtype=float).reshape(-1)

        def sign_map(x):
            x = np.atleast_2d(x)
            if name == "char-ball":
                inside = np.sqrt(np.sum(x * x, axis=1)) < radius
            else:
                inside = x[:, 0] > 0
            return np.where(inside[:, None], plus[None, :], minus[None, :])

        return sign_map

    if name == "winding":
        if n < 2 or d < 2:
            raise ConfigError("winding needs n >= 2 and d >= 2")
        degree = int(opts.get("degree", 2))

        def winding(x):
            x = np.atleast_2d(x)
            th = np.arctan2(x[:, 1], x[:, 0]) * degree
            out = _embed(np.stack([np.cos(th), np.sin(th)], axis=1), d)
            out[np.hypot(x[:, 0], x[:, 1]) <= 1e-12] = _e1(d)
            return out

        return winding

    if name == "smooth":
        if d < 2:
            raise ConfigError("smooth preset needs d >= 2")
        amp = float(opts.get("amplitude", 1.0))
        width = float(opts.get("width", 1.0))

        def smooth(x):
            x = np.atleast_2d(x)
            th = amp * np.exp(-np.sum(x * x, axis=1) / width**2)
            return _embed(np.stack([np.cos(th), np.sin(th)], axis=1), d)

        return smooth

    if name == "gaussian":
        width = float(opts.get("width", 1.0))

        def gaussian(x):
            x = np.atleast_2d(x)
            return _embed(np.exp(-np.sum(x * x, axis=1) / width**2)[:, None], d)

        return gaussian

    raise ConfigError("random-perturbation is defined on lattice nodes only")


def preset_field(lat: Lattice, name: str, **opts) -> np.ndarray:
    """Evaluate a preset on every lattice node; returns ``(N, d)``.

    All presets except ``gaussian`` are unit-norm. ``random-perturbation``
    normalizes ``base + amplitude * noise`` (pure noise when ``amplitude`` is
    None) with a seeded generator.
    """
    n, d = lat.n, lat.d
    if name == "random-perturbation":
        rng = np.random.default_rng(int(opts.get("seed", 0)))
        amp = opts.get("amplitude")
        noise = rng.standard_normal((lat.N, d))
        if amp is None:
            u = noise
        else:
            base = preset_field(lat, opts.get("base", "constant"))
            u = base + float(amp) * noise
        if d == 1:
            return np.where(u >= 0, 1.0, -1.0)
        return normalize(u)
    return np.asarray(preset_function(name, n, d, **opts)(lat.coords), dtype=float)


def sphere_volume(n: int) -> float:
    """Lebesgue measure of the unit ball of R^n."""
    return sphere_area(n - 1) / n


def ball_mask(lat: Lattice, center, radius: float) -> np.ndarray:
    c = np.asarray(center, dtype=float).reshape(1, -1)
    return np.sqrt(np.sum((lat.coords - c) ** 2, axis=1)) <= radius + 1e-9 * lat.h


__all__ = [
    "Lattice",
    "Tail",
    "build_lattice",
    "kernel_table",
    "preset_field",
    "preset_function",
    "check_unit",
    "normalize",
    "as_field",
    "ball_mask",
]
