"""Diagnostic seminorms on lattice balls: Sobolev-Slobodeckij, Morrey-type scaled and BMO."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .lattice import Lattice, as_field, ball_mask, kernel_table


def _pair_kernel(lat: Lattice, idx: np.ndarray, sp: float) -> np.ndarray:
    """Weights ``h^{2n} |x_i - x_j|^{-(n + sp)}`` between the nodes ``idx`` (cell-averaged near the diagonal)."""
    index = lat.index[idx]
    radius = int(np.max(index.max(axis=0) - index.min(axis=0)))
    w_tab, _ = kernel_table(lat.n, 0.5 * sp, lat.h, radius, lat.cutoff, lat.subsamples)
    off = index[:, None, :] - index[None, :, :] + radius
    return w_tab[tuple(np.moveaxis(off, -1, 0))]


def _check_sp(s_prime, p):
    if not 0 < s_prime < 1:
        raise ConfigError("s' must lie in (0, 1)")
    if p < 1:
        raise ConfigError("p must be >= 1")


def sobolev_seminorm(lat: Lattice, f, center, radius: float, s_prime: float, p: float = 2.0) -> float:
    """``[f]_{W^{s',p}(D)}`` on the lattice ball ``D``, as a discrete double sum (no gamma factor)."""
    _check_sp(s_prime, p)
    f = as_field(f)
    idx = np.nonzero(ball_mask(lat, center, radius))[0]
    return _seminorm_on(lat, f, idx, s_prime, p)


def _seminorm_on(lat, f, idx, s_prime, p, w=None):
    if idx.size < 2:
        return 0.0
    if w is None:
        w = _pair_kernel(lat, idx, s_prime * p)
    fv = f[idx]
    diff = np.sqrt(np.sum((fv[:, None, :] - fv[None, :, :]) ** 2, axis=-1))
    return float(np.sum(diff**p * w)) ** (1.0 / p)


def default_radii(lat: Lattice, r_max: float | None = None) -> np.ndarray:
    """Geometric family ``h 2^k`` up to ``r_max`` (default ``L``)."""
    r_max = lat.L if r_max is None else r_max
    k = np.arange(0, 64)
    r = lat.h * 2.0**k
    return r[r <= r_max + 1e-9 * lat.h]


def _balls(lat: Lattice, radii, centers):
    if centers is None:
        centers = lat.omega_idx
    for r in radii:
        for c in centers:
            x = lat.coords[c]
            if np.max(np.abs(x)) + r > lat.L_ext + 1e-9 * lat.h:
                continue
            yield float(r), x


def morrey_seminorm(lat: Lattice, f, s_prime: float, p: float = 2.0, radii=None, centers=None) -> float:
    """``sup_{D_r(x)} (r^{s'p - n} [f]^p_{W^{s',p}(D_r(x))})^{2/p}`` over a ball family.

    Balls are centred at the nodes ``centers`` (default: Omega) with radii
    ``radii`` (default :func:`default_radii`), kept only when they fit in the
    lattice box. For ``p = 2`` this is ``sup r^{2s'-n} [f]^2_{H^{s'}}``.
    """
    _check_sp(s_prime, p)
    f = as_field(f)
    radii = default_radii(lat) if radii is None else np.asarray(radii, dtype=float)
    best = 0.0
    cache = {}
    for r, x in _balls(lat, radii, centers):
        idx = np.nonzero(ball_mask(lat, x, r))[0]
        if idx.size < 2:
            continue
        if r not in cache:
            cache[r] = _pair_kernel(lat, idx, s_prime * p)
        w = cache[r]
        if w.shape[0] != idx.size:  # ball is translation invariant on the lattice; guard anyway
            w = _pair_kernel(lat, idx, s_prime * p)
        val = (r ** (s_prime * p - lat.n) * _seminorm_on(lat, f, idx, s_prime, p, w) ** p) ** (2.0 / p)
        best = max(best, val)
    return best


def bmo_seminorm(lat: Lattice, f, radii=None, centers=None) -> float:
    """Sup over the ball family of the mean distance to the ball average."""
    f = as_field(f)
    radii = default_radii(lat) if radii is None else np.asarray(radii, dtype=float)
    best = 0.0
    for r, x in _balls(lat, radii, centers):
        idx = np.nonzero(ball_mask(lat, x, r))[0]
        fv = f[idx]
        dev = np.sqrt(np.sum((fv - fv.mean(axis=0)) ** 2, axis=1))
        best = max(best, float(dev.mean()))
    return best
