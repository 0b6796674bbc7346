"""Blow-ups, tangent-map diagnostics and threshold detection of singular points."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .constants import FracParams
from .errors import ConfigError, DomainError, InterpolationError
from .extension import ExtensionField, build_halfspace_grid, extend, theta_map, theta_profile, xi_exponent
from .lattice import Lattice, as_field, build_lattice, preset_field, preset_function


def interpolator(lat: Lattice, u):
    """Multilinear interpolant of a lattice field; call with ``(P, n)`` points."""
    u = as_field(u)
    ax = np.arange(-lat.m, lat.m + 1) * lat.h
    return RegularGridInterpolator([ax] * lat.n, lat.to_grid(u), method="linear", bounds_error=False, fill_value=np.nan)


def _sample(lat: Lattice, u, pts):
    pts = np.atleast_2d(pts)
    if np.any(np.abs(pts) > lat.L_ext * (1 + 1e-12)):
        raise DomainError("sample points leave the source lattice box")
    return interpolator(lat, u)(pts)


def blowup(lat: Lattice, u, x0, rho: float, ref: Lattice, normalize: bool = True) -> np.ndarray:
    """``u_{x0, rho}(x) = u(x0 + rho x)`` sampled on the nodes of ``ref``.

    Multilinear interpolation, renormalized to unit length; interpolated
    vectors shorter than 0.5 raise :class:`InterpolationError`.
    """
    if not rho > 0:
        raise DomainError("rho must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    vals = _sample(lat, u, x0 + rho * ref.coords)
    if not normalize:
        return vals
    nrm = np.linalg.norm(vals, axis=1)
    if np.min(nrm) < 0.5:
        raise InterpolationError(f"interpolated norm {np.min(nrm):.3g} < 0.5; refine or move x0")
    return vals / nrm[:, None]


def homogeneity_defect(lat: Lattice, phi, r_min: float | None = None, factors=(0.5, 2.0)) -> float:
    """Max of ``|phi(lambda x) - phi(x)|`` over nodes with ``r_min <= |x|`` and ``lambda x`` in the box.

    ``r_min`` defaults to ``4h`` (interpolating a singular map right next to
    its singular point measures the grid, not the map).
    """
    phi = as_field(phi)
    r_min = 4 * lat.h if r_min is None else r_min
    f = interpolator(lat, phi)
    r = np.linalg.norm(lat.coords, axis=1)
    worst = 0.0
    for lam in factors:
        keep = (r >= r_min * (1 - 1e-12)) & (np.max(np.abs(lat.coords), axis=1) * lam <= lat.L_ext * (1 + 1e-12))
        if not np.any(keep):
            continue
        vals = f(lam * lat.coords[keep])
        worst = max(worst, float(np.max(np.linalg.norm(vals - phi[keep], axis=1))))
    return worst


def candidate_directions(n: int) -> np.ndarray:
    """Coordinate axes and normalized pairwise sums/differences, with both signs."""
    dirs = [np.eye(n)[k] for k in range(n)]
    for k, l in itertools.combinations(range(n), 2):
        for sgn in (1.0, -1.0):
            v = np.zeros(n)
            v[k], v[l] = 1.0, sgn
            dirs.append(v / np.sqrt(2.0))
    dirs = dirs + [-d for d in dirs]
    return np.array(dirs)


def translation_defect(lat: Lattice, phi, direction, shifts=None) -> float:
    """Sup over nodes and shifts ``t`` of ``|phi(x + t v) - phi(x)|`` (both points in the box)."""
    phi = as_field(phi)
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    shifts = (lat.h, 4 * lat.h, 0.25 * lat.L_ext) if shifts is None else shifts
    f = interpolator(lat, phi)
    worst = 0.0
    for t in shifts:
        pts = lat.coords + t * v
        keep = np.max(np.abs(pts), axis=1) <= lat.L_ext * (1 + 1e-12)
        if not np.any(keep):
            continue
        vals = f(pts[keep])
        worst = max(worst, float(np.max(np.linalg.norm(vals - phi[keep], axis=1))))
    return worst


def symmetry_subspace(lat: Lattice, phi, tol: float = 1e-6):
    """Estimate the subspace of translation invariance of ``phi``.

    Returns ``(dimension, basis, invariant_directions, defects)``; the invariant
    directions come in sign pairs since the defect is even in ``v``.
    """
    dirs = candidate_directions(lat.n)
    defects = np.array([translation_defect(lat, phi, v) for v in dirs])
    keep = dirs[defects <= tol]
    if keep.size == 0:
        return 0, np.zeros((0, lat.n)), keep, defects
    _, sv, vt = np.linalg.svd(keep)
    rank = int(np.sum(sv > 1e-8 * sv[0]))
    return rank, vt[:rank], keep, defects


@dataclass
class SingularReport:
    epsilon: float
    radii: list
    flagged: np.ndarray  # lattice node indices
    flagged_coords: np.ndarray
    xi: np.ndarray  # per Omega node
    theta_min: np.ndarray  # Theta at the smallest radius, per Omega node
    omega_idx: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "radii": list(self.radii),
            "flagged_count": int(self.flagged.size),
            "flagged_coords": self.flagged_coords.tolist(),
            "xi_max": float(np.nanmax(self.xi)) if self.xi.size else 0.0,
        }

    def flagged_csv(self) -> str:
        n = self.flagged_coords.shape[1] if self.flagged_coords.ndim == 2 else 0
        head = ",".join(f"x{k + 1}" for k in range(n))
        rows = [",".join(f"{c:.17g}" for c in row) for row in self.flagged_coords]
        return "\n".join([head] + rows) + "\n"


def default_singular_radii(h: float) -> np.ndarray:
    return np.array([2.0, 3.0, 4.0]) * h


def xi_map(v: ExtensionField, radii) -> tuple[np.ndarray, np.ndarray]:
    """Extrapolated ``Xi`` and ``Theta(radii[0])`` at every target node of the extension grid."""
    radii = np.sort(np.asarray(radii, dtype=float))[:3]
    s = v.grid.lattice.params.s
    maps = np.stack([theta_map(v, r).reshape(-1) for r in radii], axis=0)
    if radii.size == 1:
        xi = maps[0]
    else:
        A = np.stack([np.ones_like(radii), radii ** xi_exponent(s)], axis=1)
        pinv = np.linalg.pinv(A)
        xi = (pinv @ np.nan_to_num(maps, nan=0.0))[0]
        xi[np.any(np.isnan(maps), axis=0)] = np.nan
    return np.maximum(xi, 0.0), maps[0]


def singular_grid(lat: Lattice, radii, levels: int = 48):
    r_max = float(np.max(radii))
    x_extent = min(lat.L_ext, lat.L + r_max + lat.h)
    return build_halfspace_grid(lat, levels=levels, z_max=max(lat.L_ext, r_max), x_extent=x_extent)


def detect_singular(lat: Lattice, u, epsilon: float | None = None, radii=None, v: ExtensionField | None = None, levels: int = 48) -> SingularReport:
    """Flag Omega nodes whose extrapolated density ``Xi`` reaches ``epsilon``.

    ``radii`` default to ``{2h, 3h, 4h}``; ``epsilon`` defaults to half the
    hedgehog plateau for the lattice configuration (see :func:`calibrate_epsilon`).
    """
    radii = default_singular_radii(lat.h) if radii is None else np.asarray(radii, dtype=float)
    if epsilon is None:
        epsilon = calibrate_epsilon(lat)
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    if v is None:
        v = extend(u, singular_grid(lat, radii, levels))
    xi, th = xi_map(v, radii)
    tgt = v.grid.target_idx
    pos = np.full(lat.N, -1)
    pos[tgt] = np.arange(tgt.size)
    om_pos = pos[lat.omega_idx]
    if np.any(om_pos < 0):
        raise ConfigError("extension grid does not cover Omega")
    xi_om = xi[om_pos]
    th_om = th[om_pos]
    if np.any(np.isnan(xi_om)):
        raise ConfigError("density balls leave the extension grid; enlarge x_extent")
    hit = xi_om >= epsilon
    flagged = lat.omega_idx[hit]
    return SingularReport(
        epsilon=float(epsilon),
        radii=radii.tolist(),
        flagged=flagged,
        flagged_coords=lat.coords[flagged],
        xi=xi_om,
        theta_min=th_om,
        omega_idx=lat.omega_idx,
    )


def hedgehog_plateau(lat: Lattice, levels: int = 48, fractions=(0.25, 0.75), samples: int = 11) -> float:
    """Median of ``Theta(r)`` over ``r in [0.25, 0.75] L`` for the hedgehog on this lattice geometry."""
    return _plateau_cached(lat.n, lat.params.s, lat.h, lat.L, lat.L_ext, lat.cutoff, lat.subsamples, lat.shape, levels, tuple(fractions), samples)


@lru_cache(maxsize=16)
def _plateau_cached(n, s, h, L, L_ext, cutoff, subsamples, shape, levels, fractions, samples):
    if n < 2:
        raise ConfigError("the hedgehog calibration needs n >= 2; pass epsilon explicitly")
    params = FracParams(n, s, n)
    lat = build_lattice(params, h, L, L_ext, cutoff, subsamples, shape, "exterior-function", preset_function("hedgehog", n, n))
    u = preset_field(lat, "hedgehog")
    radii = np.linspace(fractions[0] * L, fractions[1] * L, samples)
    grid = build_halfspace_grid(lat, levels=levels, z_max=max(L_ext, radii[-1]), x_extent=min(L_ext, radii[-1] + h))
    return float(np.median(theta_profile(extend(u, grid), np.zeros(n), radii)))


def calibrate_epsilon(lat: Lattice, factor: float = 0.5, levels: int = 48) -> float:
    """``factor`` times the hedgehog plateau (cached per lattice configuration)."""
    return factor * hedgehog_plateau(lat, levels=levels)
