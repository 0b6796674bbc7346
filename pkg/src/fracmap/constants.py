"""Normalization constants of the fractional energy, Poisson kernel and extension.

All functions are pure and cheap; ``FracParams`` bundles them for a given
``(n, s, d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy import integrate

from .errors import DomainError


def gamma_fn(x: float) -> float:
    """Euler Gamma function for positive real arguments."""
    if not x > 0:
        raise DomainError(f"gamma_fn requires x > 0, got {x!r}")
    return math.gamma(x)


def _check(n, s):
    if int(n) != n or n < 1:
        raise DomainError(f"dimension n must be a positive integer, got {n!r}")
    if not 0.0 < s < 1.0:
        raise DomainError(f"order s must lie in (0, 1), got {s!r}")


def gamma_ns(n: int, s: float) -> float:
    """Kernel constant: s 2^{2s} pi^{-n/2} Gamma((n+2s)/2) / Gamma(1-s)."""
    _check(n, s)
    return s * 2.0 ** (2 * s) * math.pi ** (-n / 2) * gamma_fn((n + 2 * s) / 2) / gamma_fn(1 - s)


def sigma_ns(n: int, s: float) -> float:
    """Poisson kernel constant making the kernel a probability density in x."""
    _check(n, s)
    return math.pi ** (-n / 2) * gamma_fn((n + 2 * s) / 2) / gamma_fn(s)


def delta_s(s: float) -> float:
    """Weighted Dirichlet energy constant 2^{2s-1} Gamma(s) / Gamma(1-s)."""
    _check(1, s)
    return 2.0 ** (2 * s - 1) * gamma_fn(s) / gamma_fn(1 - s)


def sphere_area(k: int) -> float:
    """Surface measure of the unit sphere S^k in R^{k+1} (S^0 has measure 2)."""
    return 2.0 * math.pi ** ((k + 1) / 2) / gamma_fn((k + 1) / 2)


def alpha_ns(n: int, s: float, tol: float = 1e-9) -> tuple[float, float]:
    """Integral of (1+|x'|^2)^{-(n+2s)/2} over R^{n-1}.

    Returns ``(quadrature, closed_form)``. The quadrature integrates the radial
    profile numerically; the closed form is gamma_{1,s} / gamma_{n,s}.
    """
    _check(n, s)
    if n < 2:
        raise DomainError("alpha_ns requires n >= 2")
    p = (n + 2 * s) / 2

    # r = t / (1 - t) maps (0, inf) onto (0, 1); keeps the slow algebraic tail finite.
    def integrand(t):
        if t >= 1.0:
            return 0.0
        r = t / (1.0 - t)
        return r ** (n - 2) * (1.0 + r * r) ** (-p) / (1.0 - t) ** 2

    radial, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=tol, epsrel=1e-12, limit=200)
    quad = sphere_area(n - 2) * radial
    closed = gamma_ns(1, s) / gamma_ns(n, s)
    return quad, closed


@dataclass(frozen=True)
class FracParams:
    n: int
    s: float
    d: int = 1
    gamma_ns: float = field(init=False)
    sigma_ns: float = field(init=False)
    delta_s: float = field(init=False)
    a: float = field(init=False)

    def __post_init__(self):
        _check(self.n, self.s)
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"target dimension d must be a positive integer, got {self.d!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "gamma_ns", gamma_ns(self.n, self.s))
        object.__setattr__(self, "sigma_ns", sigma_ns(self.n, self.s))
        object.__setattr__(self, "delta_s", delta_s(self.s))
        object.__setattr__(self, "a", 1.0 - 2.0 * self.s)

    def as_dict(self) -> dict:
        out = {
            "n": self.n,
            "s": self.s,
            "d": self.d,
            "gamma_ns": self.gamma_ns,
            "sigma_ns": self.sigma_ns,
            "delta_s": self.delta_s,
            "a": self.a,
        }
        if self.n >= 2:
            quad, closed = alpha_ns(self.n, self.s)
            out["alpha_ns_quadrature"] = quad
            out["alpha_ns_closed_form"] = closed
        return out
