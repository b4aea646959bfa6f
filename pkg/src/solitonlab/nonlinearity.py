"""Nonlinearity families beta(s^2) and the functionals G, W built from them.

Three families are supported:
  monomial   beta(u) = u^{(p-1)/2}                       (u = s^2)
  theta      beta(u) = u^{(p-1)/2} f(u) / (theta + f(u)) with f(u) = c u^{(r+1)/2}
  mixed      beta(u) = u - u^2
The theta family vanishes faster at the origin than the monomial it
approaches pointwise as theta -> 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .fields import ComplexField


@dataclass(frozen=True)
class NonlinearitySpec:
    variant: str  # "monomial" | "theta" | "mixed"
    p: float = 3.0
    r: float = 1.0
    theta: float = 0.0
    c: float = 1.0  # coefficient in f(s^2) = c s^{r+1}

    def __post_init__(self):
        # "zero" is a degenerate variant kept for internal diagnostics only
        if self.variant not in ("monomial", "theta", "mixed", "zero"):
            raise ValueError(f"unknown nonlinearity variant {self.variant!r}")
        if self.variant in ("monomial", "theta") and not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.variant == "theta":
            if not self.theta > 0:
                raise ValueError("theta must be positive for the theta family")
            if not self.r > -1:
                raise ValueError("r must exceed -1")
            if not self.c > 0:
                raise ValueError("c must be positive")

    def describe(self) -> str:
        if self.variant == "monomial":
            return f"monomial(p={self.p})"
        if self.variant == "theta":
            return f"theta(p={self.p}, r={self.r}, theta={self.theta}, c={self.c})"
        return "mixed(u - u^2)"


def _pow(u, e):
    """u**e with an exact 0 at u=0 for positive exponents (avoids 0**neg NaN)."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    mask = u > 0
    out[mask] = np.exp(e * np.log(u[mask]))
    return out


def beta(spec: NonlinearitySpec, s2):
    """Pointwise beta(s^2); accepts scalars or arrays, s2 >= 0."""
    u = np.asarray(s2, dtype=float)
    if np.any(u < 0):
        raise ValueError("beta argument s^2 must be nonnegative")
    if spec.variant == "monomial":
        out = _pow(u, (spec.p - 1.0) / 2.0)
    elif spec.variant == "mixed":
        out = u - u ** 2
    elif spec.variant == "zero":
        out = np.zeros_like(u)
    else:
        f = spec.c * _pow(u, (spec.r + 1.0) / 2.0)
        out = _pow(u, (spec.p - 1.0) / 2.0) * f / (spec.theta + f)
    return out if out.shape else float(out)


def beta_prime(spec: NonlinearitySpec, s2):
    """d beta / d(s^2), closed form for every family."""
    u = np.asarray(s2, dtype=float)
    if np.any(u < 0):
        raise ValueError("beta argument s^2 must be nonnegative")
    a = (spec.p - 1.0) / 2.0
    if spec.variant == "monomial":
        out = a * _pow(u, a - 1.0)
    elif spec.variant == "mixed":
        out = 1.0 - 2.0 * u
    elif spec.variant == "zero":
        out = np.zeros_like(u)
    else:
        b = (spec.r + 1.0) / 2.0
        f = spec.c * _pow(u, b)
        fp = spec.c * b * _pow(u, b - 1.0)
        denom = (spec.theta + f)
        out = a * _pow(u, a - 1.0) * f / denom + _pow(u, a) * spec.theta * fp / denom ** 2
    return out if out.shape else float(out)


def G_antiderivative(spec: NonlinearitySpec, alpha: float, tau: float) -> float:
    """G(tau) = int_0^tau beta(s^2) s ds - alpha^2 tau^2 / 4."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0.0:
        return 0.0
    quad_part = -(alpha ** 2) * tau ** 2 / 4.0
    if spec.variant == "monomial":
        return tau ** (spec.p + 1.0) / (spec.p + 1.0) + quad_part
    if spec.variant == "mixed":
        return tau ** 4 / 4.0 - tau ** 6 / 6.0 + quad_part
    if spec.variant == "zero":
        return quad_part
    val, _ = integrate.quad(lambda s: beta(spec, s * s) * s, 0.0, tau, limit=200)
    return float(val) + quad_part


def W_functional(spec: NonlinearitySpec, alpha: float, u: ComplexField) -> float:
    """Grid quadrature of G(u(x)) for a real-valued field u."""
    scale = 1.0 + float(np.max(np.abs(u.data.real)))
    if np.max(np.abs(u.data.imag)) >= 1e-12 * scale:
        raise ValueError("W functional requires a real-valued field")
    vals = u.data.real
    G = _G_vectorized(spec, alpha, np.abs(vals))
    return float(np.sum(G) * u.grid.cell_volume)


def _G_vectorized(spec: NonlinearitySpec, alpha: float, tau: np.ndarray) -> np.ndarray:
    if spec.variant == "monomial":
        return _pow(tau, spec.p + 1.0) / (spec.p + 1.0) - alpha ** 2 * tau ** 2 / 4.0
    if spec.variant == "mixed":
        return tau ** 4 / 4.0 - tau ** 6 / 6.0 - alpha ** 2 * tau ** 2 / 4.0
    if spec.variant == "zero":
        return -(alpha ** 2) * tau ** 2 / 4.0
    # theta family: cumulative Gauss-Legendre quadrature on the sorted values
    flat = tau.ravel()
    order = np.argsort(flat)
    svals = flat[order]
    nodes, weights = np.polynomial.legendre.leggauss(12)
    out_sorted = np.empty_like(svals)
    acc = 0.0
    prev = 0.0
    for i, s in enumerate(svals):
        if s > prev:
            mid, half = 0.5 * (s + prev), 0.5 * (s - prev)
            pts = mid + half * nodes
            acc += half * np.sum(weights * beta(spec, pts ** 2) * pts)
            prev = s
        out_sorted[i] = acc
    out = np.empty_like(flat)
    out[order] = out_sorted
    return out.reshape(tau.shape) - alpha ** 2 * tau ** 2 / 4.0


def B_antiderivative(spec: NonlinearitySpec, s2):
    """B(u) = int_0^u beta(s) ds, vectorized over u = |psi|^2 (enters the energy)."""
    u = np.asarray(s2, dtype=float)
    return 2.0 * _G_vectorized(spec, 0.0, np.sqrt(np.maximum(u, 0.0)))


def radial_G_integral(spec: NonlinearitySpec, alpha: float, r: np.ndarray,
                      u: np.ndarray, dimension: int) -> float:
    """int G(u) over R^n for a radial profile u(r) sampled on r (trapezoid)."""
    G = _G_vectorized(spec, alpha, np.abs(u))
    return sphere_area(dimension) * float(np.trapezoid(G * r ** (dimension - 1), r))


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1} (2 for n=1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def hypothesis_checks(spec: NonlinearitySpec, n: int = 3,
                      s_grid=None) -> dict:
    """Sampled diagnostics for the structural inequalities assumed of beta.

    Checks, on a log grid of s:
      * super-mean:  beta(s^2) s^2 >= 2 int_0^s beta(t^2) t dt
      * growth near 0:   beta(s^2) <~ s^{p-1} for s <= 1
      * growth at infinity: beta(s^2) <~ s^{q-1} for s >= 1 with subcritical q
      * existence of s0 with G(s0) > 0 for a reference alpha = 1
    Returns margins and booleans; a report, never a certificate.
    """
    if s_grid is None:
        s_grid = np.logspace(-6, 3, 200)
    s = np.asarray(s_grid, dtype=float)
    b = np.asarray(beta(spec, s ** 2), dtype=float)

    # cumulative 2 int_0^s beta(t^2) t dt on the sample grid
    integrand = b * s
    cumint = np.concatenate([[0.0], np.cumsum(
        0.5 * (integrand[1:] + integrand[:-1]) * np.diff(s))])
    cumint += 0.5 * integrand[0] * s[0]  # account for [0, s_0]
    lhs = b * s ** 2
    rhs = 2.0 * cumint
    margin = lhs - rhs
    scale = np.maximum(np.abs(lhs), np.abs(rhs)) + 1e-300
    worst = float(np.min(margin / scale))
    super_mean_ok = bool(np.all(margin >= -1e-8 * scale))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0, lhs / np.maximum(rhs, 1e-300), np.inf)
    margin_ratio = float(np.min(ratios)) if np.any(rhs > 0) else 1.0
    crossing = None
    if not super_mean_ok:
        bad = np.nonzero(margin < -1e-8 * scale)[0]
        crossing = float(s[bad[0]])

    # growth exponents by log-log envelope fits
    small = s <= 1.0
    big = s >= 1.0
    p_eff = _envelope_exponent(s[small], b[small])
    q_eff = _envelope_exponent(s[big], b[big])
    growth_small_ok = bool(p_eff is None or p_eff >= spec.p - 1.0 - 1e-6)
    q_limit = 1.0 + 4.0 / n
    trivially_zero = bool(np.all(b == 0.0))
    growth_big_ok = bool(trivially_zero or
                         (q_eff is not None and q_eff + 1.0 < q_limit + 1e-9))

    G1 = np.array([G_antiderivative(spec, 1.0, t) for t in np.linspace(0.1, 5.0, 40)])
    has_positive_G = bool(np.any(G1 > 0))

    return {
        "super_mean_pass": super_mean_ok,
        "super_mean_worst_margin": worst,
        "super_mean_margin_ratio": margin_ratio,
        "super_mean_crossing_s": crossing,
        "small_s_exponent": p_eff,
        "small_s_growth_pass": growth_small_ok,
        "large_s_exponent": q_eff,
        "large_s_growth_pass": growth_big_ok,
        "subcritical_q_limit": q_limit,
        "positive_G_region": has_positive_G,
    }


def _envelope_exponent(s, b):
    mask = (b > 0) & (s > 0)
    if mask.sum() < 2:
        return None
    slope, _ = np.polyfit(np.log(s[mask]), np.log(b[mask]), 1)
    # beta is reported as a function of s, i.e. beta(s^2) ~ s^slope
    return float(slope)
