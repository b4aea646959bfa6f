"""Soliton builders, Galilei/modulation transforms, parameter paths,
separation predicates, the moving orthogonality basis, and the localizer.

Conventions (all parameters per soliton: velocity v, shift D, phase gamma,
nonlinear eigenvalue alpha):

  soliton       w(t,x) = e^{i theta} phi(x - x(t); alpha)
  phase         theta  = v.x - Theta(t) + gamma,  Theta(t) = int_0^t (|v|^2-alpha^2)/2
  position      x(t)   = int_0^t v ds + D
  scalar boost  g_{v,D}(t) f = e^{-i(v.x + |v|^2 t/2)} f(. + tv + D)
  matrix boost  G(t) (f1,f2) = (g f1, conj(g conj(f2)))
  modulation    M(t) = diag(e^{-i w/2}, e^{+i w/2}),  w = alpha^2 t + 2 gamma + 2 v.D

so that w(t) = G*(t) M*(t) (phi, conj phi) componentwise on the upper slot.

Shifts use spectral phases (exact for band-limited data); velocities should
lie on the dual lattice (pi/X) Z, otherwise e^{iv.x} breaks periodicity and
a warning is emitted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .fields import ComplexField, Grid, SpinorField, fourier_shift
from .groundstate import GroundStateProfile, RadialFunction


@dataclass(frozen=True)
class SolitonParams:
    velocity: np.ndarray
    shift: np.ndarray
    phase: float
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "velocity", np.atleast_1d(np.asarray(self.velocity, float)))
        object.__setattr__(self, "shift", np.atleast_1d(np.asarray(self.shift, float)))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not (np.all(np.isfinite(self.velocity)) and np.all(np.isfinite(self.shift))
                and math.isfinite(self.phase)):
            raise ValueError("soliton parameters must be finite")

    @property
    def dimension(self) -> int:
        return self.velocity.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.velocity, self.shift, [self.phase, self.alpha]])

    @staticmethod
    def from_vector(vec, n: int) -> "SolitonParams":
        vec = np.asarray(vec, float)
        return SolitonParams(vec[:n], vec[n:2 * n], float(vec[2 * n]), float(vec[2 * n + 1]))


# ---------------------------------------------------------------------------
# parameter paths
# ---------------------------------------------------------------------------

@dataclass
class ParamPath:
    """Time samples of sigma(t) = (sigma_1, ..., sigma_N) with the cumulative
    phase and position integrals that the soliton ansatz requires."""

    dimension: int
    times: list = dc_field(default_factory=list)
    params: list = dc_field(default_factory=list)       # list of lists of SolitonParams
    phase_integrals: list = dc_field(default_factory=list)   # Theta_j(t) per soliton
    position_integrals: list = dc_field(default_factory=list)  # int_0^t v_j ds

    @property
    def n_solitons(self) -> int:
        return len(self.params[0]) if self.params else 0

    def append(self, t: float, sigmas: list):
        if self.times and t <= self.times[-1]:
            raise ValueError("path times must be strictly increasing")
        if self.times:
            dt = t - self.times[-1]
            prev = self.params[-1]
            new_phase, new_pos = [], []
            for j, s in enumerate(sigmas):
                rate_prev = 0.5 * (np.dot(prev[j].velocity, prev[j].velocity) - prev[j].alpha ** 2)
                rate_new = 0.5 * (np.dot(s.velocity, s.velocity) - s.alpha ** 2)
                new_phase.append(self.phase_integrals[-1][j] + 0.5 * dt * (rate_prev + rate_new))
                new_pos.append(self.position_integrals[-1][j]
                               + 0.5 * dt * (prev[j].velocity + s.velocity))
            self.phase_integrals.append(new_phase)
            self.position_integrals.append(new_pos)
        else:
            self.phase_integrals.append([0.0] * len(sigmas))
            self.position_integrals.append([np.zeros(self.dimension)] * len(sigmas))
        self.times.append(float(t))
        self.params.append(list(sigmas))

    def at(self, t: float, j: int):
        """(sigma_j, Theta_j, int v_j) at a sampled time t."""
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not a path sample")
        return self.params[k][j], self.phase_integrals[k][j], self.position_integrals[k][j]

    def derivative_samples(self) -> np.ndarray:
        """Finite-difference sigma-dot, shape (n_times, N, 2n+2); central in
        the interior, one-sided at the ends."""
        times = np.asarray(self.times)
        mats = np.asarray([[s.as_vector() for s in row] for row in self.params])
        out = np.empty_like(mats)
        out[0] = (mats[1] - mats[0]) / (times[1] - times[0])
        out[-1] = (mats[-1] - mats[-2]) / (times[-1] - times[-2])
        for k in range(1, len(times) - 1):
            out[k] = (mats[k + 1] - mats[k - 1]) / (times[k + 1] - times[k - 1])
        return out

    @staticmethod
    def constant(sigmas: list, times) -> "ParamPath":
        path = ParamPath(dimension=sigmas[0].dimension)
        for t in times:
            path.append(t, sigmas)
        return path


# ---------------------------------------------------------------------------
# soliton fields
# ---------------------------------------------------------------------------

def _check_velocity_periodic(grid: Grid, v: np.ndarray):
    unit = np.pi / grid.half_width
    if np.max(np.abs(v - np.round(v / unit) * unit)) > 1e-12:
        warnings.warn("velocity off the dual lattice (pi/X)Z; e^{iv.x} is not "
                      "periodic and spectral operations will see a boundary jump",
                      stacklevel=3)


def _check_boundary_clearance(grid: Grid, center: np.ndarray, kappa: float):
    L = 2.0 * grid.half_width
    wrapped = (np.asarray(center) + grid.half_width) % L - grid.half_width
    clearance = grid.half_width - np.max(np.abs(wrapped))
    if kappa * clearance < 5.0:
        warnings.warn(f"soliton support within 5 decay lengths of the domain "
                      f"boundary (kappa*clearance = {kappa * clearance:.2f}); "
                      "wrap-around will contaminate the field", stacklevel=3)


def soliton_field(profile: GroundStateProfile, sigma: SolitonParams, t: float,
                  grid: Grid, path: ParamPath = None, j: int = 0) -> ComplexField:
    """w(t, x; sigma): the soliton generated from `profile` by the symmetries.

    For constant parameters the phase and position integrals are closed form;
    with `path` given they are the path's trapezoid integrals (and `sigma` is
    ignored in favor of the path sample at time t).
    """
    if path is not None:
        sigma, Theta, pos_int = path.at(t, j)
    else:
        Theta = 0.5 * (np.dot(sigma.velocity, sigma.velocity) - sigma.alpha ** 2) * t
        pos_int = sigma.velocity * t
    if abs(profile.alpha - sigma.alpha) > 1e-9 * sigma.alpha:
        raise ValueError("profile alpha does not match the soliton parameter")
    _check_velocity_periodic(grid, sigma.velocity)
    center = pos_int + sigma.shift
    _check_boundary_clearance(grid, center, profile.kappa)
    amp = profile.sample_on_grid(grid, center)
    phase = _plane_phase(grid, sigma.velocity, -Theta + sigma.phase)
    return ComplexField(grid, amp.data * phase, copy=False)


def _plane_phase(grid: Grid, v: np.ndarray, const: float) -> np.ndarray:
    """exp(i (v.x + const)) sampled on the grid."""
    acc = np.full(grid.shape, const, dtype=float)
    for i, mesh in enumerate(grid.meshes()):
        if v[i] != 0.0:
            acc = acc + v[i] * mesh
    return np.exp(1j * acc)


# ---------------------------------------------------------------------------
# Galilei / modulation transforms
# ---------------------------------------------------------------------------

def galilei_scalar(f: ComplexField, v, D, t: float, inverse: bool = False) -> ComplexField:
    """g_{v,D}(t) f = e^{-i(v.x + |v|^2 t / 2)} f(. + tv + D), or its inverse."""
    grid = f.grid
    v = np.atleast_1d(np.asarray(v, float))
    D = np.atleast_1d(np.asarray(D, float))
    _check_velocity_periodic(grid, v)
    a = t * v + D
    if not inverse:
        shifted = fourier_shift(f, a)
        phase = _plane_phase(grid, -v, -0.5 * float(v @ v) * t)
        return ComplexField(grid, shifted.data * phase, copy=False)
    phase = _plane_phase(grid, v, 0.5 * float(v @ v) * t)
    return fourier_shift(ComplexField(grid, f.data * phase, copy=False), -a)


def galilei_matrix(Z: SpinorField, v, D, t: float, inverse: bool = False,
                   modulation: SolitonParams = None) -> SpinorField:
    """Matrix boost G_{v,D}(t), optionally composed with M_j(t, sigma).

    Forward order is M(t) G(t); the inverse undoes both.  The lower component
    follows the conjugate rule of the diagonal matrix transformation.
    """
    def gG(Zin, inv):
        up = galilei_scalar(Zin.upper, v, D, t, inverse=inv)
        lo = galilei_scalar(Zin.lower.conj(), v, D, t, inverse=inv).conj()
        return SpinorField(up, lo)

    def gM(Zin, inv):
        s = modulation
        w = s.alpha ** 2 * t + 2.0 * s.phase + 2.0 * float(s.velocity @ s.shift)
        ph = np.exp(-0.5j * w) if not inv else np.exp(0.5j * w)
        return SpinorField(Zin.upper * ph, Zin.lower * np.conj(ph))

    if not inverse:
        Z = gG(Z, False)
        if modulation is not None:
            Z = gM(Z, False)
        return Z
    if modulation is not None:
        Z = gM(Z, True)
    return gG(Z, True)


# ---------------------------------------------------------------------------
# separation diagnostics
# ---------------------------------------------------------------------------

def separation_check(sigmas: list, horizon: float, epsilon: float,
                     n_samples: int = 400) -> dict:
    """Best constants for |x_j(t) - x_l(t)| >= L + c t on [0, horizon], the
    relative-velocity minimum, and the quantitative condition alpha_min L >= |log eps|."""
    N = len(sigmas)
    alphas = [s.alpha for s in sigmas]
    alpha_min = min(alphas)
    if N < 2:
        return {"n_solitons": N, "L": math.inf, "c": math.inf, "min_relative_velocity": math.inf,
                "physical_separation_pass": True, "velocity_separation_pass": True,
                "quantitative_pass": True, "alpha_min": alpha_min,
                "log_eps": abs(math.log(epsilon))}
    tgrid = np.linspace(0.0, horizon, n_samples)
    dmin = np.full(n_samples, np.inf)
    vrel_min = math.inf
    for j in range(N):
        for l in range(j + 1, N):
            dv = sigmas[j].velocity - sigmas[l].velocity
            dD = sigmas[j].shift - sigmas[l].shift
            vrel_min = min(vrel_min, float(np.linalg.norm(dv)))
            d = np.linalg.norm(dD[None, :] + tgrid[:, None] * dv[None, :], axis=1)
            dmin = np.minimum(dmin, d)
    L = float(dmin[0])
    with np.errstate(divide="ignore"):
        cs = (dmin[1:] - L) / tgrid[1:]
    c = float(np.min(cs)) if cs.size else 0.0
    log_eps = abs(math.log(epsilon))
    return {
        "n_solitons": N,
        "L": L,
        "c": c,
        "min_relative_velocity": vrel_min,
        "physical_separation_pass": bool(L > 0 and c > 0),
        "velocity_separation_pass": bool(vrel_min > 0),
        "quantitative_pass": bool(alpha_min * L >= log_eps),
        "alpha_min": alpha_min,
        "log_eps": log_eps,
    }


# ---------------------------------------------------------------------------
# limits at infinity
# ---------------------------------------------------------------------------

def _tail_extrapolated_integral(times: np.ndarray, vals: np.ndarray) -> tuple:
    """int_t^inf vals ds at each sample t: trapezoid over the window plus an
    exponential-tail extrapolation fitted to the last third of the data."""
    k0 = max(2 * len(times) // 3, 1)
    tail_t, tail_v = times[k0:], np.abs(vals[k0:])
    mask = tail_v > 1e-300
    b = 0.0
    if mask.sum() >= 3:
        slope, _ = np.polyfit(tail_t[mask], np.log(tail_v[mask]), 1)
        b = max(-slope, 0.0)
    scale = float(np.max(np.abs(vals))) + 1e-300
    if b > 1e-12:
        tail_beyond = vals[-1] / b  # signed, assuming ~ vals[-1] e^{-b(t-T)}
    elif abs(vals[-1]) < 1e-12 * scale:
        tail_beyond = 0.0
    else:
        tail_beyond = math.inf  # non-decaying tail
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(times))])
    int_to_T = cum[-1] - cum
    return int_to_T + tail_beyond, b, tail_beyond


def sigma_infinity(path: ParamPath) -> dict:
    """Limits sigma_inf of an admissible path, with the double-integral
    corrections for D and gamma, plus finiteness diagnostics."""
    if len(path.times) < 3:
        raise ValueError("sigma_infinity needs at least 3 path samples")
    times = np.asarray(path.times)
    dots = path.derivative_samples()  # (T, N, 2n+2)
    n = path.dimension
    result = []
    admissible = True
    for j in range(path.n_solitons):
        vdot = dots[:, j, :n]
        last = path.params[-1][j]
        v_series = np.asarray([p[j].velocity for p in path.params])
        a_series = np.asarray([p[j].alpha for p in path.params])
        adot = dots[:, j, 2 * n + 1]

        # I_v(t) = int_t^inf |vdot|; finite iff the double integral converges
        D_corr = np.zeros(n)
        decay_ok = True
        for m in range(n):
            I, b, tail = _tail_extrapolated_integral(times, vdot[:, m])
            if not np.all(np.isfinite(I)):
                decay_ok = False
                continue
            D_corr[m] = np.trapezoid(I, times) + (I[-1] / b if b > 1e-12 else 0.0)
        integrand = np.einsum("ti,ti->t", vdot, v_series) - adot * a_series
        Ig, bg, tg = _tail_extrapolated_integral(times, integrand)
        if not np.all(np.isfinite(Ig)):
            decay_ok = False
            gamma_corr = math.nan
        else:
            gamma_corr = float(np.trapezoid(Ig, times) + (Ig[-1] / bg if bg > 1e-12 else 0.0))
        admissible = admissible and decay_ok
        result.append(SolitonParams(
            velocity=last.velocity.copy(),
            shift=last.shift - D_corr,
            phase=last.phase + gamma_corr,
            alpha=last.alpha,
        ))
    return {"sigma_inf": result, "admissible": admissible,
            "final_time": float(times[-1])}


# ---------------------------------------------------------------------------
# moving basis and localizer
# ---------------------------------------------------------------------------

def moving_basis(profile: GroundStateProfile, dphi: RadialFunction,
                 sigma: SolitonParams, t: float, grid: Grid,
                 Theta: float = None, pos_int=None) -> list:
    """The 2n+2 moving vectors xi^m = (u, conj u) for one soliton:

        u^1 = w,   u^2 = (2i/alpha) e^{i theta} d_alpha phi,
        u^{2+m} = i e^{i theta} d_m phi,   u^{2+n+m} = e^{i theta}(x-x_j)^m phi.
    """
    n = grid.dimension
    if Theta is None:
        Theta = 0.5 * (float(sigma.velocity @ sigma.velocity) - sigma.alpha ** 2) * t
    if pos_int is None:
        pos_int = sigma.velocity * t
    center = pos_int + sigma.shift
    phase = _plane_phase(grid, sigma.velocity, -Theta + sigma.phase)

    L = 2.0 * grid.half_width
    rr = grid.radius(center)
    phi_x = profile.evaluate(rr)
    dphi_x = dphi.evaluate(rr)
    safe_r = np.maximum(rr, 1e-30)
    dradial = profile.derivative(rr)

    rel = []
    for i, mesh in enumerate(grid.meshes()):
        rel.append((mesh - center[i] + grid.half_width) % L - grid.half_width)

    out = []
    u1 = phase * phi_x
    out.append(SpinorField.from_scalar(ComplexField(grid, u1, copy=False)))
    u2 = (2j / sigma.alpha) * phase * dphi_x
    out.append(SpinorField.from_scalar(ComplexField(grid, u2, copy=False)))
    for m in range(n):
        um = 1j * phase * dradial * rel[m] / safe_r
        out.append(SpinorField.from_scalar(ComplexField(grid, um, copy=False)))
    for m in range(n):
        um = phase * rel[m] * phi_x
        out.append(SpinorField.from_scalar(ComplexField(grid, um, copy=False)))
    return out


def chi_localizer(centers: list, alpha_min: float, grid: Grid) -> ComplexField:
    """Sum over solitons of exp(-alpha_min (1+|x-x_j|^2)^{1/2} / 2)."""
    acc = np.zeros(grid.shape)
    for c in centers:
        rr = grid.radius(np.asarray(c, float))
        acc += np.exp(-0.5 * alpha_min * np.sqrt(1.0 + rr ** 2))
    return ComplexField(grid, acc.astype(np.complex128), copy=False)


# ---------------------------------------------------------------------------
# pairing
# ---------------------------------------------------------------------------

def pairing(Z: SpinorField, xi: SpinorField) -> complex:
    """<(z1, z2), (u, u-bar)> = int (z1 conj(u) + z2 u); real-valued when Z is
    conjugate-symmetric, giving one real constraint per basis vector."""
    u = xi.upper.data
    val = np.sum(Z.upper.data * np.conj(u) + Z.lower.data * u)
    return complex(val * Z.grid.cell_volume)
