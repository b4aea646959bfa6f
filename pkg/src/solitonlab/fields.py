"""Periodic grids, spectral calculus, and the space-time norms of the decay framework.

The torus [-X, X)^n stands in for R^n.  All derivatives are Fourier
multipliers, so they are exact for band-limited data; the documented caveat
is aliasing once a field develops structure near the Nyquist wavenumber.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft

DEFAULT_MAX_DERIVATIVE_ORDER = 4

# worker count handed to scipy.fft (-1 = all cores); the CLI --threads flag
# overrides it process-wide
FFT_WORKERS = -1


def fft_workers() -> int:
    return FFT_WORKERS


def _is_power_of_two(m: int) -> bool:
    return m >= 1 and (m & (m - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [-X, X)^n with M points per axis."""

    dimension: int
    points: int
    half_width: float

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if self.points < 8 or not _is_power_of_two(self.points):
            raise ValueError(f"points must be a power of two >= 8, got {self.points}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points

    @property
    def size(self) -> int:
        return self.points ** self.dimension

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.dimension

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dimension

    def axis(self) -> np.ndarray:
        """Physical coordinates along one axis."""
        return -self.half_width + self.spacing * np.arange(self.points)

    def kaxis(self) -> np.ndarray:
        """Fourier wavenumbers along one axis (angular, FFT ordering)."""
        return 2.0 * np.pi * sfft.fftfreq(self.points, d=self.spacing)

    def meshes(self) -> tuple:
        """Coordinate meshes X_1, ..., X_n with 'ij' indexing."""
        ax = self.axis()
        return np.meshgrid(*([ax] * self.dimension), indexing="ij")

    def kmeshes(self) -> tuple:
        ka = self.kaxis()
        return np.meshgrid(*([ka] * self.dimension), indexing="ij")

    def ksquared(self) -> np.ndarray:
        ks = self.kmeshes()
        return sum(k ** 2 for k in ks)

    def radius(self, center=None) -> np.ndarray:
        """|x - center| with periodic wrapping of each coordinate difference."""
        if center is None:
            center = np.zeros(self.dimension)
        center = np.asarray(center, dtype=float)
        L = 2.0 * self.half_width
        r2 = 0.0
        for i, mesh in enumerate(self.meshes()):
            d = (mesh - center[i] + self.half_width) % L - self.half_width
            r2 = r2 + d ** 2
        return np.sqrt(r2)

    def dual_lattice_velocity(self, v) -> np.ndarray:
        """Snap a velocity to the dual lattice (pi/X)Z so e^{iv.x} stays periodic."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        unit = np.pi / self.half_width
        return np.round(v / unit) * unit


class ComplexField:
    """Complex samples on a Grid.  Immutable; all operations return new fields."""

    __slots__ = ("grid", "data")

    def __init__(self, grid: Grid, data: np.ndarray, copy: bool = True):
        data = np.asarray(data, dtype=np.complex128)
        if data.shape != grid.shape:
            raise ValueError(f"data shape {data.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("field contains non-finite samples")
        if copy:
            data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "data", data)

    def __setattr__(self, *a):
        raise AttributeError("ComplexField is immutable")

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        self._check(other)
        return ComplexField(self.grid, self.data + other.data, copy=False)

    def __sub__(self, other):
        self._check(other)
        return ComplexField(self.grid, self.data - other.data, copy=False)

    def __mul__(self, c):
        return ComplexField(self.grid, self.data * c, copy=False)

    __rmul__ = __mul__

    def conj(self):
        return ComplexField(self.grid, np.conj(self.data), copy=False)

    def _check(self, other):
        if self.grid != other.grid:
            raise ValueError("fields live on different grids")

    @staticmethod
    def zeros(grid: Grid) -> "ComplexField":
        return ComplexField(grid, np.zeros(grid.shape, dtype=np.complex128), copy=False)

    @staticmethod
    def from_function(grid: Grid, fn) -> "ComplexField":
        return ComplexField(grid, np.asarray(fn(*grid.meshes()), dtype=np.complex128))


class SpinorField:
    """Two-component field Z = (upper, lower) on a shared grid.

    For Z arising from a real NLS solution the physical constraint
    lower = conj(upper) holds; it is checkable, not enforced.
    """

    __slots__ = ("upper", "lower")

    def __init__(self, upper: ComplexField, lower: ComplexField):
        if upper.grid != lower.grid:
            raise ValueError("spinor components live on different grids")
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "lower", lower)

    def __setattr__(self, *a):
        raise AttributeError("SpinorField is immutable")

    @property
    def grid(self) -> Grid:
        return self.upper.grid

    def __add__(self, other):
        return SpinorField(self.upper + other.upper, self.lower + other.lower)

    def __sub__(self, other):
        return SpinorField(self.upper - other.upper, self.lower - other.lower)

    def __mul__(self, c):
        return SpinorField(self.upper * c, self.lower * c)

    __rmul__ = __mul__

    def conjugate_defect(self) -> float:
        """sup |lower - conj(upper)|, the violation of the physical constraint."""
        return float(np.max(np.abs(self.lower.data - np.conj(self.upper.data))))

    def modulus(self) -> ComplexField:
        """Pointwise spinor magnitude sqrt(|z1|^2 + |z2|^2) as a real-valued field."""
        m = np.sqrt(np.abs(self.upper.data) ** 2 + np.abs(self.lower.data) ** 2)
        return ComplexField(self.grid, m.astype(np.complex128), copy=False)

    @staticmethod
    def from_scalar(f: ComplexField) -> "SpinorField":
        """Conjugate pair Z = (f, conj f)."""
        return SpinorField(f, f.conj())

    @staticmethod
    def zeros(grid: Grid) -> "SpinorField":
        z = ComplexField.zeros(grid)
        return SpinorField(z, z)


@dataclass
class TrajectorySeries:
    """Time-ordered snapshots of a ComplexField or SpinorField."""

    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def append(self, t: float, snap):
        if self.times and t <= self.times[-1]:
            raise ValueError("snapshot times must be strictly increasing")
        self.times.append(float(t))
        self.snapshots.append(snap)

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.snapshots))


# ---------------------------------------------------------------------------
# spectral calculus
# ---------------------------------------------------------------------------

def fourier(f: ComplexField) -> np.ndarray:
    return sfft.fftn(f.data, workers=FFT_WORKERS)

def inverse_fourier(grid: Grid, fhat: np.ndarray) -> ComplexField:
    return ComplexField(grid, sfft.ifftn(fhat, workers=FFT_WORKERS), copy=False)


def spectral_derivative(f: ComplexField, multi_index,
                        s_max: int = DEFAULT_MAX_DERIVATIVE_ORDER) -> ComplexField:
    """Mixed partial derivative d^{multi_index} f as a Fourier multiplier."""
    mi = np.atleast_1d(np.asarray(multi_index, dtype=int))
    if mi.shape != (f.grid.dimension,):
        raise ValueError(f"multi_index must have length {f.grid.dimension}")
    if np.any(mi < 0):
        raise ValueError("multi_index entries must be nonnegative")
    if mi.sum() > s_max:
        raise ValueError(f"derivative order {mi.sum()} exceeds the configured maximum {s_max}")
    fhat = fourier(f)
    for i, m in enumerate(mi):
        if m:
            shape = [1] * f.grid.dimension
            shape[i] = f.grid.points
            fhat = fhat * (1j * f.grid.kaxis().reshape(shape)) ** m
    return inverse_fourier(f.grid, fhat)


def laplacian(f: ComplexField) -> ComplexField:
    return inverse_fourier(f.grid, -f.grid.ksquared() * fourier(f))


def fourier_shift(f: ComplexField, shift) -> ComplexField:
    """f(. + shift) by spectral phase; exact for band-limited fields."""
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    fhat = fourier(f)
    for i in range(f.grid.dimension):
        shape = [1] * f.grid.dimension
        shape[i] = f.grid.points
        fhat = fhat * np.exp(1j * f.grid.kaxis().reshape(shape) * shift[i])
    return inverse_fourier(f.grid, fhat)


def _multi_indices(n: int, order: int):
    if n == 1:
        yield (order,)
        return
    for first in range(order + 1):
        for rest in _multi_indices(n - 1, order - first):
            yield (first,) + rest


def gradient_magnitude(f: ComplexField, order: int) -> np.ndarray:
    """|grad^k f| with multinomial weights, so that its L2 norm is the full
    k-th derivative tensor norm (Fourier multiplier |k|^order on plane waves)."""
    if order == 0:
        return np.abs(f.data)
    n = f.grid.dimension
    acc = np.zeros(f.grid.shape)
    for mi in _multi_indices(n, order):
        w = math.factorial(order)
        for m in mi:
            w //= math.factorial(m)
        d = spectral_derivative(f, mi, s_max=max(order, DEFAULT_MAX_DERIVATIVE_ORDER))
        acc += w * np.abs(d.data) ** 2
    return np.sqrt(acc)


def _as_modulus_array(f) -> tuple:
    """(grid, array of pointwise magnitudes) for ComplexField or SpinorField."""
    if isinstance(f, SpinorField):
        return f.grid, np.abs(f.modulus().data)
    return f.grid, np.abs(f.data)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def norm_lp(f, p) -> float:
    """L^p norm, p in {1, 2, inf}; Riemann sum with weight h^n."""
    grid, mod = _as_modulus_array(f)
    if p == 1:
        return float(np.sum(mod) * grid.cell_volume)
    if p == 2:
        return float(np.sqrt(np.sum(mod ** 2) * grid.cell_volume))
    if p in (np.inf, "inf", math.inf):
        return float(np.max(mod))
    raise ValueError(f"p must be 1, 2 or inf, got {p}")


def norm_l2_plus_linf(f, n_thresholds: int = 33) -> float:
    """Computational surrogate for the infimum norm of L2 + Linf.

    Minimizes ||f 1_{|f|>lam}||_2 + lam over lam in {0} U quantiles of |f|.
    Always <= min(||f||_2, ||f||_inf) since lam = 0 and lam = max|f| are
    candidates, and is within a factor 2 of the true infimum.
    """
    grid, mod = _as_modulus_array(f)
    top = float(np.max(mod))
    if top == 0.0:
        return 0.0
    lams = np.unique(np.concatenate(
        [[0.0, top], np.quantile(mod.ravel(), np.linspace(0.0, 1.0, n_thresholds))]))
    best = np.inf
    for lam in lams:
        tail = mod[mod > lam]
        val = math.sqrt(float(np.sum(tail ** 2)) * grid.cell_volume) + lam
        best = min(best, val)
    return float(best)


def norm_sobolev(f, s: int) -> float:
    """H^s norm via the multiplier (sum_{j<=s} |k|^{2j})^{1/2}."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if isinstance(f, SpinorField):
        return math.hypot(norm_sobolev(f.upper, s), norm_sobolev(f.lower, s))
    k2 = f.grid.ksquared()
    mult = sum(k2 ** j for j in range(s + 1))
    fhat = fourier(f)
    total = np.sum(mult * np.abs(fhat) ** 2) / f.grid.size * f.grid.cell_volume
    return float(np.sqrt(total))


def _grad_mag_field(snap, k: int) -> ComplexField:
    if isinstance(snap, SpinorField):
        gu = gradient_magnitude(snap.upper, k)
        gl = gradient_magnitude(snap.lower, k)
        return ComplexField(snap.grid, np.sqrt(gu ** 2 + gl ** 2).astype(np.complex128), copy=False)
    return ComplexField(snap.grid, gradient_magnitude(snap, k).astype(np.complex128), copy=False)


def norm_xs(traj: TrajectorySeries, s: int, n: int, detail: bool = False):
    """Space-time norm: sup_t [ H^s + (1+t)^{n/2} sum_{k<=s} ||grad^k .||_{L2+Linf} ].

    With detail=True also returns the index of the snapshot attaining the sup.
    """
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    vals = []
    for t, snap in traj:
        total = norm_sobolev(snap, s)
        w = (1.0 + t) ** (n / 2.0)
        for k in range(s + 1):
            total += w * norm_l2_plus_linf(_grad_mag_field(snap, k))
        vals.append(total)
    idx = int(np.argmax(vals))
    return (vals[idx], idx) if detail else vals[idx]


def norm_ys(traj: TrajectorySeries, s: int, n: int) -> float:
    """Inhomogeneous-term norm: sup_t sum_{k<=s} [ int_0^t ||grad^k F||_1 + (1+t)^{n/2+1} ||grad^k F||_2 ]."""
    if len(traj) < 2:
        raise ValueError("norm_ys needs at least 2 snapshots for the time quadrature")
    times = np.asarray(traj.times)
    l1 = np.empty((s + 1, len(traj)))
    l2 = np.empty((s + 1, len(traj)))
    for j, (_, snap) in enumerate(traj):
        for k in range(s + 1):
            g = _grad_mag_field(snap, k)
            l1[k, j] = norm_lp(g, 1)
            l2[k, j] = norm_lp(g, 2)
    best = 0.0
    for j, t in enumerate(times):
        total = 0.0
        for k in range(s + 1):
            integral = np.trapezoid(l1[k, : j + 1], times[: j + 1]) if j > 0 else 0.0
            total += integral + (1.0 + t) ** (n / 2.0 + 1.0) * l2[k, j]
        best = max(best, total)
    return float(best)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_field(f: ComplexField, path) -> None:
    """Write little-endian float64 interleaved (re, im) plus a JSON sidecar."""
    path = Path(path)
    flat = np.empty(2 * f.grid.size, dtype="<f8")
    flat[0::2] = f.data.real.ravel()
    flat[1::2] = f.data.imag.ravel()
    path.write_bytes(flat.tobytes())
    header = {"n": f.grid.dimension, "M": f.grid.points, "X": f.grid.half_width}
    Path(str(path) + ".json").write_text(json.dumps(header, sort_keys=True))


def load_field(path) -> ComplexField:
    path = Path(path)
    header = json.loads(Path(str(path) + ".json").read_text())
    grid = Grid(header["n"], header["M"], header["X"])
    flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    if flat.size != 2 * grid.size:
        raise ValueError("field file size does not match its header")
    data = (flat[0::2] + 1j * flat[1::2]).reshape(grid.shape)
    return ComplexField(grid, data)


def export_slice_csv(f: ComplexField, path, axis: int = 0, index=None) -> None:
    """CSV (x, re, im) of a 1D slice along `axis` through `index` on the other axes."""
    grid = f.grid
    if index is None:
        index = [grid.points // 2] * grid.dimension
    sel = list(index)
    sel[axis] = slice(None)
    line = f.data[tuple(sel)]
    ax = grid.axis()
    with open(path, "w") as fh:
        fh.write("x,re,im\n")
        for x, v in zip(ax, line):
            fh.write(f"{x:.17g},{v.real:.17g},{v.imag:.17g}\n")
