"""Periodic tensor grids, Fourier multipliers, and weighted inner products.

Conventions used throughout the package:

* The box is [-L, L)^n sampled at N points per axis, x_j = -L + j*(2L/N).
* Lattice angular frequencies are xi_j = pi*j/L in FFT order (non-negative
  first, then negative), so the discrete symbol of -Delta is exactly |xi|^2.
* |xi|^{2s} is computed as (|xi|^2)^s; at xi = 0 this gives 0 for s > 0 and
  1 for s = 0, which realizes (-Delta)^0 = Id at the s = 0 endpoint.
* Physical integrals carry the cell volume (2L/N)^n and spectral sums carry
  (2L)^n/N^{2n}, so the discrete Parseval identity holds exactly and
  weighted_inner discretizes int w(xi) |u^(xi)|^2 dxi under the unitary
  transform normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, j0, jn_zeros


class QuadratureError(RuntimeError):
    """Raised when an adaptive quadrature cannot reach its tolerance."""

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


def critical_exponent(n):
    """Critical Sobolev exponent 2* of H^1 -> L^q: 2n/(n-2) for n > 2, else inf."""
    return 2.0 * n / (n - 2.0) if n > 2 else math.inf


@dataclass(eq=False)
class GridSpec:
    """Periodic tensor grid on [-L, L)^n with N points per axis."""

    n: int
    N: int
    L: float
    _xi_sq: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self):
        return (self.N,) * self.n

    @property
    def size(self):
        return self.N ** self.n

    @property
    def cell_volume(self):
        return (2.0 * self.L / self.N) ** self.n

    @property
    def volume(self):
        return (2.0 * self.L) ** self.n

    @property
    def spacing(self):
        return 2.0 * self.L / self.N

    def axis_coords(self):
        """Sample coordinates along one axis, monotone from -L."""
        return -self.L + self.spacing * np.arange(self.N)

    def coord_mesh(self):
        """Tuple of n coordinate meshes (indexing='ij')."""
        x = self.axis_coords()
        return np.meshgrid(*([x] * self.n), indexing="ij")

    def radius_sq(self):
        return sum(c * c for c in self.coord_mesh())

    def axis_freqs(self):
        """Angular frequencies pi*j/L in FFT order."""
        return (np.pi / self.L) * np.fft.fftfreq(self.N, d=1.0 / self.N)

    def freq_mesh(self):
        xi = self.axis_freqs()
        return np.meshgrid(*([xi] * self.n), indexing="ij")

    def xi_sq(self):
        """|xi|^2 on the lattice (cached)."""
        if self._xi_sq is None:
            self._xi_sq = sum(f * f for f in self.freq_mesh())
        return self._xi_sq

    def __eq__(self, other):
        return (
            isinstance(other, GridSpec)
            and self.n == other.n
            and self.N == other.N
            and self.L == other.L
        )


@dataclass
class RealField:
    """Sampled real-valued function on a periodic grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def copy(self):
        return RealField(self.grid, self.values.copy())


@dataclass
class SymbolParams:
    """Parameters (n, s, p, shift) of the multiplier shift + |xi|^2 + |xi|^{2s}."""

    n: int
    s: float
    p: float
    shift: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"dimension n={self.n} outside 1..3")
        if not 0.0 <= self.s <= 1.0:
            raise ValueError(f"s={self.s} outside [0, 1]")
        pmax = critical_exponent(self.n) - 2.0
        if not 0.0 < self.p < pmax:
            raise ValueError(
                f"supercritical exponent: p={self.p} not in (0, {pmax}) for n={self.n}"
            )
        if self.shift < 0.0:
            raise ValueError(f"shift={self.shift} must be >= 0")


def build_grid(n, N, L):
    """Validated GridSpec with frequencies xi_j = pi*j/L.

    N must be even (>= 8) so the Nyquist frequency appears exactly once and
    frequency 0 exactly once; n is restricted to 1..3.
    """
    if n not in (1, 2, 3):
        raise ValueError(f"dimension n={n} outside 1..3")
    if N % 2 != 0 or N < 8:
        raise ValueError(f"points per axis N={N} must be even and >= 8")
    if L <= 0:
        raise ValueError(f"half-length L={L} must be positive")
    return GridSpec(n=int(n), N=int(N), L=float(L))


def eval_symbol(params, xi):
    """Multiplier value shift + |xi|^2 + |xi|^{2s} at one frequency vector.

    (|xi|^2)^s evaluates to 0 at xi = 0 for s > 0 and to 1 for s = 0,
    matching the zero-frequency convention of the package.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    r2 = float(np.sum(xi * xi))
    return params.shift + r2 + float(np.power(r2, params.s))


def symbol_weights(grid, s, shift=1.0):
    """Lattice array of shift + |xi|^2 + |xi|^{2s}."""
    r2 = grid.xi_sq()
    return shift + r2 + np.power(r2, s)


def _h2_weights(grid):
    r2 = grid.xi_sq()
    return 1.0 + r2 + r2 * r2


def _reflect_axis_indices(N):
    # x -> -x maps sample j to (N - j) mod N on either layout used here
    idx = np.arange(N)
    return (N - idx) % N


def reflect_values(values):
    """Values of x -> f(-x) on the periodic grid."""
    out = values
    for ax in range(values.ndim):
        idx = _reflect_axis_indices(values.shape[ax])
        out = np.take(out, idx, axis=ax)
    return out


def symmetrize_values(values):
    """Average over the 2^n axis-reflection group (even part in every axis)."""
    n = values.ndim
    acc = np.zeros_like(values)
    for mask in range(2 ** n):
        v = values
        for ax in range(n):
            if mask >> ax & 1:
                idx = _reflect_axis_indices(values.shape[ax])
                v = np.take(v, idx, axis=ax)
        acc += v
    return acc / 2 ** n


def _weight_array(grid, weight):
    """Evaluate a weight (callable on frequency meshes, or array) on the lattice."""
    if callable(weight):
        warr = np.asarray(weight(*grid.freq_mesh()), dtype=float)
        if warr.shape != grid.shape:
            warr = np.broadcast_to(warr, grid.shape).astype(float)
    else:
        warr = np.asarray(weight, dtype=float)
        if warr.shape != grid.shape:
            raise ValueError("weight array shape does not match grid")
    if not np.all(np.isfinite(warr)):
        raise ValueError("weight is not finite at every lattice frequency")
    return warr


def apply_multiplier(f, weight):
    """Inverse transform of weight(xi) * f^(xi).

    The weight must be even under xi -> -xi (Hermitian symmetry), otherwise
    the output would not be real and the call is rejected.
    """
    grid = f.grid
    warr = _weight_array(grid, weight)
    if not np.allclose(warr, reflect_values(warr), rtol=0.0, atol=1e-12 * max(1.0, float(np.max(np.abs(warr))))):
        raise ValueError("weight breaks Hermitian symmetry (not even in xi)")
    out = np.fft.ifftn(warr * np.fft.fftn(f.values))
    return RealField(grid, np.real(out))


def apply_weights_raw(values, warr):
    """Unchecked multiplier application on a raw array (internal hot path)."""
    return np.real(np.fft.ifftn(warr * np.fft.fftn(values)))


def spectral_derivative(f, axis=0):
    """Spectral partial derivative along one axis."""
    grid = f.grid
    xi = grid.axis_freqs()
    shape = [1] * grid.n
    shape[axis] = grid.N
    mult = 1j * xi.reshape(shape)
    out = np.fft.ifftn(mult * np.fft.fftn(f.values))
    return RealField(grid, np.real(out))


def weighted_inner(u, v, kind="l2", s=None, weight=None):
    """Discrete quadrature of int w(xi) u^(xi) conj(v^(xi)) dxi.

    kind is one of 'sobolev_s' (w = 1 + |xi|^2 + |xi|^{2s}, requires s),
    'h2' (w = 1 + |xi|^2 + |xi|^4), 'l2' (w = 1), or 'custom' (pass weight).
    Symmetric and positive semi-definite for non-negative weights.
    """
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    grid = u.grid
    if kind == "sobolev_s":
        if s is None:
            raise ValueError("kind 'sobolev_s' requires s")
        warr = symbol_weights(grid, s)
    elif kind == "h2":
        warr = _h2_weights(grid)
    elif kind == "l2":
        warr = 1.0
    elif kind == "custom":
        if weight is None:
            raise ValueError("kind 'custom' requires a weight")
        warr = _weight_array(grid, weight)
    else:
        raise ValueError(f"unknown weight kind {kind!r}")
    uh = np.fft.fftn(u.values)
    vh = np.fft.fftn(v.values)
    scale = grid.volume / grid.size ** 2
    return scale * float(np.real(np.sum(warr * uh * np.conj(vh))))


def inner_weights_raw(uvals, vvals, warr, grid):
    """Weighted spectral inner product on raw arrays (internal hot path)."""
    uh = np.fft.fftn(uvals)
    vh = np.fft.fftn(vvals)
    return grid.volume / grid.size ** 2 * float(np.real(np.sum(warr * uh * np.conj(vh))))


def norm_s(f, s):
    return math.sqrt(max(weighted_inner(f, f, "sobolev_s", s=s), 0.0))


def norm_h1(f):
    return math.sqrt(max(weighted_inner(f, f, "custom", weight=1.0 + f.grid.xi_sq()), 0.0))


def norm_h2(f):
    return math.sqrt(max(weighted_inner(f, f, "h2"), 0.0))


def lp_norm(f, q):
    """L^q norm by cell-volume quadrature in physical space."""
    return float((f.grid.cell_volume * np.sum(np.abs(f.values) ** q)) ** (1.0 / q))


def integrate(f):
    return float(f.grid.cell_volume * np.sum(f.values))


def field_from_function(grid, fn):
    """Sample fn(x1, ..., xn) on the grid."""
    return RealField(grid, np.asarray(fn(*grid.coord_mesh()), dtype=float))


def sphere_measure(n):
    """|S^{n-1}|; equals 2 for n = 1 (two points)."""
    return 2.0 * math.pi ** (n / 2.0) / math.exp(gammaln(n / 2.0))


def _sphere_cos_transform(n):
    """A_n(r) = int_{S^{n-1}} cos(r theta_1) dsigma and its oscillation period."""
    if n == 1:
        return (lambda r: 2.0 * math.cos(r)), "cos"
    if n == 2:
        return (lambda r: 2.0 * math.pi * j0(r)), "j0"
    return (lambda r: 4.0 * math.pi * (math.sin(r) / r if r != 0.0 else 1.0)), "sinc"


def _cns_head_series(n, s, delta, terms=18):
    """int_0^delta rho^{-1-2s} (omega - A_n(rho)) drho by the Taylor series of A_n.

    omega - A_n(rho) = omega * sum_{m>=1} (-1)^{m+1} rho^{2m} mu_{2m} / (2m)!
    with mu_{2m} = (2m-1)!! / (n (n+2) ... (n+2m-2)) the sphere moments of
    theta_1^{2m}; each term integrates to delta^{2m-2s}/(2m-2s).
    """
    om = sphere_measure(n)
    total = 0.0
    mu = 1.0
    fact = 1.0
    for m in range(1, terms + 1):
        mu *= (2 * m - 1) / (n + 2 * m - 2)
        fact *= (2 * m - 1) * (2 * m)
        term = (-1) ** (m + 1) * mu / fact * delta ** (2 * m - 2 * s) / (2 * m - 2 * s)
        total += term
    return om * total


def compute_cns(n, s, tol=1e-8):
    """Normalization constant c_{n,s} = (int (1 - cos xi_1)/|xi|^{n+2s} dxi)^{-1}.

    Reduced to the 1-D radial integral int_0^inf rho^{-1-2s}(omega_{n-1} -
    A_n(rho)) drho: series head on [0, 1], adaptive Gauss-Kronrod panels on
    [1, R], analytic power tail for the omega part and an oscillation-aware
    tail for the A_n part. Raises QuadratureError when the combined error
    estimate exceeds tol relative.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"s={s} must lie in (0, 1)")
    om = sphere_measure(n)
    A, osc = _sphere_cos_transform(n)
    delta, r0 = 1.0, 60.0

    head = _cns_head_series(n, s, delta)
    mid, mid_err = quad(
        lambda r: (om - A(r)) * r ** (-1.0 - 2.0 * s), delta, r0, limit=400,
        epsabs=1e-13, epsrel=1e-12,
    )
    tail_const = om * r0 ** (-2.0 * s) / (2.0 * s)

    err = mid_err
    if osc == "cos":
        osc_tail, e = quad(lambda r: 2.0 * r ** (-1.0 - 2.0 * s), r0, np.inf,
                           weight="cos", wvar=1.0)
        err += abs(e)
    elif osc == "sinc":
        osc_tail, e = quad(lambda r: 4.0 * math.pi * r ** (-2.0 - 2.0 * s), r0, np.inf,
                           weight="sin", wvar=1.0)
        err += abs(e)
    else:
        # J0 tail: integrate between consecutive Bessel zeros and accelerate
        # the alternating partial sums by repeated averaging
        zeros = jn_zeros(0, 400)
        pts = np.concatenate([[r0], zeros[zeros > r0]])
        terms = []
        for a, b in zip(pts[:-1], pts[1:]):
            v, e = quad(lambda r: 2.0 * math.pi * j0(r) * r ** (-1.0 - 2.0 * s), a, b, limit=60)
            terms.append(v)
            err += abs(e)
        ps = np.cumsum(terms)
        while len(ps) > 2:
            ps = 0.5 * (ps[1:] + ps[:-1])
        osc_tail = float(ps[-1])
        err += abs(float(ps[-1] - ps[0])) * 1e-12

    inv = head + mid + tail_const - osc_tail
    if inv <= 0 or not math.isfinite(inv):
        raise QuadratureError(f"c_{{n,s}} quadrature collapsed (integral {inv})", err)
    if err > tol * inv:
        raise QuadratureError(
            f"c_{{n,s}} quadrature reached {err / inv:.2e} relative, above tol {tol:.1e}",
            err / inv,
        )
    return 1.0 / inv
