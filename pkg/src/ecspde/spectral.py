"""Fourier grid, multiplier operators, and norms on the 2pi-periodic torus.

Fields are held as complex Fourier coefficients over the full n x n integer
wavenumber lattice in numpy FFT layout, with the convention

    f(x) = sum_k f_k exp(i k.x),      f_k = (2pi)^{-2} int f exp(-i k.x) dx,

so real-valued fields carry Hermitian-symmetric coefficients f_{-k} =
conj(f_k).  Leading batch axes are allowed everywhere: coefficient arrays
have shape (..., n, n) (scalars) or (..., 2, n, n) (vectors) and every
operator acts on the trailing lattice axes only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
AREA = TWO_PI * TWO_PI  # Lebesgue measure of the torus
HERMITIAN_TOL = 1e-13


class SpectralError(ValueError):
    """Raised when an operator precondition is violated."""


class FourierGrid:
    """Square n x n grid on [0, 2pi)^2 with cached multiplier arrays.

    The dealias mask keeps exactly the modes with |k_i| <= floor(n/3)
    (2/3 rule).  ``trunc_bits`` is the number of mantissa bits reserved so
    that products of a coefficient by any integer wavenumber component are
    exact in IEEE double arithmetic; the Leray projector relies on this to
    return fields whose spectral divergence is bitwise zero.
    """

    def __init__(self, n: int):
        if n < 8 or n % 2 != 0:
            raise SpectralError(f"grid size must be even and >= 8, got {n}")
        self.n = n
        k1 = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers, FFT layout
        self.k1 = k1
        self.kx = k1[:, None]
        self.ky = k1[None, :]
        self.k2 = self.kx**2 + self.ky**2
        self.kabs = np.sqrt(self.k2)
        self.kmax_dealias = n // 3
        self.dealias_mask = (np.abs(self.kx) <= n // 3) & (np.abs(self.ky) <= n // 3)
        with np.errstate(divide="ignore"):
            self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        self.trunc_bits = max(1, math.ceil(math.log2(n // 2)))
        x = np.arange(n) * (TWO_PI / n)
        self.x1 = x[:, None] * np.ones((1, n))
        self.x2 = np.ones((n, 1)) * x[None, :]
        self.dx = TWO_PI / n

    def __repr__(self):
        return f"FourierGrid(n={self.n})"

    def __eq__(self, other):
        return isinstance(other, FourierGrid) and other.n == self.n

    def __hash__(self):
        return hash(("FourierGrid", self.n))

    def multiplier(self, s: float) -> np.ndarray:
        """|k|^s with the zero mode set to 0 (valid for any real s)."""
        out = np.zeros_like(self.k2)
        nz = self.k2 > 0
        out[nz] = self.kabs[nz] ** s
        return out

    def wavenumber_index(self, k: tuple[int, int]) -> tuple[int, int]:
        kx, ky = int(k[0]), int(k[1])
        if abs(kx) > self.n // 2 or abs(ky) > self.n // 2:
            raise SpectralError(f"mode {k} outside grid of size {self.n}")
        return kx % self.n, ky % self.n


def _truncate_mantissa(arr: np.ndarray, bits: int) -> np.ndarray:
    """Round mantissas to 53-bits so integer-wavenumber products are exact."""
    scale = 2.0 ** (53 - bits)

    def _trunc_real(x):
        m, e = np.frexp(x)
        return np.ldexp(np.round(m * scale) / scale, e)

    if np.iscomplexobj(arr):
        return _trunc_real(arr.real) + 1j * _trunc_real(arr.imag)
    return _trunc_real(arr)


def conj_reflect(coef: np.ndarray) -> np.ndarray:
    """conj(f_{-k}) in numpy FFT layout (trailing two axes)."""
    return np.conj(np.roll(np.flip(coef, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1)))


def hermitize(coef: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Project onto Hermitian-symmetric coefficients, checking the residual.

    The asymmetric part must be below ``tol`` relative to the field scale;
    a larger residual indicates a bug upstream, not roundoff.
    """
    sym = 0.5 * (coef + conj_reflect(coef))
    resid = np.max(np.abs(coef - sym))
    scale = max(1.0, float(np.max(np.abs(sym))) if sym.size else 1.0)
    if resid > tol * scale:
        raise SpectralError(f"Hermitian residual {resid:.3e} exceeds {tol:.1e} * scale")
    return sym


@dataclass
class ScalarField:
    """Real scalar field on the torus, stored spectrally."""

    grid: FourierGrid
    coef: np.ndarray  # complex, shape (..., n, n)

    @classmethod
    def zeros(cls, grid: FourierGrid, batch: tuple = ()) -> "ScalarField":
        return cls(grid, np.zeros(batch + (grid.n, grid.n), dtype=complex))

    @classmethod
    def from_physical(cls, grid: FourierGrid, values: np.ndarray) -> "ScalarField":
        coef = sfft.fft2(np.asarray(values, dtype=float)) / grid.n**2
        return cls(grid, coef)

    @classmethod
    def from_modes(cls, grid: FourierGrid, modes) -> "ScalarField":
        """Build amp*cos(k.x) / amp*sin(k.x) superpositions.

        ``modes`` is an iterable of (k, amplitude, 'cos'|'sin').
        """
        f = cls.zeros(grid)
        for k, amp, trig in modes:
            i, j = grid.wavenumber_index(k)
            im, jm = grid.wavenumber_index((-k[0], -k[1]))
            if trig == "cos":
                f.coef[..., i, j] += amp / 2.0
                f.coef[..., im, jm] += amp / 2.0
            elif trig == "sin":
                f.coef[..., i, j] += -0.5j * amp
                f.coef[..., im, jm] += 0.5j * amp
            else:
                raise SpectralError(f"unknown trig kind {trig!r}")
        return f

    @property
    def batch_shape(self):
        return self.coef.shape[:-2]

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.coef.copy())

    def to_physical(self, oversample: int = 1) -> np.ndarray:
        return phys_values(self.grid, self.coef, oversample)

    def mean(self):
        return self.coef[..., 0, 0].real

    def mode(self, k: tuple[int, int]):
        i, j = self.grid.wavenumber_index(k)
        return self.coef[..., i, j]

    def __add__(self, other):
        return ScalarField(self.grid, self.coef + other.coef)

    def __sub__(self, other):
        return ScalarField(self.grid, self.coef - other.coef)

    def __mul__(self, a):
        return ScalarField(self.grid, self.coef * a)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.coef)


@dataclass
class VectorField:
    """Two-component real field; component axis is third from the end."""

    grid: FourierGrid
    coef: np.ndarray  # complex, shape (..., 2, n, n)

    @classmethod
    def zeros(cls, grid: FourierGrid, batch: tuple = ()) -> "VectorField":
        return cls(grid, np.zeros(batch + (2, grid.n, grid.n), dtype=complex))

    @classmethod
    def from_components(cls, fx: ScalarField, fy: ScalarField) -> "VectorField":
        return cls(fx.grid, np.stack([fx.coef, fy.coef], axis=-3))

    @classmethod
    def from_physical(cls, grid: FourierGrid, vx: np.ndarray, vy: np.ndarray) -> "VectorField":
        return cls.from_components(
            ScalarField.from_physical(grid, vx), ScalarField.from_physical(grid, vy)
        )

    @property
    def batch_shape(self):
        return self.coef.shape[:-3]

    def component(self, j: int) -> ScalarField:
        return ScalarField(self.grid, self.coef[..., j, :, :])

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.coef.copy())

    def to_physical(self, oversample: int = 1) -> np.ndarray:
        return phys_values(self.grid, self.coef, oversample)

    def mean(self):
        return self.coef[..., :, 0, 0].real

    def __add__(self, other):
        return VectorField(self.grid, self.coef + other.coef)

    def __sub__(self, other):
        return VectorField(self.grid, self.coef - other.coef)

    def __mul__(self, a):
        return VectorField(self.grid, self.coef * a)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, -self.coef)


# ---------------------------------------------------------------------------
# transforms and quadrature


def phys_values(grid: FourierGrid, coef: np.ndarray, oversample: int = 1) -> np.ndarray:
    """Evaluate on a uniform (oversample*n)^2 physical grid.

    Oversampling zero-pads the spectrum, so point values are exact for any
    band-limited field and uniform quadrature on the fine grid integrates
    polynomial expressions of the field exactly once the grid resolves them.
    """
    n = grid.n
    if oversample == 1:
        return np.real(sfft.ifft2(coef)) * n**2
    m = oversample * n
    big_shape = coef.shape[:-2] + (m, m)
    big = np.zeros(big_shape, dtype=complex)
    idx = (grid.k1.astype(int)) % m
    big[..., idx[:, None], idx[None, :]] = coef
    return np.real(sfft.ifft2(big)) * m**2


def integrate_phys(values: np.ndarray) -> np.ndarray:
    """Integral over the torus of uniformly sampled values (trapezoid-exact)."""
    return values.mean(axis=(-2, -1)) * AREA


def phys_values_half(grid: FourierGrid, coef: np.ndarray, oversample: int = 2) -> np.ndarray:
    """Oversampled physical samples via the non-redundant half spectrum.

    Cheaper than ``phys_values`` for real fields; assumes no content on the
    Nyquist row/column (guaranteed for dealiased dynamical fields).
    """
    n = grid.n
    m = oversample * n
    nh = n // 2 + 1
    half = np.zeros(coef.shape[:-2] + (m, m // 2 + 1), dtype=complex)
    idx = grid.k1.astype(int) % m
    half[..., idx[:, None], np.arange(nh)[None, :]] = coef[..., :, :nh]
    return sfft.irfft2(half, s=(m, m)) * m**2


# ---------------------------------------------------------------------------
# multiplier operators


def apply_lambda(f: ScalarField, s: float) -> ScalarField:
    """Fractional Laplacian power: coefficients scaled by |k|^s, zero mode kept 0."""
    if s < 0:
        m = np.max(np.abs(f.mean()))
        if m > 1e-12:
            raise SpectralError(f"negative power {s} on field with mean {m:.3e}")
    out = f.coef * f.grid.multiplier(s)
    out[..., 0, 0] = 0.0
    return ScalarField(f.grid, out)


def gradient(f: ScalarField) -> VectorField:
    g = f.grid
    return VectorField(
        g, np.stack([1j * g.kx * f.coef, 1j * g.ky * f.coef], axis=-3)
    )


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    return ScalarField(
        g, 1j * g.kx * v.coef[..., 0, :, :] + 1j * g.ky * v.coef[..., 1, :, :]
    )


def riesz(f: ScalarField) -> VectorField:
    """Periodic Riesz transform R = grad Lambda^{-1} (multiplier i k_j / |k|)."""
    return gradient(apply_lambda(f, -1.0))


def laplacian_scalar(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, -f.grid.k2 * f.coef)


def laplacian_vector(v: VectorField) -> VectorField:
    return VectorField(v.grid, -v.grid.k2 * v.coef)


def leray_project(v: VectorField) -> VectorField:
    """Per-mode projection onto divergence-free fields; zero mode passes through.

    The perpendicular amplitude is mantissa-truncated so that the integer
    products k_x*(k_y*p) and k_y*(k_x*p) round identically, which makes the
    spectral divergence of the output bitwise zero on every mode.
    """
    g = v.grid
    vx = v.coef[..., 0, :, :]
    vy = v.coef[..., 1, :, :]
    p = (-g.ky * vx + g.kx * vy) * g.inv_k2
    p = _truncate_mantissa(p, g.trunc_bits)
    out = np.empty_like(v.coef)
    out[..., 0, :, :] = -g.ky * p
    out[..., 1, :, :] = g.kx * p
    out[..., :, 0, 0] = v.coef[..., :, 0, 0]
    return VectorField(g, out)


def dealias(f):
    """Zero every coefficient outside the 2/3 mask."""
    if isinstance(f, ScalarField):
        return ScalarField(f.grid, f.coef * f.grid.dealias_mask)
    return VectorField(f.grid, f.coef * f.grid.dealias_mask)


def strip_mean(f: ScalarField) -> ScalarField:
    out = f.coef.copy()
    out[..., 0, 0] = 0.0
    return ScalarField(f.grid, out)


# ---------------------------------------------------------------------------
# nonlinear products (pseudo-spectral, 2/3-dealiased)


def _product_coef(grid: FourierGrid, ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    n = grid.n
    a = np.real(sfft.ifft2(ca * grid.dealias_mask)) * n**2
    b = np.real(sfft.ifft2(cb * grid.dealias_mask)) * n**2
    out = sfft.fft2(a * b) / n**2
    out *= grid.dealias_mask
    return hermitize(out)


def nonlinear_product(a, b):
    """Pointwise product of dealiased operands, dealiased again.

    scalar*scalar -> scalar, scalar*vector -> vector.  The mean (zero mode)
    of the product is retained; strip it explicitly when the result feeds a
    mean-zero slot.
    """
    if a.grid is not b.grid and a.grid != b.grid:
        raise SpectralError("operands live on different grids")
    if isinstance(a, VectorField) and isinstance(b, ScalarField):
        a, b = b, a
    if isinstance(a, ScalarField) and isinstance(b, ScalarField):
        return ScalarField(a.grid, _product_coef(a.grid, a.coef, b.coef))
    if isinstance(a, ScalarField) and isinstance(b, VectorField):
        cx = _product_coef(a.grid, a.coef, b.coef[..., 0, :, :])
        cy = _product_coef(a.grid, a.coef, b.coef[..., 1, :, :])
        return VectorField(a.grid, np.stack([cx, cy], axis=-3))
    raise SpectralError("unsupported operand combination")


def advect_scalar(u: VectorField, f: ScalarField) -> ScalarField:
    """u . grad f with dealiased products."""
    gf = gradient(f)
    t0 = _product_coef(u.grid, u.coef[..., 0, :, :], gf.coef[..., 0, :, :])
    t1 = _product_coef(u.grid, u.coef[..., 1, :, :], gf.coef[..., 1, :, :])
    return ScalarField(u.grid, t0 + t1)


def advect_vector(u: VectorField, v: VectorField) -> VectorField:
    """u . grad v componentwise, dealiased."""
    comps = []
    for j in (0, 1):
        comps.append(advect_scalar(u, v.component(j)).coef)
    return VectorField(u.grid, np.stack(comps, axis=-3))


# ---------------------------------------------------------------------------
# inner products and norms


def l2_inner(a, b):
    """(a, b)_{L^2} by Parseval, including the (2pi)^2 measure factor."""
    ca, cb = a.coef, b.coef
    if isinstance(a, VectorField):
        s = np.sum(ca * np.conj(cb), axis=(-3, -2, -1))
    else:
        s = np.sum(ca * np.conj(cb), axis=(-2, -1))
    return AREA * np.real(s)


def l2_norm(f):
    return np.sqrt(np.maximum(l2_inner(f, f), 0.0))


def hs_norm(f, s: float):
    """Homogeneous Sobolev norm ||Lambda^s f||_{L^2} (zero mode excluded)."""
    g = f.grid
    if s < 0:
        m = np.max(np.abs(f.mean()))
        if m > 1e-12:
            raise SpectralError(f"homogeneous norm of order {s} needs mean zero")
    w = g.multiplier(2.0 * s)
    c2 = np.abs(f.coef) ** 2
    if isinstance(f, VectorField):
        return np.sqrt(AREA * np.sum(w * c2, axis=(-3, -2, -1)))
    return np.sqrt(AREA * np.sum(w * c2, axis=(-2, -1)))


def sobolev_norm_weighted(f, s: float):
    """Inhomogeneous coefficient-sum norm (sum_k (1+|k|^s)^2 |f_k|^2)^(1/2).

    This is the bare coefficient convention, with no measure factor; it is
    exposed alongside the homogeneous default because estimates alternate
    between the two and absorb the ratio into unnamed constants.
    """
    g = f.grid
    if s < 0:
        m = np.max(np.abs(f.mean()))
        if m > 1e-12:
            raise SpectralError(f"weighted norm of order {s} needs mean zero")
    w = (1.0 + g.multiplier(s)) ** 2
    if s < 0:
        w[0, 0] = 1.0
    c2 = np.abs(f.coef) ** 2
    if isinstance(f, VectorField):
        return np.sqrt(np.sum(w * c2, axis=(-3, -2, -1)))
    return np.sqrt(np.sum(w * c2, axis=(-2, -1)))


def lp_norm(f, p: float, oversample: int = 3):
    """L^p norm by uniform quadrature on an oversampled physical grid."""
    vals = f.to_physical(oversample)
    if isinstance(f, VectorField):
        mag2 = vals[..., 0, :, :] ** 2 + vals[..., 1, :, :] ** 2
        return integrate_phys(mag2 ** (p / 2.0)) ** (1.0 / p)
    return integrate_phys(np.abs(vals) ** p) ** (1.0 / p)


@dataclass
class NormReport:
    """Norm bundle for one field; all entries are >= 0 and H^0 equals L^2."""

    l2: float | np.ndarray
    l4: float | np.ndarray
    hs: dict = field(default_factory=dict)  # s -> homogeneous ||Lambda^s f||
    h_minus_half: float | np.ndarray | None = None
    hs_weighted: dict = field(default_factory=dict)


def norms(f, s_list=(), weighted_s_list=(), with_h_minus_half: bool | None = None) -> NormReport:
    """Compute the requested norm set for a field.

    H^s entries use the homogeneous convention ||Lambda^s f|| (so H^0 is the
    L^2 norm); the weighted coefficient-sum variant is reported separately.
    The Hdot^{-1/2} value is included by default for mean-zero fields.
    """
    if with_h_minus_half is None:
        with_h_minus_half = bool(np.max(np.abs(f.mean())) <= 1e-12)
    report = NormReport(l2=l2_norm(f), l4=lp_norm(f, 4.0))
    for s in s_list:
        report.hs[s] = hs_norm(f, s)
    for s in weighted_s_list:
        report.hs_weighted[s] = sobolev_norm_weighted(f, s)
    if with_h_minus_half:
        report.h_minus_half = hs_norm(f, -0.5)
    return report


# ---------------------------------------------------------------------------
# random field helpers (tests, calibration sweeps, initial data)


def random_scalar_field(
    grid: FourierGrid,
    rng: np.random.Generator,
    kmax: int | None = None,
    amplitude: float = 1.0,
    alpha: float = 1.0,
    batch: tuple = (),
) -> ScalarField:
    """Mean-zero random real field with an |k|^-alpha amplitude envelope."""
    if kmax is None:
        kmax = grid.kmax_dealias
    n = grid.n
    raw = rng.standard_normal(batch + (n, n)) + 1j * rng.standard_normal(batch + (n, n))
    env = np.zeros_like(grid.k2)
    keep = (grid.k2 > 0) & (np.abs(grid.kx) <= kmax) & (np.abs(grid.ky) <= kmax)
    env[keep] = grid.kabs[keep] ** (-alpha)
    coef = raw * env
    coef = 0.5 * (coef + conj_reflect(coef))
    coef[..., 0, 0] = 0.0
    f = ScalarField(grid, coef)
    scale = l2_norm(f)
    scale = np.where(scale > 0, scale, 1.0)
    f.coef *= (amplitude / scale)[..., None, None] if batch else amplitude / scale
    return f


def random_divfree_field(
    grid: FourierGrid,
    rng: np.random.Generator,
    kmax: int | None = None,
    amplitude: float = 1.0,
    alpha: float = 1.0,
    batch: tuple = (),
) -> VectorField:
    """Random divergence-free vector field (exactly solenoidal per mode)."""
    stream = random_scalar_field(grid, rng, kmax=kmax, amplitude=1.0, alpha=alpha + 1.0, batch=batch)
    g = grid
    v = VectorField(
        g,
        np.stack([-1j * g.ky * stream.coef, 1j * g.kx * stream.coef], axis=-3),
    )
    scale = l2_norm(v)
    scale = np.where(scale > 0, scale, 1.0)
    v.coef *= (amplitude / scale)[..., None, None, None] if batch else amplitude / scale
    # project last: scalar multiplication would re-round the exact zeros
    return leray_project(v)
