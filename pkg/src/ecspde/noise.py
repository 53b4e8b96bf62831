"""Finite-mode Wiener forcing: basis construction, increments, convolutions.

The forcing is a finite family of independent scalar Brownian motions, one
per real trigonometric Fourier direction: scalar directions are
amp*sqrt(2)*cos(k.x) / amp*sqrt(2)*sin(k.x) (mean zero), vector directions
the same modes carried by the unit vector k-perp/|k| (exactly divergence
free).  Amplitudes follow sigma/|k|^alpha up to a shell cutoff, which keeps
the forcing range covering every low mode up to that shell.

Increments are generated by a counter-based Philox stream keyed by
(seed, path, step), so ensemble members can be produced in any order, in
parallel, with bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .spectral import (
    AREA,
    FourierGrid,
    ScalarField,
    VectorField,
    _truncate_mantissa,
    hs_norm,
    integrate_phys,
    l2_norm,
    leray_project,
    phys_values,
    sobolev_norm_weighted,
)

MASK64 = (1 << 64) - 1


class NoiseConfigError(ValueError):
    """Raised for invalid noise configuration."""


@dataclass(frozen=True)
class NoiseConfig:
    """Shell cutoffs |k|^2 <= *_kmax_sq, amplitude law sigma/|k|^alpha."""

    scalar_kmax_sq: int = 0
    vector_kmax_sq: int = 0
    sigma: float = 0.0
    alpha: float = 2.0

    def validate(self):
        if self.sigma < 0:
            raise NoiseConfigError("sigma must be >= 0")
        if self.alpha < 0:
            raise NoiseConfigError("alpha must be >= 0")
        if self.scalar_kmax_sq < 0 or self.vector_kmax_sq < 0:
            raise NoiseConfigError("shell cutoffs must be >= 0")


@dataclass(frozen=True)
class NoiseDirection:
    kind: str  # "scalar" | "vector"
    k: tuple[int, int]
    trig: str  # "cos" | "sin"
    amplitude: float


def half_lattice(kmax_sq: int):
    """Representatives of +-k pairs with 0 < |k|^2 <= kmax_sq.

    Ordering (shell, kx, ky) is the documented tie-break used everywhere a
    mode list is enumerated.
    """
    out = []
    if kmax_sq <= 0:
        return out
    kmax = int(math.isqrt(kmax_sq))
    for kx in range(0, kmax + 1):
        for ky in range(-kmax, kmax + 1):
            if kx == 0 and ky <= 0:
                continue
            if kx * kx + ky * ky <= kmax_sq:
                out.append((kx, ky))
    out.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    return out


class NoiseBasis:
    """Finite families {gtilde_l} (scalar) and {g_l} (vector) on one grid."""

    def __init__(self, grid: FourierGrid, directions: list[NoiseDirection]):
        self.grid = grid
        self.directions = directions
        self.scalar_directions = [d for d in directions if d.kind == "scalar"]
        self.vector_directions = [d for d in directions if d.kind == "vector"]
        self.n_scalar = len(self.scalar_directions)
        self.n_vector = len(self.vector_directions)
        self._build_injection()

    @property
    def size(self) -> int:
        return len(self.directions)

    def _build_injection(self):
        n = self.grid.n
        S = np.zeros((self.n_scalar, n, n), dtype=complex)
        for row, d in enumerate(self.scalar_directions):
            S[row] = _trig_coef(self.grid, d.k, d.trig, d.amplitude)
        V = np.zeros((self.n_vector, 2, n, n), dtype=complex)
        for row, d in enumerate(self.vector_directions):
            kx, ky = d.k
            kabs = math.sqrt(kx * kx + ky * ky)
            base = _trig_coef(self.grid, d.k, d.trig, d.amplitude / kabs)
            # integer-wavenumber products of the truncated base are exact,
            # making each direction bitwise divergence-free
            base = _truncate_mantissa(base, self.grid.trunc_bits)
            V[row, 0] = -ky * base
            V[row, 1] = kx * base
        self._S_flat = S.reshape(self.n_scalar, n * n)
        self._V_flat = V.reshape(self.n_vector, 2 * n * n)

    # -- fields ------------------------------------------------------------

    def scalar_fields(self) -> list[ScalarField]:
        n = self.grid.n
        return [
            ScalarField(self.grid, self._S_flat[l].reshape(n, n).copy())
            for l in range(self.n_scalar)
        ]

    def vector_fields(self) -> list[VectorField]:
        n = self.grid.n
        return [
            VectorField(self.grid, self._V_flat[l].reshape(2, n, n).copy())
            for l in range(self.n_vector)
        ]

    # -- noise injection ----------------------------------------------------

    def split_increments(self, dw: np.ndarray):
        return dw[..., : self.n_scalar], dw[..., self.n_scalar :]

    def inject_scalar(self, dw_scalar: np.ndarray) -> np.ndarray:
        """sum_l gtilde_l dW_l as a coefficient array (..., n, n)."""
        n = self.grid.n
        out = dw_scalar @ self._S_flat if self.n_scalar else np.zeros(
            dw_scalar.shape[:-1] + (n * n,), dtype=complex
        )
        return out.reshape(dw_scalar.shape[:-1] + (n, n))

    def inject_vector(self, dw_vector: np.ndarray) -> np.ndarray:
        n = self.grid.n
        out = dw_vector @ self._V_flat if self.n_vector else np.zeros(
            dw_vector.shape[:-1] + (2 * n * n,), dtype=complex
        )
        return out.reshape(dw_vector.shape[:-1] + (2, n, n))

    def weighted_scalar_matrix(self, weight: np.ndarray) -> np.ndarray:
        """Rows AREA * weight_k * gtilde_{l,k}, for fast inner products."""
        n = self.grid.n
        return (self._S_flat.reshape(self.n_scalar, n, n) * weight * AREA).reshape(
            self.n_scalar, n * n
        )

    def weighted_vector_matrix(self, weight: np.ndarray) -> np.ndarray:
        n = self.grid.n
        return (self._V_flat.reshape(self.n_vector, 2, n, n) * weight * AREA).reshape(
            self.n_vector, 2 * n * n
        )

    # -- norms per the finite-family conventions -----------------------------

    def gtilde_hs_sq(self, s: float) -> float:
        """sum_l ||Lambda^s gtilde_l||^2 (homogeneous)."""
        return float(sum(hs_norm(f, s) ** 2 for f in self.scalar_fields()))

    def g_hs_sq(self, s: float) -> float:
        return float(sum(hs_norm(v, s) ** 2 for v in self.vector_fields()))

    def gtilde_l2_sq(self) -> float:
        return float(sum(l2_norm(f) ** 2 for f in self.scalar_fields()))

    def g_l2_sq(self) -> float:
        return float(sum(l2_norm(v) ** 2 for v in self.vector_fields()))

    def gtilde_weighted_hs_sq(self, s: float) -> float:
        return float(sum(sobolev_norm_weighted(f, s) ** 2 for f in self.scalar_fields()))

    def gtilde_lp(self, p: float, oversample: int = 3) -> float:
        """(int (sum_l gtilde_l(x)^2)^{p/2} dx)^{1/p}."""
        if self.n_scalar == 0:
            return 0.0
        n = self.grid.n
        vals = phys_values(
            self.grid, self._S_flat.reshape(self.n_scalar, n, n), oversample
        )
        total = np.sum(vals**2, axis=0)
        return float(integrate_phys(total ** (p / 2.0)) ** (1.0 / p))


def _trig_coef(grid: FourierGrid, k, trig, amplitude) -> np.ndarray:
    """Coefficients of amplitude*sqrt(2)*cos/sin(k.x)."""
    n = grid.n
    c = np.zeros((n, n), dtype=complex)
    i, j = grid.wavenumber_index(k)
    im, jm = grid.wavenumber_index((-k[0], -k[1]))
    a = amplitude / math.sqrt(2.0)
    if trig == "cos":
        c[i, j] = a
        c[im, jm] = a
    else:
        c[i, j] = -1j * a
        c[im, jm] = 1j * a
    return c


def build_noise_basis(grid: FourierGrid, config: NoiseConfig) -> NoiseBasis:
    """One Brownian direction per trigonometric mode within the cutoffs.

    Every scalar direction is mean-zero and every vector direction exactly
    divergence-free; together they span all modes with |k|^2 up to the
    cutoffs, which is the low-mode range condition the coupling experiment
    relies on.
    """
    config.validate()
    for cutoff in (config.scalar_kmax_sq, config.vector_kmax_sq):
        if cutoff > 0 and math.isqrt(cutoff) > grid.n // 2:
            raise NoiseConfigError(
                f"cutoff |k|^2 <= {cutoff} exceeds grid resolution n={grid.n}"
            )
    directions: list[NoiseDirection] = []
    if config.sigma > 0:
        for k in half_lattice(config.scalar_kmax_sq):
            amp = config.sigma / (k[0] ** 2 + k[1] ** 2) ** (config.alpha / 2.0)
            directions.append(NoiseDirection("scalar", k, "cos", amp))
            directions.append(NoiseDirection("scalar", k, "sin", amp))
        for k in half_lattice(config.vector_kmax_sq):
            amp = config.sigma / (k[0] ** 2 + k[1] ** 2) ** (config.alpha / 2.0)
            directions.append(NoiseDirection("vector", k, "cos", amp))
            directions.append(NoiseDirection("vector", k, "sin", amp))
    return NoiseBasis(grid, directions)


# ---------------------------------------------------------------------------
# counter-based increments


class CounterSampler:
    """Stateless-by-construction normal sampler over (seed, path, step).

    Each (path, step) pair owns a disjoint Philox counter block; draws
    consume raw 64-bit words converted through the inverse normal CDF, so
    the number of words per normal is fixed and streams never overlap.
    Not safe for concurrent use from multiple threads; clone per worker.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._bg = Philox(key=self.seed)
        self._gen = Generator(self._bg)

    def normals(self, path: int, step: int, count: int) -> np.ndarray:
        st = self._bg.state
        st["state"]["counter"][:] = [0, int(step) & MASK64, int(path) & MASK64, 0]
        st["state"]["key"][:] = [self.seed, 0]
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bg.state = st
        raw = self._gen.integers(0, 2**64, size=count, dtype=np.uint64)
        u = (raw >> np.uint64(11)) * 2.0**-53 + 2.0**-54
        return ndtri(u)

    def normals_batch(self, paths, step: int, count: int) -> np.ndarray:
        out = np.empty((len(paths), count))
        for i, p in enumerate(paths):
            out[i] = self.normals(int(p), step, count)
        return out


@dataclass
class IncrementStream:
    """Reproducible Brownian increments: Delta W ~ N(0, dt) per direction."""

    seed: int
    dt: float
    path: int = 0
    step: int = 0
    _sampler: CounterSampler | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.dt < 0:
            raise NoiseConfigError("dt must be >= 0")
        if self._sampler is None:
            self._sampler = CounterSampler(self.seed)

    def sample(self, count: int) -> np.ndarray:
        dw = self._sampler.normals(self.path, self.step, count) * math.sqrt(self.dt)
        self.step += 1
        return dw

    def peek(self, count: int, step: int | None = None) -> np.ndarray:
        s = self.step if step is None else step
        return self._sampler.normals(self.path, s, count) * math.sqrt(self.dt)

    def clone(self, path: int | None = None) -> "IncrementStream":
        return replace(
            self,
            path=self.path if path is None else path,
            _sampler=CounterSampler(self.seed),
        )


def increments_at(seed: int, path: int, step: int, count: int, dt: float) -> np.ndarray:
    return CounterSampler(seed).normals(path, step, count) * math.sqrt(dt)


# ---------------------------------------------------------------------------
# stochastic convolutions


@dataclass
class StochasticConvolution:
    """phit solves d phit + Lambda phit dt = gtilde dW, phit(0) = 0;
    phi solves d phi - Delta phi dt = g dW, phi(0) = 0.

    The written semigroups in the mild formulas grow for these signs; the
    dissipative (decaying) reading is adopted, which is the one under which
    the shifted pathwise system closes.
    """

    phit: ScalarField
    phi: VectorField
    t: float = 0.0

    @classmethod
    def zeros(cls, grid: FourierGrid, batch: tuple = ()) -> "StochasticConvolution":
        return cls(ScalarField.zeros(grid, batch), VectorField.zeros(grid, batch), 0.0)


def update_convolution(
    sc: StochasticConvolution,
    basis: NoiseBasis,
    increments: np.ndarray,
    dt: float,
    decay_scalar: np.ndarray | None = None,
    decay_vector: np.ndarray | None = None,
) -> StochasticConvolution:
    """Exact per-mode recurrence phi(t+dt) = exp(-m dt) (phi(t) + g dW).

    m is |k| for the scalar convolution and |k|^2 for the vector one.  The
    vector part is re-projected so its divergence stays bitwise zero.
    """
    grid = sc.phit.grid
    if decay_scalar is None:
        decay_scalar = np.exp(-grid.kabs * dt)
    if decay_vector is None:
        decay_vector = np.exp(-grid.k2 * dt)
    dws, dwv = basis.split_increments(np.asarray(increments))
    phit = decay_scalar * (sc.phit.coef + basis.inject_scalar(dws))
    phit[..., 0, 0] = 0.0
    phi = decay_vector * (sc.phi.coef + basis.inject_vector(dwv))
    phi_field = leray_project(VectorField(grid, phi))
    return StochasticConvolution(ScalarField(grid, phit), phi_field, sc.t + dt)
