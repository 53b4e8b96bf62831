"""Drift assembly and time integration of the charge/velocity system.

The model couples a mean-zero surface charge density q (critically damped,
linear rate |k| per mode) to an incompressible velocity u (rate |k|^2):

    dq + (u.grad q + Lambda q - eps Delta q) dt = Delta Phi dt + gtilde dW
    du + (u.grad u - Delta u) dt + grad p dt
        = (- q R q - q grad Phi + f) dt + g dW,     div u = 0.

Time stepping is a per-mode exponential (integrating-factor) Euler-Maruyama
scheme: the stiff diagonal dissipation is integrated exactly, the quadratic
drift explicitly, and the additive noise receives the same integrating
factor over the step.  This removes the dt ~ 1/|k|_max constraint that an
explicit treatment of the critical Lambda q term would impose; only the
advective CFL limit remains, guarded per step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .diagnostics import LOG1P_PREFIX, EnergyLedger, state_norms
from .noise import (
    CounterSampler,
    NoiseBasis,
    NoiseConfig,
    StochasticConvolution,
    build_noise_basis,
    update_convolution,
)
from .spectral import (
    AREA,
    FourierGrid,
    ScalarField,
    VectorField,
    divergence,
    hermitize,
    l2_norm,
    leray_project,
    lp_norm,
    phys_values,
    phys_values_half,
)


class DynamicsError(RuntimeError):
    pass


class BlowUpError(DynamicsError):
    """Numerical blow-up: the model is globally well-posed, so a non-finite
    state indicates a misconfigured run (dt, amplitudes, resolution)."""

    def __init__(self, t: float, last_valid: "SystemState"):
        super().__init__(f"non-finite state at t={t:.6g}")
        self.t = t
        self.last_valid = last_valid


@dataclass
class SystemState:
    q: ScalarField
    u: VectorField
    t: float = 0.0

    @classmethod
    def zeros(cls, grid: FourierGrid, batch: tuple = ()) -> "SystemState":
        return cls(ScalarField.zeros(grid, batch), VectorField.zeros(grid, batch), 0.0)

    @property
    def grid(self) -> FourierGrid:
        return self.q.grid

    @property
    def batch_shape(self):
        return self.q.batch_shape

    def copy(self) -> "SystemState":
        return SystemState(self.q.copy(), self.u.copy(), self.t)

    def broadcast(self, batch: tuple) -> "SystemState":
        qc = np.broadcast_to(self.q.coef, batch + self.q.coef.shape[-2:]).copy()
        uc = np.broadcast_to(self.u.coef, batch + self.u.coef.shape[-3:]).copy()
        return SystemState(ScalarField(self.grid, qc), VectorField(self.grid, uc), self.t)

    def validate(self, tol: float = 1e-12):
        if np.max(np.abs(self.q.mean())) > tol:
            raise DynamicsError("charge density must be mean-zero")
        if np.max(np.abs(divergence(self.u).coef)) > tol:
            raise DynamicsError("velocity must be divergence-free")


@dataclass
class ModelParams:
    """Static model data: potential Phi, body force f, viscous eps >= 0.

    The viscosity in front of -Delta u is fixed to 1; eps multiplies the
    optional extra -Delta q regularization of the approximating system.
    """

    phi: ScalarField | None = None
    f: VectorField | None = None
    eps: float = 0.0

    def __post_init__(self):
        if self.eps < 0:
            raise DynamicsError("eps must be >= 0")
        if self.f is not None:
            if np.max(np.abs(self.f.mean())) > 1e-12:
                raise DynamicsError("body force must have zero space average")
            if np.max(np.abs(divergence(self.f).coef)) > 1e-12:
                raise DynamicsError("body force must be divergence-free")

    @property
    def has_phi(self) -> bool:
        return self.phi is not None and bool(np.any(self.phi.coef != 0))

    def grad_phi_linf(self, oversample: int = 3) -> float:
        if not self.has_phi:
            return 0.0
        g = self.phi.grid
        gp = np.stack([1j * g.kx * self.phi.coef, 1j * g.ky * self.phi.coef], axis=-3)
        vals = phys_values(g, gp, oversample)
        return float(np.max(np.sqrt(vals[..., 0, :, :] ** 2 + vals[..., 1, :, :] ** 2)))


@dataclass
class StepSchedule:
    dt: float
    t_final: float
    snapshot_stride: int = 1
    ledger_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise DynamicsError("dt must be > 0")
        if self.t_final < 0:
            raise DynamicsError("t_final must be >= 0")
        if self.snapshot_stride < 1 or self.ledger_stride < 1:
            raise DynamicsError("strides must be >= 1")
        if abs(self.steps * self.dt - self.t_final) > 1e-9 * max(self.dt, self.t_final):
            raise DynamicsError(
                f"t_final={self.t_final} is not an integer multiple of dt={self.dt}"
            )

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class DriftValue:
    """Right-hand-side tendencies (the negated evolution operator)."""

    charge: ScalarField
    velocity_pre: VectorField  # before pressure elimination
    velocity: VectorField  # Leray-projected


_EMPTY_BASIS_CACHE: dict[int, NoiseBasis] = {}


def _empty_basis(grid: FourierGrid) -> NoiseBasis:
    if grid.n not in _EMPTY_BASIS_CACHE:
        _EMPTY_BASIS_CACHE[grid.n] = build_noise_basis(grid, NoiseConfig())
    return _EMPTY_BASIS_CACHE[grid.n]


class _StepWork:
    """Cached multiplier arrays and static fields for one (grid, params, dt).

    The hot loop works on the non-redundant half spectrum (real fields), so
    the half-lattice variants of every multiplier are cached here too.
    """

    def __init__(self, grid: FourierGrid, params: ModelParams, dt: float):
        self.grid = grid
        self.params = params
        self.dt = dt
        self.decay_q = np.exp(-(grid.kabs + params.eps * grid.k2) * dt)
        self.decay_u = np.exp(-grid.k2 * dt)
        self.riesz_x = 1j * grid.kx * grid.multiplier(-1.0)
        self.riesz_y = 1j * grid.ky * grid.multiplier(-1.0)
        n = grid.n
        nh = n // 2 + 1
        self.nh = nh
        self.mask_h = grid.dealias_mask[:, :nh].astype(float)
        self.ikx_h = (1j * grid.kx * np.ones_like(grid.k2))[:, :nh] * self.mask_h
        self.iky_h = (1j * grid.ky * np.ones_like(grid.k2))[:, :nh] * self.mask_h
        self.riesz_x_h = self.riesz_x[:, :nh] * self.mask_h
        self.riesz_y_h = self.riesz_y[:, :nh] * self.mask_h
        # gather indices rebuilding the redundant half from rfft2 output
        rows = (-np.arange(n)) % n
        cols = n - np.arange(nh, n)
        self._rebuild_rows = rows[:, None]
        self._rebuild_cols = cols[None, :]
        if params.has_phi:
            self.lap_phi = -grid.k2 * params.phi.coef
            gp = np.stack(
                [1j * grid.kx * params.phi.coef, 1j * grid.ky * params.phi.coef], axis=-3
            )
            self.grad_phi_phys = phys_values(grid, gp * grid.dealias_mask)
        else:
            self.lap_phi = None
            self.grad_phi_phys = None
        self.f_coef = params.f.coef if params.f is not None else None

    def full_from_half(self, half: np.ndarray) -> np.ndarray:
        """Rebuild full-lattice coefficients; Hermitian symmetry is exact
        by construction."""
        n = self.grid.n
        out = np.zeros(half.shape[:-1] + (n,), dtype=complex)
        out[..., : self.nh] = half
        out[..., self.nh :] = np.conj(half[..., self._rebuild_rows, self._rebuild_cols])
        return out


def _nonlinear(work: _StepWork, qc: np.ndarray, uc: np.ndarray):
    """Dealiased quadratic drift terms.

    Returns (Nq, Nu_pre, Nu, umax): Nq = -u.grad q (+ Delta Phi),
    Nu = P[-u.grad u - q R q - q grad Phi (+ f)], with Nu_pre unprojected.
    """
    g = work.grid
    n = g.n
    mask = g.dealias_mask
    qm = qc * mask
    u0 = uc[..., 0, :, :] * mask
    u1 = uc[..., 1, :, :] * mask
    ikx, iky = 1j * g.kx, 1j * g.ky
    stack = np.stack(
        [
            qm,
            ikx * qm,
            iky * qm,
            work.riesz_x * qm,
            work.riesz_y * qm,
            u0,
            u1,
            ikx * u0,
            iky * u0,
            ikx * u1,
            iky * u1,
        ],
        axis=-3,
    )
    P = np.real(sfft.ifft2(stack)) * n**2
    q_p = P[..., 0, :, :]
    u0_p, u1_p = P[..., 5, :, :], P[..., 6, :, :]
    adv_q = u0_p * P[..., 1, :, :] + u1_p * P[..., 2, :, :]
    nu0 = u0_p * P[..., 7, :, :] + u1_p * P[..., 8, :, :] + q_p * P[..., 3, :, :]
    nu1 = u0_p * P[..., 9, :, :] + u1_p * P[..., 10, :, :] + q_p * P[..., 4, :, :]
    if work.grad_phi_phys is not None:
        nu0 = nu0 + q_p * work.grad_phi_phys[..., 0, :, :]
        nu1 = nu1 + q_p * work.grad_phi_phys[..., 1, :, :]
    umax = float(np.max(np.sqrt(u0_p**2 + u1_p**2)))
    back = sfft.fft2(np.stack([adv_q, nu0, nu1], axis=-3)) / n**2
    back = hermitize(back * mask)
    nq = -back[..., 0, :, :]
    if work.lap_phi is not None:
        nq = nq + work.lap_phi
    nu_pre = -back[..., 1:3, :, :]
    if work.f_coef is not None:
        nu_pre = nu_pre + work.f_coef
    nu = leray_project(VectorField(g, nu_pre)).coef
    return nq, nu_pre, nu, umax


def _nonlinear_fast(work: _StepWork, qc: np.ndarray, uc: np.ndarray, project: bool = True):
    """Rotational-form quadratic terms on the half spectrum.

    For divergence-free u the advective and rotational forms agree exactly
    after 2/3 dealiasing and Leray projection (the pointwise identity
    u.grad u = omega u-perp + grad |u|^2/2 holds, the aliased images of the
    gradient part fall outside the mask, and the in-mask part is killed by
    the projection), so this routine is the hot-loop equivalent of
    ``_nonlinear`` at roughly half the transform cost.  Hermitian symmetry
    of the products is structural: only the non-redundant half spectrum is
    ever formed.
    """
    g = work.grid
    n = g.n
    nh = work.nh
    q_h = qc[..., :, :nh]
    u0_h = uc[..., 0, :, :nh]
    u1_h = uc[..., 1, :, :nh]
    fwd = np.stack(
        [
            work.mask_h * q_h,
            work.ikx_h * q_h,
            work.iky_h * q_h,
            work.riesz_x_h * q_h,
            work.riesz_y_h * q_h,
            work.mask_h * u0_h,
            work.mask_h * u1_h,
            work.ikx_h * u1_h - work.iky_h * u0_h,  # vorticity
        ],
        axis=-3,
    )
    P = sfft.irfft2(fwd, s=(n, n)) * n**2
    q_p = P[..., 0, :, :]
    u0_p, u1_p = P[..., 5, :, :], P[..., 6, :, :]
    w_p = P[..., 7, :, :]
    adv_q = u0_p * P[..., 1, :, :] + u1_p * P[..., 2, :, :]
    nu0 = -w_p * u1_p + q_p * P[..., 3, :, :]
    nu1 = w_p * u0_p + q_p * P[..., 4, :, :]
    if work.grad_phi_phys is not None:
        nu0 = nu0 + q_p * work.grad_phi_phys[..., 0, :, :]
        nu1 = nu1 + q_p * work.grad_phi_phys[..., 1, :, :]
    umax = float(np.max(np.sqrt(u0_p**2 + u1_p**2)))
    back_h = sfft.rfft2(np.stack([adv_q, nu0, nu1], axis=-3)) / n**2
    back_h *= work.mask_h
    back = work.full_from_half(back_h)
    nq = -back[..., 0, :, :]
    if work.lap_phi is not None:
        nq = nq + work.lap_phi
    nu = -back[..., 1:3, :, :]
    if work.f_coef is not None:
        nu = nu + work.f_coef
    if project:
        nu = leray_project(VectorField(g, nu)).coef
    return nq, nu, umax


def compute_drift(state: SystemState, params: ModelParams) -> DriftValue:
    """Full tendencies: charge -u.grad q - Lambda q + eps Delta q + Delta Phi;
    velocity P[-u.grad u - q R q - q grad Phi + f] + Delta u."""
    g = state.grid
    work = _StepWork(g, params, dt=1.0)
    nq, nu_pre, nu, _ = _nonlinear(work, state.q.coef, state.u.coef)
    lin_q = -(g.kabs + params.eps * g.k2) * state.q.coef
    lin_u = -g.k2 * state.u.coef
    return DriftValue(
        ScalarField(g, nq + lin_q),
        VectorField(g, nu_pre + lin_u),
        VectorField(g, nu + lin_u),
    )


def cfl_limit(grid: FourierGrid, umax: float) -> float:
    return 0.5 * grid.dx / max(umax, 1e-300)


def step(
    state: SystemState,
    params: ModelParams,
    basis: NoiseBasis | None,
    increments: np.ndarray | None,
    dt: float,
    cfl_mode: str = "warn",
    work: _StepWork | None = None,
    debug_zero_drift: bool = False,
) -> SystemState:
    """One semi-implicit exponential Euler-Maruyama step.

    q_k(t+dt) = exp(-(|k|+eps|k|^2) dt) (q_k + dt Nq_k + (gtilde dW)_k)
    u_k(t+dt) = P[exp(-|k|^2 dt) (u_k + dt Nu_k + (g dW)_k)]

    with the q zero mode re-pinned and u re-projected every step.
    """
    g = state.grid
    if work is None or work.dt != dt or work.params is not params:
        work = _StepWork(g, params, dt)
    if basis is None:
        basis = _empty_basis(g)
    if increments is None:
        increments = np.zeros(state.batch_shape + (basis.size,))

    if debug_zero_drift:
        nq = np.zeros_like(state.q.coef)
        nu = np.zeros_like(state.u.coef)
        umax = 0.0
    else:
        # the per-step Leray projection below subsumes projecting the drift
        nq, nu, umax = _nonlinear_fast(work, state.q.coef, state.u.coef, project=False)

    limit = cfl_limit(g, umax)
    substeps = 1
    if dt > limit:
        if cfl_mode == "error":
            raise DynamicsError(f"CFL violation: dt={dt:.3g} > limit {limit:.3g}")
        if cfl_mode == "substep":
            substeps = int(math.ceil(dt / limit))
        elif cfl_mode == "warn":
            warnings.warn(
                f"advective CFL exceeded (dt={dt:.3g}, limit={limit:.3g})",
                RuntimeWarning,
                stacklevel=2,
            )

    dws, dwv = basis.split_increments(np.asarray(increments))
    if substeps == 1:
        qc = work.decay_q * (state.q.coef + dt * nq + basis.inject_scalar(dws))
        uc = work.decay_u * (state.u.coef + dt * nu + basis.inject_vector(dwv))
    else:
        sub_dt = dt / substeps
        sub = _StepWork(g, params, sub_dt)
        qc, uc = state.q.coef, state.u.coef
        for i in range(substeps):
            if i > 0:
                nq, nu, _ = _nonlinear_fast(work, qc, uc)
            qc = sub.decay_q * (qc + sub_dt * nq)
            uc = sub.decay_u * (uc + sub_dt * nu)
        qc = qc + work.decay_q * basis.inject_scalar(dws)
        uc = uc + work.decay_u * basis.inject_vector(dwv)

    qc[..., 0, 0] = 0.0
    u_new = leray_project(VectorField(g, uc))
    if not (
        np.all(np.isfinite(qc.view(float))) and np.all(np.isfinite(u_new.coef.view(float)))
    ):
        raise BlowUpError(state.t + dt, state)
    return SystemState(ScalarField(g, qc), u_new, state.t + dt)


# ---------------------------------------------------------------------------
# trajectory integration with ledger recording


@dataclass
class Trajectory:
    grid: FourierGrid
    params: ModelParams
    basis: NoiseBasis
    schedule: StepSchedule
    seed: int
    paths: tuple[int, ...]
    ledger: EnergyLedger | None = None
    snapshot_times: list[float] = field(default_factory=list)
    snapshots: list[SystemState] = field(default_factory=list)
    final_state: SystemState | None = None


class _LedgerRecorder:
    """Computes the documented ledger columns during integration.

    Budget integrals (dissipation, sources) accumulate by trapezoid at
    ledger stride; the martingale sum accumulates at step stride since it
    is not smooth in time; the Ito correction is the exact rate times t.
    """

    def __init__(self, grid, work: _StepWork, basis: NoiseBasis, hk_list, lowmodes):
        self.grid = grid
        self.work = work
        self.basis = basis
        self.hk_list = tuple(float(k) for k in hk_list)
        self.lowmodes = tuple(tuple(int(x) for x in k) for k in lowmodes)
        g = grid
        self.q_weights = np.stack(
            [np.ones_like(g.k2), g.multiplier(-1.0), g.multiplier(1.0), g.k2, g.multiplier(3.0)]
        )
        self.u_weights = np.stack([np.ones_like(g.k2), g.k2, g.k2**2])
        if self.hk_list:
            self.hk_q_weights = np.stack([g.multiplier(2.0 * k + 1.0) for k in self.hk_list])
            self.hk_u_weights = np.stack([g.multiplier(2.0 * k + 4.0) for k in self.hk_list])
        m1 = g.multiplier(-1.0)
        self.mart_scalar = (
            np.conj(basis.weighted_scalar_matrix(m1) * 2.0).T if basis.n_scalar else None
        )
        self.mart_vector = (
            np.conj(basis.weighted_vector_matrix(np.ones_like(g.k2)) * 2.0).T
            if basis.n_vector
            else None
        )
        self.ito_rate = basis.gtilde_hs_sq(-0.5) + basis.g_l2_sq()
        self.src_phi_vec = (
            (AREA * m1 * np.conj(work.lap_phi)).reshape(-1) if work.lap_phi is not None else None
        )
        self.src_f_vec = (
            (AREA * np.conj(work.f_coef)).reshape(-1) if work.f_coef is not None else None
        )
        self.times: list[float] = []
        self.rows: list[dict] = []

    def norm_block(self, state: SystemState) -> dict:
        g = self.grid
        q2 = np.abs(state.q.coef) ** 2
        u2 = np.sum(np.abs(state.u.coef) ** 2, axis=-3)
        qn = np.sqrt(AREA * np.einsum("wij,...ij->...w", self.q_weights, q2))
        un = np.sqrt(AREA * np.einsum("wij,...ij->...w", self.u_weights, u2))
        q_phys = phys_values_half(g, state.q.coef, oversample=2)
        q_l4 = (np.mean(q_phys**4, axis=(-2, -1)) * AREA) ** 0.25
        cols = {
            "q_l2": qn[..., 0],
            "q_hm12": qn[..., 1],
            "q_h12": qn[..., 2],
            "q_h1": qn[..., 3],
            "q_h32": qn[..., 4],
            "q_l4": q_l4,
            "u_l2": un[..., 0],
            "u_h1": un[..., 1],
            "u_h2": un[..., 2],
        }
        if self.hk_list:
            qh = AREA * np.einsum("wij,...ij->...w", self.hk_q_weights, q2)
            uh = AREA * np.einsum("wij,...ij->...w", self.hk_u_weights, u2)
            for i, k in enumerate(self.hk_list):
                cols[f"{LOG1P_PREFIX}{k:g}"] = np.log1p(qh[..., i] + uh[..., i])
        cols["src_rate"] = self.src_rate(state)
        for k in self.lowmodes:
            c = state.q.mode(k)
            cols[f"qmode_{k[0]}_{k[1]}_re"] = np.real(c).copy()
            cols[f"qmode_{k[0]}_{k[1]}_im"] = np.imag(c).copy()
        return cols

    def src_rate(self, state: SystemState) -> np.ndarray:
        out = np.zeros(state.batch_shape)
        if self.src_phi_vec is not None:
            qflat = state.q.coef.reshape(state.batch_shape + (-1,))
            out = out + 2.0 * np.real(qflat @ self.src_phi_vec)
            g = self.grid
            qp = phys_values(g, state.q.coef * g.dealias_mask, oversample=2)
            up = phys_values(g, state.u.coef * g.dealias_mask, oversample=2)
            phi = self.work.params.phi
            gp = phys_values(
                g,
                np.stack([1j * g.kx * phi.coef, 1j * g.ky * phi.coef], axis=-3),
                oversample=2,
            )
            integrand = qp * (
                up[..., 0, :, :] * gp[..., 0, :, :] + up[..., 1, :, :] * gp[..., 1, :, :]
            )
            out = out - 2.0 * np.mean(integrand, axis=(-2, -1)) * AREA
        if self.src_f_vec is not None:
            uflat = state.u.coef.reshape(state.batch_shape + (-1,))
            out = out + 2.0 * np.real(uflat @ self.src_f_vec)
        return out

    def mart_step(self, state: SystemState, dws, dwv) -> np.ndarray:
        """Ito integrand at the left endpoint times the step increments."""
        out = np.zeros(state.batch_shape)
        if self.mart_scalar is not None:
            qflat = state.q.coef.reshape(state.batch_shape + (-1,))
            out = out + np.sum(np.real(qflat @ self.mart_scalar) * dws, axis=-1)
        if self.mart_vector is not None:
            uflat = state.u.coef.reshape(state.batch_shape + (-1,))
            out = out + np.sum(np.real(uflat @ self.mart_vector) * dwv, axis=-1)
        return out

    def record(self, state: SystemState, mart_acc: np.ndarray):
        cols = self.norm_block(state)
        if self.rows:
            prev = self.rows[-1]
            dt_row = state.t - self.times[-1]
            diss_prev = 2.0 * (prev["q_l2"] ** 2 + prev["u_h1"] ** 2)
            diss_new = 2.0 * (cols["q_l2"] ** 2 + cols["u_h1"] ** 2)
            cols["diss_acc"] = prev["diss_acc"] + 0.5 * dt_row * (diss_prev + diss_new)
            cols["src_acc"] = prev["src_acc"] + 0.5 * dt_row * (
                prev["src_rate"] + cols["src_rate"]
            )
        else:
            cols["diss_acc"] = np.zeros(state.batch_shape)
            cols["src_acc"] = np.zeros(state.batch_shape)
        cols["mart_acc"] = mart_acc.copy()
        cols["ito_acc"] = np.full(state.batch_shape, self.ito_rate * state.t)
        self.rows.append(cols)
        self.times.append(state.t)

    def to_ledger(self, meta) -> EnergyLedger:
        names = list(self.rows[0].keys())
        columns = {n: np.stack([np.atleast_1d(r[n]) for r in self.rows]) for n in names}
        return EnergyLedger(np.asarray(self.times, dtype=float), columns, meta)


def integrate(
    state0: SystemState,
    params: ModelParams,
    basis: NoiseBasis | None,
    schedule: StepSchedule,
    seed: int = 0,
    paths: tuple[int, ...] = (0,),
    cfl_mode: str = "warn",
    hk_list=(1.0,),
    lowmodes=(),
    debug_zero_drift: bool = False,
) -> Trajectory:
    """Integrate a batch of paths, recording ledger rows and snapshots.

    Paths share one leading batch axis; each consumes its own counter-based
    increment stream, so results do not depend on the batch composition and
    rerunning a fixed (seed, path) reproduces every output bit.
    """
    g = state0.grid
    if basis is None:
        basis = _empty_basis(g)
    paths = tuple(int(p) for p in paths)
    batch = (len(paths),)
    if state0.batch_shape != batch:
        if state0.batch_shape == ():
            state0 = state0.broadcast(batch)
        else:
            raise DynamicsError(f"initial batch {state0.batch_shape} != paths {batch}")
    state0.validate()
    work = _StepWork(g, params, schedule.dt)
    rec = _LedgerRecorder(g, work, basis, hk_list, lowmodes)
    sampler = CounterSampler(seed)
    sqrt_dt = math.sqrt(schedule.dt)
    check_umean = not params.has_phi

    state = state0.copy()
    mart_acc = np.zeros(batch)
    rec.record(state, mart_acc)
    traj = Trajectory(
        grid=g,
        params=params,
        basis=basis,
        schedule=schedule,
        seed=seed,
        paths=paths,
        snapshot_times=[0.0],
        snapshots=[state.copy()],
    )

    mode = cfl_mode
    for istep in range(schedule.steps):
        if basis.size:
            dw = sampler.normals_batch(paths, istep, basis.size) * sqrt_dt
        else:
            dw = np.zeros(batch + (0,))
        dws, dwv = basis.split_increments(dw)
        mart_acc = mart_acc + rec.mart_step(state, dws, dwv)
        prev = state
        state = step(
            state,
            params,
            basis,
            dw,
            schedule.dt,
            cfl_mode=mode,
            work=work,
            debug_zero_drift=debug_zero_drift,
        )
        state.t = (istep + 1) * schedule.dt  # exact grid times, no float drift
        if check_umean and np.max(np.abs(state.u.coef[..., :, 0, 0])) > 1e-12:
            if np.max(np.abs(state.u.coef)) > 1e3:
                # runaway amplitudes drag the mean with them through roundoff
                raise BlowUpError(state.t, prev)
            raise DynamicsError("velocity zero mode drifted with Phi = 0")
        done = istep + 1
        if done % schedule.ledger_stride == 0:
            rec.record(state, mart_acc)
        if done % schedule.snapshot_stride == 0:
            traj.snapshot_times.append(state.t)
            traj.snapshots.append(state.copy())

    meta = _trajectory_meta(g, params, basis, schedule, seed, paths, state0, rec.ito_rate)
    traj.ledger = rec.to_ledger(meta)
    traj.final_state = state
    return traj


def _trajectory_meta(grid, params, basis, schedule, seed, paths, state0, ito_rate):
    init = state_norms(state0)
    meta = {
        "n": grid.n,
        "dt": schedule.dt,
        "t_final": schedule.t_final,
        "ledger_stride": schedule.ledger_stride,
        "snapshot_stride": schedule.snapshot_stride,
        "seed": int(seed),
        "paths": [int(p) for p in paths],
        "eps": params.eps,
        "ito_rate": ito_rate,
        "gtilde_l2_sq": basis.gtilde_l2_sq(),
        "gtilde_hm12_sq": basis.gtilde_hs_sq(-0.5),
        "gtilde_h12_sq": basis.gtilde_hs_sq(0.5),
        "gtilde_l4": basis.gtilde_lp(4.0),
        "g_l2_sq": basis.g_l2_sq(),
        "g_h1_sq": basis.g_hs_sq(1.0),
        "f_l2": float(l2_norm(params.f)) if params.f is not None else 0.0,
        "grad_phi_linf": params.grad_phi_linf(),
        "lap_phi_l2": 0.0,
        "lap_phi_l4": 0.0,
        "initial": {k: np.atleast_1d(v).tolist() for k, v in init.items()},
    }
    if params.has_phi:
        lap_phi = ScalarField(grid, -grid.k2 * params.phi.coef)
        meta["lap_phi_l2"] = float(l2_norm(lap_phi))
        meta["lap_phi_l4"] = float(lp_norm(lap_phi, 4.0))
    return meta


# ---------------------------------------------------------------------------
# pathwise (noise-shifted) integration: Q = q - phit, U = u - phi


def step_pathwise(
    stateQU: SystemState,
    sc: StochasticConvolution,
    params: ModelParams,
    dt: float,
    work: _StepWork | None = None,
) -> SystemState:
    """Deterministic step of the noise-shifted pair.

    With the decaying convolutions (phit, phi) their own drift already
    carries the Lambda phit and Delta phi contributions, so (Q, U) solves
    the homogeneous shifted system

        dQ/dt + (U+phi).grad(Q+phit) + Lambda Q = 0
        dU/dt + (U+phi).grad(U+phi) - Delta U + grad P
              = -(Q+phit) R (Q+phit) + f

    and the original variables are reconstructed as q = Q + phit,
    u = U + phi.  The caller advances the convolution through the step's
    increments first and passes it at the step's right endpoint
    (sc.t == stateQU.t + dt); the advection coefficients use that value,
    which keeps this route a distinct first-order discretization of the
    same equation (and bitwise equal to the direct scheme when the noise
    is off).  Defined for the zero-potential system: eps = 0, Phi = 0.
    """
    if params.eps != 0.0 or params.has_phi:
        raise DynamicsError("pathwise stepping requires eps = 0 and Phi = 0")
    if abs(sc.t - (stateQU.t + dt)) > 1e-9 * max(1.0, abs(sc.t)):
        raise DynamicsError(
            f"convolution at t={sc.t:.6g} not synchronized to step target "
            f"{stateQU.t + dt:.6g}"
        )
    g = stateQU.grid
    if work is None or work.dt != dt:
        work = _StepWork(g, params, dt)
    q_eff = stateQU.q.coef + sc.phit.coef
    u_eff = stateQU.u.coef + sc.phi.coef
    nq, nu, _ = _nonlinear_fast(work, q_eff, u_eff, project=False)
    qc = work.decay_q * (stateQU.q.coef + dt * nq)
    qc[..., 0, 0] = 0.0
    uc = work.decay_u * (stateQU.u.coef + dt * nu)
    u_new = leray_project(VectorField(g, uc))
    if not np.all(np.isfinite(qc.view(float))):
        raise BlowUpError(stateQU.t + dt, stateQU)
    return SystemState(ScalarField(g, qc), u_new, stateQU.t + dt)


@dataclass
class PathwiseResult:
    snapshot_times: list[float]
    snapshots: list[SystemState]  # reconstructed q = Q + phit, u = U + phi
    final_state: SystemState
    final_shifted: SystemState
    final_convolution: StochasticConvolution


def integrate_pathwise(
    state0: SystemState,
    params: ModelParams,
    basis: NoiseBasis,
    schedule: StepSchedule,
    seed: int = 0,
    paths: tuple[int, ...] = (0,),
) -> PathwiseResult:
    """Integrate via the pathwise decomposition, consuming the identical
    increment stream that direct integration uses for (seed, path)."""
    g = state0.grid
    paths = tuple(int(p) for p in paths)
    batch = (len(paths),)
    if state0.batch_shape == ():
        state0 = state0.broadcast(batch)
    work = _StepWork(g, params, schedule.dt)
    sampler = CounterSampler(seed)
    sqrt_dt = math.sqrt(schedule.dt)
    sc = StochasticConvolution.zeros(g, batch)
    shifted = state0.copy()  # sc(0) = 0, so (Q, U)(0) = (q, u)(0)
    snaps = [state0.copy()]
    times = [0.0]
    decay_s = np.exp(-g.kabs * schedule.dt)
    decay_v = np.exp(-g.k2 * schedule.dt)

    for istep in range(schedule.steps):
        dw = sampler.normals_batch(paths, istep, basis.size) * sqrt_dt
        sc = update_convolution(sc, basis, dw, schedule.dt, decay_s, decay_v)
        sc.t = (istep + 1) * schedule.dt
        shifted = step_pathwise(shifted, sc, params, schedule.dt, work=work)
        shifted.t = sc.t
        done = istep + 1
        if done % schedule.snapshot_stride == 0:
            q = ScalarField(g, shifted.q.coef + sc.phit.coef)
            u = VectorField(g, shifted.u.coef + sc.phi.coef)
            snaps.append(SystemState(q, u, shifted.t))
            times.append(shifted.t)
    q = ScalarField(g, shifted.q.coef + sc.phit.coef)
    u = VectorField(g, shifted.u.coef + sc.phi.coef)
    final = SystemState(q, u, shifted.t)
    return PathwiseResult(times, snaps, final, shifted, sc)
