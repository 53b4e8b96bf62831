"""Asymptotic-coupling experiment: a slaved copy driven by the same noise
plus a low-mode feedback control, with stopping-time and contraction
tracking.

The controlled subspace is a shell cutoff: all Fourier modes with
0 < |k|^2 <= m, counted once for the charge component and once for the
divergence-free velocity component (the dissipation operator's
eigenfunctions on the torus are exactly these modes, with eigenvalue |k|^2
and nondecreasing order; the shell convention avoids any intra-shell
selection).  The feedback -lambda P_N (difference) is integrated exactly
inside the per-mode exponential factor, so lambda may exceed any explicit
stability limit, and both copies consume bit-identical increments so the
difference evolves by a noise-free equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import EnergyLedger
from .dynamics import (
    DynamicsError,
    ModelParams,
    StepSchedule,
    SystemState,
    _nonlinear_fast,
    _StepWork,
)
from .noise import CounterSampler, NoiseBasis
from .spectral import AREA, FourierGrid, ScalarField, VectorField, leray_project


class CouplingError(RuntimeError):
    pass


def representable_shells(limit: int) -> list[int]:
    """Values |k|^2 attained on the integer lattice, ascending, up to limit."""
    out = set()
    m = int(math.isqrt(limit))
    for a in range(0, m + 1):
        for b in range(0, m + 1):
            s = a * a + b * b
            if 0 < s <= limit:
                out.add(s)
    return sorted(out)


def lambda_next(m: int) -> float:
    """Smallest eigenvalue beyond the shell cutoff m."""
    s = int(m)
    while True:
        s += 1
        for a in range(int(math.isqrt(s)) + 1):
            b2 = s - a * a
            b = int(math.isqrt(b2))
            if b * b == b2:
                return float(s)


def eigen_count(m: int) -> int:
    """Number of controlled eigenfunctions (charge + velocity components)."""
    count = 0
    r = int(math.isqrt(m))
    for kx in range(-r, r + 1):
        for ky in range(-r, r + 1):
            if 0 < kx * kx + ky * ky <= m:
                count += 1
    return 2 * count


@dataclass
class CouplingConfig:
    shell_m: int  # controlled modes: 0 < |k|^2 <= shell_m
    lam: float  # feedback gain
    budget_k: float  # Girsanov cost budget for the stopping time
    r_threshold: float | None = None  # tail-event threshold (reporting only)
    strict: bool = True  # enforce lam >= sqrt(lambda_{N+1})

    def __post_init__(self):
        if self.shell_m < 0:
            raise CouplingError("shell cutoff must be >= 0")
        if self.lam < 0 or self.budget_k < 0:
            raise CouplingError("lambda and budget must be >= 0")
        if self.strict and self.lam > 0 and self.lam < math.sqrt(lambda_next(self.shell_m)):
            raise CouplingError(
                f"strict mode requires lambda >= sqrt(lambda_next) = "
                f"{math.sqrt(lambda_next(self.shell_m)):.4f}"
            )

    @property
    def implied_n(self) -> int:
        return eigen_count(self.shell_m)


def low_mode_mask(grid: FourierGrid, m: int) -> np.ndarray:
    return (grid.k2 > 0) & (grid.k2 <= m)


def project_low(xi: ScalarField, v: VectorField, m: int):
    """Split (xi, v) into the controlled span and its complement.

    The weak-norm projection is diagonal in Fourier space, so both the
    charge and velocity components are plain mode masks.
    """
    grid = xi.grid
    if m > (grid.n // 2) ** 2:
        raise CouplingError(f"shell {m} beyond resolvable eigencount for n={grid.n}")
    mask = low_mode_mask(grid, m)
    low = (ScalarField(grid, xi.coef * mask), VectorField(grid, v.coef * mask))
    high = (ScalarField(grid, xi.coef * (~mask)), VectorField(grid, v.coef * (~mask)))
    return low, high


def weak_pair_norm_sq(xi_coef: np.ndarray, v_coef: np.ndarray, grid: FourierGrid, mask=None):
    """||(Lambda^{-1/2} xi, v)||_{L^2}^2, optionally restricted to a mask."""
    w = grid.multiplier(-1.0)
    q2 = w * np.abs(xi_coef) ** 2
    u2 = np.sum(np.abs(v_coef) ** 2, axis=-3)
    if mask is not None:
        q2 = q2 * mask
        u2 = u2 * mask
    return AREA * (np.sum(q2, axis=(-2, -1)) + np.sum(u2, axis=(-2, -1)))


def verify_gp(xi: ScalarField, v: VectorField, m: int):
    """Both sides of the high-mode control inequality:
    ||Q_N (Lambda^{-1/2} xi, v)||^2 <= lambda_{N+1}^{-1/2} ||(xi, grad v)||^2."""
    grid = xi.grid
    mask = low_mode_mask(grid, m)
    lhs = weak_pair_norm_sq(xi.coef, v.coef, grid, mask=(~mask) & (grid.k2 > 0))
    # zero mode of v belongs to the complement as well
    lhs = lhs + AREA * np.sum(np.abs(v.coef[..., :, 0, 0]) ** 2, axis=-1)
    rhs_q = AREA * np.sum(np.abs(xi.coef) ** 2, axis=(-2, -1))
    rhs_u = AREA * np.sum(grid.k2 * np.abs(v.coef) ** 2, axis=(-3, -2, -1))
    return lhs, (rhs_q + rhs_u) / math.sqrt(lambda_next(m))


def range_condition_ok(basis: NoiseBasis, m: int) -> bool:
    """Noise forces every controlled mode, scalar and vector."""
    need = {
        (kx, ky)
        for kx in range(-int(math.isqrt(m)), int(math.isqrt(m)) + 1)
        for ky in range(-int(math.isqrt(m)), int(math.isqrt(m)) + 1)
        if 0 < kx * kx + ky * ky <= m
    }
    half_need = {k for k in need if k[0] > 0 or (k[0] == 0 and k[1] > 0)}
    scal = {d.k for d in basis.scalar_directions}
    vec = {d.k for d in basis.vector_directions}
    return half_need <= scal and half_need <= vec


# ---------------------------------------------------------------------------
# coupled stepping


@dataclass
class CouplingState:
    primary: SystemState
    slaved: SystemState
    cost: np.ndarray  # (paths,)
    feedback_on: np.ndarray  # (paths,) bool
    t: float = 0.0


def coupled_step(
    cs: CouplingState,
    params: ModelParams,
    basis: NoiseBasis,
    cfg: CouplingConfig,
    increments: np.ndarray,
    dt: float,
    work: _StepWork | None = None,
) -> CouplingState:
    """Advance the pair one step under shared increments.

    The primary evolves by the standard scheme.  While the budget is unhit,
    the difference is advanced by its own (noise-free) equation with the
    feedback folded into the exponential factor on controlled modes, and
    the slaved state is reconstructed as primary - difference, which keeps
    the shared-noise contract bit-exact.  Once the accumulated cost reaches
    the budget the feedback switches off permanently.  With lambda = 0 both
    copies simply step independently under the same increments.
    """
    g = cs.primary.grid
    if work is None or work.dt != dt:
        work = _StepWork(g, params, dt)
    mask = low_mode_mask(g, cfg.shell_m)
    dws, dwv = basis.split_increments(np.asarray(increments))

    omega_q = cs.primary.q.coef - cs.slaved.q.coef
    omega_u = cs.primary.u.coef - cs.slaved.u.coef
    low_sq = weak_pair_norm_sq(omega_q, omega_u, g, mask=mask)
    active = cs.feedback_on & (cfg.lam > 0)
    cost = cs.cost + np.where(active, dt * cfg.lam**2 * low_sq, 0.0)

    nq1, nu1, _ = _nonlinear_fast(work, cs.primary.q.coef, cs.primary.u.coef, project=False)
    q1 = work.decay_q * (cs.primary.q.coef + dt * nq1 + basis.inject_scalar(dws))
    q1[..., 0, 0] = 0.0
    u1 = leray_project(VectorField(g, work.decay_u * (cs.primary.u.coef + dt * nu1 + basis.inject_vector(dwv))))
    primary_new = SystemState(ScalarField(g, q1), u1, cs.t + dt)

    if cfg.lam == 0:
        nq2, nu2, _ = _nonlinear_fast(work, cs.slaved.q.coef, cs.slaved.u.coef, project=False)
        q2 = work.decay_q * (cs.slaved.q.coef + dt * nq2 + basis.inject_scalar(dws))
        q2[..., 0, 0] = 0.0
        u2 = leray_project(
            VectorField(g, work.decay_u * (cs.slaved.u.coef + dt * nu2 + basis.inject_vector(dwv)))
        )
        slaved_new = SystemState(ScalarField(g, q2), u2, cs.t + dt)
    else:
        nq2, nu2, _ = _nonlinear_fast(work, cs.slaved.q.coef, cs.slaved.u.coef, project=False)
        fb = np.where(mask, math.exp(-cfg.lam * dt), 1.0)
        factor = np.where(active[:, None, None], fb, 1.0)
        omega_q_new = work.decay_q * factor * (omega_q + dt * (nq1 - nq2))
        omega_q_new[..., 0, 0] = 0.0
        omega_u_new = work.decay_u * factor[..., None, :, :] * (omega_u + dt * (nu1 - nu2))
        q2 = primary_new.q.coef - omega_q_new
        q2[..., 0, 0] = 0.0
        u2 = leray_project(VectorField(g, primary_new.u.coef - omega_u_new))
        slaved_new = SystemState(ScalarField(g, q2), u2, cs.t + dt)

    if not np.all(np.isfinite(slaved_new.q.coef.view(float))):
        raise DynamicsError(f"coupled pair blow-up at t={cs.t + dt:.6g}")
    feedback_on = cs.feedback_on & (cost < cfg.budget_k)
    return CouplingState(primary_new, slaved_new, cost, feedback_on, cs.t + dt)


@dataclass
class CouplingReport:
    config: CouplingConfig
    lambda_next: float
    implied_n: int
    times: np.ndarray
    omega_sq: np.ndarray  # (rows, paths)
    cost: np.ndarray  # (rows, paths)
    rates: np.ndarray  # (paths,) fitted decay rates of omega^2
    tau_inf_frac: float
    contracted_frac: float
    final_ratio: np.ndarray
    ledger: EnergyLedger | None = None


def fit_decay_rates(times: np.ndarray, omega_sq: np.ndarray, rel_floor: float = 1e-24):
    """Per-path least-squares slope of log omega^2; rate = -slope.

    Rows where omega^2 has fallen below rel_floor * omega^2(0) are excluded
    so underflow plateaus do not bias the fit.
    """
    rows, paths = omega_sq.shape
    rates = np.empty(paths)
    for j in range(paths):
        y = omega_sq[:, j]
        keep = y > rel_floor * max(y[0], 1e-300)
        if keep.sum() < 3:
            rates[j] = np.inf
            continue
        t = times[keep]
        ly = np.log(y[keep])
        A = np.stack([t, np.ones_like(t)], axis=1)
        coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
        rates[j] = -coef[0]
    return rates


def run_coupling_experiment(
    primary0: SystemState,
    slaved0: SystemState,
    params: ModelParams,
    basis: NoiseBasis,
    cfg: CouplingConfig,
    schedule: StepSchedule,
    seed: int = 0,
    paths: tuple[int, ...] = (0,),
    contraction_target: float = 1e-3,
) -> CouplingReport:
    """Shared-noise coupled ensemble: contraction rates and budget usage."""
    if params.has_phi:
        raise CouplingError("coupling experiment requires Phi = 0")
    # deterministic runs (no noise directions) are the degenerate case of
    # the shared-noise construction; the range condition binds otherwise
    if basis.size > 0 and not range_condition_ok(basis, cfg.shell_m):
        raise CouplingError("noise basis does not force every controlled mode")
    g = primary0.grid
    paths = tuple(int(p) for p in paths)
    batch = (len(paths),)
    if primary0.batch_shape == ():
        primary0 = primary0.broadcast(batch)
    if slaved0.batch_shape == ():
        slaved0 = slaved0.broadcast(batch)
    work = _StepWork(g, params, schedule.dt)
    sampler = CounterSampler(seed)
    sqrt_dt = math.sqrt(schedule.dt)
    cs = CouplingState(
        primary0.copy(), slaved0.copy(), np.zeros(batch), np.ones(batch, dtype=bool), 0.0
    )

    def row(cs):
        oq = cs.primary.q.coef - cs.slaved.q.coef
        ou = cs.primary.u.coef - cs.slaved.u.coef
        full = weak_pair_norm_sq(oq, ou, g)
        low = weak_pair_norm_sq(oq, ou, g, mask=low_mode_mask(g, cfg.shell_m))
        return {
            "omega_h_sq": full,
            "omega_low_sq": low,
            "cost_acc": cs.cost.copy(),
            "feedback_active": cs.feedback_on.astype(float),
            "tau_hit": (~cs.feedback_on).astype(float),
        }

    times = [0.0]
    rows = [row(cs)]
    for istep in range(schedule.steps):
        dw = sampler.normals_batch(paths, istep, basis.size) * sqrt_dt
        cs = coupled_step(cs, params, basis, cfg, dw, schedule.dt, work=work)
        cs.t = (istep + 1) * schedule.dt
        if (istep + 1) % schedule.ledger_stride == 0:
            times.append(cs.t)
            rows.append(row(cs))

    times = np.asarray(times)
    columns = {k: np.stack([r[k] for r in rows]) for k in rows[0]}
    meta = {
        "shell_m": cfg.shell_m,
        "lambda": cfg.lam,
        "budget_k": cfg.budget_k,
        "lambda_next": lambda_next(cfg.shell_m),
        "implied_n": cfg.implied_n,
        "seed": seed,
        "paths": list(paths),
        "dt": schedule.dt,
    }
    ledger = EnergyLedger(times, columns, meta)
    omega_sq = columns["omega_h_sq"]
    rates = fit_decay_rates(times, omega_sq)
    final_ratio = omega_sq[-1] / np.maximum(omega_sq[0], 1e-300)
    return CouplingReport(
        config=cfg,
        lambda_next=lambda_next(cfg.shell_m),
        implied_n=cfg.implied_n,
        times=times,
        omega_sq=omega_sq,
        cost=columns["cost_acc"],
        rates=rates,
        tau_inf_frac=float(np.mean(cs.feedback_on)),
        contracted_frac=float(np.mean(final_ratio < contraction_target)),
        final_ratio=final_ratio,
        ledger=ledger,
    )


def coupling_shell_sweep(
    primary0: SystemState,
    slaved0: SystemState,
    params: ModelParams,
    basis: NoiseBasis,
    shells,
    lam_rule,
    budget_k: float,
    schedule: StepSchedule,
    seed: int = 0,
    paths: tuple[int, ...] = (0,),
    contraction_target: float = 1e-3,
) -> list[dict]:
    """Run the experiment over shell cutoffs to locate the contraction
    threshold; lam_rule maps lambda_{N+1} to the feedback gain."""
    out = []
    for m in shells:
        lam = float(lam_rule(lambda_next(m)))
        cfg = CouplingConfig(shell_m=m, lam=lam, budget_k=budget_k)
        rep = run_coupling_experiment(
            primary0, slaved0, params, basis, cfg, schedule,
            seed=seed, paths=paths, contraction_target=contraction_target,
        )
        out.append(
            {
                "shell_m": m,
                "lambda": lam,
                "lambda_next": rep.lambda_next,
                "implied_n": rep.implied_n,
                "median_rate": float(np.median(rep.rates[np.isfinite(rep.rates)]))
                if np.any(np.isfinite(rep.rates))
                else float("inf"),
                "contracted_frac": rep.contracted_frac,
                "tau_inf_frac": rep.tau_inf_frac,
            }
        )
    return out
