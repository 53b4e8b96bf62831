#!/usr/bin/env python3
"""Randomized sweeps that freeze the inequality constants.

Regenerates src/ecspde/constants.py.  Sweep extrema get a 2x safety factor
(minima get 0.5x) so the frozen inequalities hold on fresh data with margin;
tests then assert them as regression checks.  Rerun only when the operator
conventions change, and commit the result.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ecspde.diagnostics import (
    coercivity_check,
    commutator_ratio,
    cumtrapz,
    poincare_l4_ratio,
)
from ecspde.dynamics import ModelParams, StepSchedule, SystemState, integrate
from ecspde.noise import NoiseConfig, build_noise_basis
from ecspde.spectral import (
    FourierGrid,
    lp_norm,
    random_divfree_field,
    random_scalar_field,
    riesz,
)

GRID = FourierGrid(32)
RNG = np.random.default_rng(1234321)


def sweep_poincare(n=1000):
    ratios = []
    for i in range(n):
        kmax = int(RNG.integers(2, 11))
        alpha = float(RNG.uniform(0.0, 2.5))
        q = random_scalar_field(GRID, RNG, kmax=kmax, amplitude=1.0, alpha=alpha)
        ratios.append(float(poincare_l4_ratio(q)))
    ratios = np.array(ratios)
    print(f"poincare ratio: min={ratios.min():.4f} median={np.median(ratios):.4f}")
    return float(ratios.min())


def sweep_commutator(n=300):
    vals = []
    for _ in range(n):
        kmax = int(RNG.integers(2, 11))
        v = random_divfree_field(GRID, RNG, kmax=kmax, amplitude=1.0, alpha=RNG.uniform(0, 2))
        rho = random_scalar_field(GRID, RNG, kmax=kmax, amplitude=1.0, alpha=RNG.uniform(0, 2))
        vals.append(commutator_ratio(v, rho))
    vals = np.array(vals)
    print(f"commutator ratio: max={vals.max():.4f} median={np.median(vals):.4f}")
    return float(vals.max())


def sweep_riesz_l4(n=500):
    vals = []
    for _ in range(n):
        kmax = int(RNG.integers(2, 11))
        q = random_scalar_field(GRID, RNG, kmax=kmax, amplitude=1.0, alpha=RNG.uniform(0, 2.5))
        vals.append(float(lp_norm(riesz(q), 4.0) / lp_norm(q, 4.0)))
    vals = np.array(vals)
    print(f"riesz L4 ratio: max={vals.max():.4f} median={np.median(vals):.4f}")
    return float(vals.max())


def _needed_c0(state1, state2):
    rep = coercivity_check(state1, state2, ModelParams(), c0=0.0)
    if rep.dist_h_sq > 1e-14 and rep.k_value > 0:
        return (rep.gap_lower_bound - rep.pairing) / (rep.k_value * rep.dist_h_sq)
    return -np.inf


def sweep_coercivity(n_pairs=400, n_perturb=600):
    """Smallest C0 making the pairing inequality hold, over independent
    pairs, nearby (perturbation) pairs, and states drawn from a forced run.

    The adversarial direction is nearby states: the cubic terms scale like
    the quadratic gap there, so independent pairs alone underestimate C0.
    """
    needed = []
    for _ in range(n_pairs):
        kmax = int(RNG.integers(2, 9))
        amp = float(RNG.uniform(0.2, 2.0))
        q1 = random_scalar_field(GRID, RNG, kmax=kmax, amplitude=amp, alpha=RNG.uniform(0.5, 2))
        u1 = random_divfree_field(GRID, RNG, kmax=kmax, amplitude=amp, alpha=RNG.uniform(0.5, 2))
        q2 = random_scalar_field(GRID, RNG, kmax=kmax, amplitude=amp, alpha=RNG.uniform(0.5, 2))
        u2 = random_divfree_field(GRID, RNG, kmax=kmax, amplitude=amp, alpha=RNG.uniform(0.5, 2))
        needed.append(_needed_c0(SystemState(q1, u1), SystemState(q2, u2)))
        needed.append(_needed_c0(SystemState(q1, u1), SystemState.zeros(GRID)))
    base_states = []
    traj = _moment_ensemble(sigma=0.5, amp=1.5, seed=77, paths=4, t_final=4.0)
    for snap in traj.snapshots:
        from ecspde.spectral import ScalarField, VectorField

        base_states.append(
            SystemState(
                ScalarField(GRID, snap.q.coef[0]), VectorField(GRID, snap.u.coef[0])
            )
        )
    for i in range(n_perturb):
        if i % 2 == 0 or not base_states:
            kmax = int(RNG.integers(2, 9))
            amp = float(RNG.uniform(0.5, 3.0))
            q1 = random_scalar_field(GRID, RNG, kmax=kmax, amplitude=amp, alpha=RNG.uniform(0.5, 2))
            u1 = random_divfree_field(GRID, RNG, kmax=kmax, amplitude=amp, alpha=RNG.uniform(0.5, 2))
            s1 = SystemState(q1, u1)
        else:
            s1 = base_states[int(RNG.integers(0, len(base_states)))]
        scale = 10.0 ** RNG.uniform(-6, -1)
        dkmax = int(RNG.integers(1, 7))
        dq = random_scalar_field(GRID, RNG, kmax=dkmax, amplitude=scale, alpha=RNG.uniform(0, 2))
        du = random_divfree_field(GRID, RNG, kmax=dkmax, amplitude=scale, alpha=RNG.uniform(0, 2))
        from ecspde.spectral import ScalarField, VectorField

        s2 = SystemState(
            ScalarField(GRID, s1.q.coef - dq.coef), VectorField(GRID, s1.u.coef - du.coef)
        )
        needed.append(_needed_c0(s1, s2))
    needed = np.array([v for v in needed if np.isfinite(v)])
    print(
        f"coercivity C0: max_needed={needed.max():.4f} "
        f"q99={np.quantile(needed, 0.99):.4f} n={len(needed)}"
    )
    return float(max(needed.max(), 0.0))


def sweep_coercivity_trajectories():
    """Grownall exponent needed along same-noise perturbed pairs.

    For each forced run, C0 must satisfy dist^2(t) <= exp(C0 int K) dist^2(0)
    row by row; the sweep records the largest ratio log-growth / int K seen.
    """
    from ecspde.spectral import ScalarField, VectorField, hs_norm, l2_norm

    needed = []
    for sigma, amp, seed in [(0.15, 0.5, 31), (0.4, 1.0, 32), (0.6, 1.5, 33)]:
        rng = np.random.default_rng(seed)
        q0 = random_scalar_field(GRID, rng, kmax=5, amplitude=amp, alpha=2.0)
        u0 = random_divfree_field(GRID, rng, kmax=5, amplitude=amp, alpha=2.0)
        dq = random_scalar_field(GRID, rng, kmax=4, amplitude=1e-6, alpha=1.0)
        du = random_divfree_field(GRID, rng, kmax=4, amplitude=1e-6, alpha=1.0)
        basis = build_noise_basis(
            GRID, NoiseConfig(scalar_kmax_sq=4, vector_kmax_sq=4, sigma=sigma, alpha=2.0)
        )
        sched = StepSchedule(dt=5e-3, t_final=3.0, ledger_stride=5, snapshot_stride=5)
        paths = tuple(range(4))
        t1 = integrate(SystemState(q0, u0), ModelParams(), basis, sched, seed=seed, paths=paths)
        s2 = SystemState(
            ScalarField(GRID, q0.coef + dq.coef), VectorField(GRID, u0.coef + du.coef)
        )
        t2 = integrate(s2, ModelParams(), basis, sched, seed=seed, paths=paths)
        led = t1.ledger
        u_h1, q_l4, u_h2 = led.column("u_h1"), led.column("q_l4"), led.column("u_h2")
        k_rate = u_h1**2 + u_h1 + q_l4**2 + q_l4**4 + u_h2**2
        int_k = cumtrapz(k_rate, led.times)
        dist = []
        for a, b in zip(t1.snapshots, t2.snapshots):
            dqs = ScalarField(GRID, a.q.coef - b.q.coef)
            dus = VectorField(GRID, a.u.coef - b.u.coef)
            dist.append(hs_norm(dqs, -0.5) ** 2 + l2_norm(dus) ** 2)
        dist = np.stack(dist)
        growth = np.log(dist[1:] / np.maximum(dist[0], 1e-300))
        ratio = growth / np.maximum(int_k[1:], 1e-12)
        needed.append(float(np.max(ratio)))
    print(f"coercivity C0 (trajectory sweep): needed={max(needed):.4f} per-config={needed}")
    return max(needed)


def _moment_ensemble(sigma, amp, seed, paths=32, t_final=8.0):
    rng = np.random.default_rng(seed)
    q0 = random_scalar_field(GRID, rng, kmax=5, amplitude=amp, alpha=2.0)
    u0 = random_divfree_field(GRID, rng, kmax=5, amplitude=amp, alpha=2.0)
    basis = build_noise_basis(
        GRID, NoiseConfig(scalar_kmax_sq=4, vector_kmax_sq=4, sigma=sigma, alpha=2.0)
    )
    sched = StepSchedule(dt=0.01, t_final=t_final, ledger_stride=10, snapshot_stride=10**9)
    return integrate(SystemState(q0, u0), ModelParams(), basis, sched,
                     seed=seed, paths=tuple(range(paths)))


def sweep_moment_constants():
    """Envelope ratios for the L4-moment and gradient-velocity bounds."""
    ratios1 = {4: [], 12: []}
    ratios2 = []
    for sigma, amp, seed in [(0.15, 0.5, 11), (0.4, 1.0, 12), (0.05, 0.2, 13)]:
        traj = _moment_ensemble(sigma, amp, seed)
        led = traj.ledger
        t = led.times
        gt4 = led.meta["gtilde_l4"]
        q0_l4 = np.asarray(led.meta["initial"]["q_l4"])
        u0_h1 = np.asarray(led.meta["initial"]["u_h1"])
        for p in (4, 12):
            lhs = np.mean(cumtrapz(led.column("q_l4") ** p, t), axis=1)
            rhs0 = np.maximum(q0_l4**p + gt4**p * t[:, None], 1e-300).mean(axis=1)
            sel = t >= 1.0
            ratios1[p].append(np.max(lhs[sel] / rhs0[sel]))
        lhs2 = np.mean(
            led.column("u_h1") ** 2 + cumtrapz(led.column("u_h2") ** 2, t), axis=1
        )
        rhs2 = (
            q0_l4**4
            + u0_h1**2
            + (led.meta["f_l2"] ** 2 + led.meta["g_h1_sq"] + gt4**4) * t[:, None]
        ).mean(axis=1)
        sel = t >= 1.0
        ratios2.append(np.max(lhs2[sel] / rhs2[sel]))
    c1 = {p: float(max(v)) for p, v in ratios1.items()}
    c2 = float(max(ratios2))
    print(f"invariant1 ratios: p4={c1[4]:.4f} p12={c1[12]:.4f}; invariant2 ratio={c2:.4f}")
    return c1, c2


def sweep_tail_bound(poincare_min, riesz_max):
    """Charge-tail prefactor from a strongly forced ensemble."""
    sigma = 1.2
    traj = _moment_ensemble(sigma, 0.8, seed=21, paths=64, t_final=6.0)
    led = traj.ledger
    t = led.times
    q_l4 = led.column("q_l4")
    int_q4 = cumtrapz(q_l4**4, t)
    gt4 = led.meta["gtilde_l4"]
    c = 0.5 * poincare_min
    c_f = 9.0 / max(poincare_min, 1e-6)
    f_proc = q_l4**4 + c * int_q4 - q_l4[0] ** 4 - 2.0 - c_f * gt4**4 * t[:, None]
    f_stat = np.max(f_proc, axis=0)
    q0_l4 = float(np.max(np.asarray(led.meta["initial"]["q_l4"])))
    scale = gt4**16 + q0_l4**16
    r_grid = np.linspace(0.0, 20.0, 21)
    emp = np.array([np.mean(f_stat > r) for r in r_grid])
    needed = emp * (r_grid + 1.0) / scale
    print(f"tail F: max emp={emp.max():.4f} needed prefactor={needed.max():.4f}")
    return float(max(needed.max(), 1.0)), c_f


TEMPLATE = '''"""Frozen calibrated constants.

Every inequality constant the analysis leaves abstract is pinned here from
randomized pre-build sweeps (scripts/calibrate_constants.py regenerates this
file; sweep maxima get a 2x safety factor, minima 0.5x).  Tests assert the
inequalities with these frozen values, turning qualitative statements into
regression checks.  Generated at grid n = 32.
"""

# coercivity constant in the difference-pairing inequality (2x sweep max)
C0_COERCIVITY = {c0:.6g}

# empirical extrema of int q^3 Lambda q / ||q||_4^4 over random mean-zero
# fields; the frozen bound uses half the observed minimum
POINCARE_L4_SWEEP_MIN = {pc_min:.6g}
POINCARE_L4_C = {pc:.6g}

# commutator bound ||L^-1/2(v.grad r) - v.grad L^-1/2 r|| <= C ||Dv|| ||r||
COMMUTATOR_C = {comm:.6g}

# Riesz transform L4 operator norm estimate (2x sweep max)
RIESZ_L4_C = {riesz:.6g}

# moment-bound envelopes: LHS <= C * (initial-data part + source-rate * t)
INVARIANT1_C = {{4: {inv1_4:.6g}, 12: {inv1_12:.6g}}}
INVARIANT2_C = {inv2:.6g}

# tail-event drift constants and the charge-tail bound prefactor
TAIL_C_E = {tail_ce:.6g}
TAIL_C_F = {tail_cf:.6g}
TAIL_BOUND_F = {tail_bf:.6g}


def as_dict() -> dict:
    return {{
        "c0_coercivity": C0_COERCIVITY,
        "poincare_l4_c": POINCARE_L4_C,
        "poincare_l4_sweep_min": POINCARE_L4_SWEEP_MIN,
        "commutator_c": COMMUTATOR_C,
        "riesz_l4_c": RIESZ_L4_C,
        "invariant1_c": dict(INVARIANT1_C),
        "invariant2_c": INVARIANT2_C,
        "tail_c_e": TAIL_C_E,
        "tail_c_f": TAIL_C_F,
        "tail_poincare_c": 0.5 * POINCARE_L4_SWEEP_MIN,
        "tail_bound_f": TAIL_BOUND_F,
    }}
'''


def main():
    pc_min = sweep_poincare()
    comm = sweep_commutator()
    riesz_max = sweep_riesz_l4()
    c0_inst = sweep_coercivity()
    c0_traj = sweep_coercivity_trajectories()
    c0 = max(2.0 * c0_inst, 2.0 * c0_traj, 0.05)
    inv1, inv2 = sweep_moment_constants()
    tail_bf, tail_cf = sweep_tail_bound(pc_min, riesz_max)
    tail_ce = 2.0 * max(4.0 / 3.0 * riesz_max**2, 4.0 / 3.0)
    out = TEMPLATE.format(
        c0=c0,
        pc_min=pc_min,
        pc=0.5 * pc_min,
        comm=2.0 * comm,
        riesz=2.0 * riesz_max,
        inv1_4=2.0 * inv1[4],
        inv1_12=2.0 * inv1[12],
        inv2=2.0 * inv2,
        tail_ce=tail_ce,
        tail_cf=tail_cf,
        tail_bf=2.0 * tail_bf,
    )
    target = Path(__file__).resolve().parents[1] / "src" / "ecspde" / "constants.py"
    target.write_text(out)
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
