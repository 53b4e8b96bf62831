import math

import numpy as np
import pytest

from ecspde import constants
from ecspde.diagnostics import (
    EnergyLedger,
    LedgerError,
    coercivity_check,
    commutator_ratio,
    continuity_bound_check,
    cumtrapz,
    energy_balance_residual,
    integrate_phys,
    l4_budget_check,
    log_sobolev_ledger,
    poincare_l4_ratio,
    state_norms,
    tail_event_check,
)
from ecspde.dynamics import ModelParams, StepSchedule, SystemState, integrate
from ecspde.noise import NoiseConfig, build_noise_basis
from ecspde.spectral import (
    ScalarField,
    VectorField,
    apply_lambda,
    l2_norm,
    phys_values,
    random_divfree_field,
    random_scalar_field,
)


def quad_inner_fields(grid, a_coef, b_coef, ov=2):
    return integrate_phys(phys_values(grid, a_coef, ov) * phys_values(grid, b_coef, ov))


@pytest.fixture()
def smooth_state(grid32, rng):
    q0 = random_scalar_field(grid32, rng, kmax=6, amplitude=0.5, alpha=2.0)
    u0 = random_divfree_field(grid32, rng, kmax=6, amplitude=0.5, alpha=2.0)
    return SystemState(q0, u0)


# ---------------------------------------------------------------------------
# energy balance residual


def test_residual_zero_for_rest_state(grid32):
    sched = StepSchedule(dt=0.01, t_final=0.1, ledger_stride=1)
    traj = integrate(SystemState.zeros(grid32), ModelParams(), None, sched)
    resid = energy_balance_residual(traj.ledger)
    assert np.all(resid == 0)


def test_residual_small_and_first_order_deterministic(grid32, smooth_state):
    def max_resid(dt):
        sched = StepSchedule(dt=dt, t_final=0.3, ledger_stride=1, snapshot_stride=10**9)
        traj = integrate(smooth_state, ModelParams(), None, sched)
        resid = energy_balance_residual(traj.ledger)
        E0 = traj.ledger.column("q_hm12")[0, 0] ** 2 + traj.ledger.column("u_l2")[0, 0] ** 2
        return np.max(np.abs(resid)) / E0

    r1 = max_resid(1e-3)
    r2 = max_resid(5e-4)
    assert r1 < 1e-4
    assert r1 / r2 >= 1.8


def test_residual_ensemble_mean_within_standard_errors(grid32, smooth_state):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, vector_kmax_sq=4, sigma=0.2))
    sched = StepSchedule(dt=2e-3, t_final=0.5, ledger_stride=25, snapshot_stride=10**9)
    traj = integrate(smooth_state, ModelParams(), basis, sched, seed=99, paths=tuple(range(64)))
    resid = energy_balance_residual(traj.ledger)[-1]
    se = resid.std(ddof=1) / math.sqrt(len(resid))
    assert abs(resid.mean()) <= 3 * se
    assert se > 0


# ---------------------------------------------------------------------------
# L^4 budget and the nonlinear Poincare functional


def test_advective_term_vanishes_against_cubic(grid32, rng):
    for _ in range(5):
        q = random_scalar_field(grid32, rng, kmax=8, amplitude=1.0)
        u = random_divfree_field(grid32, rng, kmax=8, amplitude=1.0)
        from ecspde.diagnostics import advect_phys

        val = integrate_phys(
            advect_phys(grid32, u.coef, q.coef, 2) * phys_values(grid32, q.coef, 2) ** 3
        )
        from ecspde.spectral import lp_norm

        scale = l2_norm(u) * lp_norm(q, 4.0) ** 3
        assert abs(val) < 1e-10 * max(scale, 1.0)


def test_l4_budget_zero_path(grid32):
    sched = StepSchedule(dt=0.01, t_final=0.05, snapshot_stride=1)
    traj = integrate(SystemState.zeros(grid32), ModelParams(), None, sched)
    report = l4_budget_check(traj, constants.POINCARE_L4_C)
    assert report["max_advective"] == 0
    for row in report["rows"]:
        assert np.all(row["ito"] == 0) and np.all(row["q_l4_4"] == 0)


def test_l4_budget_decay_run_obeys_gronwall(grid32, smooth_state):
    sched = StepSchedule(dt=2e-3, t_final=0.5, ledger_stride=10, snapshot_stride=10)
    traj = integrate(smooth_state, ModelParams(), None, sched)
    report = l4_budget_check(traj, constants.POINCARE_L4_C)
    assert report["all_dissipative_ok"]
    assert report["max_advective_scaled"] < 1e-9
    ratios = [
        float(poincare_l4_ratio(ScalarField(grid32, s.q.coef[0]))) for s in traj.snapshots
    ]
    c_min = min(ratios)
    assert c_min > 0
    q4 = np.array([r["q_l4_4"][0] for r in report["rows"]])
    t = np.array([r["t"] for r in report["rows"]])
    assert np.all(q4 <= q4[0] * np.exp(-4 * 0.95 * c_min * t) + 1e-12)


def test_poincare_single_modes(grid32):
    one = ScalarField.from_modes(grid32, [((1, 0), 1.0, "cos")])
    three = ScalarField.from_modes(grid32, [((3, 0), 0.7, "cos")])
    assert abs(poincare_l4_ratio(one) - 1.0) < 1e-10
    assert abs(poincare_l4_ratio(three) - 3.0) < 1e-10


def test_poincare_single_shell_mixture(grid32):
    # all modes on |k|^2 = 2: ratio = sqrt(2) exactly
    q = ScalarField.from_modes(
        grid32, [((1, 1), 0.8, "cos"), ((1, -1), 0.5, "sin"), ((1, 1), 0.2, "sin")]
    )
    assert abs(poincare_l4_ratio(q) - math.sqrt(2.0)) < 1e-10


def test_poincare_positive_on_random_fields(grid32, rng):
    vals = []
    for _ in range(100):
        q = random_scalar_field(grid32, rng, kmax=int(rng.integers(2, 11)), amplitude=1.0)
        vals.append(float(poincare_l4_ratio(q)))
    assert min(vals) > 0
    assert min(vals) >= constants.POINCARE_L4_C  # frozen bound has 2x margin


def test_poincare_rejects_zero_field(grid32):
    with pytest.raises(LedgerError):
        poincare_l4_ratio(ScalarField.zeros(grid32))


# ---------------------------------------------------------------------------
# coercivity


def test_coercivity_identical_states(grid32, smooth_state):
    rep = coercivity_check(smooth_state, smooth_state, ModelParams(), constants.C0_COERCIVITY)
    assert rep.lhs == 0 and rep.gap_lower_bound == 0
    assert rep.passed


def test_coercivity_against_zero_state(grid32, rng):
    for _ in range(20):
        kmax = int(rng.integers(2, 9))
        amp = float(rng.uniform(0.2, 2.0))
        s1 = SystemState(
            random_scalar_field(grid32, rng, kmax=kmax, amplitude=amp),
            random_divfree_field(grid32, rng, kmax=kmax, amplitude=amp),
        )
        rep = coercivity_check(s1, SystemState.zeros(grid32), ModelParams(), constants.C0_COERCIVITY)
        assert rep.passed


def test_coercivity_part_scaling(grid32, rng):
    s1 = SystemState(
        random_scalar_field(grid32, rng, kmax=5, amplitude=0.8),
        random_divfree_field(grid32, rng, kmax=5, amplitude=0.8),
    )
    s2 = SystemState(
        random_scalar_field(grid32, rng, kmax=5, amplitude=0.6),
        random_divfree_field(grid32, rng, kmax=5, amplitude=0.6),
    )
    lam = 3.0
    s1l = SystemState(ScalarField(grid32, lam * s1.q.coef), VectorField(grid32, lam * s1.u.coef))
    s2l = SystemState(ScalarField(grid32, lam * s2.q.coef), VectorField(grid32, lam * s2.u.coef))
    a = coercivity_check(s1, s2, ModelParams(), constants.C0_COERCIVITY)
    b = coercivity_check(s1l, s2l, ModelParams(), constants.C0_COERCIVITY)
    assert b.quadratic_part == pytest.approx(lam**2 * a.quadratic_part, rel=1e-12)
    assert b.cubic_part == pytest.approx(lam**3 * a.cubic_part, rel=1e-9)


# ---------------------------------------------------------------------------
# continuity bound


def _perturbed(grid, state, rng, scale):
    dq = random_scalar_field(grid, rng, kmax=4, amplitude=scale, alpha=1.0)
    du = random_divfree_field(grid, rng, kmax=4, amplitude=scale, alpha=1.0)
    return SystemState(
        ScalarField(grid, state.q.coef + dq.coef),
        VectorField(grid, state.u.coef + du.coef),
    )


def test_continuity_bound_holds_for_small_perturbations(grid32, smooth_state, rng):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, vector_kmax_sq=4, sigma=0.2))
    sched = StepSchedule(dt=5e-3, t_final=0.5, ledger_stride=5, snapshot_stride=5)
    paths = (0, 1)
    t1 = integrate(smooth_state, ModelParams(), basis, sched, seed=5, paths=paths)
    t2 = integrate(
        _perturbed(grid32, smooth_state, rng, 1e-6), ModelParams(), basis, sched, seed=5, paths=paths
    )
    rep = continuity_bound_check(t1, t2, constants.C0_COERCIVITY)
    assert rep.passed
    assert rep.worst_margin <= 1.0 + 1e-9


def test_continuity_requires_same_noise_path(grid32, smooth_state):
    sched = StepSchedule(dt=5e-3, t_final=0.05, ledger_stride=1, snapshot_stride=1)
    t1 = integrate(smooth_state, ModelParams(), None, sched, seed=5)
    t2 = integrate(smooth_state, ModelParams(), None, sched, seed=6)
    with pytest.raises(LedgerError):
        continuity_bound_check(t1, t2, constants.C0_COERCIVITY)


def test_continuity_distance_scales_linearly_in_perturbation(grid32, smooth_state, rng):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, sigma=0.1))
    sched = StepSchedule(dt=5e-3, t_final=0.25, ledger_stride=50, snapshot_stride=50)
    base = integrate(smooth_state, ModelParams(), basis, sched, seed=2)
    seeds = np.random.default_rng(10)
    dq = random_scalar_field(grid32, seeds, kmax=4, amplitude=1.0, alpha=1.0)
    du = random_divfree_field(grid32, seeds, kmax=4, amplitude=1.0, alpha=1.0)

    def dist_at_end(lam):
        s = SystemState(
            ScalarField(grid32, smooth_state.q.coef + lam * dq.coef),
            VectorField(grid32, smooth_state.u.coef + lam * du.coef),
        )
        tr = integrate(s, ModelParams(), basis, sched, seed=2)
        a, b = tr.final_state, base.final_state
        return float(
            np.sqrt(
                l2_norm(apply_lambda(ScalarField(grid32, a.q.coef[0] - b.q.coef[0]), -0.5)) ** 2
                + l2_norm(VectorField(grid32, a.u.coef[0] - b.u.coef[0])) ** 2
            )
        )

    d1 = dist_at_end(1e-6)
    d2 = dist_at_end(2e-6)
    assert d2 / d1 == pytest.approx(2.0, rel=1e-3)


# ---------------------------------------------------------------------------
# log-ledger and tail events


def test_log_sobolev_zero_state(grid32):
    sched = StepSchedule(dt=0.01, t_final=0.05, snapshot_stride=1)
    traj = integrate(SystemState.zeros(grid32), ModelParams(), None, sched)
    out = log_sobolev_ledger(traj, k=1.0)
    assert np.all(out["series"] == 0)


def test_log_sobolev_decay_run_decreases(grid32, smooth_state):
    sched = StepSchedule(dt=2e-3, t_final=0.4, ledger_stride=20, snapshot_stride=20)
    traj = integrate(smooth_state, ModelParams(), None, sched)
    out = log_sobolev_ledger(traj, k=1.0)
    s = out["series"][:, 0]
    assert np.all(np.diff(s[1:]) <= 1e-12)  # monotone after the first interval


def test_log_sobolev_rejects_unresolvable_order(grid32, smooth_state):
    sched = StepSchedule(dt=0.01, t_final=0.01, snapshot_stride=1)
    traj = integrate(smooth_state, ModelParams(), None, sched)
    with pytest.raises(LedgerError):
        log_sobolev_ledger(traj, k=grid32.kmax_dealias)


def test_tail_events_deterministic_run(grid32, smooth_state):
    sched = StepSchedule(dt=5e-3, t_final=0.5, ledger_stride=5, snapshot_stride=10**9)
    traj = integrate(smooth_state, ModelParams(), None, sched)
    consts = constants.as_dict()
    report = tail_event_check(traj.ledger, consts, r_grid=[0.0, 0.5, 1.0, 5.0, 1e9])
    assert report["monotone_e"] and report["monotone_f"]
    assert report["empirical_e"][-1] == 0 and report["empirical_f"][-1] == 0
    det_max = float(report["e_stat"].max())
    above = report["r_grid"] > det_max
    assert np.all(report["empirical_e"][above] == 0)


def test_tail_events_stochastic_bounds_hold(grid32, smooth_state):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, vector_kmax_sq=4, sigma=0.3))
    sched = StepSchedule(dt=5e-3, t_final=1.0, ledger_stride=10, snapshot_stride=10**9)
    traj = integrate(smooth_state, ModelParams(), basis, sched, seed=17, paths=tuple(range(32)))
    report = tail_event_check(traj.ledger, constants.as_dict(), r_grid=np.linspace(0, 10, 11))
    assert report["e_ok"] and report["f_ok"]
    assert report["monotone_e"] and report["monotone_f"]


# ---------------------------------------------------------------------------
# cancellation identities and the commutator bound


def test_velocity_cancellation_identities(grid32, rng):
    for _ in range(5):
        u = random_divfree_field(grid32, rng, kmax=8, amplitude=1.0)
        from ecspde.diagnostics import advect_phys

        adv0 = advect_phys(grid32, u.coef, u.coef[..., 0, :, :], 2)
        adv1 = advect_phys(grid32, u.coef, u.coef[..., 1, :, :], 2)
        u0 = phys_values(grid32, u.coef[..., 0, :, :], 2)
        u1 = phys_values(grid32, u.coef[..., 1, :, :], 2)
        energy_flux = integrate_phys(adv0 * u0 + adv1 * u1)
        assert abs(energy_flux) < 1e-10 * max(1.0, float(l2_norm(u)) ** 3)
        lap0 = phys_values(grid32, -grid32.k2 * u.coef[..., 0, :, :], 2)
        lap1 = phys_values(grid32, -grid32.k2 * u.coef[..., 1, :, :], 2)
        enstrophy_flux = integrate_phys(adv0 * lap0 + adv1 * lap1)
        assert abs(enstrophy_flux) < 1e-8 * max(1.0, float(l2_norm(u)) ** 3)


def test_commutator_bound_with_frozen_constant(grid32, rng):
    for _ in range(25):
        kmax = int(rng.integers(2, 11))
        v = random_divfree_field(grid32, rng, kmax=kmax, amplitude=1.0, alpha=rng.uniform(0, 2))
        r = random_scalar_field(grid32, rng, kmax=kmax, amplitude=1.0, alpha=rng.uniform(0, 2))
        assert commutator_ratio(v, r) <= constants.COMMUTATOR_C


# ---------------------------------------------------------------------------
# ledger mechanics


def test_ledger_csv_roundtrip(grid32, smooth_state, tmp_path):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=2, sigma=0.1))
    sched = StepSchedule(dt=0.01, t_final=0.1, ledger_stride=2, snapshot_stride=10**9)
    traj = integrate(smooth_state, ModelParams(), basis, sched, seed=1)
    path = tmp_path / "ledger.csv"
    traj.ledger.to_csv(path, 0)
    back = EnergyLedger.from_csv(path)
    assert back.n_rows == traj.ledger.n_rows
    for name in traj.ledger.columns:
        assert np.array_equal(back.column(name)[:, 0], traj.ledger.column(name)[:, 0]), name


def test_ledger_validation_rejects_bad_data():
    with pytest.raises(LedgerError):
        EnergyLedger(np.array([0.0, 0.0]), {"q_l2": np.zeros((2, 1))})
    with pytest.raises(LedgerError):
        EnergyLedger(np.array([0.0, 1.0]), {"q_l2": -np.ones((2, 1))})
    led = EnergyLedger(np.array([0.0, 1.0]), {"q_l2": np.ones((2, 1))})
    with pytest.raises(LedgerError):
        led.column("nope")


def test_state_norms_match_spectral(grid32, smooth_state):
    norms = state_norms(smooth_state)
    assert norms["q_l2"] == pytest.approx(float(l2_norm(smooth_state.q)), rel=1e-12)
    assert norms["u_h2"] > 0
