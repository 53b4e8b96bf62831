import io
import math

import numpy as np
import pytest

from ecspde.dynamics import (
    BlowUpError,
    DynamicsError,
    ModelParams,
    StepSchedule,
    SystemState,
    compute_drift,
    integrate,
    integrate_pathwise,
    step,
    step_pathwise,
)
from ecspde.noise import (
    NoiseConfig,
    StochasticConvolution,
    build_noise_basis,
    increments_at,
    update_convolution,
)
from ecspde.spectral import (
    ScalarField,
    VectorField,
    divergence,
    l2_norm,
    random_divfree_field,
    random_scalar_field,
    riesz,
)


@pytest.fixture()
def smooth_state(grid32, rng):
    q0 = random_scalar_field(grid32, rng, kmax=6, amplitude=0.5, alpha=2.0)
    u0 = random_divfree_field(grid32, rng, kmax=6, amplitude=0.5, alpha=2.0)
    return SystemState(q0, u0)


def state_l2_distance(a: SystemState, b: SystemState):
    dq = l2_norm(a.q - b.q) ** 2
    du = l2_norm(VectorField(a.grid, a.u.coef - b.u.coef)) ** 2
    return np.sqrt(dq + du)


# ---------------------------------------------------------------------------
# drift oracles


def test_drift_of_rest_state_is_zero(grid32):
    d = compute_drift(SystemState.zeros(grid32), ModelParams())
    assert np.all(d.charge.coef == 0)
    assert np.all(d.velocity.coef == 0)


def test_drift_single_charge_mode(grid32):
    # oracle: R(cos x1) = -sin x1 per the multiplier, so q R q is a pure
    # (2,0)-mode field along e1, annihilated by the projection
    q = ScalarField.from_modes(grid32, [((1, 0), 1.0, "cos")])
    r = riesz(q)
    expected_r = ScalarField.from_modes(grid32, [((1, 0), -1.0, "sin")])
    assert np.max(np.abs(r.coef[0] - expected_r.coef)) < 1e-14
    d = compute_drift(SystemState(q, VectorField.zeros(grid32)), ModelParams())
    assert np.max(np.abs(d.charge.coef + q.coef)) < 1e-13  # -Lambda q = -q here
    assert np.max(np.abs(d.velocity.coef)) < 1e-13


def test_drift_single_shear_mode(grid32):
    # oracle: u = (cos x2, 0) advects itself to zero; tendency is Delta u
    u = VectorField.from_components(
        ScalarField.from_modes(grid32, [((0, 1), 1.0, "cos")]),
        ScalarField.zeros(grid32),
    )
    d = compute_drift(SystemState(ScalarField.zeros(grid32), u), ModelParams())
    assert np.max(np.abs(d.charge.coef)) < 1e-14
    assert np.max(np.abs(d.velocity.coef + u.coef)) < 1e-13  # Delta u = -u on |k|=1


def test_drift_velocity_preprojection_view(grid32, rng):
    q = random_scalar_field(grid32, rng, kmax=5, amplitude=0.4)
    u = random_divfree_field(grid32, rng, kmax=5, amplitude=0.4)
    d = compute_drift(SystemState(q, u), ModelParams())
    assert np.max(np.abs(divergence(d.velocity).coef)) < 1e-12
    # pre-projection view differs by a gradient in general
    assert np.max(np.abs(d.velocity_pre.coef - d.velocity.coef)) > 0


# ---------------------------------------------------------------------------
# stepping


def test_linear_mode_decays_exactly(grid32):
    q0 = ScalarField.from_modes(grid32, [((2, 1), 1.0, "cos")])
    s = SystemState(q0, VectorField.zeros(grid32))
    out = step(s, ModelParams(), None, None, 0.02)
    expected = math.exp(-math.sqrt(5.0) * 0.02) * q0.coef
    assert np.max(np.abs(out.q.coef - expected)) < 1e-15


def test_viscous_term_enters_decay_rate(grid32):
    eps = 0.3
    q0 = ScalarField.from_modes(grid32, [((3, 0), 1.0, "sin")])
    s = SystemState(q0, VectorField.zeros(grid32))
    out = step(s, ModelParams(eps=eps), None, None, 0.01)
    expected = math.exp(-(3.0 + eps * 9.0) * 0.01) * q0.coef
    assert np.max(np.abs(out.q.coef - expected)) < 1e-15


def test_one_step_consistency_with_drift(grid32, smooth_state):
    # (state(dt) - state)/dt converges to the full drift at first order
    d = compute_drift(smooth_state, ModelParams())
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        out = step(smooth_state, ModelParams(), None, None, dt)
        rq = (out.q.coef - smooth_state.q.coef) / dt - d.charge.coef
        ru = (out.u.coef - smooth_state.u.coef) / dt - d.velocity.coef
        errs.append(np.sqrt(np.sum(np.abs(rq) ** 2) + np.sum(np.abs(ru) ** 2)))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.25)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.25)


def test_richardson_self_convergence_order_one(grid32, smooth_state):
    params = ModelParams()
    big = 10**9

    def run(dt):
        sched = StepSchedule(dt=dt, t_final=0.24, snapshot_stride=big, ledger_stride=big)
        return integrate(smooth_state, params, None, sched).final_state

    ref = run(5e-4)
    e1 = state_l2_distance(run(4e-3), ref)[0]
    e2 = state_l2_distance(run(2e-3), ref)[0]
    assert 1.6 < e1 / e2 < 3.2  # order ~1 against the dt/8 reference


def test_zero_drift_reduces_to_stochastic_convolution(grid32):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=2, vector_kmax_sq=2, sigma=0.3))
    sched = StepSchedule(dt=5e-3, t_final=0.1, snapshot_stride=10**9, ledger_stride=10**9)
    traj = integrate(
        SystemState.zeros(grid32), ModelParams(), basis, sched, seed=13, debug_zero_drift=True
    )
    sc = StochasticConvolution.zeros(grid32, (1,))
    for istep in range(sched.steps):
        dw = increments_at(13, 0, istep, basis.size, sched.dt)[None, :]
        sc = update_convolution(sc, basis, dw, sched.dt)
    assert np.max(np.abs(traj.final_state.u.coef - sc.phi.coef)) < 1e-12
    assert np.max(np.abs(traj.final_state.q.coef - sc.phit.coef)) < 1e-12


def test_cfl_guard_modes(grid32):
    u = VectorField.from_components(
        ScalarField.from_modes(grid32, [((0, 1), 50.0, "cos")]),
        ScalarField.zeros(grid32),
    )
    u = VectorField(grid32, u.coef)
    s = SystemState(ScalarField.zeros(grid32), u)
    with pytest.warns(RuntimeWarning):
        step(s, ModelParams(), None, None, 0.05, cfl_mode="warn")
    with pytest.raises(DynamicsError):
        step(s, ModelParams(), None, None, 0.05, cfl_mode="error")
    out = step(s, ModelParams(), None, None, 0.05, cfl_mode="substep")
    assert np.all(np.isfinite(out.u.coef.view(float)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_raises_with_last_valid_state(grid32):
    u = VectorField.from_components(
        ScalarField.from_modes(grid32, [((0, 1), 1e4, "cos")]),
        ScalarField.from_modes(grid32, [((1, 0), 1e4, "cos")]),
    )
    q = ScalarField.from_modes(grid32, [((1, 1), 1e4, "cos")])
    s = SystemState(q, u, t=0.0)
    with pytest.raises(BlowUpError) as err:
        state = s
        for _ in range(50):
            state = step(state, ModelParams(), None, None, 0.5, cfl_mode="off")
    assert err.value.last_valid is not None
    assert np.all(np.isfinite(err.value.last_valid.q.coef.view(float)))


# ---------------------------------------------------------------------------
# integrate


def test_zero_horizon_gives_single_row(grid32, smooth_state):
    sched = StepSchedule(dt=0.01, t_final=0.0)
    traj = integrate(smooth_state, ModelParams(), None, sched)
    assert traj.ledger.n_rows == 1
    assert traj.final_state.t == 0.0


def test_ledger_row_count_formula(grid32, smooth_state):
    dt, T, stride = 1e-2, 0.25, 4
    sched = StepSchedule(dt=dt, t_final=T, ledger_stride=stride, snapshot_stride=10**9)
    traj = integrate(smooth_state, ModelParams(), None, sched)
    assert traj.ledger.n_rows == math.floor(T / (dt * stride)) + 1


def test_deterministic_decay_energy_monotone(grid32, smooth_state):
    sched = StepSchedule(dt=2e-3, t_final=0.5, ledger_stride=5, snapshot_stride=10**9)
    traj = integrate(smooth_state, ModelParams(), None, sched)
    E = traj.ledger.column("q_hm12") ** 2 + traj.ledger.column("u_l2") ** 2
    assert np.all(np.diff(E[:, 0]) <= 0)
    qn = traj.ledger.column("q_l2")[:, 0]
    assert np.all(np.diff(qn) <= 1e-14)  # pathwise L2 of q nonincreasing


def test_fixed_seed_reruns_are_byte_identical(grid32, smooth_state):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, vector_kmax_sq=4, sigma=0.2))
    sched = StepSchedule(dt=5e-3, t_final=0.1, ledger_stride=2, snapshot_stride=10**9)
    t1 = integrate(smooth_state, ModelParams(), basis, sched, seed=42, paths=(0, 1))
    t2 = integrate(smooth_state, ModelParams(), basis, sched, seed=42, paths=(0, 1))
    for name, col in t1.ledger.columns.items():
        assert np.array_equal(col, t2.ledger.columns[name]), name
    buf1, buf2 = io.StringIO(), io.StringIO()
    t1.ledger.write_csv(buf1, 1)
    t2.ledger.write_csv(buf2, 1)
    assert buf1.getvalue() == buf2.getvalue()


def test_batched_paths_match_single_path_runs(grid32, smooth_state):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, sigma=0.2))
    sched = StepSchedule(dt=5e-3, t_final=0.05, ledger_stride=10**9, snapshot_stride=10**9)
    both = integrate(smooth_state, ModelParams(), basis, sched, seed=5, paths=(0, 3))
    solo = integrate(smooth_state, ModelParams(), basis, sched, seed=5, paths=(3,))
    assert np.array_equal(both.final_state.q.coef[1], solo.final_state.q.coef[0])


def test_state_invariants_after_every_step(grid32, smooth_state):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, vector_kmax_sq=4, sigma=0.3))
    state = smooth_state.broadcast((1,))
    params = ModelParams()
    for istep in range(20):
        dw = increments_at(3, 0, istep, basis.size, 5e-3)[None, :]
        state = step(state, params, basis, dw, 5e-3)
        assert np.all(state.q.coef[..., 0, 0] == 0)
        assert np.all(divergence(state.u).coef == 0)
        assert np.max(np.abs(state.u.coef[..., :, 0, 0])) < 1e-12


def test_viscous_solutions_differ_at_first_order_in_eps(grid32, smooth_state):
    big = 10**9
    sched = StepSchedule(dt=2e-3, t_final=0.3, ledger_stride=big, snapshot_stride=big)

    def run(eps):
        return integrate(smooth_state, ModelParams(eps=eps), None, sched).final_state

    base = 0.2
    d1 = state_l2_distance(run(base), run(base / 2))[0]
    d2 = state_l2_distance(run(base / 2), run(base / 4))[0]
    assert 1.5 < d1 / d2 < 2.7


# ---------------------------------------------------------------------------
# pathwise decomposition


def test_pathwise_zero_noise_matches_direct_exactly(grid32, smooth_state):
    empty = build_noise_basis(grid32, NoiseConfig())
    big = 10**9
    sched = StepSchedule(dt=2e-3, t_final=0.1, ledger_stride=big, snapshot_stride=big)
    direct = integrate(smooth_state, ModelParams(), empty, sched, seed=3)
    pw = integrate_pathwise(smooth_state, ModelParams(), empty, sched, seed=3)
    assert np.max(np.abs(direct.final_state.q.coef - pw.final_state.q.coef)) < 1e-12
    assert np.max(np.abs(direct.final_state.u.coef - pw.final_state.u.coef)) < 1e-12


def test_pathwise_initial_shift_is_identity(grid32, smooth_state):
    # sc(0) = 0 so (Q, U)(0) = (q, u)(0)
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=2, sigma=0.2))
    sched = StepSchedule(dt=1e-2, t_final=0.01, snapshot_stride=1, ledger_stride=1)
    pw = integrate_pathwise(smooth_state, ModelParams(), basis, sched, seed=1)
    assert np.array_equal(pw.snapshots[0].q.coef[0], smooth_state.q.coef)


def test_pathwise_converges_to_direct_integration(grid32, smooth_state):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, vector_kmax_sq=4, sigma=0.1))
    big = 10**9

    def diff(dt):
        sched = StepSchedule(dt=dt, t_final=0.2, ledger_stride=big, snapshot_stride=big)
        tr = integrate(smooth_state, ModelParams(), basis, sched, seed=7, paths=(0, 1))
        pw = integrate_pathwise(smooth_state, ModelParams(), basis, sched, seed=7, paths=(0, 1))
        num = state_l2_distance(tr.final_state, pw.final_state)
        den = np.sqrt(
            l2_norm(tr.final_state.q) ** 2
            + l2_norm(VectorField(grid32, tr.final_state.u.coef)) ** 2
        )
        return np.sqrt(np.mean((num / den) ** 2))

    d = diff(2e-3)
    assert d < 1e-2
    assert diff(1e-3) < d  # shrinks with dt


def test_pathwise_requires_synchronized_convolution(grid32, smooth_state):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=2, sigma=0.2))
    sc = StochasticConvolution.zeros(grid32)  # t = 0, not t0 + dt
    with pytest.raises(DynamicsError):
        step_pathwise(smooth_state, sc, ModelParams(), dt=0.01)


def test_pathwise_rejects_potential_or_viscosity(grid32, smooth_state):
    sc = StochasticConvolution.zeros(grid32)
    sc.t = 0.01
    with pytest.raises(DynamicsError):
        step_pathwise(smooth_state, sc, ModelParams(eps=0.1), dt=0.01)
