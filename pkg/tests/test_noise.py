import math

import numpy as np
import pytest

from ecspde.noise import (
    CounterSampler,
    IncrementStream,
    NoiseConfig,
    NoiseConfigError,
    StochasticConvolution,
    build_noise_basis,
    half_lattice,
    increments_at,
    update_convolution,
)
from ecspde.spectral import FourierGrid, divergence, l2_norm, lp_norm


def brute_force_lattice_count(kmax_sq):
    # oracle: enumerate the full integer lattice
    count = 0
    m = int(math.isqrt(kmax_sq)) + 1
    for kx in range(-m, m + 1):
        for ky in range(-m, m + 1):
            if 0 < kx * kx + ky * ky <= kmax_sq:
                count += 1
    return count


# ---------------------------------------------------------------------------
# basis construction


def test_scalar_direction_count_matches_lattice_enumeration(grid32):
    # 12 lattice points with 0 < |k|^2 <= 4  ->  12 real directions
    assert brute_force_lattice_count(4) == 12
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=4, sigma=0.3))
    assert basis.n_scalar == 12
    assert basis.n_vector == 0
    assert len(half_lattice(4)) == 6


def test_empty_config_gives_deterministic_dynamics(grid32):
    basis = build_noise_basis(grid32, NoiseConfig())
    assert basis.size == 0
    inj = basis.inject_scalar(np.zeros((0,)))
    assert inj.shape == (32, 32) and np.all(inj == 0)


def test_single_direction_norm_matches_field_quadrature(grid32):
    # gtilde_1 = sigma*sqrt(2)*cos(x1); oracle = L2 quadrature of the field
    sigma = 0.7
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=1, sigma=sigma, alpha=0.0))
    fields = basis.scalar_fields()
    cos_dir = fields[0]
    direct = l2_norm(cos_dir) ** 2
    assert abs(direct - sigma**2 * (2 * np.pi) ** 2) < 1e-10
    assert abs(basis.gtilde_l2_sq() - sum(l2_norm(f) ** 2 for f in fields)) < 1e-12


def test_directions_satisfy_structural_invariants(grid32):
    basis = build_noise_basis(
        grid32, NoiseConfig(scalar_kmax_sq=5, vector_kmax_sq=5, sigma=0.2, alpha=1.0)
    )
    for f in basis.scalar_fields():
        assert abs(f.mean()) == 0.0
    for v in basis.vector_fields():
        assert np.all(divergence(v).coef == 0)  # bitwise divergence-free


def test_amplitude_law_and_cutoff(grid32):
    cfg = NoiseConfig(scalar_kmax_sq=4, sigma=1.0, alpha=2.0)
    basis = build_noise_basis(grid32, cfg)
    by_shell = {}
    for d in basis.scalar_directions:
        by_shell.setdefault(d.k[0] ** 2 + d.k[1] ** 2, d.amplitude)
    assert abs(by_shell[1] - 1.0) < 1e-15
    assert abs(by_shell[4] - 0.25) < 1e-15
    assert max(k[0] ** 2 + k[1] ** 2 for d in basis.scalar_directions for k in [d.k]) <= 4


def test_cutoff_beyond_grid_rejected():
    grid = FourierGrid(8)
    with pytest.raises(NoiseConfigError):
        build_noise_basis(grid, NoiseConfig(scalar_kmax_sq=100, sigma=1.0))


def test_gtilde_l4_norm_against_direct_quadrature(grid32):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=2, sigma=0.5, alpha=1.0))
    fields = basis.scalar_fields()
    vals = np.stack([f.to_physical(oversample=3) for f in fields])
    total = np.sum(vals**2, axis=0)
    oracle = (total**2).mean() * (2 * np.pi) ** 2
    assert abs(basis.gtilde_lp(4.0) ** 4 - oracle) < 1e-10


# ---------------------------------------------------------------------------
# increments


def test_zero_dt_gives_zero_increments():
    s = IncrementStream(seed=5, dt=0.0)
    assert np.all(s.sample(7) == 0)


def test_reproducibility_contract():
    a = increments_at(seed=11, path=3, step=20, count=16, dt=0.01)
    b = increments_at(seed=11, path=3, step=20, count=16, dt=0.01)
    c = increments_at(seed=11, path=4, step=20, count=16, dt=0.01)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    stream = IncrementStream(seed=11, dt=0.01, path=3)
    stream.step = 20
    assert np.array_equal(stream.sample(16), a)
    assert stream.step == 21


def test_clt_moments_of_increment_stream():
    # 1e6 draws at dt = 0.01: mean within 4e-5*sqrt(10), variance within 1%
    dw = increments_at(seed=2024, path=0, step=0, count=1_000_000, dt=0.01)
    assert abs(dw.mean()) < 4e-5 * math.sqrt(10)
    assert abs(dw.var() - 0.01) < 1e-4


def test_paths_statistically_independent():
    n = 200_000
    a = increments_at(seed=9, path=0, step=0, count=n, dt=1.0)
    b = increments_at(seed=9, path=1, step=0, count=n, dt=1.0)
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 4.0 / math.sqrt(n)


def test_batch_sampler_matches_individual_paths():
    sampler = CounterSampler(seed=3)
    batch = sampler.normals_batch([0, 5, 9], step=7, count=6)
    for row, path in enumerate([0, 5, 9]):
        assert np.array_equal(batch[row], sampler.normals(path, 7, 6))


# ---------------------------------------------------------------------------
# stochastic convolution


def test_zero_increments_keep_convolution_zero(grid32):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=2, vector_kmax_sq=2, sigma=0.4))
    sc = StochasticConvolution.zeros(grid32)
    for _ in range(4):
        sc = update_convolution(sc, basis, np.zeros(basis.size), dt=0.1)
    assert np.all(sc.phit.coef == 0)
    assert np.all(sc.phi.coef == 0)
    assert abs(sc.t - 0.4) < 1e-14


def test_single_step_from_zero_matches_recurrence(grid32):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=1, sigma=0.4, alpha=0.0))
    dw = increments_at(seed=1, path=0, step=0, count=basis.size, dt=0.05)
    sc = update_convolution(StochasticConvolution.zeros(grid32), basis, dw, dt=0.05)
    expected = np.exp(-grid32.kabs * 0.05) * basis.inject_scalar(dw)
    assert np.max(np.abs(sc.phit.coef - expected)) < 1e-15


def test_convolution_preserves_structure(grid32):
    basis = build_noise_basis(grid32, NoiseConfig(scalar_kmax_sq=2, vector_kmax_sq=2, sigma=0.4))
    sc = StochasticConvolution.zeros(grid32)
    stream = IncrementStream(seed=6, dt=0.02)
    for _ in range(25):
        sc = update_convolution(sc, basis, stream.sample(basis.size), dt=0.02)
    assert np.all(sc.phit.coef[..., 0, 0] == 0)  # mean zero, exactly
    assert np.all(divergence(sc.phi).coef == 0)  # divergence-free, exactly


def test_ou_variance_matches_ito_isometry():
    # scalar mode |k| = 1: Var(phit_k(t)) -> sigma^2 (1 - e^{-2t}) / 2
    grid = FourierGrid(8)
    sigma, dt, t_end, paths = 0.9, 0.01, 1.0, 10_000
    basis = build_noise_basis(grid, NoiseConfig(scalar_kmax_sq=1, sigma=sigma, alpha=2.0))
    sampler = CounterSampler(seed=77)
    sc = StochasticConvolution.zeros(grid, batch=(paths,))
    nsteps = int(round(t_end / dt))
    for step in range(nsteps):
        dw = sampler.normals_batch(range(paths), step, basis.size) * math.sqrt(dt)
        sc = update_convolution(sc, basis, dw, dt=dt)
    coef = sc.phit.mode((1, 0))
    var = np.mean(np.abs(coef) ** 2)
    target = sigma**2 * (1 - math.exp(-2 * t_end)) / 2
    assert abs(var - target) / target < 0.05


def test_lp_norm_of_vector_noise_direction(grid32):
    basis = build_noise_basis(grid32, NoiseConfig(vector_kmax_sq=1, sigma=1.0, alpha=0.0))
    v = basis.vector_fields()[0]
    # unit-vector carrier: |g|^2 = 2 cos^2 integrates to (2pi)^2
    assert abs(l2_norm(v) ** 2 - (2 * np.pi) ** 2) < 1e-10
    assert lp_norm(v, 4.0) > 0
