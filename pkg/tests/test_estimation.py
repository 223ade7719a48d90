import numpy as np
import pytest
from hypothesis import given, strategies as st

from rismimo.estimation import (
    ChannelEstimate,
    UnsupportedPilotLengthError,
    draw_training_configs,
    estimate_covariance,
    lmmse_estimate,
    lmmse_filter,
    make_pilot_book,
    num_training_configs,
    phase_table,
    simulate_uplink_training,
    stacked_observation,
    stacked_training_matrix,
    truncated_svd,
)
from rismimo.geometry_channel import draw_small_scale

from conftest import crandn, omni_H

# scaled so that beta * |H|^2 * tau_p is comparable to the noise below
BETA = 1e-6
ETA = 0.8


def _setup(H, rng, num_users=1, tau_p=16, bits=3, fraction=1.0):
    n_a, n_r = H.shape
    cfg = draw_training_configs(n_a, n_r, bits, rng)
    basis = truncated_svd(stacked_training_matrix(H, cfg), fraction)
    pilots = make_pilot_book(tau_p, num_users)
    return cfg, basis, pilots


# pilots


def test_pilot_book_orthogonal_default_size():
    book = make_pilot_book(16, 8)
    rho = book.cross
    assert np.array_equal(np.diag(rho), np.full(8, 16.0))
    assert np.all(rho[~np.eye(8, dtype=bool)] == 0)
    for k in range(8):
        assert list(book.copilots(k)) == [k]


def test_pilot_book_round_robin():
    book = make_pilot_book(4, 6)
    # the second and sixth users share a sequence
    assert book.cross[1, 5] == 4
    assert list(book.copilots(1)) == [1, 5]
    assert list(book.copilots(3)) == [3]


@given(st.integers(0, 6), st.integers(1, 40), st.integers(0, 1000))
def test_pilot_book_invariants(log_tau, k, seed):
    tau = 1 << log_tau
    book = make_pilot_book(tau, k, np.random.default_rng(seed))
    rho = book.cross
    assert np.all(np.diag(rho) == tau)
    assert np.all(np.isin(rho, [0.0, float(tau)]))
    for j in range(k):
        assert set(book.copilots(j)) == set(np.flatnonzero(rho[j] != 0))


@pytest.mark.parametrize("tau", [0, 3, 12])
def test_pilot_book_rejects_length(tau):
    with pytest.raises(UnsupportedPilotLengthError):
        make_pilot_book(tau, 2)


# training configurations


def test_num_configs():
    assert num_training_configs(16, 64) == 4
    assert num_training_configs(16, 70) == 5


def test_training_configs_modulus_and_set(rng):
    cfg = draw_training_configs(16, 64, 3, rng)
    assert cfg.num_configs == 4
    assert np.all(np.abs(cfg.phasors) == 1.0)
    table = phase_table(3)
    assert np.all(np.isin(cfg.phasors, table))
    assert cfg.num_configs * 16 >= 64


def test_one_bit_configs(rng):
    ph = draw_training_configs(4, 16, 1, rng).phasors
    assert np.all(np.isin(ph, [1.0, -1.0]))
    assert np.all(ph.imag == 0)


@pytest.mark.parametrize("bits", [1, 2, 3, 4, 6])
def test_phase_table(bits):
    t = phase_table(bits)
    assert len(t) == 2**bits
    if bits <= 3:
        assert np.all(np.abs(t) == 1.0)
    else:
        assert np.allclose(np.abs(t), 1.0, rtol=0, atol=4e-16)
    ang = np.mod(np.angle(t), 2 * np.pi)
    assert np.allclose(np.sort(ang), 2 * np.pi * np.arange(2**bits) / 2**bits, atol=1e-15)


def test_bad_phase_bits(rng):
    with pytest.raises(ValueError):
        draw_training_configs(4, 16, 0, rng)


# stacked matrix and SVD


def test_stack_single_identity(H_small):
    out = stacked_training_matrix(H_small, np.ones((1, 16)))
    assert np.array_equal(out, H_small)


def test_stack_blocks(H_small, rng):
    cfg = draw_training_configs(4, 16, 3, rng)
    Ht = stacked_training_matrix(H_small, cfg)
    assert Ht.shape == (16, 16)
    for q in range(cfg.num_configs):
        block = H_small @ np.diag(cfg.phasors[q])
        assert np.allclose(Ht[4 * q : 4 * (q + 1)], block, rtol=1e-15, atol=0)
    assert np.linalg.matrix_rank(Ht) <= min(Ht.shape)


def test_stack_shape_mismatch(H_small):
    with pytest.raises(ValueError):
        stacked_training_matrix(H_small, np.ones((2, 15)))


def test_svd_full_fraction_is_rank(H_small, rng):
    cfg = draw_training_configs(4, 16, 3, rng)
    Ht = stacked_training_matrix(H_small, cfg)
    b = truncated_svd(Ht, 1.0)
    assert b.q == b.rank == np.linalg.matrix_rank(Ht)


def test_svd_rank_one(rng):
    M = np.outer(crandn(rng, 6), crandn(rng, 5))
    for f in (1e-6, 0.5, 1.0):
        assert truncated_svd(M, f).q == 1


@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_svd_basis_invariants(seed, frac):
    rng = np.random.default_rng(seed)
    M = crandn(rng, 8, 6) * np.logspace(0, -3, 6)
    b = truncated_svd(M, frac)
    u, v, s = b.u_t, b.v_t, b.s_t
    assert np.allclose(u.conj().T @ u, np.eye(b.q), atol=1e-12)
    assert np.allclose(v.conj().T @ v, np.eye(b.q), atol=1e-12)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    assert s.sum() >= frac * b.s.sum() * (1 - 1e-12)
    resid = np.linalg.norm(M - (u * s) @ v.conj().T, "fro") ** 2
    assert resid == pytest.approx(np.sum(b.s[b.q :] ** 2), rel=1e-9, abs=1e-24)


def test_svd_monotone_in_fraction(H_default, rng):
    Ht = stacked_training_matrix(H_default, draw_training_configs(16, 64, 3, rng))
    qs = [truncated_svd(Ht, f).q for f in np.linspace(0.1, 1.0, 19)]
    assert qs == sorted(qs)
    assert qs[-1] == truncated_svd(Ht, 1.0).rank


def test_svd_bad_fraction(H_small):
    for f in (0.0, 1.5):
        with pytest.raises(ValueError):
            truncated_svd(H_small, f)


# observation model


def test_noiseless_single_user_observation(H_small, rng):
    cfg, basis, pilots = _setup(H_small, rng)
    h = crandn(rng, 1, 16)
    y = simulate_uplink_training(H_small, cfg, h, [ETA], pilots, 0.0, rng)
    Ht = stacked_training_matrix(H_small, cfg)
    assert np.allclose(y[0], np.sqrt(ETA) * 16 * Ht @ h[0], rtol=1e-13, atol=0)


def test_noiseless_copilot_contamination(H_small, rng):
    cfg = draw_training_configs(4, 16, 3, rng)
    pilots = make_pilot_book(2, 3)
    Ht = stacked_training_matrix(H_small, cfg)
    h = crandn(rng, 3, 16)
    etas = np.array([0.8, 0.5, 0.3])
    y = simulate_uplink_training(H_small, cfg, h, etas, pilots, 0.0, rng)
    expected = 2 * (np.sqrt(etas[0]) * Ht @ h[0] + np.sqrt(etas[2]) * Ht @ h[2])
    assert np.allclose(y[0], expected, rtol=1e-12)
    assert np.allclose(y[1], 2 * np.sqrt(etas[1]) * Ht @ h[1], rtol=1e-12)
    assert np.allclose(y, stacked_observation(Ht, h, etas, pilots), rtol=1e-12)


def test_projected_noise_variance(H_small, rng):
    cfg = draw_training_configs(4, 16, 3, rng)
    pilots = make_pilot_book(16, 2)
    sigma2 = 2.5
    h = np.zeros((100_000, 2, 16), complex)
    y = simulate_uplink_training(H_small, cfg, h, [1.0, 1.0], pilots, sigma2, rng)
    var = np.mean(np.abs(y) ** 2, axis=0)
    assert np.all(np.abs(var / (sigma2 * 16) - 1) < 0.02)


# LMMSE


def test_noiseless_estimate_is_projection(H_small, rng):
    cfg, basis, pilots = _setup(H_small, rng)
    h = crandn(rng, 1, 16)
    y = simulate_uplink_training(H_small, cfg, h, [ETA], pilots, 0.0, rng)
    est = lmmse_estimate(y, basis, [1.0], [ETA], pilots, 0.0)
    v = basis.v_t
    assert np.allclose(est.h_hat[0], v @ (v.conj().T @ h[0]), rtol=1e-10, atol=1e-12)
    if basis.q == 16:
        assert np.allclose(est.h_hat[0], h[0], atol=1e-10)


def test_large_noise_shrinks_to_zero(H_small, rng):
    cfg, basis, pilots = _setup(H_small, rng)
    h = crandn(rng, 1, 16)
    noise = 1e30
    y = simulate_uplink_training(H_small, cfg, h, [ETA], pilots, noise, rng)
    est = lmmse_estimate(y, basis, [1.0], [ETA], pilots, noise)
    assert np.linalg.norm(est.h_hat) < 1e-6 * np.linalg.norm(h)


def _mc_estimates(H, rng, n=100_000, noise=None, fraction=0.98, num_users=2):
    cfg, basis, pilots = _setup(H, rng, num_users=num_users, fraction=fraction)
    betas = np.full(num_users, BETA)
    etas = np.full(num_users, ETA)
    if noise is None:
        # per-user SNR around 10 dB after projection
        noise = 0.1 * BETA * np.mean(np.abs(H) ** 2) * H.shape[1] * 16
    h = draw_small_scale(betas, H.shape[1], rng, batch=(n,))
    y = simulate_uplink_training(H, cfg, h, etas, pilots, noise, rng)
    est = lmmse_estimate(y, basis, betas, etas, pilots, noise)
    return h, est, basis, betas, etas, pilots, noise


@pytest.fixture(scope="module")
def mc_run():
    return _mc_estimates(omni_H(4, 16), np.random.default_rng(5))


def test_subspace_mse_matches_formula(mc_run):
    h, est, basis, betas, etas, pilots, noise = mc_run
    filt = lmmse_filter(basis, betas, etas, pilots, noise)
    v = basis.v_t
    err = h @ v.conj() - est.v_hat
    mse = np.mean(np.sum(np.abs(err) ** 2, axis=-1), axis=0)
    expected = betas * basis.q - filt.estimate_variance.sum(axis=1)
    assert np.all(np.abs(mse / expected - 1) < 0.02)


def test_sample_covariance_matches(mc_run):
    h, est, basis, betas, etas, pilots, noise = mc_run
    hh = est.h_hat[:, 0]
    sample = hh.T @ hh.conj() / hh.shape[0]
    R = estimate_covariance(basis, betas, etas, pilots, noise, k=0)
    assert np.allclose(R, est.cov[0])
    assert np.linalg.norm(sample - R) <= 0.03 * np.linalg.norm(R)


def test_orthogonality_principle(mc_run):
    h, est, *_ = mc_run
    hh, e = est.h_hat[:, 0], h[:, 0] - est.h_hat[:, 0]
    prod = hh[:, :, None] * e[:, None, :].conj()
    mean = prod.mean(axis=0)
    se = np.sqrt(prod.real.var(axis=0) + prod.imag.var(axis=0)) / np.sqrt(len(prod))
    assert np.all(np.abs(mean) <= 3 * se)


def test_subspace_containment(mc_run):
    h, est, basis, *_ = mc_run
    v = basis.v_t
    x = est.h_hat[:1000, 0]
    resid = x - (x @ v.conj()) @ v.T
    assert np.max(np.linalg.norm(resid, axis=1) / np.linalg.norm(x, axis=1)) < 1e-10


def test_covariance_properties(H_default, rng):
    cfg, basis, pilots = _setup(H_default, rng, num_users=8, fraction=0.98)
    betas = np.geomspace(1e-9, 1e-6, 8)
    covs = estimate_covariance(basis, betas, np.full(8, ETA), pilots, 2.5e-13)
    v = basis.v_t
    proj = v @ v.conj().T
    for k, R in enumerate(covs):
        assert np.allclose(R, R.conj().T, atol=1e-15 * np.abs(R).max())
        tr = np.trace(R).real
        assert np.linalg.eigvalsh(R).min() >= -1e-12 * tr
        assert tr <= betas[k] * 64
        assert np.allclose(proj @ R, R, atol=1e-10 * np.abs(R).max())


def test_copilot_estimate_depends_only_on_copilots(H_small, rng):
    cfg = draw_training_configs(4, 16, 3, rng)
    basis = truncated_svd(stacked_training_matrix(H_small, cfg), 1.0)
    pilots = make_pilot_book(2, 4)  # pairs (0, 2) and (1, 3)
    betas = np.full(4, 1.0)
    etas = np.full(4, ETA)
    Ht = stacked_training_matrix(H_small, cfg)
    h = crandn(rng, 4, 16)
    h2 = h.copy()
    h2[[1, 3]] = crandn(rng, 2, 16)
    # closed-form observations: orthogonal users enter with an exact zero weight
    est = [
        lmmse_estimate(stacked_observation(Ht, x, etas, pilots), basis, betas, etas, pilots, 0.0)
        for x in (h, h2)
    ]
    assert np.array_equal(est[0].h_hat[[0, 2]], est[1].h_hat[[0, 2]])
    assert not np.allclose(est[0].h_hat[1], est[1].h_hat[1])
    # the simulated pilot blocks agree up to projection rounding
    sim = simulate_uplink_training(H_small, cfg, h2, etas, pilots, 0.0, rng)
    sim_hat = lmmse_estimate(sim, basis, betas, etas, pilots, 0.0).h_hat[0]
    assert np.allclose(sim_hat, est[0].h_hat[0], rtol=1e-12, atol=1e-12 * np.abs(sim_hat).max())


def test_noiseless_singular_regularized(rng):
    # rank-deficient stack with full truncation keeps only nonzero directions
    H = np.outer(crandn(rng, 2), crandn(rng, 4))
    cfg = draw_training_configs(2, 4, 2, rng)
    basis = truncated_svd(stacked_training_matrix(H, cfg), 1.0)
    pilots = make_pilot_book(2, 1)
    h = crandn(rng, 1, 4)
    y = simulate_uplink_training(H, cfg, h, [1.0], pilots, 0.0, rng)
    est = lmmse_estimate(y, basis, [1.0], [1.0], pilots, 0.0)
    assert isinstance(est, ChannelEstimate)
    assert np.all(np.isfinite(est.h_hat))


def test_zero_beta_user_regularized(H_small, rng):
    cfg, basis, pilots = _setup(H_small, rng)
    filt = lmmse_filter(basis, [0.0], [ETA], pilots, 0.0)
    assert np.all(np.isfinite(filt.gain)) and np.all(filt.gain == 0)
