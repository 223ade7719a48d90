"""
Downlink conjugate beamforming and spectral-efficiency measures.

Notation: ``A`` is the N_R x N_R matrix ``conj((H Phi)^H (H Phi))``. With the
conjugate beamformer ``w_j = conj(H Phi h_hat_j)`` the gain seen by UE k from
beam j is ``h_k^T A conj(h_hat_j)``, and ``E{h_k^T A conj(h_hat_k)} =
tr(A conj(R_k))`` where ``R_k`` is the estimate covariance.

The hardening lower bound needs deterministic downlink powers, so it uses
``eta_k = P / (K E||w_k||^2)`` with ``E||w_k||^2 = tr(A conj(R_k))``. The
instantaneous SINR measures use the per-realization ``P / (K ||w_k||^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .estimation import (
    PilotBook,
    TrainingConfigs,
    TruncatedBasis,
    lmmse_estimate,
    simulate_uplink_training,
)
from .geometry_channel import compose_effective_channel, draw_small_scale


class DegenerateChannelError(ValueError):
    pass


class NumericConsistencyError(ArithmeticError):
    pass


class MonteCarloEstimate(NamedTuple):
    value: np.ndarray
    stderr: np.ndarray


def conjugate_beamformer(H, phasors, h_hat):
    return np.conj(compose_effective_channel(H, phasors, h_hat))


def allocate_downlink_power(p_max: float, w):
    """Equal power split ``eta_k = p_max / (K ||w_k||^2)`` along the user axis.

    ``w`` has shape ``(..., K, N_A)``.
    """
    norms = np.sum(np.abs(w) ** 2, axis=-1)
    if np.any(norms <= 0):
        raise DegenerateChannelError("zero-norm beamformer")
    return p_max / (norms.shape[-1] * norms)


@dataclass(frozen=True)
class DownlinkSetup:
    H: np.ndarray
    phasors: np.ndarray
    w: np.ndarray
    eta: np.ndarray
    noise_power: float
    prelog: float = 1.0
    prelog_bar: float = 1.0

    def __post_init__(self):
        if not (0 < self.prelog <= 1 and 0 < self.prelog_bar <= 1):
            raise ValueError("prelog factors must lie in (0, 1]")


def beam_gains(H, phasors, h, w):
    """``g[..., k, j] = h_k^T Phi^T H^T w_j``."""
    hbar = compose_effective_channel(H, phasors, h)
    return hbar @ np.swapaxes(w, -1, -2)


def sinr_from_gains(g, eta, noise_power):
    p = eta[..., None, :] * np.abs(g) ** 2
    signal = np.diagonal(p, axis1=-2, axis2=-1)
    interference = p.sum(axis=-1) - signal
    return signal / (interference + noise_power)


def sinr_perfect_csi(setup: DownlinkSetup, h):
    """Instantaneous downlink SINR of every user for true channels ``h``."""
    g = beam_gains(setup.H, setup.phasors, h, setup.w)
    return sinr_from_gains(g, np.asarray(setup.eta, dtype=float), setup.noise_power)


def se_shannon(gamma, prelog=1.0):
    return prelog * np.log2(1.0 + np.asarray(gamma))


def training_prelog(tau_p: int, tau_c: int, repetitions: int = 1) -> float:
    """Fraction of the coherence block left for data after pilots."""
    return 1.0 - repetitions * tau_p / tau_c


def se_upper_bound(gamma_samples, prelog_bar: float) -> MonteCarloEstimate:
    """``prelog_bar * E{log2(1 + gamma)}`` over the first axis, with its standard error."""
    x = np.log2(1.0 + np.asarray(gamma_samples, dtype=float))
    n = x.shape[0]
    if n == 0:
        raise ValueError("no samples")
    se = prelog_bar * x.mean(axis=0)
    err = prelog_bar * x.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(se)
    return MonteCarloEstimate(se, err)


def a_phi_matrix(H, phasors):
    hp = np.asarray(H) * np.asarray(phasors)[None, :]
    return np.conj(hp.conj().T @ hp)


@dataclass(frozen=True)
class HardeningTerms:
    """Per-user powers of the hardening decomposition.

    ``ui[k, j]`` is the interference power at UE k from beam j (zero on the
    diagonal). The ``*_err`` fields hold Monte-Carlo standard errors and are
    ``None`` for closed-form terms.
    """

    ds2: np.ndarray
    bu: np.ndarray
    ui: np.ndarray
    noise_power: float
    ds2_err: Optional[np.ndarray] = None
    bu_err: Optional[np.ndarray] = None
    ui_err: Optional[np.ndarray] = None

    @property
    def sinr(self) -> np.ndarray:
        return self.ds2 / (self.bu + self.ui.sum(axis=1) + self.noise_power)


def _real_trace_terms(A, covs):
    """``tr(A conj(R_k))`` and ``tr(A conj(R_k) A)`` for every k, checked real and >= 0."""
    X = A @ np.conj(covs)
    t1 = np.trace(X, axis1=-2, axis2=-1)
    t2 = np.sum(X * A.T, axis=(-2, -1))
    for t in (t1, t2):
        scale = np.max(np.abs(t)) if t.size else 0.0
        if np.any(t.real < -1e-9 * scale) or np.any(np.abs(t.imag) > 1e-9 * max(scale, 1e-300)):
            raise NumericConsistencyError("trace term not real nonnegative")
    return np.maximum(t1.real, 0.0), np.maximum(t2.real, 0.0)


def expected_beam_norms(A, covs):
    """``E||w_k||^2 = tr(A conj(R_k))`` for the conjugate beamformer."""
    return _real_trace_terms(A, covs)[0]


def average_power_allocation(p_max, A, covs):
    norms = expected_beam_norms(A, covs)
    if np.any(norms <= 0):
        raise DegenerateChannelError("zero expected beamformer norm")
    return p_max / (len(norms) * norms)


def hardening_terms_closed_form(A, covs, betas, eta_d, eta_u, pilots: PilotBook, noise_power):
    """Closed-form hardening terms for conjugate beamforming on LMMSE estimates."""
    betas = np.asarray(betas, dtype=float)
    eta_d = np.asarray(eta_d, dtype=float)
    eta_u = np.asarray(eta_u, dtype=float)
    t1, t2 = _real_trace_terms(A, covs)
    n_users = len(betas)
    ds2 = eta_d * t1**2
    bu = eta_d * betas * t2
    ui = np.zeros((n_users, n_users))
    shared = pilots.assignment[:, None] == pilots.assignment[None, :]
    for k in range(n_users):
        for j in range(n_users):
            if j == k:
                continue
            if shared[k, j]:
                ratio = (betas[j] * np.sqrt(eta_u[j])) / (betas[k] * np.sqrt(eta_u[k]))
                ui[k, j] = eta_d[j] * ratio**2 * (t1[k] ** 2 + betas[k] * t2[k])
            else:
                ui[k, j] = eta_d[j] * betas[k] * t2[j]
    return HardeningTerms(ds2, bu, ui, float(noise_power))


def sinr_hardening_lb(A, covs, betas, eta_d, eta_u, pilots, noise_power):
    return hardening_terms_closed_form(A, covs, betas, eta_d, eta_u, pilots, noise_power).sinr


def lb_terms_monte_carlo(
    H,
    phasors,
    configs: TrainingConfigs,
    basis: TruncatedBasis,
    betas,
    eta_u,
    eta_d,
    pilots: PilotBook,
    uplink_noise: float,
    downlink_noise: float,
    draws: int,
    rng: np.random.Generator,
    batch: int = 20_000,
) -> HardeningTerms:
    """Sample the hardening decomposition by simulating training and beamforming.

    Each draw regenerates the UE channels and training noise, forms LMMSE
    estimates from simulated pilot observations, and records the beam gains
    ``h_k^T Phi^T H^T w_j``. Nothing here uses the closed-form covariances.
    """
    if draws < 1000:
        raise ValueError("need at least 1000 draws")
    betas = np.asarray(betas, dtype=float)
    n_r = H.shape[1]
    acc = GainAccumulator(len(betas))
    done = 0
    while done < draws:
        b = min(batch, draws - done)
        h = draw_small_scale(betas, n_r, rng, batch=(b,))
        y = simulate_uplink_training(H, configs, h, eta_u, pilots, uplink_noise, rng)
        est = lmmse_estimate(y, basis, betas, eta_u, pilots, uplink_noise)
        w = conjugate_beamformer(H, phasors, est.h_hat)
        acc.add(beam_gains(H, phasors, h, w))
        done += b
    return acc.terms(eta_d, downlink_noise)


class GainAccumulator:
    """Streaming moments of beam gains ``g[k, j]`` for the hardening terms.

    Desired-beam gains are kept in full (the variance needs the final mean);
    cross gains only contribute running sums of ``|g|^2`` and ``|g|^4``.
    """

    def __init__(self, num_users: int):
        self._diag = []
        self._s1 = np.zeros((num_users, num_users))
        self._s2 = np.zeros((num_users, num_users))
        self.count = 0

    def add(self, g):
        g = np.asarray(g)
        self._diag.append(np.diagonal(g, axis1=-2, axis2=-1).copy())
        p = np.abs(g) ** 2
        self._s1 += p.sum(axis=0)
        self._s2 += (p**2).sum(axis=0)
        self.count += g.shape[0]

    def terms(self, eta_d, noise_power) -> HardeningTerms:
        n = self.count
        if n < 2:
            raise ValueError("need at least two draws")
        eta_d = np.asarray(eta_d, dtype=float)
        diag = np.concatenate(self._diag)
        mean = diag.mean(axis=0)
        dev2 = np.abs(diag - mean) ** 2
        ds2 = eta_d * np.abs(mean) ** 2
        # delta method: |m|^2 moves with the fluctuation component along m
        along = np.real(np.conj(mean) / np.maximum(np.abs(mean), 1e-300) * (diag - mean))
        ds2_err = eta_d * 2 * np.abs(mean) * along.std(axis=0, ddof=1) / np.sqrt(n)
        bu = eta_d * dev2.sum(axis=0) / (n - 1)
        bu_err = eta_d * dev2.std(axis=0, ddof=1) / np.sqrt(n)
        m1 = self._s1 / n
        var = np.maximum(self._s2 / n - m1**2, 0.0)
        ui = eta_d[None, :] * m1
        ui_err = eta_d[None, :] * np.sqrt(var / n)
        np.fill_diagonal(ui, 0.0)
        np.fill_diagonal(ui_err, 0.0)
        return HardeningTerms(ds2, bu, ui, float(noise_power), ds2_err, bu_err, ui_err)


def hardening_metric(H, phasors, beta, n_samples, rng):
    """``var(||H Phi h||^2) / E^2(||H Phi h||^2)`` over fresh Rayleigh ``h``."""
    if n_samples < 1000:
        raise ValueError("need at least 1000 samples")
    h = draw_small_scale(beta, np.shape(H)[1], rng, batch=(n_samples,))
    e = np.sum(np.abs(compose_effective_channel(H, phasors, h)) ** 2, axis=-1)
    m = e.mean()
    if m == 0:
        return 0.0
    return float(e.var() / m**2)


def hardening_metric_exact(H) -> float:
    """Closed form ``tr(G^2) / tr(G)^2`` with ``G = H^H H``; independent of Phi."""
    s2 = np.linalg.svd(H, compute_uv=False) ** 2
    return float((s2**2).sum() / s2.sum() ** 2)
