"""
Uplink training over several RIS configurations and LMMSE channel estimation.

The array sees each UE's pilot once per RIS training configuration. Stacking
the pilot-projected observations gives ``y_k = sqrt(eta_k) tau_p Ht h_k +
(copilot terms) + noise`` where ``Ht`` stacks ``H diag(phi_q)``. The estimator
works in the dominant right-singular subspace of ``Ht``. Because ``Lambda`` is
real and diagonal, every covariance in that subspace is diagonal and the LMMSE
filter reduces to a per-coordinate gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

REGULARIZATION = 1e-12


class UnsupportedPilotLengthError(ValueError):
    pass


@dataclass(frozen=True)
class PilotBook:
    tau_p: int
    sequences: np.ndarray = field(repr=False)
    assignment: np.ndarray

    @property
    def num_users(self) -> int:
        return len(self.assignment)

    @property
    def cross(self) -> np.ndarray:
        """Pairwise inner products ``rho[j, k] = phi_j^T phi_k``."""
        return self.sequences @ self.sequences.T

    def copilots(self, k: int) -> np.ndarray:
        """Users sharing user ``k``'s pilot, ``k`` included."""
        return np.flatnonzero(self.assignment == self.assignment[k])


def make_pilot_book(tau_p: int, num_users: int, rng=None) -> PilotBook:
    """Orthogonal +/-1 pilots from Hadamard rows, reused round-robin.

    With ``rng`` the Hadamard rows are permuted before assignment; the
    sharing pattern (user k gets pilot k mod tau_p) is unchanged.
    """
    if tau_p < 1 or tau_p & (tau_p - 1):
        raise UnsupportedPilotLengthError(f"tau_p must be a power of two, got {tau_p}")
    if num_users < 1:
        raise ValueError("need at least one user")
    rows = hadamard(tau_p).astype(float)
    if rng is not None:
        rows = rows[rng.permutation(tau_p)]
    assignment = np.arange(num_users) % tau_p
    seqs = rows[assignment]
    seqs.setflags(write=False)
    assignment.setflags(write=False)
    return PilotBook(tau_p, seqs, assignment)


def phase_table(bits: int) -> np.ndarray:
    """Unit-modulus phasors for the ``2**bits`` uniform angles ``2 pi m / 2**bits``.

    Built from the first quadrant and exact quarter-turn rotations, so the
    multiples of pi/2 come out exactly as +-1, +-1j.
    """
    if bits < 1:
        raise ValueError(f"phase_bits must be >= 1, got {bits}")
    n = 1 << bits
    if n == 2:
        return np.array([1.0 + 0j, -1.0 + 0j])
    quarter = n // 4
    ang = 2 * np.pi * np.arange(quarter) / n
    base = np.cos(ang) + 1j * np.sin(ang)
    base[0] = 1.0
    return np.concatenate([base, 1j * base, -base, -1j * base])


@dataclass(frozen=True)
class TrainingConfigs:
    phase_bits: int
    indices: np.ndarray = field(repr=False)

    @property
    def num_configs(self) -> int:
        return self.indices.shape[0]

    @property
    def phasors(self) -> np.ndarray:
        return phase_table(self.phase_bits)[self.indices]


def num_training_configs(n_active: int, n_ris: int) -> int:
    return math.ceil(n_ris / n_active)


def draw_training_configs(n_active, n_ris, phase_bits, rng, num_configs=None) -> TrainingConfigs:
    if phase_bits < 1:
        raise ValueError(f"phase_bits must be >= 1, got {phase_bits}")
    if num_configs is None:
        num_configs = num_training_configs(n_active, n_ris)
    idx = rng.integers(0, 1 << phase_bits, size=(num_configs, n_ris))
    idx.setflags(write=False)
    return TrainingConfigs(int(phase_bits), idx)


def stacked_training_matrix(H, configs) -> np.ndarray:
    """Vertical stack of ``H diag(phi_q)`` blocks, shape ``(Q * N_A, N_R)``."""
    H = np.asarray(H)
    phasors = configs.phasors if isinstance(configs, TrainingConfigs) else np.asarray(configs)
    if phasors.ndim != 2 or phasors.shape[1] != H.shape[1]:
        raise ValueError(f"shape mismatch: H {H.shape}, configs {phasors.shape}")
    return (H[None, :, :] * phasors[:, None, :]).reshape(-1, H.shape[1])


@dataclass(frozen=True)
class TruncatedBasis:
    u: np.ndarray = field(repr=False)
    s: np.ndarray
    vh: np.ndarray = field(repr=False)
    q: int
    rank: int

    @property
    def u_t(self) -> np.ndarray:
        return self.u[:, : self.q]

    @property
    def s_t(self) -> np.ndarray:
        return self.s[: self.q]

    @property
    def v_t(self) -> np.ndarray:
        return self.vh[: self.q].conj().T

    def discarded_fraction(self, mode: str = "sum") -> float:
        w = self.s if mode == "sum" else self.s**2
        return float(w[self.q :].sum() / w.sum())


def truncated_svd(Ht, energy_fraction: float, mode: str = "sum") -> TruncatedBasis:
    """Keep the fewest singular values reaching ``energy_fraction`` of the total.

    ``mode="sum"`` weighs plain singular values, ``"squared"`` their squares.
    Only numerically nonzero singular values are ever kept.
    """
    if not 0 < energy_fraction <= 1:
        raise ValueError("energy_fraction must lie in (0, 1]")
    if mode not in ("sum", "squared"):
        raise ValueError(f"unknown energy mode {mode!r}")
    u, s, vh = np.linalg.svd(Ht, full_matrices=False)
    tol = s[0] * max(Ht.shape) * np.finfo(float).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    w = (s if mode == "sum" else s**2)[:rank]
    cum = np.cumsum(w)
    q = int(np.searchsorted(cum, energy_fraction * cum[-1] * (1 - 1e-15)) + 1) if rank else 0
    q = min(max(q, 1), rank) if rank else 0
    return TruncatedBasis(u, s, vh, q, rank)


def stacked_observation(Ht, h, uplink_powers, pilots: PilotBook, noise=None):
    """Pilot-projected stacked observations written directly in closed form.

    ``h`` has shape ``(..., K, N_R)``; ``noise`` (same shape as the result)
    is added if given.
    """
    rho = pilots.cross
    g = (np.sqrt(uplink_powers)[:, None] * h) @ Ht.T
    y = np.einsum("jk,...jm->...km", rho, g)
    if noise is not None:
        y = y + noise
    return y


def simulate_uplink_training(H, configs: TrainingConfigs, h, uplink_powers, pilots, noise_power, rng):
    """Simulate the received pilot blocks and project them on each pilot.

    Parameters
    ----------
    H : (N_A, N_R) complex array
    configs : TrainingConfigs
    h : (..., K, N_R) complex array
        True UE-to-RIS channels; leading axes are independent draws.
    uplink_powers : (K,) array
    pilots : PilotBook
    noise_power : float
        Per-entry noise variance at the array.

    Returns
    -------
    (..., K, Q * N_A) complex array
    """
    H = np.asarray(H)
    n_a = H.shape[0]
    phasors = configs.phasors
    n_q = phasors.shape[0]
    tau_p = pilots.tau_p
    # g[..., k, q, a] = sqrt(eta_k) (H diag(phi_q) h_k)_a
    hp = np.sqrt(uplink_powers)[:, None, None] * h[..., :, None, :] * phasors[None, :, :]
    g = hp @ H.T
    Y = np.einsum("...kqa,kt->...qat", g, pilots.sequences)
    if noise_power > 0:
        shape = Y.shape
        Y = Y + np.sqrt(noise_power / 2) * (
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        )
    y = np.einsum("...qat,kt->...kqa", Y, pilots.sequences)
    return y.reshape(y.shape[:-2] + (n_q * n_a,))


@dataclass(frozen=True)
class LmmseFilter:
    """Per-user diagonal LMMSE quantities in the truncated subspace.

    Rows index users; columns index the ``q`` retained directions.
    """

    r_vy: np.ndarray
    r_yy: np.ndarray

    @property
    def gain(self) -> np.ndarray:
        return self.r_vy / self.r_yy

    @property
    def estimate_variance(self) -> np.ndarray:
        """Diagonal of ``R_vy R_yy^-1 R_vy^H``."""
        return self.r_vy**2 / self.r_yy


def lmmse_filter(basis: TruncatedBasis, betas, uplink_powers, pilots, noise_power) -> LmmseFilter:
    betas = np.asarray(betas, dtype=float)
    etas = np.asarray(uplink_powers, dtype=float)
    lam = basis.s_t
    tau_p = pilots.tau_p
    rho2 = pilots.cross**2
    # sum_j eta_j beta_j rho_{j,k}^2
    load = (etas * betas) @ rho2
    r_vy = (np.sqrt(etas) * tau_p * betas)[:, None] * lam[None, :]
    r_yy = load[:, None] * lam[None, :] ** 2 + noise_power * tau_p
    trace = r_yy.sum(axis=1, keepdims=True)
    singular = np.any(r_yy <= 0, axis=1, keepdims=True)
    eps = np.where(trace > 0, REGULARIZATION * trace, REGULARIZATION)
    r_yy = np.where(singular, r_yy + eps, r_yy)
    return LmmseFilter(r_vy, r_yy)


@dataclass(frozen=True)
class ChannelEstimate:
    h_hat: np.ndarray
    v_hat: np.ndarray
    cov: np.ndarray


def estimate_covariance(basis, betas, uplink_powers, pilots, noise_power, k=None):
    """Covariance of the channel estimate, ``V diag(var) V^H``.

    Returns ``(N_R, N_R)`` for a single ``k`` or ``(K, N_R, N_R)`` otherwise.
    """
    filt = lmmse_filter(basis, betas, uplink_powers, pilots, noise_power)
    var = filt.estimate_variance
    v = basis.v_t
    if k is not None:
        return (v * var[k]) @ v.conj().T
    return np.einsum("nq,kq,mq->knm", v, var, v.conj())


def lmmse_estimate(y_tilde, basis, betas, uplink_powers, pilots, noise_power) -> ChannelEstimate:
    """LMMSE estimates for all users from stacked observations ``(..., K, M)``."""
    filt = lmmse_filter(basis, betas, uplink_powers, pilots, noise_power)
    y_bar = y_tilde @ basis.u_t.conj()
    v_hat = filt.gain * y_bar
    h_hat = v_hat @ basis.v_t.T
    cov = estimate_covariance(basis, betas, uplink_powers, pilots, noise_power)
    return ChannelEstimate(h_hat, v_hat, cov)
