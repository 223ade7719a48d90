"""
Quantized RIS phase optimization by cyclic coordinate descent.

The objectives act on the K x K Gram matrix ``G = S^H S`` of the composite
channels ``S = H Phi Hbar`` (columns ``H Phi h_k``). Changing the phasor of
element i by ``delta`` is the rank-one update ``S + delta H[:, i] Hbar[i, :]``,
so every candidate phase can be scored in O(K^2) from ``G`` without touching
the other N_R - 1 elements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimation import phase_table
from .performance import DegenerateChannelError

OBJECTIVES = ("f1", "f2")


@dataclass(frozen=True)
class RisPhaseConfig:
    indices: np.ndarray
    phase_bits: int

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * self.indices / (1 << self.phase_bits)

    @property
    def phasors(self) -> np.ndarray:
        return phase_table(self.phase_bits)[self.indices]


def random_phase_config(n_ris: int, phase_bits: int, rng) -> RisPhaseConfig:
    return RisPhaseConfig(rng.integers(0, 1 << phase_bits, size=n_ris), int(phase_bits))


def _f1(G):
    k = G.shape[-1]
    iu, ju = np.triu_indices(k, 1)
    return np.abs(G[..., iu, ju]).sum(axis=-1)


def _objective(G, objective):
    f1 = _f1(G)
    if objective == "f1":
        return f1
    norm = np.trace(G, axis1=-2, axis2=-1).real
    if np.any(norm <= 0):
        raise DegenerateChannelError("all composite channels are zero")
    return f1 / norm


class ObjectiveContext:
    """Mutable optimization state: current phases plus cached ``S`` and ``G``.

    Parameters
    ----------
    H : (N_A, N_R) complex array
    users : (K, N_R) complex array
        One row per UE; the columns of ``Hbar``.
    config : RisPhaseConfig
        Starting phases; copied.
    """

    def __init__(self, H, users, config: RisPhaseConfig):
        self.H = np.asarray(H)
        self.hbar = np.asarray(users).T
        self.phase_bits = config.phase_bits
        self.table = phase_table(config.phase_bits)
        self.indices = np.array(config.indices, copy=True)
        self._col_norms = np.sum(np.abs(self.H) ** 2, axis=0)
        self.refresh()

    def refresh(self):
        """Recompute ``S`` and ``G`` from scratch."""
        self.S = (self.H * self.table[self.indices]) @ self.hbar
        self.G = self.S.conj().T @ self.S

    @property
    def config(self) -> RisPhaseConfig:
        return RisPhaseConfig(self.indices.copy(), self.phase_bits)

    def value(self, objective: str) -> float:
        return float(_objective(self.G, objective))

    def candidate_grams(self, i: int):
        """Gram matrices for every phase of element ``i``, others fixed."""
        delta = self.table - self.table[self.indices[i]]
        u = self.H[:, i]
        v = self.hbar[i]
        a = u.conj() @ self.S
        p = np.conj(delta[:, None] * v[None, :])
        X = p[:, :, None] * a[None, None, :]
        outer = np.conj(v)[:, None] * v[None, :]
        return (
            self.G[None]
            + X
            + np.conj(np.swapaxes(X, 1, 2))
            + (np.abs(delta) ** 2 * self._col_norms[i])[:, None, None] * outer[None]
        ), delta

    def apply(self, i: int, m: int, G_new=None, delta=None):
        if delta is None:
            delta = self.table[m] - self.table[self.indices[i]]
        self.S = self.S + delta * np.outer(self.H[:, i], self.hbar[i])
        self.G = G_new if G_new is not None else self.S.conj().T @ self.S
        self.indices[i] = m


def gram_matrix(ctx: ObjectiveContext):
    """K x K interference Gram matrix ``(H Phi Hbar)^H (H Phi Hbar)``."""
    return ctx.G.copy()


def objective_f1(ctx: ObjectiveContext) -> float:
    return ctx.value("f1")


def objective_f2(ctx: ObjectiveContext) -> float:
    return ctx.value("f2")


def coordinate_step(ctx: ObjectiveContext, i: int, objective: str):
    """Exhaustive search over the phase set for element ``i``; updates ``ctx``.

    Returns ``(best_index, value_before, value_after)``. Ties go to the lowest
    phase index.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if len(ctx.table) == 0:
        raise ValueError("empty phase set")
    grams, delta = ctx.candidate_grams(i)
    values = _objective(grams, objective)
    cur = ctx.indices[i]
    before = values[cur]
    m = int(np.argmin(values))
    after = values[m]
    if m != cur:
        ctx.apply(i, m, grams[m], delta[m])
    return m, float(before), float(after)


@dataclass
class OptimizationResult:
    config: RisPhaseConfig
    value: float
    initial_value: float
    trace: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False


def optimize_phases(
    ctx: ObjectiveContext,
    objective: str = "f1",
    rel_tol: float = 1e-6,
    max_sweeps: int = 50,
    record_steps: bool = True,
) -> OptimizationResult:
    """Cyclic coordinate descent over all RIS elements until the objective settles.

    A sweep visits elements 0..N_R-1 once. The loop stops once a sweep lowers
    the objective by less than ``rel_tol`` relative to its starting value, or
    after ``max_sweeps``. ``S`` and ``G`` are rebuilt after every sweep.

    ``steps`` holds one ``(before, after)`` pair per coordinate update and
    ``trace`` the objective after each sweep (starting value first).
    """
    initial = ctx.value(objective)
    result = OptimizationResult(ctx.config, initial, initial, trace=[initial])
    current = initial
    for sweep in range(max_sweeps):
        start = current
        for i in range(ctx.H.shape[1]):
            _, before, after = coordinate_step(ctx, i, objective)
            if record_steps:
                result.steps.append((before, after))
        ctx.refresh()
        current = ctx.value(objective)
        result.trace.append(current)
        result.sweeps = sweep + 1
        if start - current <= rel_tol * abs(start):
            result.converged = True
            break
    result.config = ctx.config
    result.value = current
    return result


def exhaustive_minimum(H, users, phase_bits: int, objective: str = "f1", chunk: int = 4096):
    """Global minimum over every quantized configuration; only for tiny N_R."""
    H = np.asarray(H)
    hbar = np.asarray(users).T
    table = phase_table(phase_bits)
    n_r = H.shape[1]
    levels = len(table)
    total = levels**n_r
    best = np.inf
    best_idx = None
    # S = sum_l phi_l H[:, l] hbar[l, :]
    terms = H.T[:, :, None] * hbar[:, None, :]
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total))
        digits = (codes[:, None] // levels ** np.arange(n_r)[None, :]) % levels
        S = np.einsum("cl,lak->cak", table[digits], terms)
        G = np.conj(np.swapaxes(S, 1, 2)) @ S
        vals = _objective(G, objective)
        j = int(np.argmin(vals))
        if vals[j] < best:
            best = float(vals[j])
            best_idx = digits[j]
    return best, RisPhaseConfig(best_idx, phase_bits)
