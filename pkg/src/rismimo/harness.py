"""
Monte-Carlo experiment driver.

A trial is one user drop. Every antenna mode in a drop reuses the same
random draws (common random numbers), so modes are compared on identical
channels. Each trial seeds its own generators from ``(seed, drop_index)``, so
results do not depend on how trials are spread over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .estimation import (
    TrainingConfigs,
    draw_training_configs,
    lmmse_estimate,
    make_pilot_book,
    simulate_uplink_training,
    stacked_training_matrix,
    truncated_svd,
)
from .geometry_channel import (
    AntennaPattern,
    SectorCoversRisError,
    build_geometry,
    build_H,
    directional_spacing,
    draw_small_scale,
    pathloss,
)
from .performance import (
    a_phi_matrix,
    allocate_downlink_power,
    average_power_allocation,
    beam_gains,
    conjugate_beamformer,
    se_shannon,
    se_upper_bound,
    sinr_from_gains,
    sinr_hardening_lb,
)
from .ris_optimizer import ObjectiveContext, optimize_phases, random_phase_config

# child indices of the per-trial SeedSequence
_USERS, _TRAINING, _PHASES, _FADING, _BASELINE = range(5)


class TrialError(RuntimeError):
    def __init__(self, drop_index: int, cause: BaseException):
        super().__init__(f"trial {drop_index} failed: {type(cause).__name__}: {cause}")
        self.drop_index = drop_index


def trial_streams(seed: int, drop_index: int):
    return np.random.SeedSequence([seed, drop_index]).spawn(5)


@dataclass(frozen=True)
class UserDrop:
    distance: np.ndarray
    angle: np.ndarray
    distance_3d: np.ndarray
    beta: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        """Horizontal UE coordinates, x along the RIS boresight."""
        return np.column_stack([self.distance * np.cos(self.angle), self.distance * np.sin(self.angle)])


def drop_users(num_users, sector_half_angle, d_min, d_max, heights, rng, params) -> UserDrop:
    """Uniform angle in the sector and uniform horizontal distance in ``[d_min, d_max]``."""
    if not 0 < d_min < d_max:
        raise ValueError("need 0 < d_min < d_max")
    angle = rng.uniform(-sector_half_angle, sector_half_angle, num_users)
    dist = rng.uniform(d_min, d_max, num_users)
    dz = heights[0] - heights[1]
    d3 = np.hypot(dist, dz)
    return UserDrop(dist, angle, d3, pathloss(d3, params))


@dataclass
class TrialRecord:
    drop_index: int
    drop: UserDrop
    se: dict = field(default_factory=dict)
    se_err: dict = field(default_factory=dict)
    q: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)


def antenna_setup(config: ExperimentConfig, kind: str):
    """Geometry and channel matrix for one active-antenna type."""
    lam = config.wavelength
    d = config.distance_lambda * lam
    d_r = config.ris_spacing_lambda * lam
    params = config.channel_params
    ris = AntennaPattern.omni(config.ris_gain_db)
    if kind == "omni":
        d_a = config.active_spacing_lambda * lam
        pattern = AntennaPattern.omni(config.omni_gain_db)
    else:
        alpha = math.radians(config.sector_half_angle_deg)
        try:
            d_a = directional_spacing(config.n_active, config.n_ris, d_r, d, alpha)
        except SectorCoversRisError:
            d_a = 0.5 * lam
        back = None if math.isinf(config.back_lobe_db) else config.back_lobe_db
        pattern = AntennaPattern.directional(config.directional_gain_db, alpha, back)
    geom = build_geometry(config.n_active, config.n_ris, d_a, d_r, d, lam)
    return build_H(geom, pattern, ris, params).entries


def _link_measures(H, phasors, h, est, covs, betas, pilots, config, noise, which):
    """PCSI / UB / LB per-user SE for a fixed phase vector over all draws."""
    out, err = {}, {}
    p_max = config.p_max_w
    eta_u = np.full(len(betas), config.uplink_power_w)
    if "pcsi" in which:
        w = conjugate_beamformer(H, phasors, h)
        gam = sinr_from_gains(beam_gains(H, phasors, h, w), allocate_downlink_power(p_max, w), noise)
        r = se_upper_bound(gam, config.pcsi_prelog)
        out["pcsi"], err["pcsi"] = r.value, r.stderr
    if "ub" in which:
        w = conjugate_beamformer(H, phasors, est)
        gam = sinr_from_gains(beam_gains(H, phasors, h, w), allocate_downlink_power(p_max, w), noise)
        r = se_upper_bound(gam, config.prelog_bar)
        out["ub"], err["ub"] = r.value, r.stderr
    if "lb" in which:
        A = a_phi_matrix(H, phasors)
        eta_d = average_power_allocation(p_max, A, covs)
        gam = sinr_hardening_lb(A, covs, betas, eta_d, eta_u, pilots, noise)
        out["lb"] = se_shannon(gam, config.prelog_bar)
        err["lb"] = np.zeros_like(out["lb"])
    return out, err


def _optimized_measures(H, start, h, est, config, noise, objective, which):
    """Per-draw Algorithm-1 phases; PCSI optimizes on true channels, UB on estimates."""
    out, err, stats, trace = {}, {}, {}, None
    p_max = config.p_max_w
    for m in which:
        if m not in ("pcsi", "ub"):
            continue
        users = h if m == "pcsi" else est
        gams, first, last, sweeps = [], [], [], []
        for d in range(h.shape[0]):
            ctx = ObjectiveContext(H, users[d], start)
            res = optimize_phases(
                ctx, objective, config.rel_tol, config.max_sweeps, record_steps=False
            )
            ph = res.config.phasors
            w = conjugate_beamformer(H, ph, users[d])
            g = beam_gains(H, ph, h[d], w)
            gams.append(sinr_from_gains(g, allocate_downlink_power(p_max, w), noise))
            first.append(res.initial_value)
            last.append(res.value)
            sweeps.append(res.sweeps)
            if trace is None:
                trace = list(res.trace)
        prelog = config.pcsi_prelog if m == "pcsi" else config.prelog_bar
        r = se_upper_bound(np.array(gams), prelog)
        out[m], err[m] = r.value, r.stderr
        stats[m] = (float(np.mean(first)), float(np.mean(last)), float(np.mean(sweeps)))
    return out, err, stats, trace


def baseline_mmimo(n_active, drop: UserDrop, config: ExperimentConfig, rng, which=("pcsi", "ub", "lb")):
    """Conventional array with i.i.d. Rayleigh ``N_A``-vectors and the RIS setup's pilots and powers.

    This is the RIS pipeline with ``H = I``, a single all-ones training
    configuration and no subspace truncation.
    """
    K = len(drop.beta)
    H = np.eye(n_active, dtype=complex)
    ones = np.ones(n_active, dtype=complex)
    configs = TrainingConfigs(config.phase_bits, np.zeros((1, n_active), dtype=int))
    basis = truncated_svd(H, 1.0)
    pilots = make_pilot_book(config.pilot_length, K)
    eta_u = np.full(K, config.uplink_power_w)
    noise = config.noise_power
    g = draw_small_scale(drop.beta, n_active, rng, batch=(config.draws,))
    y = simulate_uplink_training(H, configs, g, eta_u, pilots, noise, rng)
    est = lmmse_estimate(y, basis, drop.beta, eta_u, pilots, noise)
    return _link_measures(
        H, ones, g, est.h_hat, est.cov, drop.beta, pilots, config, noise, which
    )


def run_trial(config: ExperimentConfig, drop_index: int) -> TrialRecord:
    try:
        return _run_trial(config, drop_index)
    except Exception as exc:  # attach trial context
        raise TrialError(drop_index, exc) from exc


def _run_trial(config: ExperimentConfig, drop_index: int) -> TrialRecord:
    ss = trial_streams(config.seed, drop_index)
    K = config.num_users
    params = config.channel_params
    drop = drop_users(
        K,
        math.radians(config.user_sector_deg) / 2,
        config.min_distance_m,
        config.max_distance_m,
        (config.array_height_m, config.ue_height_m),
        np.random.default_rng(ss[_USERS]),
        params,
    )
    rec = TrialRecord(drop_index, drop)
    pilots = make_pilot_book(config.pilot_length, K)
    eta_u = np.full(K, config.uplink_power_w)
    noise = config.noise_power
    configs = draw_training_configs(
        config.n_active,
        config.n_ris,
        config.phase_bits,
        np.random.default_rng(ss[_TRAINING]),
        config.resolved_num_configs,
    )
    start = random_phase_config(config.n_ris, config.phase_bits, np.random.default_rng(ss[_PHASES]))
    measures = list(config.measures)

    for ant in config.antennas:
        H = antenna_setup(config, ant)
        basis = truncated_svd(stacked_training_matrix(H, configs), config.energy_fraction, config.energy_mode)
        rec.q[ant] = basis.q
        fading = np.random.default_rng(ss[_FADING])
        h = draw_small_scale(drop.beta, config.n_ris, fading, batch=(config.draws,))
        y = simulate_uplink_training(H, configs, h, eta_u, pilots, noise, fading)
        est = lmmse_estimate(y, basis, drop.beta, eta_u, pilots, noise)
        if "random" in config.phases:
            out, err = _link_measures(
                H, start.phasors, h, est.h_hat, est.cov, drop.beta, pilots, config, noise, measures
            )
            for m in measures:
                rec.se[f"{ant}/random/{m}"] = out[m]
                rec.se_err[f"{ant}/random/{m}"] = err[m]
        if "optimized" in config.phases:
            for obj in config.objectives:
                out, err, stats, trace = _optimized_measures(
                    H, start, h, est.h_hat, config, noise, obj, measures
                )
                for m in out:
                    key = f"{ant}/opt_{obj}/{m}"
                    rec.se[key], rec.se_err[key] = out[m], err[m]
                    rec.objective[key] = stats[m]
                if trace is not None:
                    rec.traces[f"{ant}/opt_{obj}"] = trace

    if config.baseline:
        rng = np.random.default_rng(ss[_BASELINE])
        out, err = baseline_mmimo(config.n_active, drop, config, rng, measures)
        rec.q["baseline"] = config.n_active
        for m in measures:
            rec.se[f"baseline/none/{m}"] = out[m]
            rec.se_err[f"baseline/none/{m}"] = err[m]
    return rec


def _run_chunk(args):
    config, indices = args
    return [run_trial(config, i) for i in indices]


def run_experiment(config: ExperimentConfig, workers: int = 1, drops=None) -> list:
    """All trials, ordered by drop index; output independent of ``workers``."""
    indices = list(range(config.drops if drops is None else drops))
    if workers <= 1 or len(indices) <= 1:
        return [run_trial(config, i) for i in indices]
    chunks = [indices[i::workers] for i in range(workers)]
    chunks = [c for c in chunks if c]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(_run_chunk, [(config, c) for c in chunks]))
    records = [r for part in parts for r in part]
    return sorted(records, key=lambda r: r.drop_index)


def empirical_cdf(samples):
    """Right-continuous step CDF as ``(sorted values, rank / N)``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("empty sample set")
    return x, np.arange(1, x.size + 1) / x.size


@dataclass(frozen=True)
class ModeSummary:
    values: np.ndarray
    median: float
    p5: float
    mean: float
    mean_err: float
    median_err: float

    @classmethod
    def from_values(cls, values):
        v = np.asarray(values, dtype=float)
        n = v.size
        sd = v.std(ddof=1) if n > 1 else 0.0
        return cls(
            values=v,
            median=float(np.median(v)),
            p5=float(np.percentile(v, 5)),
            mean=float(v.mean()),
            mean_err=float(sd / math.sqrt(n)),
            # normal-theory standard error of the sample median
            median_err=float(math.sqrt(math.pi / 2) * sd / math.sqrt(n)),
        )

    def as_dict(self):
        return {
            "n": int(self.values.size),
            "median": self.median,
            "p5": self.p5,
            "mean": self.mean,
            "mean_err": self.mean_err,
            "median_err": self.median_err,
        }


def aggregate(records) -> dict:
    """Per-mode pooled per-user SE samples with summary statistics."""
    if not records:
        raise ValueError("no records")
    modes = list(records[0].se)
    for r in records[1:]:
        if list(r.se) != modes:
            raise ValueError(f"mode mismatch in trial {r.drop_index}")
    return {m: ModeSummary.from_values(np.concatenate([r.se[m] for r in records])) for m in modes}
