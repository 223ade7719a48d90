"""Command-line entry point: ``rismimo {simulate,validate-lb,optimize-demo}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, config_to_mapping, dump_config, parse_config
from .estimation import (
    draw_training_configs,
    estimate_covariance,
    make_pilot_book,
    stacked_training_matrix,
    truncated_svd,
)
from .geometry_channel import draw_small_scale
from .harness import (
    TrialError,
    aggregate,
    antenna_setup,
    drop_users,
    run_experiment,
    trial_streams,
)
from .performance import (
    NumericConsistencyError,
    a_phi_matrix,
    average_power_allocation,
    hardening_terms_closed_form,
    lb_terms_monte_carlo,
)
from .ris_optimizer import ObjectiveContext, optimize_phases, random_phase_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISMATCH = 4

CSV_COLUMNS = [
    "trial", "user", "mode", "se", "se_err", "q",
    "distance_m", "distance_3d_m", "angle_deg", "beta",
]  # fmt: skip


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_results_csv(path: Path, records, modes):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        for rec in records:
            drop = rec.drop
            for mode in modes:
                ant = mode.split("/", 1)[0]
                se, err = rec.se[mode], rec.se_err[mode]
                for k in range(len(se)):
                    out.writerow(
                        [
                            rec.drop_index,
                            k,
                            mode,
                            _fmt(se[k]),
                            _fmt(err[k]),
                            rec.q[ant],
                            _fmt(drop.distance[k]),
                            _fmt(drop.distance_3d[k]),
                            _fmt(math.degrees(drop.angle[k])),
                            _fmt(drop.beta[k]),
                        ]
                    )


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "trials", None) is not None:
        overrides.append(f"drops={args.trials}")
    if getattr(args, "draws", None) is not None and args.command == "simulate":
        overrides.append(f"draws={args.draws}")
    return parse_config(args.config, overrides)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_path": str(args.config) if args.config else None,
        "config": config_to_mapping(cfg),
        "config_toml": dump_config(cfg),
        "seed": cfg.seed,
        "out_dir": str(out),
        "workers": args.workers,
        "checksums": {},
    }
    _write_json(out / "manifest.json", manifest)
    t0 = time.perf_counter()
    records = run_experiment(cfg, workers=args.workers)
    runtime = time.perf_counter() - t0
    modes = cfg.modes()
    write_results_csv(out / "results.csv", records, modes)
    summary = aggregate(records)
    _write_json(
        out / "summary.json",
        {
            "config": config_to_mapping(cfg),
            "seed": cfg.seed,
            "trials": len(records),
            "modes": {m: summary[m].as_dict() for m in modes},
            "truncation_rank": {
                ant: float(np.median([r.q[ant] for r in records])) for ant in records[0].q
            },
            "runtime_s": runtime,
        },
    )
    manifest["checksums"] = {
        name: sha256(out / name) for name in ("results.csv", "summary.json")
    }
    _write_json(out / "manifest.json", manifest)
    print(f"{len(records)} trials, {len(modes)} modes, {runtime:.1f} s -> {out}")
    for m in modes:
        s = summary[m]
        print(f"  {m:28s} median {s.median:7.3f}  p5 {s.p5:7.3f}  bit/s/Hz")
    return EXIT_OK


def lb_validation_instance(cfg, antenna=None):
    """Single-drop inputs for the LB oracle comparison."""
    ss = trial_streams(cfg.seed, 0)
    params = cfg.channel_params
    drop = drop_users(
        cfg.num_users,
        math.radians(cfg.user_sector_deg) / 2,
        cfg.min_distance_m,
        cfg.max_distance_m,
        (cfg.array_height_m, cfg.ue_height_m),
        np.random.default_rng(ss[0]),
        params,
    )
    H = antenna_setup(cfg, antenna or cfg.antennas[0])
    configs = draw_training_configs(
        cfg.n_active, cfg.n_ris, cfg.phase_bits, np.random.default_rng(ss[1]), cfg.resolved_num_configs
    )
    basis = truncated_svd(stacked_training_matrix(H, configs), cfg.energy_fraction, cfg.energy_mode)
    phases = random_phase_config(cfg.n_ris, cfg.phase_bits, np.random.default_rng(ss[2]))
    pilots = make_pilot_book(cfg.pilot_length, cfg.num_users)
    return dict(
        H=H, configs=configs, basis=basis, phasors=phases.phasors, pilots=pilots,
        betas=drop.beta, eta_u=np.full(cfg.num_users, cfg.uplink_power_w),
        noise=cfg.noise_power, seed_seq=ss[3],
    )  # fmt: skip


def compare_lb(cfg, draws):
    """Closed-form versus sampled hardening terms; returns a list of report rows."""
    inst = lb_validation_instance(cfg)
    A = a_phi_matrix(inst["H"], inst["phasors"])
    covs = estimate_covariance(inst["basis"], inst["betas"], inst["eta_u"], inst["pilots"], inst["noise"])
    eta_d = average_power_allocation(cfg.p_max_w, A, covs)
    cf = hardening_terms_closed_form(
        A, covs, inst["betas"], eta_d, inst["eta_u"], inst["pilots"], inst["noise"]
    )
    mc = lb_terms_monte_carlo(
        inst["H"], inst["phasors"], inst["configs"], inst["basis"], inst["betas"],
        inst["eta_u"], eta_d, inst["pilots"], inst["noise"], inst["noise"], draws,
        np.random.default_rng(inst["seed_seq"]),
    )  # fmt: skip
    rows = []
    K = len(inst["betas"])
    for k in range(K):
        rows.append((f"DS2[{k}]", cf.ds2[k], mc.ds2[k], mc.ds2_err[k]))
        rows.append((f"BU[{k}]", cf.bu[k], mc.bu[k], mc.bu_err[k]))
        for j in range(K):
            if j != k:
                rows.append((f"UI[{k},{j}]", cf.ui[k, j], mc.ui[k, j], mc.ui_err[k, j]))
        den = mc.bu[k] + mc.ui[k].sum() + mc.noise_power
        den_err = math.sqrt(mc.bu_err[k] ** 2 + np.sum(mc.ui_err[k] ** 2))
        g = mc.sinr[k]
        g_err = g * math.hypot(mc.ds2_err[k] / mc.ds2[k], den_err / den)
        rows.append((f"gamma_LB[{k}]", cf.sinr[k], g, g_err))
    return rows


def lb_row_ok(closed, sampled, err, rel=0.05, nsigma=3.0) -> bool:
    return abs(closed - sampled) <= nsigma * err + rel * abs(closed)


def cmd_validate_lb(args) -> int:
    cfg = _load(args)
    if args.draws < 10_000:
        raise ConfigError("validate-lb needs at least 10^4 draws")
    rows = compare_lb(cfg, args.draws)
    print(f"{'term':14s} {'closed form':>13s} {'monte carlo':>13s} {'mc stderr':>11s} {'rel err':>9s}")
    bad = 0
    for name, c, m, e in rows:
        ok = lb_row_ok(c, m, e)
        bad += not ok
        rel = abs(c - m) / abs(c) if c else float("nan")
        flag = "" if ok else "  MISMATCH"
        print(f"{name:14s} {c:13.6e} {m:13.6e} {e:11.3e} {rel:9.2%}{flag}")
    return EXIT_MISMATCH if bad else EXIT_OK


def cmd_optimize_demo(args) -> int:
    cfg = _load(args)
    ss = trial_streams(cfg.seed, 0)
    drop = drop_users(
        cfg.num_users,
        math.radians(cfg.user_sector_deg) / 2,
        cfg.min_distance_m,
        cfg.max_distance_m,
        (cfg.array_height_m, cfg.ue_height_m),
        np.random.default_rng(ss[0]),
        cfg.channel_params,
    )
    H = antenna_setup(cfg, args.antenna or cfg.antennas[0])
    h = draw_small_scale(drop.beta, cfg.n_ris, np.random.default_rng(ss[3]))
    start = random_phase_config(cfg.n_ris, cfg.phase_bits, np.random.default_rng(ss[2]))
    objective = args.objective or cfg.objectives[0]
    res = optimize_phases(ObjectiveContext(H, h, start), objective, cfg.rel_tol, cfg.max_sweeps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_r = cfg.n_ris
    with open(out / "objective_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["update", "sweep", "element", "before", "after"])
        for t, (before, after) in enumerate(res.steps):
            w.writerow([t, t // n_r, t % n_r, _fmt(before), _fmt(after)])
    print(
        f"{objective}: {res.initial_value:.6e} -> {res.value:.6e} in {res.sweeps} sweeps"
        f" ({'converged' if res.converged else 'max sweeps'})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rismimo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("simulate", help="run the Monte-Carlo experiment")
    common(p)
    p.add_argument("--out", default="results")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--trials", type=int, default=None, help="number of user drops")
    p.add_argument("--draws", type=int, default=None, help="fading draws per drop")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate-lb", help="closed-form LB terms against Monte Carlo")
    common(p)
    p.add_argument("--draws", type=int, default=200_000)
    p.set_defaults(func=cmd_validate_lb)

    p = sub.add_parser("optimize-demo", help="single-drop phase optimization trace")
    common(p)
    p.add_argument("--out", default="results")
    p.add_argument("--objective", choices=["f1", "f2"], default=None)
    p.add_argument("--antenna", choices=["omni", "directional"], default=None)
    p.set_defaults(func=cmd_optimize_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrialError, NumericConsistencyError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
