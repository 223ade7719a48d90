"""Shared helpers for the experiment scripts."""

import argparse
import csv
from pathlib import Path

from rismimo.config import parse_config
from rismimo.harness import aggregate, empirical_cdf, run_experiment


def base_parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results"))
    return p


def run_cdfs(args, fixed, name):
    """Run the harness with ``fixed`` overrides and write one CDF table per mode."""
    cfg = parse_config(args.config, list(fixed) + list(args.set))
    records = run_experiment(cfg, workers=args.workers)
    summary = aggregate(records)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{name}_cdf.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "se", "probability"])
        for mode in cfg.modes():
            x, p = empirical_cdf(summary[mode].values)
            w.writerows([mode, repr(float(a)), repr(float(b))] for a, b in zip(x, p))
    for mode in cfg.modes():
        s = summary[mode]
        print(f"{mode:28s} median {s.median:6.3f} +- {s.median_err:.3f}  p5 {s.p5:6.3f}")
    print(f"wrote {path}")
    return summary
