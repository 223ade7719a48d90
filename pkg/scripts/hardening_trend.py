"""Channel-hardening metric as the active array grows vs as only the RIS grows."""

import argparse
import csv
from pathlib import Path

import numpy as np

from rismimo.estimation import phase_table
from rismimo.geometry_channel import (
    AntennaPattern,
    ChannelModelParams,
    build_geometry,
    build_H,
)
from rismimo.performance import hardening_metric, hardening_metric_exact


def channel(n_active, n_ris, params, distance_lambda):
    lam = params.wavelength
    geom = build_geometry(n_active, n_ris, lam / 2, lam / 2, distance_lambda * lam, lam)
    return build_H(geom, AntennaPattern.omni(3), AntennaPattern.omni(3), params).entries


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--distance-lambda", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    params = ChannelModelParams()
    table = phase_table(3)
    sweeps = [("grow_array", na, 4 * na) for na in (8, 16, 32, 64)]
    sweeps += [("grow_ris", 4, nr) for nr in (32, 64, 128, 256, 512, 1024)]
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "hardening.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "n_active", "n_ris", "metric_mc", "metric_exact"])
        for name, na, nr in sweeps:
            H = channel(na, nr, params, args.distance_lambda)
            phi = table[rng.integers(0, len(table), nr)]
            mc = hardening_metric(H, phi, 1e-6, args.samples, rng)
            exact = hardening_metric_exact(H)
            w.writerow([name, na, nr, repr(mc), repr(exact)])
            print(f"{name:10s} N_A={na:3d} N_R={nr:5d}  mc {mc:.4f}  exact {exact:.4f}")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
