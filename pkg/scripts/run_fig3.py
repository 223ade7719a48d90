"""Per-user SE CDFs for optimized vs random RIS phases and the conventional array."""

from _common import base_parser, run_cdfs

FIXED = [
    "antennas=['directional']",
    "phases=['random', 'optimized']",
    "measures=['pcsi', 'ub']",
    "baseline=true",
]


if __name__ == "__main__":
    parser = base_parser(__doc__)
    parser.add_argument("--objective", choices=["f1", "f2"], action="append")
    args = parser.parse_args()
    objectives = args.objective or ["f1", "f2"]
    run_cdfs(args, FIXED + [f"objectives={objectives!r}"], "fig3")
