"""Per-user SE CDFs for omnidirectional vs directional active arrays (random RIS phases)."""

from _common import base_parser, run_cdfs

FIXED = ["phases=['random']", "measures=['ub', 'lb']", "baseline=false"]


if __name__ == "__main__":
    run_cdfs(base_parser(__doc__).parse_args(), FIXED, "fig2")
