"""Seed-averaged squared field error per step from speckle.csv, one curve per
filter.

Usage: fig-speckle speckle.csv out.svg [--png]
"""

from __future__ import annotations

import sys

from . import figlib

HEADER = ["seed", "step", "filter", "mse", "step_time_s"]
NUMERIC = {"seed", "step", "mse", "step_time_s"}
EXPECTED_FILTERS = ("full", "bd", "banded")
STYLE = {"full": "C0:", "bd": "C3-", "banded": "C2--"}


def build(csv_path, out_paths, png):
    rows = figlib.read_csv(csv_path, HEADER, NUMERIC)
    curves = figlib.mean_over_seeds(rows)
    for tag in EXPECTED_FILTERS:
        if tag not in curves:
            print(f"warning: no rows for filter {tag!r}", file=sys.stderr)
    fig, ax = figlib.new_figure()
    for tag in EXPECTED_FILTERS:
        if tag in curves:
            steps, means = curves[tag]
            ax.plot(steps, means, STYLE[tag], label=tag)
    for tag in sorted(set(curves) - set(EXPECTED_FILTERS)):
        steps, means = curves[tag]
        ax.plot(steps, means, label=tag)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("mean squared field error per pixel (seed average)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    figlib.save_figure(fig, out_paths[0], png)


def main(argv=None) -> int:
    return figlib.run_main(build, argv, 1, "fig-speckle speckle.csv out.svg [--png]")


if __name__ == "__main__":
    raise SystemExit(main())
