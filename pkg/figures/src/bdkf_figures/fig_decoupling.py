"""Two panels from decoupling.csv: scaled covariance distances against the
number of sub-systems, one curve per coupling parameter.

Usage: fig-decoupling decoupling.csv out_uncoupled.svg out_full.svg [--png]
"""

from __future__ import annotations

import math

from . import figlib

HEADER = ["beta", "n", "dist_P0", "dist_P", "dist_P0_full", "converged"]
NUMERIC = {"beta", "n", "dist_P0", "dist_P", "dist_P0_full"}


def load_curves(csv_path):
    rows = figlib.read_csv(csv_path, HEADER, NUMERIC)
    curves: dict[float, list[tuple[int, float, float]]] = {}
    for row in rows:
        curves.setdefault(row["beta"], []).append(
            (int(row["n"]), row["dist_P0"], row["dist_P"])
        )
    for beta in curves:
        curves[beta].sort()
    return curves


def build_panel(curves, column: int, ylabel: str):
    fig, ax = figlib.new_figure()
    for beta in sorted(curves):
        pts = [(n, vals[column - 1]) for n, *vals in curves[beta]]
        pts = [(n, v) for n, v in pts if math.isfinite(v)]
        if not pts:
            continue
        ax.plot(*zip(*pts), marker="o", label=f"beta = {beta:g}")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("number of sub-systems n")
    ax.set_ylabel(ylabel + "  (Frobenius norm / n)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return fig


def build(csv_path, out_paths, png):
    curves = load_curves(csv_path)
    fig_a = build_panel(curves, 1, "block-diagonal vs uncoupled distance")
    figlib.save_figure(fig_a, out_paths[0], png)
    fig_b = build_panel(curves, 2, "block-diagonal vs full-filter distance")
    figlib.save_figure(fig_b, out_paths[1], png)


def main(argv=None) -> int:
    return figlib.run_main(
        build, argv, 2, "fig-decoupling decoupling.csv out_a.svg out_b.svg [--png]"
    )


if __name__ == "__main__":
    raise SystemExit(main())
