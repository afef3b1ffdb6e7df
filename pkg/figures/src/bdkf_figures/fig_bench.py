"""Log-log per-step timing from bench.csv with fitted slopes in the legend.

Usage: fig-bench bench.csv out.svg [--png]
"""

from __future__ import annotations

import numpy as np

from . import figlib

HEADER = ["filter", "n", "r", "median_step_time_s", "reps"]
NUMERIC = {"n", "r", "median_step_time_s", "reps"}


def slopes_by_filter(rows) -> dict[str, float]:
    """Least-squares log-log slope per filter tag (needs >= 2 sizes)."""
    grouped: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        grouped.setdefault(row["filter"], []).append(
            (row["n"], row["median_step_time_s"])
        )
    out = {}
    for tag, pts in grouped.items():
        if len(pts) >= 2:
            ns, ts = zip(*sorted(pts))
            out[tag], _ = figlib.fit_loglog(ns, ts)
    return out


def build(csv_path, out_paths, png):
    rows = figlib.read_csv(csv_path, HEADER, NUMERIC)
    slopes = slopes_by_filter(rows)
    fig, ax = figlib.new_figure()
    grouped: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        grouped.setdefault(row["filter"], []).append(
            (row["n"], row["median_step_time_s"])
        )
    for tag in sorted(grouped):
        ns, ts = zip(*sorted(grouped[tag]))
        label = tag if tag not in slopes else f"{tag} (slope {slopes[tag]:.3f})"
        ax.plot(ns, ts, marker="o", label=label)
        if tag in slopes:
            slope, intercept = figlib.fit_loglog(ns, ts)
            grid = np.array([min(ns), max(ns)], float)
            ax.plot(grid, np.exp(intercept) * grid**slope, "k--", alpha=0.4)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("number of sub-systems n")
    ax.set_ylabel("median step time (s)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    figlib.save_figure(fig, out_paths[0], png)


def main(argv=None) -> int:
    return figlib.run_main(build, argv, 1, "fig-bench bench.csv out.svg [--png]")


if __name__ == "__main__":
    raise SystemExit(main())
