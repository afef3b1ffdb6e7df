"""Shared plumbing for the figure scripts: CSV loading, aggregation, fitting,
and deterministic image output."""

from __future__ import annotations

import csv
import math
import sys
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

EXIT_OK = 0
EXIT_INPUT = 2

FIGSIZE = (6.4, 4.2)


class InputError(Exception):
    """Bad or malformed input; maps to exit code 2."""


def read_csv(path, expected_header: list[str], numeric: set[str]) -> list[dict]:
    """Load and validate a study CSV.

    The header must match exactly; numeric columns must parse as floats
    (NaN allowed). Errors carry the 1-based file line number. A header-only
    file is an error: there is nothing to plot.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"input file {path} does not exist")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if header != expected_header:
            raise InputError(
                f"{path}: line 1: expected header {','.join(expected_header)!r}, "
                f"got {','.join(header)!r}"
            )
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise InputError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(raw)}"
                )
            row: dict = dict(zip(header, raw))
            for key in numeric:
                try:
                    row[key] = float(row[key])
                except ValueError:
                    raise InputError(
                        f"{path}: line {lineno}: field {key!r} is not numeric: {row[key]!r}"
                    ) from None
            rows.append(row)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return rows


def mean_over_seeds(rows: list[dict]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Average speckle mse over seeds per (filter, step).

    Returns filter tag -> (steps, mean mse) with steps ascending.
    """
    acc: dict[str, dict[int, list[float]]] = {}
    for row in rows:
        step = int(row["step"])
        acc.setdefault(row["filter"], {}).setdefault(step, []).append(row["mse"])
    out = {}
    for tag, per_step in acc.items():
        steps = np.array(sorted(per_step))
        means = np.array([math.fsum(per_step[s]) / len(per_step[s]) for s in steps])
        out[tag] = (steps, means)
    return out


def fit_loglog(xs, ys) -> tuple[float, float]:
    """Least-squares slope and intercept of log(y) vs log(x)."""
    lx = np.log(np.asarray(xs, float))
    ly = np.log(np.asarray(ys, float))
    a = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(a, ly, rcond=None)
    return float(coef[0]), float(coef[1])


def new_figure():
    # fixed salt so SVG ids depend only on content
    plt.rcParams["svg.hashsalt"] = "bdkf-figures"
    fig, ax = plt.subplots(figsize=FIGSIZE)
    return fig, ax


def save_figure(fig, path, png: bool = False) -> None:
    """Write the image deterministically (no timestamps in metadata)."""
    path = Path(path)
    fmt = "png" if png or path.suffix.lower() == ".png" else "svg"
    kwargs = {"metadata": {"Date": None}} if fmt == "svg" else {}
    fig.savefig(path, format=fmt, **kwargs)
    plt.close(fig)


def run_main(build, argv, n_outputs: int, usage: str) -> int:
    """Shared CLI shell: parse positionals, run, map errors to exit codes."""
    args = list(sys.argv[1:] if argv is None else argv)
    png = "--png" in args
    if png:
        args.remove("--png")
    if len(args) != 1 + n_outputs:
        print(f"usage: {usage}", file=sys.stderr)
        return EXIT_INPUT
    try:
        build(args[0], args[1:], png)
        return EXIT_OK
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
