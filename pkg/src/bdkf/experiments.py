"""Desk-scale numerical studies and their CSV/JSON artifacts.

* :func:`decoupling_study` -- how close the block-diagonal steady covariance
  gets to the uncoupled one and to the full filter's, as the number of
  sub-systems grows, over a sweep of the coupling-sensitivity parameter.
* :func:`speckle_study` -- synthetic pixel-field drift with Poisson photon
  counts: full vs block-diagonal vs banded extended filters on identical
  measurement streams.
* :func:`scaling_benchmark` -- median per-step wall times and log-log slopes
  for the fast step and the dense reference.
* :func:`monte_carlo_error` -- empirical error covariance of a chosen filter
  over repeated simulated trajectories.

Every study is a pure function of its configuration and seed; timings are
the only nondeterministic outputs.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonConvergenceError, UnstableClosedLoopError, ValidationError
from .filters import (
    DenseFilterState,
    bd_kf_fast_step,
    banded_kf_step,
    full_kf_step,
    init_bd_state,
    init_dense_state,
    poisson_ekf_step,
)
from .model import (
    CoupledSystem,
    RngSpec,
    dense_stack,
    make_identical_chain,
    make_random_system,
    make_speckle_system,
    simulate,
)
from .steady_state import (
    banded_steady,
    solve_bd_dare,
    solve_dare,
    true_error_cov,
)

__all__ = [
    "DecouplingRow",
    "SpeckleRow",
    "BenchRow",
    "decoupling_study",
    "speckle_study",
    "scaling_benchmark",
    "monte_carlo_error",
    "loglog_slope",
    "write_decoupling_csv",
    "write_speckle_csv",
    "write_bench_csv",
    "write_json",
    "atomic_write_text",
]


@dataclass(frozen=True)
class DecouplingRow:
    """One (beta, n) cell of the decoupling sweep.

    Distances are Frobenius norms scaled by the number of sub-systems:
    ``dist_P0`` between the block-diagonal and uncoupled update covariances,
    ``dist_P`` between the block-diagonal and full ones, ``dist_P0_full``
    between uncoupled and full. Full-filter quantities are NaN above the
    dense cap; ``dist_true_P0`` measures the true error covariance of the
    fixed block-diagonal gain against the uncoupled covariance (NaN when
    skipped or when that closed loop is unstable).
    """

    beta: float
    n: int
    dist_P0: float
    dist_P: float
    dist_P0_full: float
    converged: bool
    iterations_bd: int = 0
    iterations_full: int = 0
    dist_true_P0: float = math.nan


@dataclass(frozen=True)
class SpeckleRow:
    seed: int
    step: int
    filter: str
    mse: float
    step_time_s: float


@dataclass(frozen=True)
class BenchRow:
    filter: str
    n: int
    r: int
    median_step_time_s: float
    reps: int


def decoupling_study(
    betas: list[float],
    ns: list[int],
    full_kf_n_cap: int = 256,
    *,
    tol: float = 1e-11,
    max_iter: int = 200_000,
    with_true_cov: bool = True,
) -> list[DecouplingRow]:
    """Steady-state distance sweep over coupling parameter and system count.

    For each cell: the uncoupled per-block fixed point, the block-diagonal
    fixed point, and (below the cap) the dense full-filter fixed point plus
    the true error covariance of the frozen block-diagonal gain.
    """
    if list(ns) != sorted(ns):
        raise ValidationError("ns must be ascending")
    rows: list[DecouplingRow] = []
    for beta in betas:
        for n in ns:
            sys = make_identical_chain(beta, n)
            try:
                bd = solve_bd_dare(
                    sys, tol=tol, max_iter=max_iter, warn_detectability=False
                )
                p0 = banded_steady(sys.uncoupled(), tol=tol, max_iter=max_iter)
            except NonConvergenceError:
                rows.append(
                    DecouplingRow(
                        beta=beta,
                        n=n,
                        dist_P0=math.nan,
                        dist_P=math.nan,
                        dist_P0_full=math.nan,
                        converged=False,
                    )
                )
                continue
            dist_p0 = float(np.linalg.norm(bd.P_plus.blocks - p0.P_plus.blocks)) / n
            dist_p = math.nan
            dist_p0_full = math.nan
            dist_true = math.nan
            iters_full = 0
            converged = True
            if n <= full_kf_n_cap:
                try:
                    full = solve_dare(
                        sys, tol=tol, max_iter=max_iter, warn_detectability=False
                    )
                    iters_full = full.iterations
                    p_dense = full.P_plus
                    dist_p = (
                        float(np.linalg.norm(bd.P_plus.to_dense() - p_dense)) / n
                    )
                    dist_p0_full = (
                        float(np.linalg.norm(p0.P_plus.to_dense() - p_dense)) / n
                    )
                    if with_true_cov:
                        try:
                            sig = true_error_cov(
                                sys, bd.K, tol=tol, max_iter=max_iter
                            )
                            dist_true = (
                                float(np.linalg.norm(sig - p0.P_plus.to_dense())) / n
                            )
                        except UnstableClosedLoopError:
                            dist_true = math.nan
                except NonConvergenceError:
                    converged = False
            rows.append(
                DecouplingRow(
                    beta=beta,
                    n=n,
                    dist_P0=dist_p0,
                    dist_P=dist_p,
                    dist_P0_full=dist_p0_full,
                    converged=converged,
                    iterations_bd=bd.iterations,
                    iterations_full=iters_full,
                    dist_true_P0=dist_true,
                )
            )
    return rows


_SPECKLE_BACKENDS = ("full", "bd", "banded")


def speckle_study(
    n_pixels: int = 256,
    r_modes: int = 6,
    horizon: int = 400,
    seeds: int = 10,
    drift_scale: float = 3.0,
    photon_scale: float = 2000.0,
    *,
    rng: RngSpec = RngSpec(0),
    init: str = "perturbed",
    init_error_scale: float = 0.3,
    floor: float = 1.0,
    probe_gain: float = 10.0,
    full_pixel_cap: int = 1024,
) -> list[SpeckleRow]:
    """Pixel-field drift with Poisson counts: one trajectory per seed, three filters.

    All filter arms consume the identical photon stream within a seed. Four
    fixed complex probe fields cycle round-robin, with probe intensity about
    ``probe_gain`` times the mean field intensity so both quadratures stay
    observable. The error metric is the mean squared complex-field error per
    pixel.

    ``init`` picks the shared initial estimate: "truth" (exact), "perturbed"
    (truth plus noise of ``init_error_scale`` times the field's per-component
    spread; keeps the linearized filters inside their valid regime, like a
    calibration estimate would), or "zero" (no prior knowledge; the intensity
    measurement is strongly nonlinear there and convergence is slow).
    """
    if n_pixels > full_pixel_cap:
        raise ValidationError(
            f"n_pixels={n_pixels} exceeds the full-filter cap {full_pixel_cap}"
        )
    if init not in ("zero", "truth", "perturbed"):
        raise ValidationError("init must be 'zero', 'truth' or 'perturbed'")
    sys, _ = make_speckle_system(n_pixels, r_modes, drift_scale, rng.child(0))
    # Constant-amplitude probes with per-pixel base phase and quarter-turn
    # increments: within any probe cycle every pixel sees both quadratures
    # with the same strength, so no pixel is left unobservable.
    probe_rng = rng.child(1).generator()
    probe_amp = math.sqrt(probe_gain * photon_scale)
    base_phase = probe_rng.uniform(0.0, 2.0 * math.pi, n_pixels)
    probes = [
        probe_amp * np.exp(1j * (base_phase + j * math.pi / 4.0)) for j in range(4)
    ]
    lv = math.sqrt(1e-4) * drift_scale  # per-channel private drift std
    rows: list[SpeckleRow] = []
    comp_std = math.sqrt(photon_scale / 2.0)  # per-component field spread
    for s in range(seeds):
        g = rng.child(10 + s).generator()
        x_true = comp_std * g.standard_normal((n_pixels, 2))
        if init == "truth":
            x0 = x_true.reshape(-1).copy()
            p0 = 1.0
        elif init == "perturbed":
            err = init_error_scale * comp_std * g.standard_normal((n_pixels, 2))
            x0 = (x_true + err).reshape(-1)
            p0 = (init_error_scale * comp_std) ** 2
        else:
            x0 = None
            p0 = comp_std**2
        states = {
            "full": init_dense_state(sys, x0, p0_scale=p0),
            "bd": init_bd_state(sys, x0, p0_scale=p0),
            "banded": init_bd_state(sys, x0, p0_scale=p0),
        }
        steppers = {
            "full": lambda st, p, y: poisson_ekf_step(st, sys, p, y, "full", floor),
            "bd": lambda st, p, y: poisson_ekf_step(st, sys, p, y, "bd_fast", floor),
            "banded": lambda st, p, y: poisson_ekf_step(st, sys, p, y, "banded", floor),
        }
        for k in range(horizon):
            probe = probes[k % len(probes)]
            field = x_true[:, 0] + 1j * x_true[:, 1]
            counts = g.poisson(np.abs(field + probe) ** 2).astype(float)
            for tag in _SPECKLE_BACKENDS:
                t0 = time.perf_counter()
                states[tag] = steppers[tag](states[tag], probe, counts)
                dt = time.perf_counter() - t0
                err = states[tag].x - x_true.reshape(-1)
                rows.append(
                    SpeckleRow(
                        seed=s,
                        step=k,
                        filter=tag,
                        mse=float(err @ err) / n_pixels,
                        step_time_s=dt,
                    )
                )
            # truth advances after the measurement at step k
            u = drift_scale * g.standard_normal(r_modes)
            x_true = x_true + np.einsum("ncr,r->nc", sys.G, u)
            x_true = x_true + lv * g.standard_normal((n_pixels, 2))
    return rows


def scaling_benchmark(
    ns_fast: list[int],
    ns_full: list[int],
    reps: int = 7,
    *,
    c: int = 2,
    d: int = 1,
    r: int = 4,
    seed: int = 0,
    warmup: int = 1,
) -> tuple[list[BenchRow], dict[str, float]]:
    """Median per-step wall times vs n, plus log-log slope estimates.

    One warmup step precedes timing (it also absorbs JIT compilation); each
    repetition times a single filter step with a monotonic clock.
    """
    if reps < 5:
        raise ValidationError("need at least 5 repetitions")
    rows: list[BenchRow] = []
    for n in ns_fast:
        sys = make_random_system(c, d, r, n, 0.95, RngSpec(seed))
        st = init_bd_state(sys)
        y = np.zeros(n * d)
        for _ in range(warmup):
            st, _ = bd_kf_fast_step(st, sys, y)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            st, _ = bd_kf_fast_step(st, sys, y)
            times.append(time.perf_counter() - t0)
        rows.append(
            BenchRow(
                filter="bd_fast",
                n=n,
                r=r,
                median_step_time_s=float(np.median(times)),
                reps=reps,
            )
        )
    for n in ns_full:
        sys = make_random_system(c, d, r, n, 0.95, RngSpec(seed))
        ds = dense_stack(sys)
        st = init_dense_state(sys)
        y = np.zeros(n * d)
        for _ in range(warmup):
            st = full_kf_step(st, ds.F, ds.H, ds.Q, ds.R, y)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            st = full_kf_step(st, ds.F, ds.H, ds.Q, ds.R, y)
            times.append(time.perf_counter() - t0)
        rows.append(
            BenchRow(
                filter="full",
                n=n,
                r=r,
                median_step_time_s=float(np.median(times)),
                reps=reps,
            )
        )
    slopes = {}
    for tag in ("bd_fast", "full"):
        pts = [(row.n, row.median_step_time_s) for row in rows if row.filter == tag]
        if len(pts) >= 2:
            slopes[tag] = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
    return rows, slopes


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(xs, float))
    ly = np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def monte_carlo_error(
    sys: CoupledSystem,
    backend: str = "full",
    gain_source: str = "filter",
    trials: int = 200,
    horizon: int = 100,
    rng: RngSpec = RngSpec(0),
) -> np.ndarray:
    """Sample covariance of the final-step estimation error over repeated runs.

    ``backend`` chooses the filter ("full", "bd_fast", "banded");
    ``gain_source`` either runs the recursive filter ("filter") or freezes
    the corresponding steady gain ("steady"), which is what the fixed-gain
    error-covariance analysis models.
    """
    if backend not in ("full", "bd_fast", "banded"):
        raise ValidationError(f"unknown backend {backend!r}")
    if gain_source not in ("filter", "steady"):
        raise ValidationError(f"unknown gain_source {gain_source!r}")
    nc = sys.n * sys.c
    x0 = np.zeros(nc)
    ds = dense_stack(sys) if (backend == "full" or gain_source == "steady") else None

    apply_gain = None
    if gain_source == "steady":
        if backend == "full":
            res = solve_dare(sys, warn_detectability=False)
            kd = res.K
            apply_gain = lambda z: kd @ z
        elif backend == "bd_fast":
            res = solve_bd_dare(sys, warn_detectability=False)
            apply_gain = res.K.apply
        else:
            res = banded_steady(sys)
            kb = res.K.blocks
            apply_gain = lambda z: np.einsum(
                "ncd,nd->nc", kb, z.reshape(sys.n, sys.d)
            ).reshape(-1)

    errs = np.empty((trials, nc))
    for t in range(trials):
        traj = simulate(sys, horizon, x0, rng.child(t))
        if gain_source == "steady":
            xh = x0.copy()
            for k in range(horizon):
                xp = ds.F @ xh
                xh = xp + apply_gain(traj.measurements[k] - ds.H @ xp)
        elif backend == "full":
            st = DenseFilterState(x=x0.copy(), P=np.eye(nc))
            for k in range(horizon):
                st = full_kf_step(st, ds.F, ds.H, ds.Q, ds.R, traj.measurements[k])
            xh = st.x
        else:
            st = init_bd_state(sys, x0)
            for k in range(horizon):
                if backend == "bd_fast":
                    st, _ = bd_kf_fast_step(st, sys, traj.measurements[k])
                else:
                    st = banded_kf_step(st, sys, traj.measurements[k])
            xh = st.x
        errs[t] = xh - traj.states[-1]
    errs = errs - errs.mean(axis=0)
    return errs.T @ errs / max(trials - 1, 1)


# ---------------------------------------------------------------------------
# Artifact writing


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_decoupling_csv(rows: list[DecouplingRow], path) -> None:
    lines = ["beta,n,dist_P0,dist_P,dist_P0_full,converged"]
    for row in rows:
        lines.append(
            ",".join(
                [
                    _fmt(row.beta),
                    _fmt(row.n),
                    _fmt(row.dist_P0),
                    _fmt(row.dist_P),
                    _fmt(row.dist_P0_full),
                    _fmt(row.converged),
                ]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_speckle_csv(rows: list[SpeckleRow], path) -> None:
    lines = ["seed,step,filter,mse,step_time_s"]
    for row in rows:
        lines.append(
            ",".join(
                [
                    _fmt(row.seed),
                    _fmt(row.step),
                    row.filter,
                    _fmt(row.mse),
                    _fmt(row.step_time_s),
                ]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_bench_csv(rows: list[BenchRow], path) -> None:
    lines = ["filter,n,r,median_step_time_s,reps"]
    for row in rows:
        lines.append(
            ",".join(
                [
                    row.filter,
                    _fmt(row.n),
                    _fmt(row.r),
                    _fmt(row.median_step_time_s),
                    _fmt(row.reps),
                ]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(payload: dict, path) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
