"""Command-line entry point: simulate | decouple | speckle | bench | steady.

Configuration comes from one JSON file plus flag overrides (flags win); every
run writes its artifacts atomically together with a JSON sidecar carrying the
fully resolved configuration, which suffices to reproduce the run. Exit
codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    NumericalError,
    ShapeError,
    ValidationError,
)
from .experiments import (
    atomic_write_text,
    decoupling_study,
    scaling_benchmark,
    speckle_study,
    write_bench_csv,
    write_decoupling_csv,
    write_json,
    write_speckle_csv,
)
from .model import RngSpec, simulate, system_from_json, system_to_json
from .steady_state import (
    alpha_constants,
    banded_steady,
    compute_coupling_matrix,
    perturbation_bounds,
    solve_bd_dare,
    solve_dare,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_DEFAULTS: dict[str, dict] = {
    "simulate": {"system": None, "horizon": 100, "seed": 0},
    "decouple": {
        "betas": [0.1, 0.5, 1.0, 1.5, 2.0],
        "ns": [2, 4, 8, 16, 32, 64, 128, 256],
        "full_kf_n_cap": 256,
        "tol": 1e-11,
        "max_iter": 200_000,
    },
    "speckle": {
        "n_pixels": 256,
        "r_modes": 6,
        "horizon": 400,
        "seeds": 10,
        "drift_scale": 3.0,
        "photon_scale": 2000.0,
        "seed": 0,
        "init": "perturbed",
        "init_error_scale": 0.3,
    },
    "bench": {
        "ns_fast": [256, 512, 1024, 2048, 4096, 8192],
        "ns_full": [32, 64, 128, 256],
        "reps": 7,
        "c": 2,
        "d": 1,
        "r": 4,
        "seed": 0,
    },
    "steady": {"system": None, "tol": 1e-11, "max_iter": 200_000},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bdkf", description="Block-diagonal Kalman filter studies"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _DEFAULTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file (or a run sidecar)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, help="base seed override")
        p.add_argument("--threads", type=int, help="thread cap (best effort)")
        p.add_argument("--tol", type=float, help="solver tolerance override")
        if name == "simulate":
            p.add_argument("--horizon", type=int)
            p.add_argument("--n", type=int, help="override the system spec's n")
        if name == "decouple":
            p.add_argument("--beta", type=float, help="run a single beta")
            p.add_argument("--n", type=int, help="run a single n")
        if name == "speckle":
            p.add_argument("--horizon", type=int)
            p.add_argument("--seeds", type=int)
            p.add_argument("--n", type=int, help="number of pixels")
        if name == "bench":
            p.add_argument("--reps", type=int)
    return parser


def _load_config(command: str, args) -> dict:
    cfg = dict(_DEFAULTS[command])
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if isinstance(doc, dict) and set(doc) >= {"command", "config"}:
            if doc["command"] != command:
                raise ConfigError(
                    f"sidecar records command {doc['command']!r}, not {command!r}"
                )
            doc = doc["config"]
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config fields for {command}: {sorted(unknown)}")
        cfg.update(doc)
    # flags win over the config file
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.tol is not None and "tol" in cfg:
        cfg["tol"] = args.tol
    if command == "simulate":
        if args.horizon is not None:
            cfg["horizon"] = args.horizon
        if args.n is not None:
            if not isinstance(cfg.get("system"), dict):
                raise ConfigError("--n needs a generator-style system spec")
            cfg["system"] = {**cfg["system"], "n": args.n}
    if command == "decouple":
        if args.beta is not None:
            cfg["betas"] = [args.beta]
        if args.n is not None:
            cfg["ns"] = [args.n]
    if command == "speckle":
        if args.horizon is not None:
            cfg["horizon"] = args.horizon
        if args.seeds is not None:
            cfg["seeds"] = args.seeds
        if args.n is not None:
            cfg["n_pixels"] = args.n
    if command == "bench" and args.reps is not None:
        cfg["reps"] = args.reps
    return cfg


def _require_system(cfg: dict):
    spec = cfg.get("system")
    if spec is None:
        raise ConfigError("missing required field 'system'")
    return system_from_json(spec)


def _sidecar(command: str, cfg: dict) -> dict:
    return {"command": command, "config": cfg}


def _matrix(m) -> list:
    return np.asarray(m, float).tolist()


def _cmd_simulate(cfg: dict, out: Path) -> None:
    sys_ = _require_system(cfg)
    horizon = int(cfg["horizon"])
    traj = simulate(sys_, horizon, np.zeros(sys_.n * sys_.c), RngSpec(int(cfg["seed"])))
    nc, nd, r = sys_.n * sys_.c, sys_.n * sys_.d, sys_.r
    header = (
        ["step"]
        + [f"x_{i}" for i in range(nc)]
        + [f"y_{i}" for i in range(nd)]
        + [f"u_{i}" for i in range(r)]
    )
    lines = [",".join(header)]
    for k in range(horizon):
        vals = (
            [str(k + 1)]
            + [f"{v:.17g}" for v in traj.states[k]]
            + [f"{v:.17g}" for v in traj.measurements[k]]
            + [f"{v:.17g}" for v in traj.inputs[k]]
        )
        lines.append(",".join(vals))
    atomic_write_text(out / "trajectory.csv", "\n".join(lines) + "\n")
    sidecar = _sidecar("simulate", {**cfg, "system": system_to_json(sys_)})
    write_json(sidecar, out / "trajectory.json")


def _cmd_decouple(cfg: dict, out: Path) -> None:
    rows = decoupling_study(
        list(cfg["betas"]),
        [int(n) for n in cfg["ns"]],
        int(cfg["full_kf_n_cap"]),
        tol=float(cfg["tol"]),
        max_iter=int(cfg["max_iter"]),
    )
    for row in rows:
        print(f"beta={row.beta} n={row.n} converged={row.converged}", file=sys.stderr)
    write_decoupling_csv(rows, out / "decoupling.csv")
    write_json(_sidecar("decouple", cfg), out / "decoupling.json")


def _cmd_speckle(cfg: dict, out: Path) -> None:
    rows = speckle_study(
        n_pixels=int(cfg["n_pixels"]),
        r_modes=int(cfg["r_modes"]),
        horizon=int(cfg["horizon"]),
        seeds=int(cfg["seeds"]),
        drift_scale=float(cfg["drift_scale"]),
        photon_scale=float(cfg["photon_scale"]),
        rng=RngSpec(int(cfg["seed"])),
        init=str(cfg["init"]),
        init_error_scale=float(cfg["init_error_scale"]),
    )
    write_speckle_csv(rows, out / "speckle.csv")
    write_json(_sidecar("speckle", cfg), out / "speckle.json")


def _cmd_bench(cfg: dict, out: Path) -> None:
    rows, slopes = scaling_benchmark(
        [int(n) for n in cfg["ns_fast"]],
        [int(n) for n in cfg["ns_full"]],
        int(cfg["reps"]),
        c=int(cfg["c"]),
        d=int(cfg["d"]),
        r=int(cfg["r"]),
        seed=int(cfg["seed"]),
    )
    write_bench_csv(rows, out / "bench.csv")
    write_json({**_sidecar("bench", cfg), "slopes": slopes}, out / "bench.json")


def _cmd_steady(cfg: dict, out: Path) -> None:
    sys_ = _require_system(cfg)
    tol = float(cfg["tol"])
    max_iter = int(cfg["max_iter"])
    full = solve_dare(sys_, tol=tol, max_iter=max_iter, warn_detectability=False)
    bd = solve_bd_dare(sys_, tol=tol, max_iter=max_iter, warn_detectability=False)
    banded = banded_steady(sys_, tol=tol, max_iter=max_iter)
    uncoupled = solve_dare(
        sys_, Q=_uncoupled_q(sys_), tol=tol, max_iter=max_iter, warn_detectability=False
    )
    coupling = compute_coupling_matrix(sys_, banded.P_plus)
    p0_blocks = banded_steady(sys_.uncoupled(), tol=tol, max_iter=max_iter).P_minus.blocks
    alphas = [alpha_constants(sys_.subsystem(i), p0_blocks[i]) for i in range(sys_.n)]
    prop2 = perturbation_bounds(sys_, alphas, coupling, uncoupled, full, bd)
    doc = {
        "config": {**cfg, "system": system_to_json(sys_)},
        "P_minus": _matrix(full.P_minus),
        "P_plus": _matrix(full.P_plus),
        "P_minus_uncoupled": _matrix(uncoupled.P_minus),
        "P_tilde_minus": _matrix(bd.P_minus),
        "P_tilde_plus": _matrix(bd.P_plus.to_dense()),
        "P_banded_plus": _matrix(banded.P_plus.to_dense()),
        "coupling": {
            "C": _matrix(coupling.C),
            "eps": [float(v) for v in coupling.eps],
            "eta": float(coupling.eta),
        },
        "alphas": [
            {
                "a1": a.a1,
                "a2": a.a2,
                "a3": a.a3,
                "a4": a.a4,
                "a5": a.a5,
                "bauer_fike": a.bauer_fike,
                "spectral_radius": a.spectral_radius,
            }
            for a in alphas
        ],
        "prop2": prop2.to_json_dict(),
        "diagnostics": {
            "full_iterations": full.iterations,
            "full_residual": full.residual,
            "bd_iterations": bd.iterations,
            "bd_residual": bd.residual,
            "banded_iterations": banded.iterations,
        },
    }
    write_json(doc, out / "steady.json")


def _uncoupled_q(sys_) -> np.ndarray:
    from .model import dense_stack

    return dense_stack(sys_).V


def _set_threads(threads: int | None) -> None:
    if threads is None or threads < 1:
        return
    try:
        import numba

        numba.set_num_threads(max(1, threads))
    except (ImportError, ValueError):
        pass
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=threads)
    except ImportError:
        pass


_DISPATCH = {
    "simulate": _cmd_simulate,
    "decouple": _cmd_decouple,
    "speckle": _cmd_speckle,
    "bench": _cmd_bench,
    "steady": _cmd_steady,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _set_threads(args.threads)
    try:
        cfg = _load_config(args.command, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _DISPATCH[args.command](cfg, out)
        return EXIT_OK
    except (ConfigError, ValidationError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
