"""Coupled estimation problems: n small linear systems sharing a stochastic input.

Each sub-system i evolves as

    x[k+1,i] = F_i x[k,i] + v[k,i] + G_i u[k]
    y[k,i]   = H_i x[k,i] + w[k,i]

with v, w white, mutually independent Gaussians and a single shared input
u[k] ~ N(0, U) injected into every sub-system through its G_i. The shared
input is the only source of cross-correlation between sub-systems.

Matrices are time-invariant here; the filter steps accept per-step
measurement matrices where needed (the Poisson EKF relinearizes each step).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import ShapeError, ValidationError

__all__ = [
    "RngSpec",
    "Subsystem",
    "CoupledSystem",
    "Trajectory",
    "DenseSystem",
    "simulate",
    "make_identical_chain",
    "make_random_system",
    "make_speckle_system",
    "dense_stack",
    "observability_defect",
    "system_to_json",
    "system_from_json",
]

DENSE_SIZE_GUARD = 10_000


@dataclass(frozen=True)
class RngSpec:
    """Deterministic random stream: a seed plus the generator algorithm tag.

    Only "pcg64" is supported (numpy's PCG64 bit generator); the same spec
    always reproduces the identical stream.
    """

    seed: int
    algorithm: str = "pcg64"

    def generator(self) -> np.random.Generator:
        if self.algorithm != "pcg64":
            raise ValidationError(f"unsupported rng algorithm {self.algorithm!r}")
        return np.random.Generator(np.random.PCG64(self.seed))

    def child(self, key: int) -> "RngSpec":
        """Derive an independent child stream, deterministic in (seed, key)."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
        return RngSpec(int(ss.generate_state(1, np.uint64)[0]), self.algorithm)


def _sym_check(name: str, m: np.ndarray, psd: bool = True) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    scale = max(float(np.abs(m).max()), 1.0)
    if np.abs(m - m.swapaxes(-1, -2)).max() > 1e-9 * scale:
        raise ValidationError(f"{name} must be symmetric")
    m = 0.5 * (m + m.swapaxes(-1, -2))
    if psd:
        w = np.linalg.eigvalsh(m)
        if w.min() < -1e-10 * scale:
            raise ValidationError(f"{name} must be positive semidefinite")
    return m


@dataclass(frozen=True)
class Subsystem:
    """One sub-system's matrices: dynamics F, observation H, noises V and R,
    and the coupling injection G."""

    F: np.ndarray  # (c, c)
    H: np.ndarray  # (d, c)
    V: np.ndarray  # (c, c), symmetric PSD
    R: np.ndarray  # (d, d), symmetric PSD (positive definite for filtering)
    G: np.ndarray  # (c, r)

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=np.float64))
        H = np.atleast_2d(np.asarray(self.H, dtype=np.float64))
        V = np.atleast_2d(np.asarray(self.V, dtype=np.float64))
        R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        G = np.atleast_2d(np.asarray(self.G, dtype=np.float64))
        c = F.shape[0]
        if F.shape != (c, c):
            raise ShapeError(f"F must be square, got {F.shape}")
        d = H.shape[0]
        if H.shape != (d, c):
            raise ShapeError(f"H must be (d, {c}), got {H.shape}")
        if V.shape != (c, c):
            raise ShapeError(f"V must be ({c}, {c}), got {V.shape}")
        if R.shape != (d, d):
            raise ShapeError(f"R must be ({d}, {d}), got {R.shape}")
        if G.shape[0] != c:
            raise ShapeError(f"G must have {c} rows, got {G.shape}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "V", _sym_check("V", V))
        object.__setattr__(self, "R", _sym_check("R", R))
        object.__setattr__(self, "G", G)

    @property
    def c(self) -> int:
        return self.F.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[0]

    @property
    def r(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class CoupledSystem:
    """n sub-systems with shared input covariance U, stored as stacked buffers.

    ``F``, ``H``, ``V``, ``R``, ``G`` are contiguous ``(n, ., .)`` stacks; U
    is the (r, r) covariance of the shared input. The total process noise of
    the stacked system is Q = V + G U G^T.
    """

    F: np.ndarray  # (n, c, c)
    H: np.ndarray  # (n, d, c)
    V: np.ndarray  # (n, c, c)
    R: np.ndarray  # (n, d, d)
    G: np.ndarray  # (n, c, r)
    U: np.ndarray  # (r, r)

    def __post_init__(self):
        F = np.ascontiguousarray(self.F, dtype=np.float64)
        H = np.ascontiguousarray(self.H, dtype=np.float64)
        V = np.ascontiguousarray(self.V, dtype=np.float64)
        R = np.ascontiguousarray(self.R, dtype=np.float64)
        G = np.ascontiguousarray(self.G, dtype=np.float64)
        U = np.atleast_2d(np.asarray(self.U, dtype=np.float64))
        if F.ndim != 3 or F.shape[1] != F.shape[2]:
            raise ShapeError(f"F stack must be (n, c, c), got {F.shape}")
        n, c, _ = F.shape
        d = H.shape[1] if H.ndim == 3 else -1
        r = G.shape[2] if G.ndim == 3 else -1
        if H.shape != (n, d, c):
            raise ShapeError(f"H stack must be (n, d, {c}), got {H.shape}")
        if V.shape != (n, c, c):
            raise ShapeError(f"V stack must be ({n}, {c}, {c}), got {V.shape}")
        if R.shape != (n, d, d):
            raise ShapeError(f"R stack must be ({n}, {d}, {d}), got {R.shape}")
        if G.shape != (n, c, r):
            raise ShapeError(f"G stack must be ({n}, {c}, r), got {G.shape}")
        if U.shape != (r, r):
            raise ShapeError(f"U must be ({r}, {r}), got {U.shape}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "V", _sym_check("V", V))
        object.__setattr__(self, "R", _sym_check("R", R))
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "U", _sym_check("U", U))

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def c(self) -> int:
        return self.F.shape[1]

    @property
    def d(self) -> int:
        return self.H.shape[1]

    @property
    def r(self) -> int:
        return self.G.shape[2]

    @classmethod
    def from_subsystems(cls, subsystems: list[Subsystem], U) -> "CoupledSystem":
        if not subsystems:
            raise ValidationError("need at least one subsystem")
        c, d, r = subsystems[0].c, subsystems[0].d, subsystems[0].r
        for i, s in enumerate(subsystems):
            if (s.c, s.d, s.r) != (c, d, r):
                raise ShapeError(f"subsystem {i} dims {(s.c, s.d, s.r)} != {(c, d, r)}")
        return cls(
            F=np.stack([s.F for s in subsystems]),
            H=np.stack([s.H for s in subsystems]),
            V=np.stack([s.V for s in subsystems]),
            R=np.stack([s.R for s in subsystems]),
            G=np.stack([s.G for s in subsystems]),
            U=U,
        )

    def subsystem(self, i: int) -> Subsystem:
        return Subsystem(self.F[i], self.H[i], self.V[i], self.R[i], self.G[i])

    @property
    def subsystems(self) -> list[Subsystem]:
        return [self.subsystem(i) for i in range(self.n)]

    def with_updates(self, **kwargs) -> "CoupledSystem":
        """Return a copy with some matrix stacks replaced (V, R, U, ...)."""
        return replace(self, **kwargs)

    def uncoupled(self) -> "CoupledSystem":
        """Same system with the shared input switched off (U = 0)."""
        return self.with_updates(U=np.zeros_like(self.U))

    @cached_property
    def coupling_noise_blocks(self) -> np.ndarray:
        """Diagonal blocks of G U G^T, shape (n, c, c)."""
        return np.einsum("nir,rs,njs->nij", self.G, self.U, self.G)

    @cached_property
    def q_blocks(self) -> np.ndarray:
        """Diagonal blocks of Q = V + G U G^T."""
        return self.V + self.coupling_noise_blocks


@dataclass(frozen=True)
class Trajectory:
    """A simulated run: states x[1..K], realized inputs u[0..K-1], measurements y[1..K].

    Row k holds the state reached at step k+1, the shared input that drove
    the transition into it, and the measurement taken of it.
    """

    states: np.ndarray  # (K, n*c)
    inputs: np.ndarray  # (K, r)
    measurements: np.ndarray  # (K, n*d)
    x0: np.ndarray = field(default=None)  # (n*c,) initial state

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


def _psd_factor(m: np.ndarray) -> np.ndarray:
    """A factor S with S S^T = m, for symmetric PSD m (batched over leading axes)."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(m)
        w = np.clip(w, 0.0, None)
        return v * np.sqrt(w)[..., None, :]


def simulate(sys: CoupledSystem, horizon: int, x0, rng: RngSpec) -> Trajectory:
    """Roll the coupled system forward, sampling all noises from their Gaussians.

    The shared input u[k] is drawn once per step and injected into every
    sub-system; process and measurement noises are independent per block.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    n, c, d, r = sys.n, sys.c, sys.d, sys.r
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.size != n * c:
        raise ShapeError(f"x0 must have length {n * c}, got {x0.size}")
    g = rng.generator()
    lv = _psd_factor(sys.V)  # (n, c, c)
    lr = _psd_factor(sys.R)  # (n, d, d)
    lu = _psd_factor(sys.U)  # (r, r)
    zu = g.standard_normal((horizon, r))
    zv = g.standard_normal((horizon, n, c))
    zw = g.standard_normal((horizon, n, d))
    u = zu @ lu.T
    v = np.einsum("nij,knj->kni", lv, zv)
    w = np.einsum("nij,knj->kni", lr, zw)

    states = np.empty((horizon, n, c))
    meas = np.empty((horizon, n, d))
    x = x0.reshape(n, c)
    for k in range(horizon):
        x = (
            np.einsum("nij,nj->ni", sys.F, x)
            + v[k]
            + np.einsum("nij,j->ni", sys.G, u[k])
        )
        states[k] = x
        meas[k] = np.einsum("nij,nj->ni", sys.H, x) + w[k]
    return Trajectory(
        states=states.reshape(horizon, n * c),
        inputs=u,
        measurements=meas.reshape(horizon, n * d),
        x0=x0,
    )


def make_identical_chain(beta: float, n: int) -> CoupledSystem:
    """n identical second-order sub-systems with a shared scalar input.

    The off-diagonal parameter ``beta`` controls how strongly the first state
    component responds to the second; the shared unit-variance input enters
    both components of every sub-system.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    F = np.array([[0.9, float(beta)], [0.0, 0.9]])
    H = np.array([[1.0, 1.0]])
    V = np.eye(2)
    R = np.array([[1.0]])
    G = np.array([[1.0], [1.0]])
    U = np.array([[1.0]])
    return CoupledSystem(
        F=np.broadcast_to(F, (n, 2, 2)).copy(),
        H=np.broadcast_to(H, (n, 1, 2)).copy(),
        V=np.broadcast_to(V, (n, 2, 2)).copy(),
        R=np.broadcast_to(R, (n, 1, 1)).copy(),
        G=np.broadcast_to(G, (n, 2, 1)).copy(),
        U=U,
    )


def make_random_system(
    c: int, d: int, r: int, n: int, spectral_radius_cap: float, rng: RngSpec
) -> CoupledSystem:
    """Random stable test instance, deterministic in ``rng``."""
    if min(c, d, r, n) < 1:
        raise ValidationError("all dimensions must be >= 1")
    g = rng.generator()
    F = g.standard_normal((n, c, c))
    rho = np.abs(np.linalg.eigvals(F)).max(axis=1)
    scale = np.where(rho > 0, spectral_radius_cap / np.maximum(rho, 1e-300), 0.0)
    F = F * scale[:, None, None]
    if spectral_radius_cap == 0.0:
        F = np.zeros_like(F)
    a = g.standard_normal((n, c, c))
    V = a @ a.transpose(0, 2, 1) + 0.1 * np.eye(c)
    b = g.standard_normal((n, d, d))
    R = b @ b.transpose(0, 2, 1) + 0.1 * np.eye(d)
    cc = g.standard_normal((r, r))
    U = cc @ cc.T + 0.1 * np.eye(r)
    H = g.standard_normal((n, d, c))
    G = g.standard_normal((n, c, r))
    return CoupledSystem(F=F, H=H, V=V, R=R, G=G, U=U)


def _monomial_exponents(count: int) -> list[tuple[int, int]]:
    # 2-D monomials in graded order: 1, x, y, x^2, xy, y^2, ...
    out: list[tuple[int, int]] = []
    deg = 0
    while len(out) < count:
        for px in range(deg, -1, -1):
            out.append((px, deg - px))
            if len(out) == count:
                break
        deg += 1
    return out


def _smooth_modes(n_pixels: int, k: int, g: np.random.Generator) -> np.ndarray:
    """k orthonormal low-order polynomial modes sampled on a pixel grid.

    Columns are orthonormal over pixels; a seeded orthogonal mix decorrelates
    the graded monomial ordering. With k = 1 the single mode is constant.
    """
    if k > n_pixels:
        raise ValidationError(
            f"cannot build {k} orthonormal modes on {n_pixels} pixels"
        )
    nx = int(math.ceil(math.sqrt(n_pixels)))
    ny = int(math.ceil(n_pixels / nx))
    xs = np.linspace(-1.0, 1.0, nx)
    ys = np.linspace(-1.0, 1.0, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    px = gx.reshape(-1)[:n_pixels]
    py = gy.reshape(-1)[:n_pixels]
    cols = [px**ex * py**ey for ex, ey in _monomial_exponents(k)]
    basis = np.stack(cols, axis=1)
    q, rr = np.linalg.qr(basis)
    if np.abs(np.diag(rr)).min() < 1e-10 * np.abs(np.diag(rr)).max():
        raise ValidationError(
            f"polynomial mode basis is rank deficient for {k} modes on {n_pixels} pixels"
        )
    if k > 1:
        mix, _ = np.linalg.qr(g.standard_normal((k, k)))
        q = q @ mix
    return q


def make_speckle_system(
    n_pixels: int, r_modes: int, drift_scale: float, rng: RngSpec
) -> tuple[CoupledSystem, np.ndarray]:
    """A pixel-field drift model: per-pixel complex field driven by smooth modes.

    Each pixel carries a 2-state sub-system (real and imaginary field parts)
    with identity dynamics and tiny private process noise; the dominant drift
    enters through ``r_modes`` smooth spatial modes shared across pixels,
    split between the real and imaginary channels. Returns the system plus
    the (n_pixels, r_modes) matrix of spatial mode shapes.
    """
    if n_pixels < 1 or r_modes < 1:
        raise ValidationError("n_pixels and r_modes must be >= 1")
    if r_modes > n_pixels:
        raise ValidationError(
            f"r_modes={r_modes} too large for {n_pixels} pixels"
        )
    g = rng.generator()
    k_re = (r_modes + 1) // 2
    k_im = r_modes - k_re
    modes_re = _smooth_modes(n_pixels, k_re, g)
    modes_im = _smooth_modes(n_pixels, k_im, g) if k_im > 0 else np.zeros((n_pixels, 0))
    G = np.zeros((n_pixels, 2, r_modes))
    G[:, 0, :k_re] = modes_re
    G[:, 1, k_re:] = modes_im
    mode_matrix = np.concatenate([modes_re, modes_im], axis=1)

    v_small = 1e-4 * drift_scale**2
    sys = CoupledSystem(
        F=np.broadcast_to(np.eye(2), (n_pixels, 2, 2)).copy(),
        H=np.zeros((n_pixels, 1, 2)),  # placeholder; the EKF relinearizes each step
        V=np.broadcast_to(v_small * np.eye(2), (n_pixels, 2, 2)).copy(),
        R=np.broadcast_to(np.eye(1), (n_pixels, 1, 1)).copy(),
        G=G,
        U=drift_scale**2 * np.eye(r_modes),
    )
    return sys, mode_matrix


class DenseSystem(NamedTuple):
    """Dense stacked embeddings of a coupled system, for the oracle filters."""

    F: np.ndarray
    H: np.ndarray
    V: np.ndarray
    R: np.ndarray
    G: np.ndarray
    Q: np.ndarray


def dense_stack(sys: CoupledSystem, allow_large: bool = False) -> DenseSystem:
    """Dense block-diagonal embeddings plus Q = V + G U G^T.

    Refuses state dimensions above ``DENSE_SIZE_GUARD`` unless overridden;
    dense embeddings are oracle/analysis machinery, not the fast path.
    """
    nc = sys.n * sys.c
    if nc > DENSE_SIZE_GUARD and not allow_large:
        raise ValidationError(
            f"dense embedding of state dimension {nc} exceeds guard {DENSE_SIZE_GUARD}"
        )
    from .blockstruct import BlockDiagMat

    F = BlockDiagMat(sys.F).to_dense()
    H = BlockDiagMat(sys.H).to_dense()
    V = BlockDiagMat(sys.V).to_dense()
    R = BlockDiagMat(sys.R).to_dense()
    G = sys.G.reshape(nc, sys.r)
    Q = V + G @ sys.U @ G.T
    return DenseSystem(F=F, H=H, V=V, R=R, G=G, Q=Q)


def observability_defect(F: np.ndarray, H: np.ndarray) -> int:
    """Rank deficiency of the stacked observability matrix (0 means full rank).

    Numerical rank uses a singular-value threshold of 1e-8 times the largest
    singular value.
    """
    F = np.atleast_2d(F)
    H = np.atleast_2d(H)
    c = F.shape[0]
    rows = [H]
    m = H
    for _ in range(c - 1):
        m = m @ F
        rows.append(m)
    obs = np.vstack(rows)
    sv = np.linalg.svd(obs, compute_uv=False)
    rank = int((sv > 1e-8 * sv[0]).sum()) if sv[0] > 0 else 0
    return c - rank


def warn_if_undetectable(sys: CoupledSystem) -> None:
    """Warn (don't fail) when a sub-system's observability matrix is rank deficient."""
    for i in range(sys.n):
        defect = observability_defect(sys.F[i], sys.H[i])
        if defect > 0:
            warnings.warn(
                f"subsystem {i}: observability matrix rank deficient by {defect}; "
                "fixed-point results may be marginal",
                stacklevel=2,
            )
            return  # one warning suffices


def _matrix_list(m: np.ndarray) -> list:
    return np.asarray(m, dtype=float).tolist()


def system_to_json(sys: CoupledSystem) -> dict:
    """JSON document with row-major nested arrays, one entry per sub-system."""
    return {
        "c": sys.c,
        "d": sys.d,
        "r": sys.r,
        "n": sys.n,
        "U": _matrix_list(sys.U),
        "subsystems": [
            {
                "F": _matrix_list(sys.F[i]),
                "H": _matrix_list(sys.H[i]),
                "V": _matrix_list(sys.V[i]),
                "R": _matrix_list(sys.R[i]),
                "G": _matrix_list(sys.G[i]),
            }
            for i in range(sys.n)
        ],
    }


_GENERATOR_FIELDS = {
    "identical_chain": {"beta", "n"},
    "random": {"c", "d", "r", "n", "spectral_radius_cap", "seed"},
    "speckle": {"n_pixels", "r_modes", "drift_scale", "seed"},
}


def _require(doc: dict, key: str, context: str):
    if key not in doc:
        raise ValidationError(f"missing required field {key!r} in {context}")
    return doc[key]


def system_from_json(doc: dict) -> CoupledSystem:
    """Build a system from its JSON document or from a generator description."""
    if not isinstance(doc, dict):
        raise ValidationError("system spec must be a JSON object")
    if "generator" in doc:
        gen = doc["generator"]
        if gen not in _GENERATOR_FIELDS:
            raise ValidationError(f"unknown generator {gen!r}")
        allowed = _GENERATOR_FIELDS[gen] | {"generator"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValidationError(f"unknown fields for generator {gen!r}: {sorted(unknown)}")
        if gen == "identical_chain":
            return make_identical_chain(_require(doc, "beta", gen), _require(doc, "n", gen))
        if gen == "random":
            return make_random_system(
                _require(doc, "c", gen),
                _require(doc, "d", gen),
                _require(doc, "r", gen),
                _require(doc, "n", gen),
                _require(doc, "spectral_radius_cap", gen),
                RngSpec(_require(doc, "seed", gen)),
            )
        sys_, _ = make_speckle_system(
            _require(doc, "n_pixels", gen),
            _require(doc, "r_modes", gen),
            _require(doc, "drift_scale", gen),
            RngSpec(_require(doc, "seed", gen)),
        )
        return sys_
    allowed = {"c", "d", "r", "n", "U", "subsystems"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValidationError(f"unknown fields in system spec: {sorted(unknown)}")
    subs = [
        Subsystem(
            F=_require(s, "F", f"subsystem {i}"),
            H=_require(s, "H", f"subsystem {i}"),
            V=_require(s, "V", f"subsystem {i}"),
            R=_require(s, "R", f"subsystem {i}"),
            G=_require(s, "G", f"subsystem {i}"),
        )
        for i, s in enumerate(_require(doc, "subsystems", "system spec"))
    ]
    sys_ = CoupledSystem.from_subsystems(subs, _require(doc, "U", "system spec"))
    for key in ("c", "d", "r", "n"):
        if key in doc and doc[key] != getattr(sys_, key):
            raise ValidationError(
                f"declared {key}={doc[key]} does not match matrices ({getattr(sys_, key)})"
            )
    return sys_


def system_round_trip(sys: CoupledSystem) -> CoupledSystem:
    """Serialize then parse; used by tests to pin the JSON schema."""
    return system_from_json(json.loads(json.dumps(system_to_json(sys))))
