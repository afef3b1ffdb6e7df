"""Fixed-point (steady-state) analysis of the filters.

Everything here iterates the corresponding filter's covariance recursion to
its fixed point rather than calling an algebraic Riccati solver: the
block-diagonal recursion has no standard algebraic solver because of the
blockwise projection, and using the same iteration for the dense reference
keeps comparisons consistent.

Also provided: the effective steady posterior covariance of the shared input
under the decoupled (banded) filter, per-sub-system perturbation constants,
the small-coupling bounds built from them, and the true steady error
covariance of a filter run with a fixed sub-optimal gain.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernels
from .blockstruct import BlockDiagMat, TallBlockMat, bd_chol_solve, project_block_diag
from .errors import (
    DefectiveMatrixError,
    NonConvergenceError,
    SingularBlockError,
    SingularMatrixError,
    UnstableClosedLoopError,
    ValidationError,
)
from .filters import FactoredGain
from .model import CoupledSystem, dense_stack, warn_if_undetectable

__all__ = [
    "SteadyStateResult",
    "AlphaConstants",
    "CouplingSummary",
    "Prop2Report",
    "solve_dare",
    "dare_fixed_point",
    "solve_bd_dare",
    "bd_covariance_update",
    "bd_fixed_point_residual",
    "banded_steady",
    "compute_coupling_matrix",
    "alpha_constants",
    "perturbation_bounds",
    "true_error_cov",
]

DEFAULT_TOL = 1e-11
DEFAULT_MAX_ITER = 200_000


@dataclass(frozen=True)
class SteadyStateResult:
    """Fixed point of a covariance recursion plus its steady gain.

    ``P_minus``/``P_plus`` are the prediction/update fixed points, dense or
    block-diagonal depending on the filter; ``K`` is the steady gain (dense,
    block-diagonal, or factored); ``F_c`` the closed-loop transition matrix.
    Dense fields may be None when the state dimension exceeds the dense
    guard of the solver.
    """

    P_minus: object
    P_plus: object
    K: object
    F_c: object
    iterations: int
    residual: float
    converged: bool


def _rel_norm(num: float, den: float) -> float:
    return num / max(den, 1e-300)


def dare_fixed_point(
    F: np.ndarray,
    H: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    P0: np.ndarray | None = None,
) -> SteadyStateResult:
    """Iterate the dense covariance recursion to its prediction fixed point.

    Convergence is declared when successive prediction covariances differ by
    at most ``tol`` in relative Frobenius norm. Raises
    :class:`NonConvergenceError` (carrying the residual history tail) on an
    exhausted iteration budget.
    """
    F = np.atleast_2d(np.asarray(F, float))
    H = np.atleast_2d(np.asarray(H, float))
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    p = Q.copy() if P0 is None else 0.5 * (np.atleast_2d(np.asarray(P0, float)) + np.atleast_2d(np.asarray(P0, float)).T)
    history: deque[float] = deque(maxlen=10)
    rel = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        hp = H @ p
        s = hp @ H.T + R
        s = 0.5 * (s + s.T)
        try:
            cf = scipy.linalg.cho_factor(s, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(
                "innovation covariance is not positive definite"
            ) from exc
        w = scipy.linalg.cho_solve(cf, hp, check_finite=False)
        p_plus = p - hp.T @ w
        p_new = F @ p_plus @ F.T + Q
        p_new = 0.5 * (p_new + p_new.T)
        rel = _rel_norm(np.linalg.norm(p_new - p), np.linalg.norm(p_new))
        history.append(float(rel))
        p = p_new
        if rel <= tol:
            break
    else:
        raise NonConvergenceError(
            "prediction covariance iteration did not converge", float(rel), list(history)
        )
    hp = H @ p
    s = hp @ H.T + R
    s = 0.5 * (s + s.T)
    cf = scipy.linalg.cho_factor(s, lower=True, check_finite=False)
    gain = scipy.linalg.cho_solve(cf, hp, check_finite=False).T
    ikh = np.eye(p.shape[0]) - gain @ H
    p_plus = ikh @ p @ ikh.T + gain @ R @ gain.T
    p_plus = 0.5 * (p_plus + p_plus.T)
    f_c = ikh @ F
    fix = F @ (p - hp.T @ scipy.linalg.cho_solve(cf, hp, check_finite=False)) @ F.T + Q
    residual = _rel_norm(np.linalg.norm(p - fix), np.linalg.norm(p))
    return SteadyStateResult(
        P_minus=p,
        P_plus=p_plus,
        K=gain,
        F_c=f_c,
        iterations=iterations,
        residual=float(residual),
        converged=True,
    )


def solve_dare(
    sys: CoupledSystem,
    Q: np.ndarray | None = None,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    P0: np.ndarray | None = None,
    warn_detectability: bool = True,
) -> SteadyStateResult:
    """Steady state of the full Kalman filter on the stacked dense system.

    ``Q`` defaults to the stacked V + G U G^T; passing an explicit dense Q
    evaluates the fixed point as a function of the process noise.
    """
    if warn_detectability:
        warn_if_undetectable(sys)
    ds = dense_stack(sys)
    q = ds.Q if Q is None else np.atleast_2d(np.asarray(Q, float))
    return dare_fixed_point(ds.F, ds.H, q, ds.R, tol=tol, max_iter=max_iter, P0=P0)


def bd_covariance_update(sys: CoupledSystem, p_blocks: np.ndarray) -> np.ndarray:
    """One covariance pass of the factored block-diagonal recursion."""
    L, M, W, A, B, N, bad = _kernels.fast_work_kernel(
        np.ascontiguousarray(p_blocks), sys.F, sys.H, sys.V, sys.R, sys.G
    )
    if bad >= 0:
        raise SingularBlockError(bad, "innovation covariance block not positive definite")
    c1, c2, c3 = _kernels.coupling_kernel(sys.U, N)
    return _kernels.fast_assemble_kernel(A, B, sys.G, c1, c2, c3)


def _coerce_p0_blocks(sys: CoupledSystem, P0) -> np.ndarray:
    n, c = sys.n, sys.c
    if P0 is None:
        return sys.q_blocks.copy()
    if isinstance(P0, BlockDiagMat):
        return P0.blocks.copy()
    if np.isscalar(P0):
        return np.broadcast_to(float(P0) * np.eye(c), (n, c, c)).copy()
    arr = np.asarray(P0, float)
    if arr.shape == (n, c, c):
        return arr.copy()
    if arr.shape == (n * c, n * c):
        return project_block_diag(arr, c).blocks.copy()
    raise ValidationError(f"cannot interpret P0 with shape {arr.shape}")


def solve_bd_dare(
    sys: CoupledSystem,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    P0=None,
    dense_guard: int = 2048,
    warn_detectability: bool = True,
) -> SteadyStateResult:
    """Fixed point of the block-diagonal filter's covariance recursion.

    For positive-definite total process noise and detectable sub-systems the
    recursion converges to a unique positive-definite fixed point from any
    positive initialization. Convergence is measured on the prediction-step
    difference (computable blockwise). Dense P_minus, F_c and the equation
    residual are produced when the state dimension is at most
    ``dense_guard``; the factored steady gain is always returned.
    """
    if warn_detectability:
        warn_if_undetectable(sys)
    n, c, d, r = sys.n, sys.c, sys.d, sys.r
    p = _coerce_p0_blocks(sys, P0)
    cn = sys.coupling_noise_blocks
    gram = np.einsum("nir,nis->rs", sys.G, sys.G)
    us = sys.U @ gram
    cross = max(float(np.trace(us @ us)) - float(np.sum(cn * cn)), 0.0)
    history: deque[float] = deque(maxlen=10)
    rel = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        p_new = bd_covariance_update(sys, p)
        dpred = np.einsum("nij,njk,nlk->nil", sys.F, p_new - p, sys.F)
        num = float(np.linalg.norm(dpred))
        l_blocks = np.einsum("nij,njk,nlk->nil", sys.F, p_new, sys.F) + sys.V
        den = float(np.sqrt(np.sum((l_blocks + cn) ** 2) + cross))
        rel = _rel_norm(num, den)
        history.append(float(rel))
        p = p_new
        if rel <= tol:
            break
    else:
        raise NonConvergenceError(
            "block-diagonal covariance iteration did not converge",
            float(rel),
            list(history),
        )
    # Steady work at the fixed point; its gain is the steady factored gain.
    L, M, W, A, B, N, bad = _kernels.fast_work_kernel(p, sys.F, sys.H, sys.V, sys.R, sys.G)
    if bad >= 0:
        raise SingularBlockError(bad, "innovation covariance block not positive definite")
    c1, _, c3 = _kernels.coupling_kernel(sys.U, N)
    gain = FactoredGain(L=L, W=W, B=B, G=sys.G, C1=c1, C3=c3)
    p_plus = BlockDiagMat(p)
    p_minus = None
    f_c = None
    residual = float(rel)
    if n * c <= dense_guard:
        gd = sys.G.reshape(n * c, r)
        p_minus = BlockDiagMat(L).to_dense() + gd @ sys.U @ gd.T
        p_minus = 0.5 * (p_minus + p_minus.T)
        ds = dense_stack(sys)
        f_c = (np.eye(n * c) - gain.to_dense() @ ds.H) @ ds.F
        residual = bd_fixed_point_residual(sys, p_minus)
    return SteadyStateResult(
        P_minus=p_minus,
        P_plus=p_plus,
        K=gain,
        F_c=f_c,
        iterations=iterations,
        residual=residual,
        converged=True,
    )


def bd_fixed_point_residual(sys: CoupledSystem, p_minus: np.ndarray) -> float:
    """Relative residual of the block-diagonal prediction fixed-point equation."""
    ds = dense_stack(sys)
    hp = ds.H @ p_minus
    s = hp @ ds.H.T + ds.R
    w = np.linalg.solve(0.5 * (s + s.T), hp)
    upd = project_block_diag(p_minus - hp.T @ w, sys.c).to_dense()
    fix = ds.F @ upd @ ds.F.T + ds.Q
    return _rel_norm(np.linalg.norm(p_minus - fix), np.linalg.norm(p_minus))


def banded_steady(
    sys: CoupledSystem,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SteadyStateResult:
    """Per-sub-system steady states of the decoupled (banded) filter.

    Each block solves its own small fixed point with process noise
    V_i + G_i U G_i^T; blocks are independent, so adding sub-systems never
    changes existing blocks.
    """
    q = sys.q_blocks
    p = q.copy()
    history: deque[float] = deque(maxlen=10)
    rel = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        hp = np.einsum("ndc,nce->nde", sys.H, p)
        s = np.einsum("nde,nce->ndc", hp, sys.H) + sys.R
        w = bd_chol_solve(BlockDiagMat(s), BlockDiagMat(hp)).blocks
        p_plus = p - np.einsum("ndi,ndj->nij", hp, w)
        p_new = np.einsum("nij,njk,nlk->nil", sys.F, p_plus, sys.F) + q
        p_new = 0.5 * (p_new + p_new.transpose(0, 2, 1))
        rel = _rel_norm(float(np.linalg.norm(p_new - p)), float(np.linalg.norm(p_new)))
        history.append(float(rel))
        p = p_new
        if rel <= tol:
            break
    else:
        raise NonConvergenceError(
            "banded covariance iteration did not converge", float(rel), list(history)
        )
    hp = np.einsum("ndc,nce->nde", sys.H, p)
    s = np.einsum("nde,nce->ndc", hp, sys.H) + sys.R
    w = bd_chol_solve(BlockDiagMat(s), BlockDiagMat(hp)).blocks
    k_blocks = np.ascontiguousarray(w.transpose(0, 2, 1))  # P H^T S^{-1} per block
    ikh = np.broadcast_to(np.eye(sys.c), (sys.n, sys.c, sys.c)) - np.einsum(
        "ncd,nde->nce", k_blocks, sys.H
    )
    p_plus = np.einsum("nij,njk,nlk->nil", ikh, p, ikh) + np.einsum(
        "ncd,nde,nfe->ncf", k_blocks, sys.R, k_blocks
    )
    p_plus = 0.5 * (p_plus + p_plus.transpose(0, 2, 1))
    f_c = np.einsum("nij,njk->nik", ikh, sys.F)
    fix = np.einsum("nij,njk,nlk->nil", sys.F, p - np.einsum("ndi,ndj->nij", hp, w), sys.F) + q
    residual = _rel_norm(float(np.linalg.norm(p - fix)), float(np.linalg.norm(p)))
    return SteadyStateResult(
        P_minus=BlockDiagMat(p),
        P_plus=BlockDiagMat(p_plus),
        K=BlockDiagMat(k_blocks),
        F_c=BlockDiagMat(f_c),
        iterations=iterations,
        residual=residual,
        converged=True,
    )


@dataclass(frozen=True)
class CouplingSummary:
    """Effective steady posterior of the shared input under the banded filter.

    ``C`` shrinks as sub-systems are added (they jointly pin down the shared
    input); ``eps[i]`` measures how much of it sub-system i feels, and
    ``eta`` is the overall coupling-noise magnitude ||G U G^T||_F.
    """

    C: np.ndarray  # (r, r)
    eps: np.ndarray  # (n,)
    eta: float


def compute_coupling_matrix(
    sys: CoupledSystem, banded_p_plus: BlockDiagMat
) -> CouplingSummary:
    """Steady input posterior covariance implied by the banded fixed point.

    C = (U^{-1} + G^T H^T (H (F P F^T + V) H^T + R)^{-1} H G)^{-1}, computed
    through per-block reductions (the inner matrix is block-diagonal) and a
    solve of (I + U N) C = U so singular U needs no special casing.
    """
    pb = banded_p_plus.blocks
    inner = (
        np.einsum(
            "ndc,nce,nfe->ndf",
            sys.H,
            np.einsum("nij,njk,nlk->nil", sys.F, pb, sys.F) + sys.V,
            sys.H,
        )
        + sys.R
    )
    hg = np.ascontiguousarray(np.einsum("ndc,ncr->ndr", sys.H, sys.G))
    x = bd_chol_solve(BlockDiagMat(inner), TallBlockMat(hg)).blocks
    nc = np.einsum("ndr,nds->rs", hg, x)
    nc = 0.5 * (nc + nc.T)
    c = np.linalg.solve(np.eye(sys.r) + sys.U @ nc, sys.U)
    c = 0.5 * (c + c.T)
    gcg = np.einsum("nir,rs,njs->nij", sys.G, c, sys.G)
    eps = np.linalg.norm(gcg, axis=(1, 2))
    gram = np.einsum("nir,nis->rs", sys.G, sys.G)
    us = sys.U @ gram
    eta = float(np.sqrt(max(np.trace(us @ us), 0.0)))
    return CouplingSummary(C=c, eps=eps, eta=eta)


@dataclass(frozen=True)
class AlphaConstants:
    """Per-sub-system constants controlling sensitivity to small coupling.

    All are evaluated at the sub-system's uncoupled steady state: a1 from the
    closed-loop spectral radius, a2 its 2-norm, a3/a4/a5 norms of the gain
    and information maps, and ``bauer_fike`` the 2-norm eigenvector condition
    number of the closed loop (the eigenvalue-perturbation constant).
    """

    a1: float
    a2: float
    a3: float
    a4: float
    a5: float
    bauer_fike: float
    spectral_radius: float


def alpha_constants(sub, p_minus_v: np.ndarray) -> AlphaConstants:
    """Constants for one sub-system given its uncoupled steady prediction covariance."""
    f, h, r = sub.F, sub.H, sub.R
    p = np.atleast_2d(np.asarray(p_minus_v, float))
    s = h @ p @ h.T + r
    s = 0.5 * (s + s.T)
    gain = np.linalg.solve(s, h @ p).T
    f_c = (np.eye(sub.c) - gain @ h) @ f
    lam = np.linalg.eigvals(f_c)
    rho = float(np.abs(lam).max())
    if rho >= 1.0:
        raise UnstableClosedLoopError(
            f"closed-loop spectral radius {rho:.6f} >= 1; constants undefined"
        )
    try:
        rinv_h = np.linalg.solve(r, h)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("R must be invertible for these constants") from exc
    a1 = 1.0 / (1.0 - rho**2)
    a2 = float(np.linalg.norm(f_c, 2))
    a3 = float(np.linalg.norm(np.linalg.inv(np.eye(sub.c) + p @ h.T @ rinv_h), 2))
    hsh = h.T @ np.linalg.solve(s, h)
    a4 = float(np.linalg.norm(hsh @ f, 2))
    a5 = float(np.linalg.norm(hsh, 2))
    _, vecs = np.linalg.eig(f_c)
    sv = np.linalg.svd(vecs, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise DefectiveMatrixError(
            "closed-loop matrix is numerically non-diagonalizable; the "
            "eigenvector-conditioning constant is undefined for defective matrices"
        )
    beta = float(sv[0] / sv[-1])
    return AlphaConstants(
        a1=a1, a2=a2, a3=a3, a4=a4, a5=a5, bauer_fike=beta, spectral_radius=rho
    )


@dataclass(frozen=True)
class Prop2Report:
    """Small-coupling perturbation bounds and the measured quantities they cap.

    Part 1 is per sub-system (difference between the coupled block-diagonal
    update covariance block and the uncoupled one); part 2 bounds the dense
    prediction-covariance and closed-loop shifts for both the optimal and
    block-diagonal filters. Conditions are recorded as flags, never errors;
    whether measured <= bound is for the caller (tests) to check.
    """

    part1_condition_ok: np.ndarray  # (n,) bool
    part1_bound: np.ndarray  # (n,)
    part1_measured: np.ndarray  # (n,)
    part2_condition_ok: bool
    part2_bound_P: float
    part2_bound_P_linear: float  # the weaker closed form 2*a1*eta
    part2_bound_Fc: float
    measured_dP_minus_kf: float
    measured_dP_minus_bd: float
    measured_dFc_kf: float
    measured_dFc_bd: float
    eps: np.ndarray
    eta: float

    def to_json_dict(self) -> dict:
        return {
            "part1_condition_ok": [bool(v) for v in self.part1_condition_ok],
            "part1_bound": [float(v) for v in self.part1_bound],
            "part1_measured": [float(v) for v in self.part1_measured],
            "part2_condition_ok": bool(self.part2_condition_ok),
            "part2_bound_P": float(self.part2_bound_P),
            "part2_bound_P_linear": float(self.part2_bound_P_linear),
            "part2_bound_Fc": float(self.part2_bound_Fc),
            "measured_dP_minus_kf": float(self.measured_dP_minus_kf),
            "measured_dP_minus_bd": float(self.measured_dP_minus_bd),
            "measured_dFc_kf": float(self.measured_dFc_kf),
            "measured_dFc_bd": float(self.measured_dFc_bd),
            "eps": [float(v) for v in self.eps],
            "eta": float(self.eta),
        }


def perturbation_bounds(
    sys: CoupledSystem,
    alphas: list[AlphaConstants],
    coupling: CouplingSummary,
    steady_uncoupled: SteadyStateResult,
    steady_coupled: SteadyStateResult,
    bd_steady: SteadyStateResult,
) -> Prop2Report:
    """Evaluate the small-coupling bounds against measured steady-state shifts.

    ``steady_uncoupled`` is the dense fixed point with process noise V only,
    ``steady_coupled`` the dense fixed point with the full noise, and
    ``bd_steady`` the block-diagonal one (dense outputs required).
    """
    n = sys.n
    eps = np.asarray(coupling.eps, float)
    eta = float(coupling.eta)
    a1 = np.array([a.a1 for a in alphas])
    a2 = np.array([a.a2 for a in alphas])
    a3 = np.array([a.a3 for a in alphas])
    a4 = np.array([a.a4 for a in alphas])
    a5 = np.array([a.a5 for a in alphas])
    rho = np.array([a.spectral_radius for a in alphas])
    bf = np.array([a.bauer_fike for a in alphas])

    gamma = a3 * a4 * eps
    contraction = a1 * (2.0 * a2 + gamma) * gamma
    cond1 = (contraction < 1.0) & (rho + bf * gamma < 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound1 = np.where(cond1, a1 * a2**2 * eps / (1.0 - contraction), np.inf)

    p_plus_unc = project_block_diag(steady_uncoupled.P_plus, sys.c).blocks
    p_plus_bd = bd_steady.P_plus.blocks
    measured1 = np.linalg.norm(p_plus_bd - p_plus_unc, axis=(1, 2))

    m1, m2, m3, m4, m5 = a1.max(), a2.max(), a3.max(), a4.max(), a5.max()
    disc = 1.0 - 4.0 * m1**2 * m2**2 * m5 * eta
    cond2 = disc > 0.0
    if cond2 and m2 > 0 and m5 > 0:
        bound_p = (1.0 - np.sqrt(disc)) / (2.0 * m1 * m2**2 * m5)
    elif cond2:
        bound_p = 2.0 * m1 * eta  # degenerate a2 or a5: fall back to the linear cap
    else:
        bound_p = np.inf
    bound_fc = m3 * m4 * bound_p

    if bd_steady.P_minus is None or bd_steady.F_c is None:
        raise ValidationError(
            "bd_steady must carry dense outputs (state dimension above the dense guard?)"
        )
    d_pm_kf = float(np.linalg.norm(steady_coupled.P_minus - steady_uncoupled.P_minus))
    d_pm_bd = float(np.linalg.norm(bd_steady.P_minus - steady_uncoupled.P_minus))
    d_fc_kf = float(np.linalg.norm(steady_coupled.F_c - steady_uncoupled.F_c))
    d_fc_bd = float(np.linalg.norm(bd_steady.F_c - steady_uncoupled.F_c))

    return Prop2Report(
        part1_condition_ok=cond1,
        part1_bound=bound1,
        part1_measured=measured1,
        part2_condition_ok=bool(cond2),
        part2_bound_P=float(bound_p),
        part2_bound_P_linear=float(2.0 * m1 * eta),
        part2_bound_Fc=float(bound_fc),
        measured_dP_minus_kf=d_pm_kf,
        measured_dP_minus_bd=d_pm_bd,
        measured_dFc_kf=d_fc_kf,
        measured_dFc_bd=d_fc_bd,
        eps=eps,
        eta=eta,
    )


def true_error_cov(
    sys: CoupledSystem,
    gain,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Actual steady error covariance of a filter run with the fixed gain.

    Iterates S <- (I - K H)(F S F^T + Q)(I - K H)^T + K R K^T to its fixed
    point. The filter itself does not track this matrix; a sub-optimal gain's
    reported covariance and its true error covariance differ. Requires the
    closed loop (I - K H) F to be stable.
    """
    ds = dense_stack(sys)
    if isinstance(gain, (FactoredGain, BlockDiagMat)):
        kd = gain.to_dense()
    else:
        kd = np.asarray(gain, float)
    nc = sys.n * sys.c
    if kd.shape != (nc, sys.n * sys.d):
        raise ValidationError(f"gain must be ({nc}, {sys.n * sys.d}), got {kd.shape}")
    ikh = np.eye(nc) - kd @ ds.H
    f_cl = ikh @ ds.F
    rho = float(np.abs(np.linalg.eigvals(f_cl)).max())
    if rho >= 1.0:
        raise UnstableClosedLoopError(
            f"closed loop with the supplied gain has spectral radius {rho:.6f} >= 1"
        )
    krk = kd @ ds.R @ kd.T
    sig = ds.Q.copy()
    history: deque[float] = deque(maxlen=10)
    for _ in range(max_iter):
        sig_new = ikh @ (ds.F @ sig @ ds.F.T + ds.Q) @ ikh.T + krk
        sig_new = 0.5 * (sig_new + sig_new.T)
        rel = _rel_norm(np.linalg.norm(sig_new - sig), np.linalg.norm(sig_new))
        history.append(float(rel))
        sig = sig_new
        if rel <= tol:
            return sig
    raise NonConvergenceError(
        "true-error covariance iteration did not converge",
        float(history[-1]),
        list(history),
    )
