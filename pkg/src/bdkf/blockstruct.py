"""Block-structured dense linear algebra for n small blocks.

Three layouts cover everything the filters need:

* plain 2-D ``numpy`` arrays for small matrices (c x c, d x d, r x r) and
  for full dense matrices,
* :class:`BlockDiagMat` -- a block-diagonal matrix stored as one contiguous
  ``(n, brows, bcols)`` buffer,
* :class:`TallBlockMat` -- n vertically stacked ``(brows, cols)`` blocks
  sharing a common column count.

Blocks live contiguously in a single buffer so the per-block loops stay
cache-friendly. All wrapper types are immutable values; the operations are
pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SingularBlockError

__all__ = [
    "BlockDiagMat",
    "TallBlockMat",
    "project_block_diag",
    "bd_sandwich",
    "bd_matmul",
    "bd_chol_solve",
    "tall_reduce",
    "fro_distance",
    "sym_min_eig",
]


def _as_block_buffer(blocks) -> np.ndarray:
    arr = np.ascontiguousarray(blocks, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected an (n, rows, cols) block stack, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ShapeError(f"degenerate block stack shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class BlockDiagMat:
    """Block-diagonal matrix: n blocks of shape (brows, bcols) on the diagonal."""

    blocks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "blocks", _as_block_buffer(self.blocks))

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def brows(self) -> int:
        return self.blocks.shape[1]

    @property
    def bcols(self) -> int:
        return self.blocks.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n * self.brows, self.n * self.bcols)

    @classmethod
    def identity(cls, n: int, c: int, scale: float = 1.0) -> "BlockDiagMat":
        return cls(np.broadcast_to(scale * np.eye(c), (n, c, c)).copy())

    def to_dense(self) -> np.ndarray:
        n, br, bc = self.blocks.shape
        out = np.zeros((n * br, n * bc))
        for i in range(n):
            out[i * br : (i + 1) * br, i * bc : (i + 1) * bc] = self.blocks[i]
        return out

    def transpose(self) -> "BlockDiagMat":
        return BlockDiagMat(self.blocks.transpose(0, 2, 1))

    def symmetrized(self) -> "BlockDiagMat":
        return BlockDiagMat(0.5 * (self.blocks + self.blocks.transpose(0, 2, 1)))


@dataclass(frozen=True)
class TallBlockMat:
    """n stacked (brows, cols) blocks; as a dense matrix, shape (n*brows, cols)."""

    blocks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "blocks", _as_block_buffer(self.blocks))

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def brows(self) -> int:
        return self.blocks.shape[1]

    @property
    def cols(self) -> int:
        return self.blocks.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n * self.brows, self.cols)

    def to_dense(self) -> np.ndarray:
        n, br, cols = self.blocks.shape
        return self.blocks.reshape(n * br, cols).copy()


def project_block_diag(m: np.ndarray, c: int) -> BlockDiagMat:
    """Extract the diagonal c x c blocks of a square matrix, discarding the rest.

    For a matrix that is already block diagonal with this block size, the
    projection acts as the identity.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    if c < 1 or m.shape[0] % c != 0:
        raise ShapeError(f"matrix size {m.shape[0]} not divisible by block size {c}")
    n = m.shape[0] // c
    idx = np.arange(n)
    blocks = m.reshape(n, c, n, c)[idx, :, idx, :]
    return BlockDiagMat(blocks)


def bd_matmul(a: BlockDiagMat, b: BlockDiagMat) -> BlockDiagMat:
    """Blockwise product: block i of the result is A_i @ B_i."""
    if a.n != b.n or a.bcols != b.brows:
        raise ShapeError(
            f"incompatible block shapes {a.blocks.shape} @ {b.blocks.shape}"
        )
    return BlockDiagMat(np.einsum("nij,njk->nik", a.blocks, b.blocks))


def bd_sandwich(a: BlockDiagMat, p: BlockDiagMat) -> BlockDiagMat:
    """Blockwise congruence: block i of the result is A_i @ P_i @ A_i^T."""
    if a.n != p.n or p.brows != p.bcols or a.bcols != p.brows:
        raise ShapeError(
            f"incompatible block shapes for sandwich: {a.blocks.shape}, {p.blocks.shape}"
        )
    return BlockDiagMat(np.einsum("nij,njk,nlk->nil", a.blocks, p.blocks, a.blocks))


def _chol_blocks(blocks: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        for i in range(blocks.shape[0]):
            try:
                np.linalg.cholesky(blocks[i])
            except np.linalg.LinAlgError:
                raise SingularBlockError(i) from None
        raise  # pragma: no cover - batched failure with no failing block


def _solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Batched forward substitution; L is (n, k, k) lower triangular, b is (n, k, m).
    k = L.shape[1]
    x = np.empty_like(b)
    for i in range(k):
        acc = b[:, i, :].copy()
        for j in range(i):
            acc -= L[:, i, j, None] * x[:, j, :]
        x[:, i, :] = acc / L[:, i, i, None]
    return x


def _solve_lower_t(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Batched back substitution for L^T x = b with L lower triangular.
    k = L.shape[1]
    x = np.empty_like(b)
    for i in range(k - 1, -1, -1):
        acc = b[:, i, :].copy()
        for j in range(i + 1, k):
            acc -= L[:, j, i, None] * x[:, j, :]
        x[:, i, :] = acc / L[:, i, i, None]
    return x


def bd_chol_solve(m: BlockDiagMat, rhs):
    """Solve M_i X_i = RHS_i per block via Cholesky factorization.

    ``rhs`` may be a :class:`BlockDiagMat` or a :class:`TallBlockMat`; the
    result has the type and shape of ``rhs``. Non-positive-definite blocks
    fail with :class:`SingularBlockError` naming the offending block: a
    non-PD block signals a modeling bug, not a numerical nuisance, so no
    pivoting or jitter is attempted here.
    """
    if m.brows != m.bcols:
        raise ShapeError("can only solve with square blocks")
    if not isinstance(rhs, (BlockDiagMat, TallBlockMat)):
        raise ShapeError(f"rhs must be BlockDiagMat or TallBlockMat, got {type(rhs)!r}")
    if rhs.n != m.n or rhs.brows != m.brows:
        raise ShapeError(
            f"rhs blocks {rhs.blocks.shape} incompatible with {m.blocks.shape}"
        )
    L = _chol_blocks(m.blocks)
    x = _solve_lower_t(L, _solve_lower(L, rhs.blocks))
    return type(rhs)(x)


def tall_reduce(t: TallBlockMat, w: BlockDiagMat) -> np.ndarray:
    """Accumulate sum_i T_i^T W_i T_i into a single (cols, cols) matrix.

    The sum runs over blocks in index order (a fixed, deterministic
    reduction); the result is symmetric whenever every W_i is.
    """
    if w.brows != w.bcols:
        raise ShapeError("weight blocks must be square")
    if t.n != w.n or t.brows != w.brows:
        raise ShapeError(
            f"incompatible block shapes for reduce: {t.blocks.shape}, {w.blocks.shape}"
        )
    return np.einsum("nbi,nbc,ncj->ij", t.blocks, w.blocks, t.blocks, optimize=True)


def _to_dense_operand(a) -> np.ndarray:
    if isinstance(a, (BlockDiagMat, TallBlockMat)):
        return a.to_dense()
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a matrix operand, got shape {arr.shape}")
    return arr


def fro_distance(a, b) -> float:
    """Frobenius norm of a - b; block operands compare by dense embedding."""
    if (
        isinstance(a, BlockDiagMat)
        and isinstance(b, BlockDiagMat)
        and a.blocks.shape == b.blocks.shape
    ):
        return float(np.linalg.norm(a.blocks - b.blocks))
    da, db = _to_dense_operand(a), _to_dense_operand(b)
    if da.shape != db.shape:
        raise ShapeError(f"shape mismatch {da.shape} vs {db.shape}")
    return float(np.linalg.norm(da - db))


def sym_min_eig(m: np.ndarray) -> float:
    """Smallest eigenvalue of a (symmetrized) matrix; used by PSD checks."""
    m = np.asarray(m, dtype=np.float64)
    return float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())
