import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdkf.blockstruct import (
    BlockDiagMat,
    TallBlockMat,
    bd_chol_solve,
    bd_sandwich,
    fro_distance,
    project_block_diag,
    tall_reduce,
)
from bdkf.errors import ShapeError, SingularBlockError

REL_TOL = 1e-12
ABS_FLOOR = 1e-14


def close(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) <= max(REL_TOL * np.linalg.norm(b), ABS_FLOOR)


def random_psd(rng, k, scale=1.0):
    a = rng.standard_normal((k, k))
    return scale * (a @ a.T) + 0.1 * np.eye(k)


class TestProjectBlockDiag:
    def test_scalar_blocks(self):
        out = project_block_diag(np.array([[1.0, 2.0], [3.0, 4.0]]), 1)
        assert out.blocks.shape == (2, 1, 1)
        assert out.blocks[0, 0, 0] == 1.0
        assert out.blocks[1, 0, 0] == 4.0

    def test_identity_on_block_diagonal_input(self):
        rng = np.random.default_rng(1)
        blocks = rng.standard_normal((3, 2, 2))
        m = BlockDiagMat(blocks).to_dense()
        out = project_block_diag(m, 2)
        assert np.array_equal(out.blocks, blocks)

    def test_psd_blocks_stay_psd(self):
        rng = np.random.default_rng(2)
        m = random_psd(rng, 6)
        out = project_block_diag(m, 2)
        for block in out.blocks:
            assert np.allclose(block, block.T)
            w = np.linalg.eigvalsh(block)
            assert w.min() >= -1e-12 * np.linalg.norm(block)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            project_block_diag(np.zeros((3, 4)), 1)
        with pytest.raises(ShapeError):
            project_block_diag(np.zeros((4, 4)), 3)

    @settings(deadline=None, max_examples=40)
    @given(n=st.integers(1, 6), c=st.integers(1, 3), seed=st.integers(0, 2**31))
    def test_idempotent(self, n, c, seed):
        rng = np.random.default_rng(seed)
        m = rng.standard_normal((n * c, n * c))
        once = project_block_diag(m, c)
        twice = project_block_diag(once.to_dense(), c)
        assert np.array_equal(once.blocks, twice.blocks)


class TestBdSandwich:
    def test_identity_leaves_p(self):
        rng = np.random.default_rng(3)
        p = BlockDiagMat(rng.standard_normal((4, 2, 2)))
        eye = BlockDiagMat.identity(4, 2)
        assert close(bd_sandwich(eye, p).blocks, p.blocks)

    def test_single_block_matches_dense(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((1, 3, 3))
        p = rng.standard_normal((1, 3, 3))
        out = bd_sandwich(BlockDiagMat(a), BlockDiagMat(p))
        assert close(out.blocks[0], a[0] @ p[0] @ a[0].T)

    def test_matches_dense_embedding(self):
        rng = np.random.default_rng(5)
        a = BlockDiagMat(rng.standard_normal((3, 2, 2)))
        p = BlockDiagMat(rng.standard_normal((3, 2, 2)))
        dense = a.to_dense() @ p.to_dense() @ a.to_dense().T
        assert close(bd_sandwich(a, p).to_dense(), dense)

    def test_shape_mismatch(self):
        a = BlockDiagMat(np.zeros((2, 2, 2)))
        p = BlockDiagMat(np.zeros((3, 2, 2)))
        with pytest.raises(ShapeError):
            bd_sandwich(a, p)


class TestBdCholSolve:
    def test_identity(self):
        rhs = TallBlockMat(np.arange(12.0).reshape(3, 2, 2))
        out = bd_chol_solve(BlockDiagMat.identity(3, 2), rhs)
        assert isinstance(out, TallBlockMat)
        assert close(out.blocks, rhs.blocks)

    def test_scaled_identity(self):
        m = BlockDiagMat.identity(1, 2, scale=2.0)
        rhs = TallBlockMat(np.array([[[1.0], [1.0]]]))
        out = bd_chol_solve(m, rhs)
        assert close(out.blocks, [[[0.5], [0.5]]])

    def test_residual_random_pd(self):
        rng = np.random.default_rng(6)
        m = BlockDiagMat(np.stack([random_psd(rng, 3) for _ in range(4)]))
        rhs = BlockDiagMat(rng.standard_normal((4, 3, 3)))
        x = bd_chol_solve(m, rhs)
        for i in range(4):
            res = np.linalg.norm(m.blocks[i] @ x.blocks[i] - rhs.blocks[i])
            assert res <= 1e-10

    def test_non_pd_names_block(self):
        blocks = np.stack([np.eye(2), -np.eye(2), np.eye(2)])
        rhs = BlockDiagMat(np.zeros((3, 2, 2)))
        with pytest.raises(SingularBlockError) as err:
            bd_chol_solve(BlockDiagMat(blocks), rhs)
        assert err.value.block_index == 1
        assert "1" in str(err.value)

    @settings(deadline=None, max_examples=30)
    @given(n=st.integers(1, 5), k=st.integers(1, 3), seed=st.integers(0, 2**31))
    def test_reconstructs_rhs(self, n, k, seed):
        rng = np.random.default_rng(seed)
        m = BlockDiagMat(np.stack([random_psd(rng, k) for _ in range(n)]))
        rhs = TallBlockMat(rng.standard_normal((n, k, 2)))
        x = bd_chol_solve(m, rhs)
        recon = np.einsum("nij,njk->nik", m.blocks, x.blocks)
        assert np.linalg.norm(recon - rhs.blocks) <= 1e-10 * max(
            np.linalg.norm(rhs.blocks), 1.0
        )


class TestTallReduce:
    def test_zero_blocks(self):
        t = TallBlockMat(np.zeros((4, 2, 3)))
        w = BlockDiagMat.identity(4, 2)
        assert np.array_equal(tall_reduce(t, w), np.zeros((3, 3)))

    def test_single_block_dense(self):
        rng = np.random.default_rng(7)
        t = rng.standard_normal((1, 3, 2))
        w = rng.standard_normal((1, 3, 3))
        out = tall_reduce(TallBlockMat(t), BlockDiagMat(w))
        assert close(out, t[0].T @ w[0] @ t[0])

    def test_matches_dense_stacked(self):
        rng = np.random.default_rng(8)
        t = TallBlockMat(rng.standard_normal((5, 3, 2)))
        w = BlockDiagMat(rng.standard_normal((5, 3, 3)))
        dense = t.to_dense().T @ w.to_dense() @ t.to_dense()
        assert close(tall_reduce(t, w), dense)

    def test_matches_sequential_order(self):
        rng = np.random.default_rng(9)
        t = TallBlockMat(rng.standard_normal((8, 2, 3)))
        w = BlockDiagMat(np.stack([random_psd(rng, 2) for _ in range(8)]))
        seq = np.zeros((3, 3))
        for i in range(8):
            seq += t.blocks[i].T @ w.blocks[i] @ t.blocks[i]
        out = tall_reduce(t, w)
        assert np.linalg.norm(out - seq) <= 1e-12 * np.linalg.norm(seq)

    def test_symmetric_for_symmetric_weights(self):
        rng = np.random.default_rng(10)
        t = TallBlockMat(rng.standard_normal((4, 2, 3)))
        w = BlockDiagMat(np.stack([random_psd(rng, 2) for _ in range(4)]))
        out = tall_reduce(t, w)
        assert close(out, out.T)


class TestFroDistance:
    def test_equal_is_zero(self):
        rng = np.random.default_rng(11)
        a = BlockDiagMat(rng.standard_normal((3, 2, 2)))
        assert fro_distance(a, a) == 0.0

    def test_diag_example(self):
        a = np.diag([1.0, 1.0])
        b = np.diag([0.0, 0.0])
        assert np.isclose(fro_distance(a, b), np.sqrt(2.0))

    def test_matches_entrywise_oracle(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal((5, 5))
        b = rng.standard_normal((5, 5))
        oracle = np.sqrt(np.sum((a - b) ** 2))
        assert np.isclose(fro_distance(a, b), oracle, rtol=1e-14)

    def test_block_vs_dense_embedding(self):
        rng = np.random.default_rng(13)
        a = BlockDiagMat(rng.standard_normal((3, 2, 2)))
        b = rng.standard_normal((6, 6))
        assert np.isclose(fro_distance(a, b), np.linalg.norm(a.to_dense() - b))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fro_distance(np.zeros((2, 2)), np.zeros((3, 3)))


@settings(deadline=None, max_examples=25)
@given(n=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_block_ops_match_dense_counterparts(n, seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, 4))
    a = BlockDiagMat(rng.standard_normal((n, c, c)))
    p = BlockDiagMat(np.stack([random_psd(rng, c) for _ in range(n)]))
    t = TallBlockMat(rng.standard_normal((n, c, 2)))

    sw = bd_sandwich(a, p).to_dense()
    sw_dense = a.to_dense() @ p.to_dense() @ a.to_dense().T
    assert np.linalg.norm(sw - sw_dense) <= 1e-12 * max(np.linalg.norm(sw_dense), 1e-14)

    tr = tall_reduce(t, p)
    tr_dense = t.to_dense().T @ p.to_dense() @ t.to_dense()
    assert np.linalg.norm(tr - tr_dense) <= 1e-12 * max(np.linalg.norm(tr_dense), 1e-14)

    x = bd_chol_solve(p, t).to_dense()
    x_dense = np.linalg.solve(p.to_dense(), t.to_dense())
    assert np.linalg.norm(x - x_dense) <= 1e-10 * max(np.linalg.norm(x_dense), 1e-14)
