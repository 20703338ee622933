"""Structured-matrix representations against their densified counterparts."""

import numpy as np
import pytest

from odefilter import structmat


def random_structured(kind, d, r, rng):
    if kind == "dense":
        return structmat.Dense(rng.standard_normal((d * r, d * r)))
    if kind == "block":
        return structmat.BlockDiagonal(rng.standard_normal((d, r, r)))
    return structmat.Kronecker(rng.standard_normal((d, d)), rng.standard_normal((r, r)))


@pytest.mark.parametrize("kind", ["dense", "block", "kronecker"])
@pytest.mark.parametrize("d,r", [(1, 1), (2, 3), (5, 4)])
def test_apply_matches_densified_product(kind, d, r):
    rng = np.random.default_rng(100 + d * r)
    mat = random_structured(kind, d, r, rng)
    vec = rng.standard_normal(d * r)
    np.testing.assert_allclose(structmat.apply(mat, vec), mat.to_dense() @ vec, rtol=1e-13)


@pytest.mark.parametrize("kind", ["dense", "block", "kronecker"])
def test_dims_match_densified_shape(kind):
    rng = np.random.default_rng(7)
    mat = random_structured(kind, 3, 2, rng)
    assert mat.dims == mat.to_dense().shape == (6, 6)


def test_apply_rejects_wrong_length():
    mat = structmat.BlockDiagonal(np.zeros((2, 3, 3)))
    with pytest.raises(ValueError, match="dim 6"):
        structmat.apply(mat, np.zeros(5))


def test_kronecker_apply_uses_reshape_identity():
    rng = np.random.default_rng(3)
    left = rng.standard_normal((4, 4))
    right = rng.standard_normal((3, 3))
    grid = rng.standard_normal((4, 3))
    out = structmat.apply(structmat.Kronecker(left, right), grid.reshape(-1))
    np.testing.assert_allclose(out.reshape(4, 3), left @ grid @ right.T, rtol=1e-13)


def test_block_diagonal_densify_layout():
    blocks = np.array([[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]])
    dense = structmat.BlockDiagonal(blocks).to_dense()
    np.testing.assert_array_equal(dense[:2, :2], blocks[0])
    np.testing.assert_array_equal(dense[2:, 2:], blocks[1])
    np.testing.assert_array_equal(dense[:2, 2:], 0.0)


@pytest.mark.parametrize("shape", [(3,), (2, 3, 4), (4, 3)])
def test_dense_rejects_non_square(shape):
    with pytest.raises(ValueError):
        structmat.Dense(np.zeros(shape))


def test_block_diagonal_rejects_bad_shapes():
    with pytest.raises(ValueError):
        structmat.BlockDiagonal(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        structmat.BlockDiagonal(np.zeros((2, 3, 4)))


def test_kronecker_rejects_non_square_factors():
    with pytest.raises(ValueError, match="left"):
        structmat.Kronecker(np.zeros((2, 3)), np.eye(2))
    with pytest.raises(ValueError, match="right"):
        structmat.Kronecker(np.eye(2), np.zeros((3, 2)))


@pytest.mark.parametrize("m_top,m_bottom,n", [(3, 3, 3), (5, 2, 4), (1, 6, 2)])
def test_gram_sqrt_reproduces_gram_matrix(m_top, m_bottom, n):
    rng = np.random.default_rng(m_top * 10 + n)
    top = rng.standard_normal((m_top, n))
    bottom = rng.standard_normal((m_bottom, n))
    r = structmat.gram_sqrt_of_stack(top, bottom)
    assert r.shape == (n, n)
    np.testing.assert_allclose(r.T @ r, top.T @ top + bottom.T @ bottom, atol=1e-12)
    # upper triangularity is what makes downstream solves cheap
    np.testing.assert_array_equal(np.tril(r, -1), 0.0)


def test_gram_sqrt_validates_input():
    with pytest.raises(ValueError, match="column mismatch"):
        structmat.gram_sqrt_of_stack(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ValueError, match="fewer rows"):
        structmat.gram_sqrt_of_stack(np.zeros((1, 4)), np.zeros((2, 4)))
    bad = np.full((3, 2), np.nan)
    with pytest.raises(ValueError, match="non-finite"):
        structmat.gram_sqrt_of_stack(bad, np.zeros((3, 2)))


def test_blockwise_gram_sqrt_matches_per_block_call():
    rng = np.random.default_rng(17)
    tops = rng.standard_normal((4, 3, 2))
    bottoms = rng.standard_normal((4, 2, 2))
    batched = structmat.blockwise_gram_sqrt(tops, bottoms)
    for i in range(4):
        single = structmat.gram_sqrt_of_stack(tops[i], bottoms[i])
        np.testing.assert_allclose(batched[i].T @ batched[i], single.T @ single, atol=1e-12)


def test_blockwise_gram_sqrt_validates_blocks():
    with pytest.raises(ValueError, match="block count mismatch"):
        structmat.blockwise_gram_sqrt(np.zeros((2, 3, 3)), np.zeros((3, 3, 3)))
    with pytest.raises(ValueError, match="column mismatch"):
        structmat.blockwise_gram_sqrt(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))
    with pytest.raises(ValueError, match="ragged tops"):
        structmat.blockwise_gram_sqrt([np.zeros((2, 2)), np.zeros((3, 2))], np.zeros((2, 2, 2)))
