"""Structured square matrices and the square-root propagation kernel.

Covariance square roots live in one of three representations: a single
dense matrix, a stack of equal-size diagonal blocks, or a Kronecker
product with a shared left factor. Square roots are general square
matrices (only sqrt @ sqrt.T is promised, not triangularity).
"""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass(frozen=True)
class Dense:
    """A plain n x n matrix."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {entries.shape}")
        object.__setattr__(self, "entries", entries)

    @property
    def dims(self):
        return self.entries.shape

    def to_dense(self):
        return np.array(self.entries)


@dataclasses.dataclass(frozen=True)
class BlockDiagonal:
    """d diagonal blocks of equal size r x r, stored stacked as (d, r, r)."""

    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ValueError(f"expected (d, r, r) blocks, got shape {blocks.shape}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def num_blocks(self):
        return self.blocks.shape[0]

    @property
    def block_size(self):
        return self.blocks.shape[1]

    @property
    def dims(self):
        n = self.blocks.shape[0] * self.blocks.shape[1]
        return (n, n)

    def to_dense(self):
        d, r, _ = self.blocks.shape
        out = np.zeros((d * r, d * r))
        for i in range(d):
            out[i * r : (i + 1) * r, i * r : (i + 1) * r] = self.blocks[i]
        return out


@dataclasses.dataclass(frozen=True)
class Kronecker:
    """kron(left, right) with left d x d and right r x r, never materialized.

    The left factor is stored by reference and shared across states; filter
    steps only ever replace the right factor.
    """

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        for name, mat in (("left", left), ("right", right)):
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} factor must be square, got shape {mat.shape}")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def dims(self):
        n = self.left.shape[0] * self.right.shape[0]
        return (n, n)

    def to_dense(self):
        return np.kron(self.left, self.right)


StructuredMatrix = Dense | BlockDiagonal | Kronecker


def apply(mat: StructuredMatrix, vec: np.ndarray) -> np.ndarray:
    """Matrix-vector product without materializing structured representations.

    The Kronecker product uses the reshape identity
    kron(A, B) @ vec(V) = vec(A @ V @ B.T) for V of shape (d, r) flattened
    row-major, costing O(d r (d + r)) instead of O(d^2 r^2).
    """
    vec = np.asarray(vec, dtype=float)
    n = mat.dims[0]
    if vec.shape != (n,):
        raise ValueError(f"matrix has dim {n} but vector has shape {vec.shape}")
    if isinstance(mat, Dense):
        return mat.entries @ vec
    if isinstance(mat, BlockDiagonal):
        d, r, _ = mat.blocks.shape
        return np.einsum("ijk,ik->ij", mat.blocks, vec.reshape(d, r)).reshape(-1)
    d = mat.left.shape[0]
    r = mat.right.shape[0]
    grid = vec.reshape(d, r)
    return (mat.left @ grid @ mat.right.T).reshape(-1)


def gram_sqrt_of_stack(top: np.ndarray, bottom: np.ndarray) -> np.ndarray:
    """Upper-triangular R with R.T @ R = top.T @ top + bottom.T @ bottom.

    The R factor of the orthogonal-triangular decomposition of the vertical
    stack [top; bottom]. Any valid R (sign-flipped rows included) represents
    the same Gram matrix.
    """
    top = np.atleast_2d(np.asarray(top, dtype=float))
    bottom = np.atleast_2d(np.asarray(bottom, dtype=float))
    if top.shape[1] != bottom.shape[1]:
        raise ValueError(
            f"column mismatch: top has {top.shape[1]}, bottom has {bottom.shape[1]}"
        )
    n = top.shape[1]
    if top.shape[0] + bottom.shape[0] < n:
        raise ValueError("stack has fewer rows than columns; Gram factor would be rank-deficient")
    stacked = np.concatenate([top, bottom], axis=0)
    if not np.all(np.isfinite(stacked)):
        raise ValueError("non-finite entries in gram_sqrt_of_stack input")
    return np.linalg.qr(stacked, mode="r")


def blockwise_gram_sqrt(tops: np.ndarray, bottoms: np.ndarray) -> np.ndarray:
    """Per-block gram_sqrt_of_stack over stacked (d, m, r) inputs.

    Blocks are independent; numpy's batched QR processes them in one call.
    The result is bitwise independent of block order.
    """
    tops = _stack_blocks(tops, "tops")
    bottoms = _stack_blocks(bottoms, "bottoms")
    if tops.shape[0] != bottoms.shape[0]:
        raise ValueError(
            f"block count mismatch: {tops.shape[0]} tops vs {bottoms.shape[0]} bottoms"
        )
    if tops.shape[2] != bottoms.shape[2]:
        raise ValueError(
            f"column mismatch: tops have {tops.shape[2]}, bottoms have {bottoms.shape[2]}"
        )
    stacked = np.concatenate([tops, bottoms], axis=1)
    if not np.all(np.isfinite(stacked)):
        raise ValueError("non-finite entries in blockwise_gram_sqrt input")
    return np.linalg.qr(stacked, mode="r")


def _stack_blocks(blocks, name):
    if isinstance(blocks, np.ndarray) and blocks.ndim == 3:
        return np.asarray(blocks, dtype=float)
    shapes = [np.shape(b) for b in blocks]
    for i, shape in enumerate(shapes):
        if len(shape) != 2 or shape != shapes[0]:
            raise ValueError(f"ragged {name}: block {i} has shape {shape}, block 0 has {shapes[0]}")
    return np.asarray(blocks, dtype=float)
