"""Dense tensors and the multilinear algebra used throughout the package.

Storage convention: first index fastest ("Fortran" order).  With this
layout the mode-0 matricization is a plain reshape of the flat buffer and
``vectorize(t)`` equals the flat buffer itself.  Modes are 0-based, like
numpy axes.
"""
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class DenseTensor:
    """Order-D tensor stored as a flat float64 buffer, first index fastest."""

    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(p) for p in self.shape)
        if len(shape) < 1 or any(p < 1 for p in shape):
            raise ValueError(f"shape must be a non-empty tuple of positive ints, got {self.shape}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).ravel()
        if data.size != int(np.prod(shape)):
            raise ValueError(f"buffer of length {data.size} does not match shape {shape}")
        data.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array):
        array = np.asarray(array, dtype=np.float64)
        return cls(array.shape, array.reshape(-1, order="F"))

    @property
    def order(self):
        return len(self.shape)

    @property
    def array(self):
        """N-d view with the logical index order."""
        return self.data.reshape(self.shape, order="F")


@dataclass(frozen=True)
class FactorSet:
    """Factor matrices ``A_0, ..., A_{D-1}`` sharing a column count."""

    factors: tuple

    def __post_init__(self):
        factors = tuple(np.asarray(a, dtype=np.float64) for a in self.factors)
        if not factors:
            raise ValueError("at least one factor matrix is required")
        if any(a.ndim != 2 for a in factors):
            raise ValueError("factor matrices must be 2-d")
        ranks = {a.shape[1] for a in factors}
        if len(ranks) != 1:
            raise ValueError(f"factor matrices disagree on rank: {sorted(ranks)}")
        object.__setattr__(self, "factors", factors)

    @property
    def rank(self):
        return self.factors[0].shape[1]

    @property
    def shape(self):
        return tuple(a.shape[0] for a in self.factors)


def _as_array(t):
    if isinstance(t, DenseTensor):
        return t.array
    return np.asarray(t, dtype=np.float64)


def _check_mode(mode, order):
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for an order-{order} tensor")


def matricize(t, mode):
    """Mode-``mode`` unfolding, shape ``(p_mode, prod of the other dims)``.

    Columns are the mode fibers; the remaining indices are enumerated with
    the smallest mode fastest.
    """
    x = _as_array(t)
    _check_mode(mode, x.ndim)
    return np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1, order="F")


def inverse_matricize(m, mode, shape):
    """Fold a mode-``mode`` unfolding back into a tensor of ``shape``."""
    shape = tuple(shape)
    _check_mode(mode, len(shape))
    moved = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    return np.moveaxis(np.asarray(m).reshape(moved, order="F"), 0, mode)


def vectorize(t, mode=0):
    """Stack the columns of ``matricize(t, mode)``."""
    return matricize(t, mode).reshape(-1, order="F")


def kronecker(a, b):
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def khatri_rao(*matrices):
    """Column-wise Kronecker product ``M_0 ⊙ M_1 ⊙ ...``.

    The row index of the last matrix varies fastest, so
    ``khatri_rao(A_{D-1}, ..., A_0)`` matches the first-index-fastest
    vectorization.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    if not mats:
        raise ValueError("khatri_rao needs at least one matrix")
    if any(m.ndim != 2 for m in mats):
        raise ValueError("khatri_rao operands must be 2-d")
    ncol = mats[0].shape[1]
    if any(m.shape[1] != ncol for m in mats):
        raise ValueError(
            "khatri_rao column-count mismatch: " + ", ".join(str(m.shape[1]) for m in mats)
        )
    return reduce(lambda a, b: (a[:, None, :] * b[None, :, :]).reshape(-1, ncol), mats)


def hadamard(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def full_khatri_rao(factors, skip=None):
    """``A_{D-1} ⊙ ... ⊙ A_0`` over ``factors``, optionally omitting one mode.

    With every mode skipped (a single factor and ``skip=0``) the result is
    a ``1 × R`` row of ones, the empty Khatri-Rao product.
    """
    mats = [a for d, a in enumerate(factors) if d != skip]
    if not mats:
        return np.ones((1, np.asarray(factors[0]).shape[1]))
    return khatri_rao(*mats[::-1])


def cp_reconstruct(f, weights: Optional[Sequence[float]] = None):
    """Sum of rank-one tensors ``Σ_r w_r a_{0r} ∘ ... ∘ a_{D-1,r}``."""
    factors = f.factors if isinstance(f, FactorSet) else tuple(np.asarray(a, float) for a in f)
    rank = factors[0].shape[1]
    w = np.ones(rank) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (rank,):
        raise ValueError(f"weights must have length {rank}")
    flat = full_khatri_rao(factors) @ w
    return DenseTensor(tuple(a.shape[0] for a in factors), flat)


def frobenius_norm(t):
    x = _as_array(t)
    return float(np.sqrt(np.sum(x * x)))


def vec_axis(arr, axis, shape):
    """Unfold a length-P axis into ``shape`` (first index fastest), in place of ``axis``.

    Handy for batched arrays such as ``(G, P, R)`` where the middle axis is
    a vectorized tensor.
    """
    arr = np.asarray(arr)
    axis = axis % arr.ndim
    moved = np.moveaxis(arr, axis, -1)
    lead = moved.shape[:-1]
    out = moved.reshape(lead + tuple(shape)[::-1])
    nd = len(shape)
    perm = list(range(len(lead))) + [len(lead) + nd - 1 - i for i in range(nd)]
    out = out.transpose(perm)
    # move the unfolded block back to where the axis was
    src = list(range(len(lead), len(lead) + nd))
    dst = list(range(axis, axis + nd))
    return np.moveaxis(out, src, dst)


def flatten_axes(arr, first_axis, shape):
    """Inverse of :func:`vec_axis`: merge ``len(shape)`` axes starting at ``first_axis``."""
    arr = np.asarray(arr)
    nd = len(shape)
    moved = np.moveaxis(arr, list(range(first_axis, first_axis + nd)), list(range(arr.ndim - nd, arr.ndim)))
    lead = moved.shape[:-nd]
    rev = moved.transpose(list(range(len(lead))) + [arr.ndim - 1 - i for i in range(nd)])
    flat = rev.reshape(lead + (int(np.prod(shape)),))
    return np.moveaxis(flat, -1, first_axis)


def krank(a, tol=None):
    """Largest k such that every set of k columns of ``a`` is linearly independent."""
    from itertools import combinations

    a = np.asarray(a, dtype=np.float64)
    n = a.shape[1]
    k = 0
    for size in range(1, min(n, a.shape[0]) + 1):
        for cols in combinations(range(n), size):
            if np.linalg.matrix_rank(a[:, cols], tol=tol) < size:
                return k
        k = size
    return k
