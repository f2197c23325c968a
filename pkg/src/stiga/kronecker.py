"""Sums of Kronecker products applied without forming them.

Vectors are colexicographic: for a term ``T (x) S`` with ``S`` acting on
space and ``T`` on time, ``v`` reshapes (C order) to ``X[i_t, i_s]`` and
``(T (x) S) v = vec(S V T^T)`` becomes ``T @ X @ S^T``.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp

from .exceptions import ArgumentError


class FlopCounter:
    """Tallies floating point operations (a multiply-add counts as 2)."""

    def __init__(self):
        self.counts = defaultdict(int)

    def add(self, key: str, n) -> None:
        self.counts[key] += int(n)

    def __getitem__(self, key):
        return self.counts.get(key, 0)

    def total(self) -> int:
        return sum(self.counts.values())

    def reset(self) -> None:
        self.counts.clear()

    def as_dict(self) -> dict:
        return dict(self.counts)


def mode_multiply(tensor: np.ndarray, M: np.ndarray, mode: int, counter: FlopCounter | None = None,
                  key: str = "mode_multiply") -> np.ndarray:
    """Contract ``M`` (rows: new extent, columns: old extent) against axis ``mode``.

    ``result[..., i, ...] = sum_j M[i, j] tensor[..., j, ...]``.  C-contiguous
    input is processed as a (before, n, after) stack so every product is a
    dense matrix-matrix multiplication.
    """
    X = np.asarray(tensor)
    M = np.asarray(M)
    if not 0 <= mode < X.ndim:
        raise ArgumentError(f"mode {mode} out of range for a {X.ndim}-mode tensor")
    if M.ndim != 2 or M.shape[1] != X.shape[mode]:
        raise ArgumentError(f"matrix with {M.shape} columns cannot act on extent {X.shape[mode]}")
    if counter is not None:
        counter.add(key, 2 * M.shape[0] * X.size)
    if not X.flags.c_contiguous and X.flags.f_contiguous:
        return mode_multiply(X.T, M, X.ndim - 1 - mode).T
    X = np.ascontiguousarray(X)
    shape = X.shape
    n = shape[mode]
    a = int(np.prod(shape[:mode], dtype=np.int64))
    b = int(np.prod(shape[mode + 1:], dtype=np.int64))
    if b == 1:
        Y = X.reshape(a, n) @ M.T
    elif a == 1:
        Y = M @ X.reshape(n, b)
    else:
        Y = np.matmul(M, X.reshape(a, n, b))
    return Y.reshape(shape[:mode] + (M.shape[0],) + shape[mode + 1:])


def kron_all(mats) -> np.ndarray:
    """Dense ``mats[0] (x) mats[1] (x) ...``."""
    mats = [m.toarray() if sp.issparse(m) else np.asarray(m) for m in mats]
    return reduce(np.kron, mats)


def kron_space(mats, sparse: bool = True):
    """``M_d (x) ... (x) M_1`` for per-direction factors ``mats = [M_1, ..., M_d]``."""
    if sparse:
        return reduce(lambda acc, m: sp.kron(m, acc, format="csr"), mats[1:], sp.csr_matrix(mats[0]))
    return kron_all(list(reversed(mats)))


def _diag(m) -> np.ndarray:
    return m.diagonal() if sp.issparse(m) else np.diag(np.asarray(m)).copy()


@dataclass(eq=False)
class KronSumOperator:
    """``sum_k T_k (x) S_k`` with time factors ``T_k`` and space factors ``S_k``.

    Time factors are dense; space factors may be sparse (CSR) or dense.
    """

    terms: list
    counter: FlopCounter = field(default_factory=FlopCounter)

    def __post_init__(self):
        if not self.terms:
            raise ArgumentError("operator needs at least one term")
        terms = []
        for T, S in self.terms:
            T = np.asarray(T, dtype=float)
            S = sp.csr_matrix(S) if sp.issparse(S) else np.asarray(S, dtype=float)
            terms.append((T, S))
        shapes = {(T.shape, S.shape) for T, S in terms}
        if len(shapes) != 1:
            raise ArgumentError(f"inconsistent term shapes: {shapes}")
        self.terms = terms
        (tshape, sshape), = shapes
        self.time_shape, self.space_shape = tshape, sshape
        self._transposed = None

    @property
    def shape(self) -> tuple:
        return (self.time_shape[0] * self.space_shape[0], self.time_shape[1] * self.space_shape[1])

    def _apply_terms(self, terms, v, n_t, N_s, key):
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.size != n_t * N_s:
            raise ArgumentError(f"vector of length {v.size} does not match operator size {n_t * N_s}")
        X = v.reshape(n_t, N_s)
        out = None
        for T, S in terms:
            Z = S @ X.T  # (N_s', n_t)
            Y = T @ Z.T  # (n_t', N_s')
            nnz = S.nnz if sp.issparse(S) else S.size
            self.counter.add(key, 2 * nnz * n_t + 2 * T.shape[0] * T.shape[1] * S.shape[0])
            out = Y if out is None else out + Y
        return np.ascontiguousarray(out).ravel()

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self._apply_terms(self.terms, v, self.time_shape[1], self.space_shape[1], "apply")

    __call__ = apply

    def matvec(self, v):
        return self.apply(v)

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        if self._transposed is None:
            self._transposed = [(np.ascontiguousarray(T.T), S.T.tocsr() if sp.issparse(S) else np.ascontiguousarray(S.T))
                                for T, S in self.terms]
        return self._apply_terms(self._transposed, v, self.time_shape[0], self.space_shape[0], "apply_transpose")

    def diagonal(self) -> np.ndarray:
        """Diagonal, computed from the factor diagonals (square operators only)."""
        out = 0.0
        for T, S in self.terms:
            out = out + np.outer(_diag(T), _diag(S))
        return np.ravel(out)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for T, S in self.terms:
            out += np.kron(T, S.toarray() if sp.issparse(S) else S)
        return out

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        def asym(m):
            if sp.issparse(m):
                diff = abs(m - m.T)
                return (diff.max() if diff.nnz else 0.0), abs(m).max()
            return np.abs(m - m.T).max(), np.abs(m).max()

        for T, S in self.terms:
            if T.shape[0] != T.shape[1] or S.shape[0] != S.shape[1]:
                return False
            for m in (T, S):
                a, scale = asym(m)
                if a > tol * max(scale, 1.0):
                    return False
        return True
