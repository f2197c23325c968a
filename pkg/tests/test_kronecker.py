import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from stiga.exceptions import ArgumentError
from stiga.kronecker import FlopCounter, KronSumOperator, kron_all, kron_space, mode_multiply


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def test_identity_kronecker():
    op = KronSumOperator([(np.eye(3), np.eye(4))])
    v = np.arange(12.0)
    np.testing.assert_array_equal(op.apply(v), v)
    np.testing.assert_array_equal(op.to_dense(), np.eye(12))


@pytest.mark.parametrize("sparse", [False, True])
def test_sum_matches_dense(rng, sparse):
    terms = []
    for _ in range(3):
        S = _rand(rng, 6, 6)
        terms.append((_rand(rng, 4, 4), sp.csr_matrix(S) if sparse else S))
    op = KronSumOperator(terms)
    dense = sum(np.kron(T, S.toarray() if sparse else S) for T, S in terms)
    v = rng.standard_normal(24)
    np.testing.assert_allclose(op.apply(v), dense @ v, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(op.apply_transpose(v), dense.T @ v, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(op.to_dense(), dense, atol=1e-14)
    np.testing.assert_allclose(op.diagonal(), np.diag(dense), atol=1e-13)
    assert op.shape == (24, 24)


def test_rectangular_terms(rng):
    T, S = _rand(rng, 3, 5), _rand(rng, 2, 4)
    op = KronSumOperator([(T, S)])
    v = rng.standard_normal(20)
    np.testing.assert_allclose(op.apply(v), np.kron(T, S) @ v, atol=1e-13)
    w = rng.standard_normal(6)
    np.testing.assert_allclose(op.apply_transpose(w), np.kron(T, S).T @ w, atol=1e-13)
    assert not op.is_symmetric()


def test_symmetry_check(rng):
    A = _rand(rng, 4, 4)
    B = _rand(rng, 3, 3)
    assert KronSumOperator([(A + A.T, sp.csr_matrix(B + B.T))]).is_symmetric()
    assert not KronSumOperator([(A, B + B.T)]).is_symmetric()


def test_mode_multiply_identity_and_inverse(rng):
    X = rng.standard_normal((3, 4, 5))
    for mode in range(3):
        n = X.shape[mode]
        np.testing.assert_array_equal(mode_multiply(X, np.eye(n), mode), X)
        A = rng.standard_normal((n, n)) + n * np.eye(n)
        Y = mode_multiply(mode_multiply(X, A, mode), np.linalg.inv(A), mode)
        np.testing.assert_allclose(Y, X, atol=1e-12)


def test_mode_multiply_definition(rng):
    X = rng.standard_normal((3, 4, 5))
    M = rng.standard_normal((2, 4))
    np.testing.assert_allclose(mode_multiply(X, M, 1), np.einsum("ij,ajb->aib", M, X), atol=1e-13)
    # Fortran-ordered input takes the transposed path
    Xf = np.asfortranarray(X)
    np.testing.assert_allclose(mode_multiply(Xf, M, 1), np.einsum("ij,ajb->aib", M, X), atol=1e-13)


def test_sequential_mode_products_equal_kronecker(rng):
    """(A_3 (x) A_2 (x) A_1) vec(X) as one mode product per direction."""
    A = [rng.standard_normal((n, n)) for n in (2, 3, 4)]
    v = rng.standard_normal(24)
    X = v.reshape(4, 3, 2)  # slowest mode first
    Y = X
    for k, a in enumerate(A):
        Y = mode_multiply(Y, a, 2 - k)
    np.testing.assert_allclose(Y.ravel(), kron_all(A[::-1]) @ v, atol=1e-12)
    np.testing.assert_allclose(kron_space(A).toarray(), kron_all(A[::-1]), atol=1e-14)
    np.testing.assert_allclose(kron_space(A, sparse=False), kron_all(A[::-1]), atol=1e-14)


def test_kronecker_algebra(rng):
    A, B, C, D = (rng.standard_normal((3, 3)) for _ in range(4))
    np.testing.assert_allclose(np.kron(A, B) @ np.kron(C, D), np.kron(A @ C, B @ D), atol=1e-12)
    op = KronSumOperator([(A, B)])
    np.testing.assert_allclose(op.to_dense().T, np.kron(A.T, B.T), atol=1e-14)
    Ai, Bi = np.linalg.inv(A), np.linalg.inv(B)
    prod = KronSumOperator([(Ai, Bi)]).to_dense() @ op.to_dense()
    np.testing.assert_allclose(prod, np.eye(9), atol=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31 - 1))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    op = KronSumOperator([(_rand(rng, 3, 3), _rand(rng, 4, 4)), (_rand(rng, 3, 3), _rand(rng, 4, 4))])
    x, y = rng.standard_normal(12), rng.standard_normal(12)
    lhs = op.apply(a * x + b * y)
    rhs = a * op.apply(x) + b * op.apply(y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * (1 + np.abs(rhs).max()))


def test_flop_counter(rng):
    c = FlopCounter()
    X = rng.standard_normal((4, 5, 6))
    mode_multiply(X, rng.standard_normal((5, 5)), 1, c, "t")
    assert c["t"] == 2 * 5 * X.size
    mode_multiply(X, rng.standard_normal((4, 4)), 0, c, "t")
    assert c["t"] == 2 * (5 + 4) * X.size
    assert c.total() == c["t"] and c["other"] == 0
    assert c.as_dict() == {"t": 2 * (5 + 4) * X.size}
    c.reset()
    assert c.total() == 0
    op = KronSumOperator([(np.eye(2), np.eye(3))])
    op.apply(np.ones(6))
    assert op.counter["apply"] > 0


def test_argument_errors(rng):
    with pytest.raises(ArgumentError):
        KronSumOperator([])
    with pytest.raises(ArgumentError):
        KronSumOperator([(np.eye(2), np.eye(3)), (np.eye(3), np.eye(3))])
    op = KronSumOperator([(np.eye(2), np.eye(3))])
    with pytest.raises(ArgumentError):
        op.apply(np.ones(5))
    with pytest.raises(ArgumentError):
        mode_multiply(np.ones((2, 3)), np.eye(2), 1)
    with pytest.raises(ArgumentError):
        mode_multiply(np.ones((2, 3)), np.eye(2), 2)
