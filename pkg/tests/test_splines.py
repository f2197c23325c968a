import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import cox_de_boor_deriv
from stiga.exceptions import ArgumentError, DomainError
from stiga.splines import (Basis1D, KnotVector, build_quadrature, eval_basis, greville_abscissae, make_space,
                           uniform_knots)


@st.composite
def knot_vectors(draw, max_degree=5):
    p = draw(st.integers(0, max_degree))
    n_inner = draw(st.integers(0, 6))
    inner = sorted(draw(st.lists(st.floats(0.05, 0.95), min_size=n_inner, max_size=n_inner)))
    # cap multiplicities at p so the basis stays continuous enough to be interesting
    knots = [0.0] * (p + 1) + inner + [1.0] * (p + 1)
    vals, counts = np.unique(inner, return_counts=True)
    if np.any(counts > max(p, 1)):
        inner = list(vals)
        knots = [0.0] * (p + 1) + inner + [1.0] * (p + 1)
    return KnotVector(p, knots)


def test_endpoint_interpolation_single_element():
    b = Basis1D(uniform_knots(2, 1))
    np.testing.assert_array_equal(eval_basis(b, [0.0])[0, :, 0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(eval_basis(b, [1.0])[0, :, 0], [0.0, 0.0, 1.0])


def test_values_against_recursive_oracle_frozen():
    b = Basis1D(KnotVector(2, [0, 0, 0, 0.5, 1, 1, 1]))
    tab = eval_basis(b, [0.25], 2)[0]
    # recursive Cox-de Boor oracle, frozen
    np.testing.assert_allclose(tab[:, 0], [0.25, 0.625, 0.125, 0.0], atol=1e-15)
    np.testing.assert_allclose(tab[:, 1], [-2.0, 1.0, 1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(tab[:, 2], [8.0, -12.0, 4.0, 0.0], atol=1e-13)


@given(knot_vectors(), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6))
def test_matches_recursive_oracle(kv, pts):
    b = Basis1D(kv)
    nd = min(kv.degree, 2)
    tab = eval_basis(b, pts, nd)
    for q, x in enumerate(pts):
        # derivatives are one-sided at knots; compare away from breakpoints
        near_knot = np.min(np.abs(kv.breakpoints - x)) < 1e-9
        for i in range(b.m):
            ref = cox_de_boor_deriv(kv.knots, kv.degree, i, x, 0)
            assert tab[q, i, 0] == pytest.approx(ref, abs=1e-12)
            if not near_knot:
                for r in range(1, nd + 1):
                    ref = cox_de_boor_deriv(kv.knots, kv.degree, i, x, r)
                    scale = max(1.0, abs(ref), 1.0 / np.min(np.diff(kv.breakpoints)) ** r)
                    assert tab[q, i, r] == pytest.approx(ref, abs=1e-9 * scale)


@given(knot_vectors(), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10))
def test_partition_of_unity_and_local_support(kv, pts):
    vals = eval_basis(Basis1D(kv), pts)[:, :, 0]
    np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-13)
    assert np.all(vals >= -1e-15)
    assert np.all((np.abs(vals) > 0).sum(axis=1) <= kv.degree + 1)


@given(knot_vectors(max_degree=4), st.floats(0.0, 1.0))
def test_derivatives_of_partition_vanish(kv, x):
    nd = min(kv.degree, 2)
    if nd == 0:
        return
    tab = eval_basis(Basis1D(kv), [x], nd)[0]
    h = np.min(np.diff(kv.breakpoints))
    for r in range(1, nd + 1):
        assert abs(tab[:, r].sum()) <= 1e-8 / h ** r


def test_first_derivative_finite_difference():
    b = Basis1D(uniform_knots(3, 4))
    x = np.array([0.13, 0.41, 0.77])
    h = 1e-6
    d = eval_basis(b, x, 1)[:, :, 1]
    fd = (eval_basis(b, x + h)[:, :, 0] - eval_basis(b, x - h)[:, :, 0]) / (2 * h)
    np.testing.assert_allclose(d, fd, atol=1e-7)


def test_evaluation_errors():
    b = Basis1D(uniform_knots(2, 3))
    with pytest.raises(DomainError):
        eval_basis(b, [1.2])
    with pytest.raises(DomainError):
        eval_basis(b, [-0.1])
    with pytest.raises(ArgumentError):
        eval_basis(Basis1D(uniform_knots(1, 3)), [0.5], 2)
    with pytest.raises(ArgumentError):
        eval_basis(b, [0.5], 3)


@pytest.mark.parametrize("knots, p", [
    ([0, 0, 0.5, 0.4, 1, 1], 1),  # decreasing
    ([0, 0.1, 0.5, 1, 1], 1),  # not open at 0
    ([0, 0, 0, 0.5, 1, 1, 1], 1),  # end multiplicity too high
    ([0, 0, 2], 1),  # outside [0, 1]
])
def test_knot_vector_validation(knots, p):
    with pytest.raises(ArgumentError):
        KnotVector(p, knots)


def test_knot_vector_properties():
    kv = KnotVector(2, [0, 0, 0, 0.25, 0.25, 0.5, 1, 1, 1])
    assert kv.m == 6
    assert kv.n_elements == 3
    assert kv.meshsize == pytest.approx(0.5)
    assert kv.quasi_uniformity() == pytest.approx(0.5)
    assert kv.max_interior_multiplicity() == 2
    assert uniform_knots(3, 5).max_interior_multiplicity() == 1


def test_greville_points():
    b = Basis1D(KnotVector(2, [0, 0, 0, 0.5, 1, 1, 1]))
    np.testing.assert_allclose(greville_abscissae(b), [0.0, 0.25, 0.75, 1.0])
    # linear functions are reproduced by Greville coefficients
    b = Basis1D(uniform_knots(3, 5))
    x = np.linspace(0, 1, 17)
    np.testing.assert_allclose(eval_basis(b, x)[:, :, 0] @ greville_abscissae(b), x, atol=1e-14)


@pytest.mark.parametrize("q", [1, 2, 3, 4, 5])
def test_gauss_exactness_on_monomials(q):
    quad = build_quadrature(KnotVector(1, [0, 0, 0.3, 0.7, 1, 1]), q)
    assert np.all(quad.weights > 0)
    for e in range(quad.n_elements):
        lo, hi = quad.intervals[e]
        assert quad.weights[quad.element == e].sum() == pytest.approx(hi - lo, abs=1e-15)
    for k in range(2 * q):
        assert quad.weights @ quad.points ** k == pytest.approx(1.0 / (k + 1), rel=1e-13)
    # degree 2q is not integrated exactly
    assert abs(quad.weights @ quad.points ** (2 * q) - 1.0 / (2 * q + 1)) > 1e-12


def test_space_sizes():
    space = make_space(3, 2, [4, 5, 6], 2)
    assert space.n_space == (4 + 3 - 2, 5 + 3 - 2)
    assert space.n_t == 6 + 2 - 1
    assert space.N_s == 5 * 6
    assert space.N_dof == space.N_s * space.n_t


@given(st.integers(2, 4), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3))
def test_colexicographic_bijection(p_s, p_t, n_el, dim):
    space = make_space(p_s, p_t, n_el, dim)
    flat = np.arange(space.N_dof)
    multi = space.multi_index(flat)
    np.testing.assert_array_equal(space.flat_index(multi), flat)
    # direction 1 runs fastest, time slowest
    if space.N_dof > 1:
        assert multi[0][1] == (1 if space.shape[0] > 1 else 0)
    assert multi[-1][space.N_s - 1] == 0
    if space.n_t > 1:
        assert multi[-1][space.N_s] == 1


def test_embed_restrict_roundtrip(rng):
    space = make_space(2, 2, 3, 2)
    v = rng.standard_normal(space.N_dof)
    lifting = rng.standard_normal(space.full_shape)
    lifting[space.free_slices()] = 0.0
    full = space.embed(v, lifting)
    np.testing.assert_array_equal(space.restrict(full), v)
    np.testing.assert_array_equal(full[0], lifting[0])
    np.testing.assert_array_equal(full[..., 0], lifting[..., 0])
