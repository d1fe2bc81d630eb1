"""Transforms, inversion and sensitivity of permutation-invariant coordinates."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import monomial_bracket, multisets, subset_convolution, vieta
from symlms.errors import IllConditioned, RepeatedRoot
from symlms.symcore import (
    ParameterSet,
    block_length,
    degree_projection,
    design_matrix,
    elementary_convolution,
    full_transform,
    invert_scalar,
    invert_vector,
    monomial_transform,
    naive_transform,
    projection_matrix,
    root_sensitivity,
    set_distance,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def collections(max_L=4, max_D=4):
    return st.tuples(st.integers(1, max_L), st.integers(1, max_D)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite)
    )


# --------------------------------------------------------------------------
# ParameterSet
# --------------------------------------------------------------------------


def test_parameter_set_equality_ignores_order():
    a = ParameterSet([[3, 4], [1, 2]])
    b = ParameterSet([[1, 2], [3, 4]])
    assert a == b and hash(a) == hash(b)
    np.testing.assert_array_equal(a.members, [[1, 2], [3, 4]])


def test_parameter_set_ties_broken_by_later_components():
    ps = ParameterSet([[1, 5], [1, 2], [0, 9]])
    np.testing.assert_array_equal(ps.members, [[0, 9], [1, 2], [1, 5]])


def test_parameter_set_rejects_nonfinite():
    with pytest.raises(ValueError):
        ParameterSet([[np.nan], [1.0]])


def test_set_distance_uses_best_matching():
    assert set_distance([[1, 2], [3, 4]], [[3, 4], [1, 2.5]]) == pytest.approx(0.5)


# --------------------------------------------------------------------------
# elementary convolution / full transform
# --------------------------------------------------------------------------


def test_degree_two_block_of_two_vectors():
    # (1 + 2t)(3 + 4t) = 3 + 10t + 8t^2
    np.testing.assert_array_equal(elementary_convolution([[1, 2], [3, 4]], 2), [3, 10, 8])


def test_degree_one_block_is_sum():
    np.testing.assert_array_equal(elementary_convolution([[1, 2], [3, 4]], 1), [4, 6])


def test_scalar_degree_two():
    assert elementary_convolution([1, 2, 3], 2)[0] == 11


def test_full_transform_scalar_matches_vieta():
    lam = np.concatenate(full_transform([1, 2, 3]))
    np.testing.assert_array_equal(lam, [6, 11, 6])
    np.testing.assert_allclose(lam, vieta([1, 2, 3]))


def test_full_transform_reordered_input():
    a = full_transform([3, 1, 2])
    b = full_transform([1, 2, 3])
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_full_transform_l4_d10_matches_subset_products():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(4, 10))
    blocks = full_transform(y)
    for l in range(1, 5):
        assert blocks[l - 1].shape == (block_length(10, l),)
        np.testing.assert_allclose(blocks[l - 1], subset_convolution(y, l), rtol=1e-12, atol=1e-12)
    # top degree is the single product y1*y2*y3*y4
    np.testing.assert_allclose(blocks[3], np.convolve(np.convolve(y[0], y[1]), np.convolve(y[2], y[3])), atol=1e-12)


def test_full_transform_rejects_empty():
    with pytest.raises(ValueError):
        full_transform(np.zeros((0, 2)))


def test_elementary_convolution_degree_out_of_range():
    with pytest.raises(ValueError):
        elementary_convolution([[1, 2]], 2)


@given(collections(), st.randoms(use_true_random=False))
@settings(max_examples=200, deadline=None)
def test_permutation_invariance_is_bitwise(y, rnd):
    order = list(range(y.shape[0]))
    rnd.shuffle(order)
    for a, b in zip(full_transform(y), full_transform(y[order])):
        assert a.tobytes() == b.tobytes()


@given(collections())
@settings(max_examples=150, deadline=None)
def test_full_transform_matches_subset_enumeration(y):
    for l, block in enumerate(full_transform(y), start=1):
        np.testing.assert_allclose(block, subset_convolution(y, l), rtol=1e-9, atol=1e-9)


@given(arrays(np.float64, st.integers(1, 5), elements=finite), st.floats(-3, 3))
@settings(max_examples=200, deadline=None)
def test_scalar_homogeneity(theta, c):
    base = np.concatenate(full_transform(theta))
    scaled = np.concatenate(full_transform(c * theta))
    # error is measured against the sum of absolute products, which bounds cancellation
    mag = np.concatenate(full_transform(np.abs(c * theta)))
    for l in range(1, theta.size + 1):
        ref = c**l * base[l - 1]
        assert abs(scaled[l - 1] - ref) <= 1e-12 * max(1.0, mag[l - 1])


def test_scalar_homogeneity_tight_on_exact_inputs():
    # dyadic values keep every product exact, so the bound 1e-12 applies verbatim
    rng = np.random.default_rng(0)
    for _ in range(200):
        theta = rng.integers(-8, 9, size=rng.integers(1, 6)) / 4.0
        c = rng.integers(-8, 9) / 2.0
        base = np.concatenate(full_transform(theta))
        scaled = np.concatenate(full_transform(c * theta))
        for l in range(1, theta.size + 1):
            ref = c**l * base[l - 1]
            assert abs(scaled[l - 1] - ref) <= 1e-12 * (1 + abs(ref))


# --------------------------------------------------------------------------
# monomial transform and projection
# --------------------------------------------------------------------------


def test_monomial_bracket_single_surviving_product():
    theta = np.array([[1, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    eta3 = monomial_transform(theta)[2]
    idx = multisets(3, 3).index((0, 0, 1))
    assert eta3[idx] == 1.0


def test_monomial_scalar_case_is_elementary_symmetric():
    theta = np.array([2.0, -1.0, 3.0, 0.5])
    eta = monomial_transform(theta[:, None])
    np.testing.assert_allclose([e[0] for e in eta], vieta(theta))


def test_monomial_pairwise_products_of_first_component():
    rng = np.random.default_rng(1)
    theta = rng.normal(size=(3, 3))
    idx = multisets(3, 2).index((0, 0))
    expected = sum(theta[i, 0] * theta[j, 0] for i, j in itertools.combinations(range(3), 2))
    assert monomial_transform(theta)[1][idx] == pytest.approx(expected)


@given(collections(max_L=4, max_D=3))
@settings(max_examples=100, deadline=None)
def test_monomial_transform_matches_bracket_oracle(theta):
    L, D = theta.shape
    eta = monomial_transform(theta)
    for l in range(1, L + 1):
        ref = [monomial_bracket(theta, mu) for mu in multisets(D, l)]
        np.testing.assert_allclose(eta[l - 1], ref, rtol=1e-9, atol=1e-9)


def test_degree_projection_groups_by_total_degree():
    eta = np.arange(1.0, len(multisets(3, 3)) + 1)
    lam = degree_projection(eta, 3, 3)
    ms = multisets(3, 3)
    # 1-based position 3 = brackets [1,1,3] + [1,2,2]
    assert lam[2] == eta[ms.index((0, 0, 2))] + eta[ms.index((0, 1, 1))]


def test_degree_projection_is_reindexing_for_two_components():
    for l in range(1, 6):
        P = projection_matrix(2, l)
        assert P.shape == (l + 1, l + 1)
        np.testing.assert_array_equal(P, np.eye(l + 1))


def test_degree_projection_scalar_case():
    assert degree_projection([2.5], 1, 3)[0] == 2.5


@given(collections())
@settings(max_examples=150, deadline=None)
def test_projection_consistency(theta):
    eta = monomial_transform(theta)
    L, D = theta.shape
    for l in range(1, L + 1):
        ref = elementary_convolution(theta, l)
        np.testing.assert_allclose(degree_projection(eta[l - 1], D, l), ref, atol=1e-12 * (1 + np.abs(ref).max()))


# --------------------------------------------------------------------------
# design matrix
# --------------------------------------------------------------------------


def test_design_matrix_scalar_is_power():
    for l in range(1, 5):
        np.testing.assert_allclose(design_matrix([[1.7]], l), [[1.7**l]])


def test_design_matrix_identity_columns_are_one_hot():
    D, l = 4, 3
    A = design_matrix(np.eye(D), l)
    for c, mu in enumerate(multisets(D, l)):
        e = np.zeros(block_length(D, l))
        e[sum(mu)] = 1.0
        np.testing.assert_array_equal(A[:, c], e)


def test_design_matrix_two_by_two_direct_products():
    rng = np.random.default_rng(2)
    psi = rng.normal(size=(2, 2))
    theta = rng.normal(size=(2, 2))
    lhs = np.convolve(psi @ theta[0], psi @ theta[1])
    rhs = design_matrix(psi, 2) @ monomial_transform(theta)[1]
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    assert design_matrix(psi, 2).shape == (3, 3)


def test_regression_identity_thousand_draws():
    rng = np.random.default_rng(1234)
    worst = 0.0
    for _ in range(1000):
        L, D = rng.integers(1, 5, size=2)
        psi = rng.normal(size=(D, D))
        theta = rng.normal(size=(L, D))
        z = full_transform(theta @ psi.T)
        eta = monomial_transform(theta)
        for l in range(1, L + 1):
            pred = design_matrix(psi, l) @ eta[l - 1]
            worst = max(worst, np.abs(z[l - 1] - pred).max() / (1 + np.abs(z[l - 1]).max()))
    assert worst <= 1e-10


@given(st.integers(1, 6))
def test_design_matrix_square_for_two_components(l):
    A = design_matrix(np.random.default_rng(l).normal(size=(2, 2)), l)
    assert A.shape == (l + 1, l + 1)


def test_design_matrix_rejects_non_square():
    with pytest.raises(ValueError):
        design_matrix(np.ones((2, 3)), 1)


# --------------------------------------------------------------------------
# inversion
# --------------------------------------------------------------------------


def test_invert_scalar_three_factors():
    inv = invert_scalar([6, 11, 6])
    np.testing.assert_allclose(inv.theta.members[:, 0], [1, 2, 3], atol=1e-12)
    assert not inv.has_complex


def test_invert_scalar_zeros():
    np.testing.assert_array_equal(invert_scalar([0, 0, 0]).theta.members[:, 0], [0, 0, 0])


def test_invert_scalar_complex_pair_reports_real_parts():
    inv = invert_scalar([0, 1, 0])
    np.testing.assert_allclose(inv.theta.members[:, 0], [0, 0, 0], atol=1e-12)
    assert inv.has_complex and inv.complex_mask.sum() == 2
    np.testing.assert_allclose(sorted(np.abs(inv.factors.imag)), [0, 1, 1], atol=1e-12)


def test_invert_scalar_rejects_nonfinite():
    with pytest.raises(ValueError):
        invert_scalar([1.0, np.inf])


def test_invert_vector_worked_two_by_two():
    blocks = full_transform([[1, 2], [3, 4]])
    np.testing.assert_array_equal(blocks[0], [4, 6])
    inv = invert_vector(blocks)
    np.testing.assert_allclose(inv.theta.members, [[1, 2], [3, 4]], atol=1e-12)


def test_invert_vector_scalar_reduces_to_invert_scalar():
    lam = vieta([-2.0, 5.0, 8.0])
    a = invert_vector([np.array([v]) for v in lam]).theta
    b = invert_scalar(lam).theta
    np.testing.assert_allclose(a.members, b.members, atol=1e-12)


def test_invert_vector_coincident_first_components():
    blocks = full_transform([[1.0, 2.0], [1.0, 5.0]])
    with pytest.raises(IllConditioned):
        invert_vector(blocks, refine=False)


def _separated(rng, L, D):
    first = np.cumsum(rng.uniform(0.5, 2.0, size=L)) - L
    theta = rng.normal(scale=2.0, size=(L, D))
    theta[:, 0] = rng.permutation(first)
    return theta


def test_round_trip_random_separated_sets():
    rng = np.random.default_rng(7)
    for _ in range(300):
        L, D = rng.integers(1, 5), rng.integers(1, 5)
        theta = _separated(rng, L, D)
        inv = invert_vector(full_transform(theta))
        assert set_distance(inv.theta.members, theta) <= 1e-9


@given(st.integers(2, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_round_trip_property(L, D, seed):
    theta = _separated(np.random.default_rng(seed), L, D)
    assert set_distance(invert_vector(full_transform(theta)).theta.members, theta) <= 1e-9


def test_refinement_reduces_error_under_perturbation():
    rng = np.random.default_rng(3)
    theta = np.array([[1, 3, 4, 5, 7], [2, 4, 5, 10, 8], [3, 1, 2, 7, 6], [6, 12, 18, 24, 36]], dtype=float)
    blocks = [b * (1 + 1e-9 * rng.normal(size=b.shape)) for b in full_transform(theta)]
    raw = set_distance(invert_vector(blocks, refine=False).theta.members, theta)
    ref = set_distance(invert_vector(blocks).theta.members, theta)
    assert ref <= raw


# --------------------------------------------------------------------------
# naive transform
# --------------------------------------------------------------------------


def test_naive_transform_per_component():
    np.testing.assert_array_equal(naive_transform([[1, 2], [3, 4]]), [[4, 3], [6, 8]])


def test_naive_transform_scalar_equals_full():
    np.testing.assert_array_equal(naive_transform([1.0, 2.0, 3.0])[0], np.concatenate(full_transform([1.0, 2.0, 3.0])))


def test_naive_transform_loses_row_pairing():
    np.testing.assert_array_equal(naive_transform([[1, 2], [3, 4]]), naive_transform([[1, 4], [3, 2]]))


# --------------------------------------------------------------------------
# root sensitivity
# --------------------------------------------------------------------------


def test_sensitivity_two_by_two():
    np.testing.assert_allclose(root_sensitivity([1.0, 2.0]), [[-1, 2], [1, -1]], atol=1e-14)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_sensitivity_general_two_factor_form(a, b):
    if abs(a - b) < 1e-3:
        return
    t1, t2 = sorted((a, b))
    J = root_sensitivity([t1, t2])
    expected = np.array([[t1 / (t1 - t2), t2 / (t2 - t1)], [1 / (t2 - t1), 1 / (t1 - t2)]])
    np.testing.assert_allclose(J, expected, rtol=1e-10, atol=1e-12)


def test_sensitivity_repeated_root():
    with pytest.raises(RepeatedRoot):
        root_sensitivity([1.0, 1.0 + 1e-12])


def test_sensitivity_matches_finite_differences():
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(100):
        L = rng.integers(2, 5)
        theta = np.sort(np.cumsum(rng.uniform(0.5, 2.0, size=L)) - L / 2)
        lam = vieta(theta)
        J = root_sensitivity(theta)
        fd = np.empty((L, L))
        for m in range(L):
            up, dn = lam.copy(), lam.copy()
            up[m] += h
            dn[m] -= h
            fd[m] = (np.sort(-np.roots(np.r_[1, up]).real) - np.sort(-np.roots(np.r_[1, dn]).real)) / (2 * h)
        rel = np.abs(fd - J) / np.maximum(np.abs(J), 1e-3)
        assert rel.max() < 1e-5
