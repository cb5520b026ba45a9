import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algebra.errors import ConvergenceError, RejectedInputError
from algebra.expectations import pinch
from algebra.projections import ProjectionSystem
from algebra.tracial import (
    SuperOperator,
    TracialAlgebra,
    identity_superoperator,
    named_rng,
    op_norm,
    random_element,
    superop_2to2_norm,
    trace_inner_product,
    two_norm,
)


def pinching(algebra, ranks):
    ps = ProjectionSystem.from_ranks(algebra, ranks).stack
    return SuperOperator(lambda x: pinch(ps, x), algebra, lambda x: pinch(ps, x), "E")


def test_normalized_trace_of_unit():
    for n in (1, 2, 5):
        assert TracialAlgebra(n).one().trace() == pytest.approx(1.0)


@pytest.mark.parametrize("n, entries, expected_two, expected_op", [
    (3, np.eye(3), 1.0, 1.0),
    (2, [[1, 0], [0, 0]], 1 / np.sqrt(2), 1.0),
    (2, [[1, 0], [0, -1]], 1.0, 1.0),
])
def test_two_and_operator_norms(n, entries, expected_two, expected_op):
    x = TracialAlgebra(n).element(np.asarray(entries, dtype=complex))
    assert two_norm(x) == pytest.approx(expected_two)
    assert op_norm(x) == pytest.approx(expected_op)


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_two_norm_is_dominated_by_operator_norm(n):
    algebra = TracialAlgebra(n)
    rng = np.random.default_rng(n)
    for _ in range(100):
        x = random_element(algebra, rng)
        assert two_norm(x) <= op_norm(x) + 1e-12


def test_random_elements_are_reproducible():
    algebra = TracialAlgebra(3)
    np.testing.assert_array_equal(random_element(algebra, 42).entries, random_element(algebra, 42).entries)
    assert not np.allclose(random_element(algebra, 42).entries, random_element(algebra, 43).entries)


def test_random_element_second_moment():
    algebra = TracialAlgebra(2)
    rng = np.random.default_rng(2024)
    mean = np.mean([two_norm(random_element(algebra, rng)) ** 2 for _ in range(1000)])
    assert mean == pytest.approx(2.0, rel=0.1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 5))
def test_trace_is_tracial(seed, n):
    algebra = TracialAlgebra(n)
    rng = np.random.default_rng(seed)
    x, y = random_element(algebra, rng), random_element(algebra, rng)
    assert abs((x @ y).trace() - (y @ x).trace()) < 1e-12 * (1 + two_norm(x) * two_norm(y)) * n


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_inner_product_is_sesquilinear(seed):
    algebra = TracialAlgebra(3)
    rng = np.random.default_rng(seed)
    x, y, z = (random_element(algebra, rng) for _ in range(3))
    c = 0.3 - 1.7j
    assert trace_inner_product(x, x).real == pytest.approx(two_norm(x) ** 2)
    assert trace_inner_product(c * x + z, y) == pytest.approx(c * trace_inner_product(x, y) + trace_inner_product(z, y))
    assert trace_inner_product(x, c * y) == pytest.approx(np.conj(c) * trace_inner_product(x, y))
    # <x, y> = tau(y* x)
    assert trace_inner_product(x, y) == pytest.approx((y.adjoint() @ x).trace())


def test_hs_basis_is_orthonormal():
    basis = TracialAlgebra(3).hs_basis()
    gram = np.array([[trace_inner_product(a, b) for b in basis] for a in basis])
    np.testing.assert_allclose(gram, np.eye(9), atol=1e-14)


def test_dimension_mismatch_is_rejected():
    a = TracialAlgebra(2).one()
    b = TracialAlgebra(3).one()
    with pytest.raises(RejectedInputError, match="dimension mismatch"):
        a + b
    with pytest.raises(RejectedInputError):
        trace_inner_product(a, b)


def test_direct_sum_mask_is_enforced():
    algebra = TracialAlgebra.direct_sum([1, 2])
    assert len(algebra.basis_indices) == 1 + 4
    with pytest.raises(RejectedInputError, match="outside the direct-sum blocks"):
        algebra.element(np.ones((3, 3)))
    x = random_element(algebra, 0)
    assert x.entries[0, 1] == 0 and x.entries[2, 0] == 0


def test_identity_matrix():
    algebra = TracialAlgebra(2)
    np.testing.assert_allclose(identity_superoperator(algebra).matrix(), np.eye(4))


def test_pinching_matrix_is_an_orthogonal_projection():
    algebra = TracialAlgebra(3)
    m = pinching(algebra, (1, 2)).matrix()
    np.testing.assert_allclose(m @ m, m, atol=1e-14)
    np.testing.assert_allclose(m, m.conj().T, atol=1e-14)


@pytest.mark.parametrize("method", ["exact", "power"])
def test_pinching_has_norm_one(method):
    algebra = TracialAlgebra(3)
    assert superop_2to2_norm(pinching(algebra, (1, 1, 1)), method).value == pytest.approx(1.0, abs=1e-9)


def test_power_iteration_budget():
    algebra = TracialAlgebra(3)
    with pytest.raises(ConvergenceError):
        superop_2to2_norm(pinching(algebra, (1, 2)), "power", max_iterations=1)


def test_adjoint_from_matrix_matches_definition():
    algebra = TracialAlgebra(2)
    a = random_element(algebra, 3).entries
    op = SuperOperator(lambda x: a @ x, algebra)
    x, y = random_element(algebra, 4), random_element(algebra, 5)
    lhs = trace_inner_product(op(x), y)
    rhs = trace_inner_product(x, op.adjoint()(y))
    assert lhs == pytest.approx(rhs)


def test_selfadjoint_random_element():
    x = random_element(TracialAlgebra(4), 9, kind="selfadjoint")
    np.testing.assert_allclose(x.entries, x.entries.conj().T)


def test_named_streams_are_reproducible_and_distinct():
    a = named_rng(7, "path").standard_normal(4)
    b = named_rng(7, "path").standard_normal(4)
    c = named_rng(7, "samples").standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 4))
def test_left_multiplication_adjoint(seed, n):
    algebra = TracialAlgebra(n)
    rng = np.random.default_rng(seed)
    x, y, z = (random_element(algebra, rng) for _ in range(3))
    lhs = trace_inner_product(x @ y, z)
    rhs = trace_inner_product(y, x.adjoint() @ z)
    assert abs(lhs - rhs) < 1e-12 * (1 + two_norm(x) * two_norm(y) * two_norm(z)) * n


def test_superoperators_are_linear(m3_ep, rng):
    algebra = m3_ep.algebra
    for op in (m3_ep.at(0.3), m3_ep.d_at(0.3), m3_ep.h_at(0.3)):
        for _ in range(5):
            x, y = random_element(algebra, rng), random_element(algebra, rng)
            a, b = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
            combined = op(a * x + b * y) - (a * op(x) + b * op(y))
            assert two_norm(combined) < 1e-12


@pytest.mark.parametrize("method", ["exact", "power"])
def test_scaling_has_its_factor_as_norm(method):
    algebra = TracialAlgebra(2)
    tripled = SuperOperator(lambda x: 3.0 * x, algebra, lambda x: 3.0 * x, "3x")
    assert superop_2to2_norm(tripled, method).value == pytest.approx(3.0, abs=1e-9)
