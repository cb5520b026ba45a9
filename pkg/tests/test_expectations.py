import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algebra.errors import RejectedInputError
from algebra.expectations import (
    ExpectationPath,
    commutator_field,
    d_expectation,
    estimate_hypothesis_constant,
    expectation,
    fd_d_expectation,
    finite_system_bound,
    integrated_d_norm,
    sampled_d_inf_norm,
    symmetry_form,
    verify_codiagonal,
)
from algebra.projections import rotation_generator
from algebra.tracial import TracialAlgebra, random_element, superop_2to2_norm, two_norm

from conftest import rotation_path

PATHS = {
    "m2": lambda: rotation_path(2, (1, 1), rotation_generator(2, 0, 1, 1.0)),
    "m3": lambda: rotation_path(3, (1, 2), seed=23),
    "m4": lambda: rotation_path(4, (2, 2), seed=43),
}


def test_pinching_of_two_by_two(m2_ep):
    algebra = m2_ep.algebra
    x = algebra.element([[1, 2], [3, 4]])
    np.testing.assert_allclose(expectation(m2_ep, 0.0, x).entries, [[1, 0], [0, 4]])


@pytest.mark.parametrize("name", sorted(PATHS))
def test_codiagonal_identity(name, rng):
    ep = ExpectationPath(PATHS[name]())
    for _ in range(20):
        t = rng.uniform(0.0, 1.0)
        report = verify_codiagonal(ep, t, random_element(ep.algebra, rng))
        assert report.codiagonal < 1e-9
        assert report.sandwich < 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), t=st.floats(0.0, 1.0))
def test_commutator_field_is_an_isometric_image_of_de(seed, t):
    ep = ExpectationPath(PATHS["m3"]())
    b = random_element(ep.algebra, seed)
    h = commutator_field(ep, t, b)
    assert abs(two_norm(h) - two_norm(d_expectation(ep, t, b))) < 1e-10
    np.testing.assert_allclose(h.entries, symmetry_form(ep, t, b).entries, atol=1e-12)


def test_commutator_field_kills_the_unit(m3_ep):
    assert two_norm(commutator_field(m3_ep, 0.4, m3_ep.algebra.one())) < 1e-14


def test_derivative_is_selfadjoint_and_h_antiselfadjoint(m3_ep):
    d = m3_ep.d_at(0.3).matrix()
    h = m3_ep.h_at(0.3).matrix()
    np.testing.assert_allclose(d, d.conj().T, atol=1e-13)
    np.testing.assert_allclose(h, -h.conj().T, atol=1e-13)


def test_finite_difference_matches_derivative(m3_ep, rng):
    x = random_element(m3_ep.algebra, rng)
    exact = d_expectation(m3_ep, 0.5, x).entries
    np.testing.assert_allclose(fd_d_expectation(m3_ep, 0.5, x).entries, exact, atol=1e-7)
    np.testing.assert_allclose(fd_d_expectation(m3_ep, 0.5, x, h=1e-3, richardson=True).entries, exact, atol=1e-8)


def test_element_of_another_algebra_is_rejected(m3_ep):
    with pytest.raises(RejectedInputError):
        expectation(m3_ep, 0.0, TracialAlgebra(2).one())


def test_finite_system_bound_dominates_the_norm(three_block_ep):
    for t in (0.0, 0.5, 1.0):
        norm = superop_2to2_norm(three_block_ep.d_at(t)).value
        assert norm <= finite_system_bound(three_block_ep, t) + 1e-12


@pytest.mark.parametrize("name", ["m3", "m4"])
def test_derivative_norm_maximum_is_stable_under_refinement(name, three_block_ep):
    ep = three_block_ep if name == "m3" else ExpectationPath(PATHS[name]())

    def grid_max(points):
        return max(superop_2to2_norm(ep.d_at(t)).value for t in np.linspace(0.0, 1.0, points))

    coarse, fine = grid_max(65), grid_max(129)
    assert fine >= coarse - 1e-12
    assert fine == pytest.approx(coarse, rel=0.01)


def test_sampled_inf_norms(three_block_ep):
    d_sup, h_sup = sampled_d_inf_norm(three_block_ep, (0.0, 1.0), grid=5, samples=4)
    assert d_sup > 0
    assert h_sup <= 3 * d_sup + 1e-12


def test_hypothesis_constant_of_m2_rotation(m2_ep):
    estimate = estimate_hypothesis_constant(m2_ep, (0.0, 1.0), grid=128)
    assert estimate.d_sup == pytest.approx(2.0)
    assert estimate.bound == pytest.approx(16.0)
    assert estimate.empirical == pytest.approx(4.0, rel=1e-9)
    assert estimate.holds
    assert estimate.quadrature_error < 0.01 * estimate.empirical


def test_hypothesis_constant_scales_with_the_interval(m2_ep):
    short = estimate_hypothesis_constant(m2_ep, (0.0, 0.5), grid=128).empirical
    long = estimate_hypothesis_constant(m2_ep, (0.0, 1.0), grid=128).empirical
    assert long / short == pytest.approx(2.0, rel=0.05)


def test_hypothesis_constant_of_constant_path(constant_ep):
    estimate = estimate_hypothesis_constant(constant_ep, (0.0, 1.0), grid=16)
    assert estimate.empirical == 0.0
    assert estimate.bound == 0.0
    assert estimate.holds


def test_hypothesis_constant_dominates_single_elements(m3_ep, rng):
    estimate = estimate_hypothesis_constant(m3_ep, (0.0, 1.0), grid=64)
    for _ in range(5):
        x = random_element(m3_ep.algebra, rng)
        x = x * (1.0 / two_norm(x))
        assert integrated_d_norm(m3_ep, (0.0, 1.0), x, grid=64) <= estimate.empirical + 1e-10
    assert estimate.holds


def test_hypothesis_constant_rejects_bad_grids(m2_ep):
    with pytest.raises(RejectedInputError):
        estimate_hypothesis_constant(m2_ep, (0.0, 1.0), grid=1)
    with pytest.raises(RejectedInputError):
        estimate_hypothesis_constant(m2_ep, (1.0, 0.0))
