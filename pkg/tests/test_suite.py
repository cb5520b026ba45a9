import os

import numpy as np
import pytest

from algebra.tracial import AlgebraElement, random_element
from algebra.expectations import pinch
from pipeline.scenario import Scenario, load_scenario
from solvers.transport import Propagator, propagator
from verification.reports import ResidualReport, failed
from verification.suite import (
    CHECK_NAMES,
    check_derivative_orthogonality,
    check_intertwining,
    check_kernel_invariance,
    check_multiplicativity,
    check_projected_solution,
    run_full_suite,
)

from conftest import SCENARIO_DIR

TIMES = np.linspace(0.0, 1.0, 11)


def test_report_status():
    assert ResidualReport("a", 1e-9, 1e-8).status == "pass"
    assert ResidualReport("a", 1e-7, 1e-8).status == "fail"
    assert ResidualReport("a", float("nan"), 1e-8).status == "fail"
    info = ResidualReport("gap", 0.3)
    assert info.status == "info" and info.passed
    assert info.line() == "gap info 3.000000e-01 -"
    assert ResidualReport("a", 0.0, 1e-7).line() == "a pass 0.000000e+00 1.000e-07"


def test_failed_skips_information():
    reports = [ResidualReport("a", 1.0), ResidualReport("b", 1.0, 0.5), ResidualReport("c", 0.1, 0.5)]
    assert [r.name for r in failed(reports)] == ["b"]


def test_intertwining_at_zero_is_exact(m3_ep, rng):
    P = propagator(m3_ep)
    xs = np.stack([random_element(m3_ep.algebra, rng).entries for _ in range(5)])
    assert check_intertwining(P, m3_ep, 0.0, xs).residual < 1e-14


def test_intertwining_on_constant_path(constant_ep, rng):
    P = propagator(constant_ep)
    xs = [random_element(constant_ep.algebra, rng) for _ in range(5)]
    assert check_intertwining(P, constant_ep, 0.7, xs).residual < 1e-12


def test_intertwining_on_m4_rotation(rng):
    from algebra.expectations import ExpectationPath
    from conftest import rotation_path
    ep = ExpectationPath(rotation_path(4, (2, 2), seed=43))
    xs = np.stack([random_element(ep.algebra, rng).entries for _ in range(50)])
    report = check_intertwining(propagator(ep), ep, 1.0, xs)
    assert report.passed, report.residual


def test_multiplicativity(m3_ep, rng):
    P = propagator(m3_ep)
    algebra = m3_ep.algebra
    one = algebra.one()
    assert check_multiplicativity(P, 1.0, [(one, one)]).residual < 1e-9

    base = m3_ep.frame(0.0)[0]
    pairs = [
        (AlgebraElement(pinch(base, random_element(algebra, rng).entries), algebra),
         AlgebraElement(pinch(base, random_element(algebra, rng).entries), algebra))
        for _ in range(10)
    ]
    report = check_multiplicativity(P, 1.0, pairs)
    assert report.passed
    assert report.context["range"] < 1e-7


def test_projected_solution_and_kernels(m3_ep, rng):
    P = propagator(m3_ep)
    algebra = m3_ep.algebra
    x = random_element(algebra, rng).entries
    base = m3_ep.frame(0.0)[0]
    b = AlgebraElement(pinch(base, x), algebra)
    z = AlgebraElement(x - pinch(base, x), algebra)

    report = check_projected_solution(P, m3_ep, 0.0, b, TIMES)
    assert report.passed
    assert "membership" in report.context
    general = check_projected_solution(P, m3_ep, 0.0, random_element(algebra, rng), TIMES)
    assert general.passed and "membership" not in general.context
    assert check_kernel_invariance(P, m3_ep, 0.0, z, TIMES).passed


class StationarySolver:
    """Leaves every initial condition where it is."""
    backend = "stationary"

    def solve(self, s, a, t):
        return np.array(a, dtype=complex)


def test_projected_solution_rejects_a_non_solution(m3_ep, rng):
    P = Propagator(m3_ep, StationarySolver())
    report = check_projected_solution(P, m3_ep, 0.0, random_element(m3_ep.algebra, rng), TIMES)
    assert report.status == "fail"
    assert report.context["fd"] > 1e-3
    assert report.context["identity"] < 1e-12


def test_intertwining_converges_with_the_rk4_step(m3_ep, rng):
    xs = np.stack([random_element(m3_ep.algebra, rng).entries for _ in range(10)])
    residuals = [check_intertwining(propagator(m3_ep, "reference", step=h), m3_ep, 1.0, xs).residual
                 for h in (0.1, 0.05, 0.025)]
    for coarse, fine in zip(residuals, residuals[1:]):
        assert fine > 1e-12
        assert coarse / fine >= 8.0


def test_derivative_orthogonality(m3_ep, rng):
    P = propagator(m3_ep)
    algebra = m3_ep.algebra
    x = random_element(algebra, rng).entries
    base = m3_ep.frame(0.0)[0]
    b = AlgebraElement(pinch(base, x), algebra)
    z = AlgebraElement(x - pinch(base, x), algebra)
    report = check_derivative_orthogonality(P, m3_ep, 0.0, b, z, TIMES)
    assert report.residual < 1e-7
    assert report.context["inner_product"] < 1e-6


def test_constant_path_checks_vanish(constant_ep, rng):
    P = propagator(constant_ep)
    algebra = constant_ep.algebra
    x = random_element(algebra, rng)
    assert check_projected_solution(P, constant_ep, 0.0, x, TIMES).residual < 1e-12


def constant_scenario():
    return Scenario(seed=3, dimension=3, ranks=(1, 2), generator="zero", samples=10, pairs=10,
                    initial_conditions=4, suite_grid=11, constant_grid=32)


def test_constant_scenario_passes_everything():
    reports = run_full_suite(constant_scenario())
    names = {r.name.split("@")[0] for r in reports}
    assert names == set(CHECK_NAMES)
    assert not failed(reports), [r.line() for r in failed(reports)]
    exact = {"propagator_identity", "isometry", "unital_star", "projected_solution", "kernel_invariance",
             "unitary_implementation", "omega_vs_g_on_b0", "omega_vs_g_global"}
    for report in reports:
        if report.name.split("@")[0] in exact | {"intertwining"}:
            assert report.residual < 1e-12, report.line()


def test_suite_is_deterministic():
    scenario = Scenario(seed=8, dimension=2, ranks=(1, 1), generator="rotation(0, 1, 1.0)", samples=8,
                        pairs=8, initial_conditions=4, suite_grid=11, constant_grid=64)
    first = [(r.name, r.residual) for r in run_full_suite(scenario)]
    second = [(r.name, r.residual) for r in run_full_suite(scenario)]
    assert first == second


@pytest.mark.slow
@pytest.mark.parametrize("name", ["rotation_m2.ini", "rotation_m3.ini", "three_block_m3.ini", "rotation_m4.ini"])
def test_shipped_scenarios_pass(name):
    reports = run_full_suite(load_scenario(os.path.join(SCENARIO_DIR, name)))
    assert not failed(reports), [r.line() for r in failed(reports)]


@pytest.mark.slow
def test_m2_omega_matches_g_globally():
    reports = run_full_suite(load_scenario(os.path.join(SCENARIO_DIR, "rotation_m2.ini")))
    gap = next(r for r in reports if r.name == "omega_vs_g_global")
    assert gap.status == "pass"


@pytest.mark.slow
def test_m6_three_blocks_only_report_the_gap():
    reports = run_full_suite(load_scenario(os.path.join(SCENARIO_DIR, "three_block_m6.ini")))
    assert not failed(reports), [r.line() for r in failed(reports)]
    gap = next(r for r in reports if r.name == "omega_vs_g_global")
    assert gap.status == "info"


@pytest.mark.slow
def test_coarse_step_fails_intertwining():
    reports = run_full_suite(load_scenario(os.path.join(SCENARIO_DIR, "failing", "coarse_step_m2.ini")))
    failing = {r.name.split("@")[0] for r in failed(reports)}
    assert "intertwining" in failing
