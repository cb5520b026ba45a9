"""
Residual checks for the transport propagator: every identity the construction promises
(isometry, cocycle, intertwining of the expectations, multiplicativity on B_0, invariance of B_t
and of the kernels, the unitary implementation) is measured and compared with a threshold.

Failures never raise; they come back as failing ResidualReports.
"""
from __future__ import annotations

import logging
from typing import Callable, List, Optional, Sequence

import numpy as np

from algebra.errors import NumericalError, PropagatorError
from algebra.expectations import (
    ExpectationPath,
    commutator,
    d_pinch,
    estimate_hypothesis_constant,
    pinch,
    verify_codiagonal,
)
from algebra.tracial import AlgebraElement, batch_two_norms, named_rng, random_element
from pipeline.scenario import Scenario, ScenarioBuild, build_scenario
from solvers.transport import PicardSolver, Propagator, lipschitz_in_s
from solvers.unitary import DeltaField, compare_with_transport, solve_unitary
from verification.reports import ResidualReport

logger = logging.getLogger(__name__)

CHECK_NAMES = (
    "codiagonal",
    "commutator_symmetry",
    "hypothesis_certificate",
    "propagator_identity",
    "cocycle",
    "inverse",
    "isometry",
    "hs_unitarity",
    "trace_preservation",
    "unital_star",
    "weak_c1",
    "lipschitz_in_s",
    "intertwining",
    "multiplicativity",
    "projected_solution",
    "kernel_invariance",
    "derivative_orthogonality",
    "picard_contraction",
    "backend_agreement",
    "delta_antihermitian",
    "unitary_implementation",
    "unitarity",
    "omega_vs_g_on_b0",
    "omega_vs_g_global",
)

WEAK_C1_STEP = 1e-4
WEAK_C1_THRESHOLD = 1e-6
LIPSCHITZ_SPREAD = 0.05
CONTRACTION_SLACK = 1.1


def _samples(algebra, rng, count: int) -> np.ndarray:
    return np.stack([random_element(algebra, rng).entries for _ in range(count)])


def _hs_norms(x: np.ndarray) -> np.ndarray:
    return batch_two_norms(x)


# ---- Identities along solutions ----

def check_intertwining(P: Propagator, ep: ExpectationPath, t: float, samples, threshold: float = 1e-7,
                       name: str = "intertwining") -> ResidualReport:
    """max ||G_t(E_0(G_t^{-1}(x))) - E_t(x)||_2 over the samples."""
    xs = np.stack([s.entries for s in samples]) if not isinstance(samples, np.ndarray) else samples
    base, _ = ep.frame(0.0)
    ps, _ = ep.frame(t)
    pulled = P.apply_array(0.0, t, xs)
    residual = float(np.max(_hs_norms(P.apply_array(t, 0.0, pinch(base, pulled)) - pinch(ps, xs))))
    return ResidualReport(name, residual, threshold, {"t": t, "samples": len(xs), "backend": P.backend})


def check_multiplicativity(P: Propagator, t: float, pairs, threshold: float = 1e-7) -> ResidualReport:
    """max ||G_t(ab) - G_t(a)G_t(b)||_2 over pairs in B_0, together with the range check G_t(B_0) in B_t."""
    ep = P.expectation_path
    a = np.stack([p[0].entries for p in pairs])
    b = np.stack([p[1].entries for p in pairs])
    ga, gb = P.apply_array(t, 0.0, a), P.apply_array(t, 0.0, b)
    product = float(np.max(_hs_norms(P.apply_array(t, 0.0, a @ b) - ga @ gb)))
    ps, _ = ep.frame(t)
    range_residual = float(np.max(_hs_norms(pinch(ps, ga) - ga)))
    return ResidualReport(
        "multiplicativity",
        max(product, range_residual),
        threshold,
        {"t": t, "pairs": len(a), "product": product, "range": range_residual},
    )


def check_projected_solution(P: Propagator, ep: ExpectationPath, s: float, a: AlgebraElement,
                             t_grid: Sequence[float], threshold: float = WEAK_C1_THRESHOLD,
                             fd_step: float = WEAK_C1_STEP) -> ResidualReport:
    """
    With alpha the solution through a at s and beta = E(alpha): max ||beta'(t) - H_t(beta(t))||_2 over
    the grid, beta' taken by central differences of step fd_step around each grid time, the solution
    continued from alpha(t) by the propagator's solver. When a lies in B_s the membership residual
    ||E_t(alpha(t)) - alpha(t)||_2 is included.
    """
    times = np.asarray(t_grid, dtype=float)
    alpha = P.trajectory(s, a.entries, times)
    t_lo, t_hi = ep.interval
    h = min(fd_step, 0.25 * (t_hi - t_lo))
    fd = 0.0
    for t, value in zip(times, alpha):
        centre = float(np.clip(t, t_lo + h, t_hi - h))
        at_centre = value if centre == t else P.solver.solve(float(t), value, centre)
        ahead = pinch(ep.frame(centre + h)[0], P.solver.solve(centre, at_centre, centre + h))
        behind = pinch(ep.frame(centre - h)[0], P.solver.solve(centre, at_centre, centre - h))
        ps_c, dps_c = ep.frame(centre)
        field_ = commutator(ps_c, dps_c, pinch(ps_c, at_centre))
        fd = max(fd, float(_hs_norms((ahead - behind) / (2.0 * h) - field_)))

    ps, dps = ep.path.frames(times)
    beta = pinch(ps, alpha)
    # dE(alpha) + E(H(alpha)) - H(E(alpha)) vanishes for every alpha; kept as a consistency figure
    identity = d_pinch(ps, dps, alpha) + pinch(ps, commutator(ps, dps, alpha)) - commutator(ps, dps, beta)
    context = {"s": s, "grid": len(times), "h": h, "fd": fd, "identity": float(np.max(_hs_norms(identity)))}
    residual = fd
    ps_s, _ = ep.frame(s)
    if float(_hs_norms(pinch(ps_s, a.entries) - a.entries)) <= 1e-12 * max(1.0, float(_hs_norms(a.entries))):
        membership = float(np.max(_hs_norms(beta - alpha)))
        context["membership"] = membership
        residual = max(residual, membership)
    return ResidualReport("projected_solution", residual, threshold, context)


def check_kernel_invariance(P: Propagator, ep: ExpectationPath, s: float, z: AlgebraElement,
                            t_grid: Sequence[float], threshold: float = 1e-7) -> ResidualReport:
    """E_s(z) = 0 implies E_t(alpha(t)) = 0 along the solution through z."""
    times = np.asarray(t_grid, dtype=float)
    alpha = P.trajectory(s, z.entries, times)
    ps, _ = ep.path.frames(times)
    residual = float(np.max(_hs_norms(pinch(ps, alpha))))
    return ResidualReport("kernel_invariance", residual, threshold, {"s": s, "grid": len(times)})


def check_derivative_orthogonality(P: Propagator, ep: ExpectationPath, s: float, b: AlgebraElement,
                                   z: AlgebraElement, t_grid: Sequence[float],
                                   threshold: float = 1e-7) -> ResidualReport:
    """For b in B_s and E_s(z) = 0: E_t(beta'(t)) = 0 and z'(t) lies in B_t."""
    times = np.asarray(t_grid, dtype=float)
    solutions = P.trajectory(s, np.stack([b.entries, z.entries]), times)
    ps, dps = ep.path.frames(times)
    ps_, dps_ = ps[:, None], dps[:, None]
    derivatives = commutator(ps_, dps_, solutions)
    beta_dot, z_dot = derivatives[:, 0], derivatives[:, 1]
    beta_part = float(np.max(_hs_norms(pinch(ps, beta_dot))))
    z_part = float(np.max(_hs_norms(pinch(ps, z_dot) - z_dot)))
    n = ep.algebra.dim
    inner = float(np.max(np.abs(np.einsum("tij,tij->t", z_dot.conj(), beta_dot)) / n))
    context = {"s": s, "grid": len(times), "beta": beta_part, "z": z_part, "inner_product": inner}
    if len(times) >= 3:
        fd = (solutions[2:] - solutions[:-2]) / (times[2:] - times[:-2])[:, None, None, None]
        context["fd_witness"] = float(np.max(_hs_norms(fd - derivatives[1:-1])))
    return ResidualReport("derivative_orthogonality", max(beta_part, z_part), threshold, context)


# ---- Suite ----

def _guarded(name: str, threshold: Optional[float], check: Callable[[], List[ResidualReport]]) -> List[ResidualReport]:
    try:
        return check()
    except NumericalError as exc:
        logger.warning("check %s failed numerically: %s", name, exc)
        context = {"error": str(exc)}
        context.update(exc.context)
        residual = exc.residual if np.isfinite(exc.residual) else float("inf")
        return [ResidualReport(name, residual, threshold if threshold is not None else 0.0, context)]
    except PropagatorError as exc:
        logger.warning("check %s could not run: %s", name, exc)
        return [ResidualReport(name, float("inf"), threshold if threshold is not None else 0.0, {"error": str(exc)})]


def _algebraic_checks(sc: Scenario, build: ScenarioBuild, rng) -> List[ResidualReport]:
    ep, algebra = build.expectation_path, build.algebra
    tol = sc.algebraic
    times = rng.uniform(sc.t_min, sc.t_max, size=max(sc.samples, 20))
    codiagonal = sandwich = symmetry = 0.0
    for t in times:
        x = random_element(algebra, rng)
        report = verify_codiagonal(ep, float(t), x)
        codiagonal = max(codiagonal, report.codiagonal)
        sandwich = max(sandwich, report.sandwich)
        ps, dps = ep.frame(float(t))
        h_norm = float(_hs_norms(commutator(ps, dps, x.entries)))
        d_norm = float(_hs_norms(d_pinch(ps, dps, x.entries)))
        symmetry = max(symmetry, abs(h_norm - d_norm))

    estimate = estimate_hypothesis_constant(ep, sc.interval, grid=sc.constant_grid, seed=sc.seed, check=False)
    violation = max(0.0, estimate.empirical - estimate.bound)
    return [
        ResidualReport("codiagonal", max(codiagonal, sandwich), tol,
                       {"samples": len(times), "codiagonal": codiagonal, "sandwich": sandwich}),
        ResidualReport("commutator_symmetry", symmetry, tol, {"samples": len(times)}),
        ResidualReport("hypothesis_certificate", violation, estimate.quadrature_error + tol,
                       {"empirical": estimate.empirical, "bound": estimate.bound, "grid": estimate.grid}),
    ]


def _propagator_laws(sc: Scenario, P: Propagator, rng) -> List[ResidualReport]:
    algebra = P.algebra
    tol = sc.unitary
    t_lo, t_hi = sc.interval
    m = len(algebra.basis_indices)
    identity = np.eye(m)
    g = P.matrix(t_hi, 0.0)

    s_mid = 0.5 * (t_lo + t_hi)
    identity_residual = float(np.max(np.abs(P.matrix(s_mid, s_mid) - identity)))
    r, s, t = np.sort(rng.uniform(t_lo, t_hi, size=3))
    cocycle = float(np.linalg.norm(P.matrix(t, s) @ P.matrix(s, r) - P.matrix(t, r), 2))
    inverse = float(np.linalg.norm(P.matrix(0.0, t_hi) @ g - identity, 2))
    hs_unitarity = float(np.linalg.norm(g.conj().T @ g - identity, 2))

    xs = _samples(algebra, rng, sc.samples)
    images = P.apply_array(t_hi, 0.0, xs)
    isometry = float(np.max(np.abs(_hs_norms(images) - _hs_norms(xs))))
    traces = np.abs(np.trace(images, axis1=-2, axis2=-1) - np.trace(xs, axis1=-2, axis2=-1)) / algebra.dim
    one = np.eye(algebra.dim)
    unital = float(_hs_norms(P.apply_array(t_hi, 0.0, one) - one))
    star = float(np.max(_hs_norms(P.apply_array(t_hi, 0.0, xs.conj().swapaxes(-1, -2))
                                  - images.conj().swapaxes(-1, -2))))
    return [
        ResidualReport("propagator_identity", identity_residual, tol, {"s": s_mid}),
        ResidualReport("cocycle", cocycle, tol, {"r": float(r), "s": float(s), "t": float(t)}),
        ResidualReport("inverse", inverse, tol, {"t": t_hi}),
        ResidualReport("isometry", isometry, tol, {"t": t_hi, "samples": len(xs)}),
        ResidualReport("hs_unitarity", hs_unitarity, tol, {"t": t_hi, "basis": m}),
        ResidualReport("trace_preservation", float(np.max(traces)), tol, {"t": t_hi, "samples": len(xs)}),
        ResidualReport("unital_star", max(unital, star), tol, {"t": t_hi, "unital": unital, "star": star}),
    ]


def _derivative_checks(sc: Scenario, build: ScenarioBuild, P: Propagator, rng) -> List[ResidualReport]:
    ep = build.expectation_path
    t_lo, t_hi = sc.interval
    h = min(WEAK_C1_STEP, 0.25 * (t_hi - t_lo))
    a = random_element(build.algebra, rng).entries
    y = random_element(build.algebra, rng).entries
    worst = 0.0
    for t in sc.check_times:
        t = float(np.clip(t, t_lo + h, t_hi - h))
        alpha = P.apply_array(t, 0.0, a)
        forward = P.solver.solve(t, alpha, t + h)
        backward = P.solver.solve(t, alpha, t - h)
        # <(alpha(t+h) - alpha(t-h)) / 2h, y> against <H_t(alpha(t)), y>
        difference = (forward - backward) / (2.0 * h) - ep.apply_h(t, alpha)
        worst = max(worst, abs(np.vdot(y, difference)) / build.algebra.dim)

    s = 0.5 * (t_lo + t_hi) if t_lo < 0 else 0.25 * t_hi
    lipschitz = lipschitz_in_s(P, t_hi, s, AlgebraElement(a, build.algebra))
    return [
        ResidualReport("weak_c1", float(worst), WEAK_C1_THRESHOLD, {"h": h, "times": list(sc.check_times)}),
        ResidualReport("lipschitz_in_s", lipschitz.refinement_spread, LIPSCHITZ_SPREAD,
                       {"constant": lipschitz.constant, "steps": list(lipschitz.steps), "s": s, "t": t_hi}),
    ]


def _solution_checks(sc: Scenario, build: ScenarioBuild, P: Propagator, rng) -> List[ResidualReport]:
    ep, algebra = build.expectation_path, build.algebra
    tol = sc.integrated
    reports = []
    xs = _samples(algebra, rng, sc.samples)
    for t in sc.check_times:
        reports.append(check_intertwining(P, ep, float(t), xs, tol, name=f"intertwining@{t:g}"))

    base = build.base.stack
    pair_a = pinch(base, _samples(algebra, rng, sc.pairs))
    pair_b = pinch(base, _samples(algebra, rng, sc.pairs))
    pairs = [(AlgebraElement(a, algebra), AlgebraElement(b, algebra)) for a, b in zip(pair_a, pair_b)]
    reports.append(check_multiplicativity(P, sc.t_max, pairs, tol))

    times = sc.suite_times()
    x = random_element(algebra, rng).entries
    b = AlgebraElement(pinch(base, x), algebra)
    z = AlgebraElement(x - pinch(base, x), algebra)
    general = random_element(algebra, rng)
    fd_tol = max(tol, WEAK_C1_THRESHOLD)
    projected = check_projected_solution(P, ep, 0.0, b, times, fd_tol)
    general_report = check_projected_solution(P, ep, 0.0, general, times, fd_tol)
    context = dict(projected.context, general_fd=general_report.residual)
    reports.append(ResidualReport("projected_solution", max(projected.residual, general_report.residual), fd_tol, context))
    reports.append(check_kernel_invariance(P, ep, 0.0, z, times, tol))
    reports.append(check_derivative_orthogonality(P, ep, 0.0, b, z, times, tol))
    return reports


def _picard_checks(sc: Scenario, build: ScenarioBuild, rng) -> List[ResidualReport]:
    ep, algebra = build.expectation_path, build.algebra
    solver = PicardSolver(ep, sc.picard_config())
    reference = build.propagator("reference")
    starts = _samples(algebra, rng, sc.initial_conditions)
    picard_end = solver.solve(0.0, starts, sc.t_max)
    ratio = max((r.max_ratio for r in solver.last_reports), default=0.0)
    context = {
        "subintervals": len(solver.last_reports),
        "length": solver.subinterval_length,
        "uniqueness_window": solver.uniqueness_window,
        "k0": sc.contraction_target,
    }
    agreement = float(np.max(_hs_norms(picard_end - reference.apply_array(sc.t_max, 0.0, starts))))
    return [
        ResidualReport("picard_contraction", ratio, CONTRACTION_SLACK * sc.contraction_target, context),
        ResidualReport("backend_agreement", agreement, sc.integrated,
                       {"t": sc.t_max, "initial_conditions": len(starts)}),
    ]


def _unitary_checks(sc: Scenario, build: ScenarioBuild, P: Propagator, rng) -> List[ResidualReport]:
    path = build.path
    field_ = DeltaField(path)
    antihermitian = max(max(field_.residuals(float(t)).values()) for t in sc.suite_times())
    reports = [ResidualReport("delta_antihermitian", antihermitian, sc.algebraic, {"grid": sc.suite_grid})]

    grid = np.union1d(sc.suite_times(), [0.0])
    up = solve_unitary(path, grid, step=sc.unitary_step, stepper=sc.stepper, tol=np.inf)
    reports.append(ResidualReport("unitary_implementation", up.intertwining_residual, sc.unitary,
                                  {"grid": len(grid), "step": sc.unitary_step, "stepper": sc.stepper}))
    reports.append(ResidualReport("unitarity", up.unitarity_residual, sc.unitarity, {"grid": len(grid)}))

    comparison = compare_with_transport(up, P, sc.t_max, sc.samples, seed=rng)
    reports.append(ResidualReport("omega_vs_g_on_b0", comparison.b0_discrepancy, sc.integrated,
                                  {"t": sc.t_max, "samples": comparison.samples}))
    global_threshold = sc.integrated if comparison.expected_global_agreement else None
    reports.append(ResidualReport("omega_vs_g_global", comparison.global_discrepancy, global_threshold,
                                  {"t": sc.t_max, "projections": comparison.projections}))
    return reports


def run_full_suite(scenario: Scenario, build: Optional[ScenarioBuild] = None) -> List[ResidualReport]:
    """Every check, in CHECK_NAMES order; deterministic given the scenario seed."""
    build = build or build_scenario(scenario)
    P = build.propagator()

    def stream(name):
        return named_rng(scenario.seed, f"suite/{name}")

    reports: List[ResidualReport] = []
    reports += _guarded("algebraic", scenario.algebraic, lambda: _algebraic_checks(scenario, build, stream("algebraic")))
    reports += _guarded("propagator_laws", scenario.unitary, lambda: _propagator_laws(scenario, P, stream("laws")))
    reports += _guarded("derivatives", WEAK_C1_THRESHOLD, lambda: _derivative_checks(scenario, build, P, stream("derivatives")))
    reports += _guarded("solutions", scenario.integrated, lambda: _solution_checks(scenario, build, P, stream("solutions")))
    reports += _guarded("picard", scenario.integrated, lambda: _picard_checks(scenario, build, stream("picard")))
    reports += _guarded("unitary", scenario.unitary, lambda: _unitary_checks(scenario, build, P, stream("unitary")))
    for report in reports:
        logger.info("%s", report.line())
    return reports
