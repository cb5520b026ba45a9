"""
Curves of pinching expectations E_t(x) = sum_i p_i(t) x p_i(t), their derivative
dE_t(x) = sum_i p_i'(t) x p_i(t) + p_i(t) x p_i'(t), and the commutator field H_t = [dE_t, E_t].

The kernels below take stacks of projections shaped (..., k, n, n) whose leading axes broadcast
against the leading axes of x, so a single call can cover many times and many elements.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from algebra.errors import NumericalInconsistencyError, RejectedInputError
from algebra.projections import Interval, ProjectionPath
from algebra.tracial import (
    AlgebraElement,
    SeedLike,
    SuperOperator,
    as_array,
    batch_two_norms,
    op_norm,
    random_element,
    sampled_inf_norm,
    two_norm,
)

logger = logging.getLogger(__name__)


def pinch(ps: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast_shapes(ps.shape[:-3] + ps.shape[-2:], x.shape), dtype=complex)
    for i in range(ps.shape[-3]):
        p = ps[..., i, :, :]
        out = out + p @ x @ p
    return out


def d_pinch(ps: np.ndarray, dps: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast_shapes(ps.shape[:-3] + ps.shape[-2:], x.shape), dtype=complex)
    for i in range(ps.shape[-3]):
        p, dp = ps[..., i, :, :], dps[..., i, :, :]
        out = out + dp @ x @ p + p @ x @ dp
    return out


def commutator(ps: np.ndarray, dps: np.ndarray, x: np.ndarray) -> np.ndarray:
    # H(x) = dE(E(x)) - E(dE(x))
    return d_pinch(ps, dps, pinch(ps, x)) - pinch(ps, d_pinch(ps, dps, x))


class ExpectationPath:
    def __init__(self, path: ProjectionPath):
        self.path = path
        self.algebra = path.algebra

    @property
    def interval(self) -> Interval:
        return self.path.interval

    def frame(self, t: float):
        return self.path.frame(t)

    def at(self, t: float) -> SuperOperator:
        ps, _ = self.frame(t)

        def e(x):
            return pinch(ps, x)

        return SuperOperator(e, self.algebra, e, f"E[{t:g}]")

    def d_at(self, t: float) -> SuperOperator:
        # dE_t is the derivative of a family of HS-orthogonal projections, hence HS-self-adjoint.
        ps, dps = self.frame(t)

        def de(x):
            return d_pinch(ps, dps, x)

        return SuperOperator(de, self.algebra, de, f"dE[{t:g}]")

    def h_at(self, t: float) -> SuperOperator:
        ps, dps = self.frame(t)

        def h(x):
            return commutator(ps, dps, x)

        def h_adjoint(x):
            return -commutator(ps, dps, x)

        return SuperOperator(h, self.algebra, h_adjoint, f"H[{t:g}]")

    def apply_h(self, t: float, x: np.ndarray) -> np.ndarray:
        ps, dps = self.frame(t)
        return commutator(ps, dps, x)


def _checked(ep: ExpectationPath, x: AlgebraElement) -> np.ndarray:
    if not isinstance(x, AlgebraElement):
        return ep.algebra.check_array(x)
    if x.algebra != ep.algebra:
        raise RejectedInputError(f"element of M_{x.algebra.dim} passed to a path on M_{ep.algebra.dim}")
    return x.entries


def expectation(ep: ExpectationPath, t: float, x: AlgebraElement) -> AlgebraElement:
    ps, _ = ep.frame(t)
    return AlgebraElement(pinch(ps, _checked(ep, x)), ep.algebra)


def d_expectation(ep: ExpectationPath, t: float, x: AlgebraElement) -> AlgebraElement:
    ps, dps = ep.frame(t)
    return AlgebraElement(d_pinch(ps, dps, _checked(ep, x)), ep.algebra)


def commutator_field(ep: ExpectationPath, t: float, x: AlgebraElement) -> AlgebraElement:
    ps, dps = ep.frame(t)
    return AlgebraElement(commutator(ps, dps, _checked(ep, x)), ep.algebra)


def symmetry_form(ep: ExpectationPath, t: float, x: AlgebraElement) -> AlgebraElement:
    """(1 - 2E_t)(dE_t(x)), the second expression of H_t(x)."""
    ps, dps = ep.frame(t)
    d = d_pinch(ps, dps, _checked(ep, x))
    return AlgebraElement(d - 2.0 * pinch(ps, d), ep.algebra)


def fd_d_expectation(ep: ExpectationPath, t: float, x: AlgebraElement, h: float = 1e-5, richardson: bool = False) -> AlgebraElement:
    """Central difference (E_{t+h} - E_{t-h})(x) / 2h, optionally Richardson-extrapolated."""
    x = _checked(ep, x)

    def central(step):
        return (pinch(ep.frame(t + step)[0], x) - pinch(ep.frame(t - step)[0], x)) / (2.0 * step)

    value = central(h)
    if richardson:
        value = (4.0 * central(h / 2.0) - value) / 3.0
    return AlgebraElement(value, ep.algebra)


@dataclass(frozen=True)
class CodiagonalReport:
    t: float
    codiagonal: float
    sandwich: float


def verify_codiagonal(ep: ExpectationPath, t: float, x: AlgebraElement) -> CodiagonalReport:
    """||dE(E x) + E(dE x) - dE x||_2 and ||E(dE(E x))||_2."""
    ps, dps = ep.frame(t)
    x = _checked(ep, x)
    ex = pinch(ps, x)
    dx = d_pinch(ps, dps, x)
    de_ex = d_pinch(ps, dps, ex)
    codiagonal = two_norm(de_ex + pinch(ps, dx) - dx, ep.algebra.dim)
    sandwich = two_norm(pinch(ps, de_ex), ep.algebra.dim)
    return CodiagonalReport(float(t), codiagonal, sandwich)


def finite_system_bound(ep: ExpectationPath, t: float) -> float:
    """k * max_j ||p_j'(t)||_inf, a bound for the 2-norm of dE_t on a k-projection system."""
    _, dps = ep.frame(t)
    return len(dps) * max(op_norm(d) for d in dps)


def sampled_d_inf_norm(ep: ExpectationPath, J: Interval, grid: int = 33, samples: int = 8, seed: SeedLike = 0) -> Tuple[float, float]:
    """Sampled sup over J of ||dE_t||_{inf,inf} and of ||H_t||_{inf,inf}."""
    a, b = ep.path.check_subinterval(J)
    rng = np.random.default_rng(seed)
    elements = [random_element(ep.algebra, rng).entries for _ in range(samples)]
    d_best = h_best = 0.0
    for t in np.linspace(a, b, max(int(grid), 1)):
        d_best = max(d_best, sampled_inf_norm(ep.d_at(t), elements))
        h_best = max(h_best, sampled_inf_norm(ep.h_at(t), elements))
    return d_best, h_best


@dataclass(frozen=True)
class HypothesisEstimate:
    empirical: float
    bound: float
    d_sup: float
    interval: Interval
    grid: int
    samples: int
    quadrature_error: float
    exhaustive: bool

    @property
    def holds(self) -> bool:
        return self.empirical <= self.bound + self.quadrature_error


def _d_matrices(ep: ExpectationPath, times: np.ndarray) -> np.ndarray:
    # Dense HS matrices of dE_t, shape (len(times), m, m).
    algebra = ep.algebra
    ps, dps = ep.path.frames(times)
    units = algebra.units()
    images = d_pinch(ps[:, None], dps[:, None], units[None])
    return np.swapaxes(algebra.to_coordinates(images), -1, -2)


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    if len(times) == 1:
        return np.zeros(1)
    gaps = np.diff(times)
    weights = np.zeros(len(times))
    weights[:-1] += gaps / 2.0
    weights[1:] += gaps / 2.0
    return weights


def _integrated_gram(ep: ExpectationPath, a: float, b: float, grid: int) -> Tuple[np.ndarray, np.ndarray]:
    times = np.linspace(a, b, grid)
    matrices = _d_matrices(ep, times)
    weights = _trapezoid_weights(times)
    gram = np.einsum("w,wji,wjl->il", weights, matrices.conj(), matrices)
    return gram, matrices


def estimate_hypothesis_constant(
    ep: ExpectationPath,
    J: Interval,
    samples: int = 16,
    grid: int = 512,
    seed: SeedLike = 0,
    exhaustive: Optional[bool] = None,
    check: bool = True,
) -> HypothesisEstimate:
    """
    Empirical C_J = max over sampled unit a of the trapezoid integral of ||dE_t(a)||_2^2 over J,
    certified against the bound 4|J| D_J^2 with D_J = max over the grid of ||dE_t||_{2->2}.

    Samples are random unit vectors plus the orthonormal matrix-unit basis; with exhaustive=True
    (the default for n <= 6) the exact supremum, the top eigenvalue of the integrated Gram
    matrix, is included as well. The quadrature error is the change under grid doubling.
    """
    if int(samples) < 1:
        raise RejectedInputError(f"samples must be at least 1, got {samples}")
    if int(grid) < 2:
        raise RejectedInputError(f"quadrature grid needs at least two points, got {grid}")
    a, b = ep.path.check_subinterval(J)
    algebra = ep.algebra
    if exhaustive is None:
        exhaustive = algebra.dim <= 6

    def empirical_constant(grid_points: int) -> Tuple[float, np.ndarray]:
        gram, matrices = _integrated_gram(ep, a, b, grid_points)
        rng = np.random.default_rng(seed)
        vectors = [algebra.to_coordinates(random_element(algebra, rng).entries) for _ in range(int(samples))]
        vectors = [v / np.linalg.norm(v) for v in vectors]
        best = max(float(np.real(np.vdot(v, gram @ v))) for v in vectors)
        best = max(best, float(np.max(np.real(np.diag(gram)))))
        if exhaustive:
            best = max(best, float(np.linalg.eigvalsh(gram)[-1]))
        return max(best, 0.0), matrices

    empirical, matrices = empirical_constant(int(grid))
    refined, _ = empirical_constant(2 * int(grid) - 1)
    quadrature_error = abs(refined - empirical)
    d_sup = float(np.max(np.linalg.svd(matrices, compute_uv=False)[..., 0])) if matrices.size else 0.0
    bound = 4.0 * (b - a) * d_sup ** 2
    estimate = HypothesisEstimate(empirical, bound, d_sup, (a, b), int(grid), int(samples), quadrature_error, bool(exhaustive))
    logger.debug("hypothesis constant on [%g, %g]: empirical %.6g, bound %.6g", a, b, empirical, bound)
    if check and not estimate.holds:
        raise NumericalInconsistencyError(
            f"empirical C_J = {empirical:.6g} exceeds the bound 4|J|D_J^2 = {bound:.6g}",
            residual=empirical - bound,
            context={"interval": (a, b), "grid": int(grid), "quadrature_error": quadrature_error},
        )
    return estimate


def integrated_d_norm(ep: ExpectationPath, J: Interval, x: AlgebraElement, grid: int = 512) -> float:
    """Trapezoid integral over J of ||dE_t(x)||_2^2 for one element."""
    a, b = ep.path.check_subinterval(J)
    times = np.linspace(a, b, grid)
    ps, dps = ep.path.frames(times)
    values = batch_two_norms(d_pinch(ps, dps, as_array(x)[None])) ** 2
    return float(np.sum(_trapezoid_weights(times) * values))
