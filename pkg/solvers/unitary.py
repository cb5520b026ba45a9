"""
Unitary implementation of a projection path.

Delta_t = sum_i p_i(t) p_i'(t) is anti-Hermitian, and the solution of u' = -Delta_t u, u_0 = 1
carries the base system onto the curve: u_t p_i(0) u_t* = p_i(t). The inner automorphism
Omega_t = Ad(u_t) therefore intertwines E_0 and E_t; it agrees with the transport propagator G_t
on B_0, and on the whole algebra when the system has two projections.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from algebra.errors import NumericalInconsistencyError, RejectedInputError
from algebra.expectations import pinch
from algebra.projections import ProjectionPath
from algebra.steppers import propagate
from algebra.tracial import AlgebraElement, SeedLike, batch_two_norms, random_element, two_norm
from solvers.transport import Propagator

logger = logging.getLogger(__name__)


class DeltaField:
    def __init__(self, path: ProjectionPath):
        self.path = path
        self.algebra = path.algebra

    def array(self, t: float) -> np.ndarray:
        ps, dps = self.path.frame(t)
        return np.einsum("kij,kjl->il", ps, dps)

    def adjoint_array(self, t: float) -> np.ndarray:
        # Delta_t* = sum_i p_i'(t) p_i(t)
        ps, dps = self.path.frame(t)
        return np.einsum("kij,kjl->il", dps, ps)

    def at(self, t: float) -> AlgebraElement:
        return AlgebraElement(self.algebra.restrict(self.array(t)), self.algebra)

    def generator(self, t: float) -> np.ndarray:
        """-Delta_t, symmetrised to its anti-Hermitian part for the stepper."""
        d = self.array(t)
        return -0.5 * (d - d.conj().T)

    def residuals(self, t: float) -> Dict[str, float]:
        d = self.array(t)
        n = self.algebra.dim
        return {
            "antihermitian": two_norm(d + d.conj().T, n),
            "adjoint_identity": two_norm(d.conj().T - self.adjoint_array(t), n),
        }


def delta(path: ProjectionPath, t: float) -> AlgebraElement:
    return DeltaField(path).at(t)


@dataclass(frozen=True)
class UnitaryPath:
    path: ProjectionPath
    times: np.ndarray
    unitaries: np.ndarray
    step: float
    stepper: str
    unitarity_residual: float = 0.0
    intertwining_residual: float = 0.0
    _index: Dict[float, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for array in (self.times, self.unitaries):
            array.setflags(write=False)
        self._index.update({float(t): i for i, t in enumerate(self.times)})

    @property
    def algebra(self):
        return self.path.algebra

    def unitary_at(self, t: float) -> np.ndarray:
        """u_t at a grid time; off the grid, stepped from the nearest grid time with the same stepper."""
        t = self.path.check_time(t)
        i = self._index.get(t)
        if i is not None:
            return self.unitaries[i]
        nearest = int(np.argmin(np.abs(self.times - t)))
        field_ = DeltaField(self.path).generator
        return propagate(field_, self.unitaries[nearest], float(self.times[nearest]), t, self.step, self.stepper)

    def element(self, t: float) -> AlgebraElement:
        return AlgebraElement(self.algebra.restrict(self.unitary_at(t)), self.algebra)


def _intertwining_residuals(path: ProjectionPath, times: np.ndarray, unitaries: np.ndarray) -> np.ndarray:
    # residuals[j, i] = ||u_t p_i(0) u_t* - p_i(t)||_2 at t = times[j]
    base, _ = path.frame(0.0)
    ps, _ = path.frames(times)
    moved = unitaries[:, None] @ base[None] @ unitaries.conj().swapaxes(-1, -2)[:, None]
    return batch_two_norms(moved - ps)


def solve_unitary(
    path: ProjectionPath,
    grid: Sequence[float],
    step: float = 1e-3,
    stepper: str = "magnus4",
    tol: float = 1e-8,
) -> UnitaryPath:
    """
    u_t on the grid, marching outwards from 0 in both directions.

    Raises NumericalInconsistencyError when u_t p_i(0) u_t* misses p_i(t) by more than tol,
    naming the worst (i, t).
    """
    times = np.unique(np.asarray(grid, dtype=float))
    if times.size == 0 or not np.any(times == 0.0):
        raise RejectedInputError("the unitary grid must include t = 0")
    for t in (times[0], times[-1]):
        path.check_time(t)
    n = path.algebra.dim
    generator = DeltaField(path).generator
    unitaries = np.empty((times.size, n, n), dtype=complex)
    origin = int(np.flatnonzero(times == 0.0)[0])
    unitaries[origin] = np.eye(n)
    for direction in (1, -1):
        j = origin + direction
        while 0 <= j < times.size:
            previous = j - direction
            unitaries[j] = propagate(generator, unitaries[previous], float(times[previous]), float(times[j]),
                                     step, stepper)
            j += direction

    identity = np.eye(n)
    unitarity = float(np.max(batch_two_norms(unitaries.conj().swapaxes(-1, -2) @ unitaries - identity)))
    residuals = _intertwining_residuals(path, times, unitaries)
    worst_t, worst_i = np.unravel_index(int(np.argmax(residuals)), residuals.shape)
    worst = float(residuals[worst_t, worst_i])
    logger.debug("unitary path on %d grid times: unitarity %.3g, intertwining %.3g", times.size, unitarity, worst)
    if worst > tol:
        raise NumericalInconsistencyError(
            f"u_t p_{worst_i}(0) u_t* misses p_{worst_i}(t) by {worst:.3g} at t = {times[worst_t]:g}",
            residual=worst,
            context={"projection": int(worst_i), "t": float(times[worst_t]), "step": step, "stepper": stepper},
        )
    return UnitaryPath(path, times, unitaries, float(step), stepper, unitarity, worst)


def omega(up: UnitaryPath, t: float, x: Union[AlgebraElement, np.ndarray]) -> AlgebraElement:
    """Omega_t(x) = u_t x u_t*."""
    algebra = up.algebra
    entries = x.entries if isinstance(x, AlgebraElement) else algebra.check_array(x)
    if isinstance(x, AlgebraElement) and x.algebra != algebra:
        raise RejectedInputError(f"element of M_{x.algebra.dim} passed to a unitary path on M_{algebra.dim}")
    u = up.unitary_at(t)
    return AlgebraElement(algebra.restrict(u @ entries @ u.conj().T), algebra)


@dataclass(frozen=True)
class ComparisonReport:
    t: float
    b0_discrepancy: float
    global_discrepancy: float
    samples: int
    projections: int

    @property
    def expected_global_agreement(self) -> bool:
        return self.projections <= 2


def compare_with_transport(
    up: UnitaryPath,
    P: Propagator,
    t: float,
    samples: Union[int, Sequence[AlgebraElement]] = 16,
    seed: SeedLike = 0,
) -> ComparisonReport:
    """max ||Omega_t(x) - G_t(x)||_2 over samples, separately for x in B_0 and for general x."""
    if P.expectation_path.path is not up.path:
        raise RejectedInputError("the unitary path and the propagator must share one projection path")
    algebra = up.algebra
    if isinstance(samples, int):
        rng = np.random.default_rng(seed)
        elements = [random_element(algebra, rng).entries for _ in range(samples)]
    else:
        elements = [s.entries for s in samples]
    if not elements:
        raise RejectedInputError("compare_with_transport needs at least one sample")
    stack = np.stack(elements)
    base, _ = up.path.frame(0.0)
    in_b0 = pinch(base, stack)
    u = up.unitary_at(t)
    u_star = u.conj().T

    def gap(xs: np.ndarray) -> float:
        return float(np.max(batch_two_norms(u @ xs @ u_star - P.apply_array(t, 0.0, xs))))

    report = ComparisonReport(float(t), gap(in_b0), gap(stack), len(elements), up.path.size)
    logger.info("Omega vs G at t=%g: B0 %.3g, global %.3g", t, report.b0_discrepancy, report.global_discrepancy)
    return report
