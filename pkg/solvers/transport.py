"""
Solvers for the transport equation alpha'(t) = H_t(alpha(t)), alpha(s) = a, and the propagator
G_{t,s}(a) = alpha_s(t) they produce.

Two backends share one interface (`solve(s, a, t)` on arrays shaped (..., n, n)):
  - PicardSolver: successive approximations S_{n+1}(t) = a + int_s^t H_u(S_n(u)) du on glued
    sub-intervals whose length is chosen from the Hypothesis constant so that each sweep
    contracts by the configured factor k0. The integral is taken on a fixed node grid with
    a cubic spline through u -> H_u(S_n(u)); in finite dimension weak and norm integrals agree.
  - ReferenceSolver: classical fourth-order Runge-Kutta, used for cross-validation and as the
    default (faster) backend of Propagator.
"""
from __future__ import annotations

import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline

from algebra.errors import ConfigurationError, ConvergenceError, RejectedInputError
from algebra.expectations import ExpectationPath, commutator, estimate_hypothesis_constant
from algebra.steppers import step_count
from algebra.tracial import AlgebraElement, as_array, batch_two_norms

logger = logging.getLogger(__name__)

# Differences below this size are rounding noise; their ratios say nothing about contraction.
RATIO_FLOOR = 1e-13
MAX_CACHED_MATRICES = 4096

ArrayLike = Union[AlgebraElement, np.ndarray]


@dataclass(frozen=True)
class PicardConfig:
    contraction_target: float = 0.5
    max_iterations: int = 60
    tolerance: float = 1e-12
    quadrature_nodes: int = 65
    max_subinterval: float = 0.25
    hypothesis_constant: Optional[float] = None
    hypothesis_grid: int = 256

    def __post_init__(self):
        if not 0.0 < self.contraction_target < 1.0:
            raise ConfigurationError(f"contraction target k0 must lie in (0, 1), got {self.contraction_target}")
        if self.tolerance <= 0:
            raise ConfigurationError(f"Picard tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigurationError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.quadrature_nodes < 4:
            raise ConfigurationError(f"quadrature_nodes must be at least 4, got {self.quadrature_nodes}")
        if self.max_subinterval <= 0:
            raise ConfigurationError(f"max_subinterval must be positive, got {self.max_subinterval}")
        if self.hypothesis_constant is not None and self.hypothesis_constant < 0:
            raise ConfigurationError(f"hypothesis constant must be non-negative, got {self.hypothesis_constant}")


@dataclass(frozen=True)
class SubIntervalReport:
    start: float
    end: float
    iterations: int
    ratios: Tuple[float, ...]
    final_difference: float

    @property
    def max_ratio(self) -> float:
        return max(self.ratios, default=0.0)


@dataclass
class PicardSequence:
    times: np.ndarray
    iterates: List[np.ndarray] = field(default_factory=list)

    def differences(self) -> List[float]:
        # sup over the grid of ||S_{n+1} - S_n||_2, n = 0, 1, ...
        return [float(np.max(batch_two_norms(b - a))) for a, b in zip(self.iterates, self.iterates[1:])]

    def contraction_ratios(self) -> List[float]:
        diffs = self.differences()
        return [b / a for a, b in zip(diffs, diffs[1:]) if a > RATIO_FLOOR]


def _cumulative_integral(nodes: np.ndarray, values: np.ndarray) -> np.ndarray:
    # int_{nodes[0]}^{nodes[j]} of the cubic spline through the values, for every node j.
    real = CubicSpline(nodes, values.real, axis=0).antiderivative()
    imag = CubicSpline(nodes, values.imag, axis=0).antiderivative()
    return (real(nodes) - real(nodes[0])) + 1j * (imag(nodes) - imag(nodes[0]))


def _expand(stack: np.ndarray, batch_ndim: int) -> np.ndarray:
    # (m, k, n, n) -> (m, 1, ..., 1, k, n, n) so it broadcasts against (m, *batch, n, n).
    return stack.reshape(stack.shape[:1] + (1,) * batch_ndim + stack.shape[1:])


class PicardSolver:
    backend = "picard"

    def __init__(self, ep: ExpectationPath, config: Optional[PicardConfig] = None):
        self.ep = ep
        self.config = config or PicardConfig()
        self.last_reports: List[SubIntervalReport] = []
        self._constant: Optional[float] = self.config.hypothesis_constant

    @property
    def hypothesis_constant(self) -> float:
        """Empirical C on the whole path interval; it bounds the constant of every sub-interval."""
        if self._constant is None:
            try:
                estimate = estimate_hypothesis_constant(self.ep, self.ep.interval, grid=self.config.hypothesis_grid)
            except RejectedInputError as exc:
                raise ConfigurationError(f"Hypothesis constant unavailable: {exc}") from exc
            if not math.isfinite(estimate.empirical):
                raise ConfigurationError("Hypothesis constant unavailable: estimate is not finite")
            self._constant = estimate.empirical
            logger.debug("Picard solver: empirical hypothesis constant %.6g", self._constant)
        return self._constant

    @property
    def subinterval_length(self) -> float:
        c = self.hypothesis_constant
        k0 = self.config.contraction_target
        length = k0 * k0 / c if c > 0 else math.inf
        return min(length, self.config.max_subinterval)

    @property
    def uniqueness_window(self) -> float:
        # Two solutions agreeing at s agree on |t - s| < 1/C.
        c = self.hypothesis_constant
        return 1.0 / c if c > 0 else math.inf

    def _frames(self, s: float, sigma: np.ndarray, sign: float):
        return self.ep.path.frames(s + sign * sigma)

    def _sweep(self, ps, dps, sigma, sign, start, current):
        # One Picard map: a + int_0^sigma sign * H_u(S(u)) dsigma, u = s + sign * sigma.
        batch_ndim = start.ndim - 2
        field_values = sign * commutator(_expand(ps, batch_ndim), _expand(dps, batch_ndim), current)
        return start[None] + _cumulative_integral(sigma, field_values)

    def _iterate_subinterval(self, s: float, t: float, start: np.ndarray) -> Tuple[np.ndarray, SubIntervalReport]:
        cfg = self.config
        sign = 1.0 if t >= s else -1.0
        sigma = np.linspace(0.0, abs(t - s), cfg.quadrature_nodes)
        ps, dps = self._frames(s, sigma, sign)
        current = np.broadcast_to(start, sigma.shape + start.shape).astype(complex)
        scale = max(1.0, float(np.max(batch_two_norms(start))))
        ratios: List[float] = []
        previous = None
        for iteration in range(1, cfg.max_iterations + 1):
            following = self._sweep(ps, dps, sigma, sign, start, current)
            difference = float(np.max(batch_two_norms(following - current)))
            if previous is not None and previous > RATIO_FLOOR:
                ratios.append(difference / previous)
            current, previous = following, difference
            if difference <= cfg.tolerance * scale:
                report = SubIntervalReport(s, t, iteration, tuple(ratios), difference)
                logger.debug("Picard [%g, %g]: %d iterations, max ratio %.3g", s, t, iteration, report.max_ratio)
                return current[-1], report
        raise ConvergenceError(
            f"Picard iteration on [{s:g}, {t:g}] did not reach {cfg.tolerance:g} in {cfg.max_iterations} iterations",
            residual=previous,
            context={"last_ratio": ratios[-1] if ratios else float("nan")},
        )

    def partition(self, s: float, t: float) -> np.ndarray:
        length = self.subinterval_length
        pieces = 1 if not math.isfinite(length) else max(1, math.ceil(abs(t - s) / length - 1e-9))
        return np.linspace(s, t, pieces + 1)

    def solve(self, s: float, a: ArrayLike, t: float) -> np.ndarray:
        path = self.ep.path
        s, t = path.check_time(s), path.check_time(t)
        value = self.ep.algebra.check_array(as_array(a))
        self.last_reports = []
        if s == t:
            return value.copy()
        knots = self.partition(s, t)
        for left, right in zip(knots, knots[1:]):
            value, report = self._iterate_subinterval(float(left), float(right), value)
            self.last_reports.append(report)
        return value

    def sequence(self, s0: float, a: ArrayLike, t_grid: Sequence[float], n_max: int) -> PicardSequence:
        """The iterates S_0 ... S_{n_max} evaluated on t_grid (no gluing, no stopping rule)."""
        path = self.ep.path
        s0 = path.check_time(s0)
        grid = np.asarray(t_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise RejectedInputError("t_grid must be a non-empty strictly increasing sequence")
        if grid[0] < s0:
            raise RejectedInputError(f"t_grid starts at {grid[0]}, before s0 = {s0}")
        path.check_time(grid[-1])
        start = self.ep.algebra.check_array(as_array(a))
        prepend = grid[0] > s0
        nodes = np.concatenate([[s0], grid]) if prepend else grid
        sigma = nodes - s0
        ps, dps = path.frames(nodes)
        current = np.broadcast_to(start, sigma.shape + start.shape).astype(complex)
        iterates = [current]
        for _ in range(max(int(n_max), 0)):
            current = self._sweep(ps, dps, sigma, 1.0, start, current)
            iterates.append(current)
        if prepend:
            iterates = [it[1:] for it in iterates]
        return PicardSequence(grid, iterates)


class ReferenceSolver:
    backend = "reference"

    def __init__(self, ep: ExpectationPath, step: float = 1e-3):
        if step <= 0:
            raise RejectedInputError(f"RK4 step must be positive, got {step}")
        self.ep = ep
        self.step = float(step)

    def solve(self, s: float, a: ArrayLike, t: float) -> np.ndarray:
        path = self.ep.path
        s, t = path.check_time(s), path.check_time(t)
        y = np.array(self.ep.algebra.check_array(as_array(a)), dtype=complex)
        if s == t:
            return y
        n_steps = step_count(t - s, self.step)
        h = (t - s) / n_steps
        rhs = self.ep.apply_h
        for i in range(n_steps):
            u = s + i * h
            # the last node is pinned to t so the frame lookup never leaves the interval
            end = t if i == n_steps - 1 else u + h
            k1 = rhs(u, y)
            k2 = rhs(u + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(u + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(end, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return y


def picard_sequence(ep: ExpectationPath, s0: float, a: ArrayLike, t_grid: Sequence[float], n_max: int,
                    config: Optional[PicardConfig] = None) -> PicardSequence:
    return PicardSolver(ep, config).sequence(s0, a, t_grid, n_max)


def picard_solve(ep: ExpectationPath, s: float, a: AlgebraElement, t: float,
                 config: Optional[PicardConfig] = None) -> AlgebraElement:
    return AlgebraElement(PicardSolver(ep, config).solve(s, a, t), ep.algebra)


def reference_solve(ep: ExpectationPath, s: float, a: AlgebraElement, t: float, step: float = 1e-3) -> AlgebraElement:
    return AlgebraElement(ReferenceSolver(ep, step).solve(s, a, t), ep.algebra)


class Propagator:
    """G_{t,s}, with dense HS matrices in a bounded LRU cache keyed by (t, s); safe for concurrent reads."""

    def __init__(self, ep: ExpectationPath, solver, cache_size: int = MAX_CACHED_MATRICES):
        if cache_size < 1:
            raise ConfigurationError(f"propagator cache size must be positive, got {cache_size}")
        self.expectation_path = ep
        self.solver = solver
        self.algebra = ep.algebra
        self.cache_size = cache_size
        self._matrices: "OrderedDict[Tuple[float, float], np.ndarray]" = OrderedDict()
        self._lock = threading.Lock()

    @property
    def backend(self) -> str:
        return self.solver.backend

    def _store(self, t: float, s: float, matrix: np.ndarray) -> np.ndarray:
        matrix.setflags(write=False)
        with self._lock:
            self._matrices[(t, s)] = matrix
            self._matrices.move_to_end((t, s))
            while len(self._matrices) > self.cache_size:
                self._matrices.popitem(last=False)
        return matrix

    def matrix(self, t: float, s: float) -> np.ndarray:
        key = (float(t), float(s))
        with self._lock:
            cached = self._matrices.get(key)
            if cached is not None:
                self._matrices.move_to_end(key)
        if cached is not None:
            return cached
        logger.debug("propagator cache miss for G[%g, %g] (%s)", t, s, self.backend)
        images = self.solver.solve(key[1], self.algebra.units(), key[0])
        return self._store(key[0], key[1], np.swapaxes(self.algebra.to_coordinates(images), -1, -2))

    def inverse(self, t: float, s: float) -> np.ndarray:
        return self.matrix(s, t)

    def apply_array(self, t: float, s: float, x: np.ndarray) -> np.ndarray:
        algebra = self.algebra
        coords = algebra.to_coordinates(algebra.check_array(x))
        return algebra.from_coordinates(coords @ self.matrix(t, s).T)

    def apply(self, t: float, s: float, a: AlgebraElement) -> AlgebraElement:
        return AlgebraElement(self.apply_array(t, s, a.entries), self.algebra)

    def trajectory(self, s: float, a: ArrayLike, times: Sequence[float]) -> np.ndarray:
        """alpha_s(t) for every t in times, marching outwards from s on each side."""
        times = np.asarray(times, dtype=float)
        start = self.algebra.check_array(as_array(a))
        out = np.empty(times.shape + start.shape, dtype=complex)
        for side in (times >= s, times < s):
            order = np.flatnonzero(side)
            order = order[np.argsort(np.abs(times[order] - s), kind="stable")]
            value, current = start, float(s)
            for i in order:
                value = self.solver.solve(current, value, float(times[i]))
                current = float(times[i])
                out[i] = value
        return out

    def matrices_along(self, times: Sequence[float]) -> np.ndarray:
        """Dense G_{t,0} for every t (one outward march), also stored in the cache."""
        times = np.asarray(times, dtype=float)
        images = self.trajectory(0.0, self.algebra.units(), times)
        matrices = np.swapaxes(self.algebra.to_coordinates(images), -1, -2)
        for t, matrix in zip(times, matrices):
            self._store(float(t), 0.0, np.array(matrix))
        return matrices


def propagator(ep: ExpectationPath, backend: str = "reference", step: float = 1e-3,
               config: Optional[PicardConfig] = None) -> Propagator:
    if backend == "reference":
        return Propagator(ep, ReferenceSolver(ep, step))
    if backend == "picard":
        return Propagator(ep, PicardSolver(ep, config))
    raise ConfigurationError(f"unknown solver backend {backend!r}; use 'reference' or 'picard'")


def apply(P: Propagator, t: float, s: float, a: AlgebraElement) -> AlgebraElement:
    return P.apply(t, s, a)


@dataclass(frozen=True)
class LipschitzEstimate:
    steps: Tuple[float, ...]
    slopes: Tuple[float, ...]

    @property
    def constant(self) -> float:
        return max(self.slopes, default=0.0)

    @property
    def refinement_spread(self) -> float:
        # relative change of the slope between the two finest steps
        if len(self.slopes) < 2:
            return 0.0
        fine, finer = self.slopes[-2], self.slopes[-1]
        size = max(abs(fine), abs(finer))
        return 0.0 if size < 1e-12 else abs(fine - finer) / size


def lipschitz_in_s(P: Propagator, t: float, s: float, a: AlgebraElement,
                   steps: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> LipschitzEstimate:
    """Slopes ||G_{t,s+h}(a) - G_{t,s}(a)||_2 / |h|; bounded by the constant D'."""
    base = P.apply_array(t, s, a.entries)
    slopes = []
    n = P.algebra.dim
    _, t_max = P.expectation_path.interval
    for h in steps:
        shifted = s + h if s + h <= t_max else s - h
        moved = P.solver.solve(shifted, a.entries, t)
        slopes.append(float(np.sqrt(np.sum(np.abs(moved - base) ** 2) / n)) / abs(h))
    return LipschitzEstimate(tuple(float(h) for h in steps), tuple(slopes))
