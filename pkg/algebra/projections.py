"""
Smooth curves of finite projection systems.

A projection system is a tuple (p_1, ..., p_k) of pairwise orthogonal projections summing to 1.
The primary way to build a curve of systems is by conjugation, p_i(t) = u_t p_i(0) u_t*, where
u_t solves u' = K(t) u, u_0 = 1 for an anti-Hermitian generator K. This keeps ranks and
orthogonality exact and gives the analytic derivative p_i'(t) = [K(t), p_i(t)].

Curves given as tables of systems are supported too (cubic interpolation, finite-difference
derivatives); they only satisfy the projection identities approximately.

Infinite systems are out of reach here: an infinite system is modelled by its finite truncations.
"""
from __future__ import annotations

import functools
import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import expm

from algebra.errors import RejectedInputError
from algebra.steppers import propagate
from algebra.tracial import DEFAULT_ATOL, AlgebraElement, TracialAlgebra, as_array, batch_two_norms, named_rng, op_norm

logger = logging.getLogger(__name__)

Interval = Tuple[float, float]
Frame = Tuple[np.ndarray, np.ndarray]


# ---- Projection systems ----

@dataclass(frozen=True, eq=False)
class ProjectionSystem:
    projections: Tuple[AlgebraElement, ...]

    def __post_init__(self):
        projections = tuple(self.projections)
        if not projections:
            raise RejectedInputError("a projection system needs at least one projection")
        for p in projections[1:]:
            projections[0]._same_algebra(p)
        object.__setattr__(self, "projections", projections)

    @classmethod
    def from_arrays(cls, algebra: TracialAlgebra, stack: np.ndarray) -> "ProjectionSystem":
        return cls(tuple(AlgebraElement(p, algebra) for p in np.asarray(stack)))

    @classmethod
    def from_ranks(cls, algebra: TracialAlgebra, ranks: Sequence[int]) -> "ProjectionSystem":
        """Diagonal block projections of the given ranks (the block structure r_1 + ... + r_k = n)."""
        ranks = [int(r) for r in ranks]
        if not ranks or min(ranks) < 1:
            raise RejectedInputError(f"ranks must be positive integers, got {ranks}")
        if sum(ranks) != algebra.dim:
            raise RejectedInputError(f"ranks {ranks} sum to {sum(ranks)}, expected {algebra.dim}")
        stack = np.zeros((len(ranks), algebra.dim, algebra.dim), dtype=complex)
        start = 0
        for i, r in enumerate(ranks):
            stack[i, range(start, start + r), range(start, start + r)] = 1.0
            start += r
        return cls.from_arrays(algebra, stack)

    @property
    def algebra(self) -> TracialAlgebra:
        return self.projections[0].algebra

    @property
    def stack(self) -> np.ndarray:
        return np.stack([p.entries for p in self.projections])

    @property
    def ranks(self) -> List[int]:
        return [int(round(p.trace().real * self.algebra.dim)) for p in self.projections]

    def __len__(self) -> int:
        return len(self.projections)

    def residuals(self) -> Dict[str, float]:
        ps = self.stack
        n = self.algebra.dim
        cross = 0.0
        for i in range(len(ps)):
            for j in range(len(ps)):
                if i != j:
                    cross = max(cross, float(batch_two_norms(ps[i] @ ps[j])))
        return {
            "selfadjoint": float(np.max(batch_two_norms(ps - ps.conj().swapaxes(-1, -2)))),
            "idempotent": float(np.max(batch_two_norms(ps @ ps - ps))),
            "orthogonal": cross,
            "sum": float(batch_two_norms(ps.sum(axis=0) - np.eye(n))),
        }

    def validate(self, tol: float = DEFAULT_ATOL) -> "ProjectionSystem":
        bad = {name: value for name, value in self.residuals().items() if value > tol}
        if bad:
            raise RejectedInputError(f"not a projection system (residuals above {tol:g}): {bad}")
        return self


@dataclass(frozen=True, eq=False)
class PathDerivative:
    dots: Tuple[AlgebraElement, ...]

    @property
    def stack(self) -> np.ndarray:
        return np.stack([d.entries for d in self.dots])

    def residuals(self, system: ProjectionSystem) -> Dict[str, float]:
        ds, ps = self.stack, system.stack
        return {
            "selfadjoint": float(np.max(batch_two_norms(ds - ds.conj().swapaxes(-1, -2)))),
            "idempotency": float(np.max(batch_two_norms(ds @ ps + ps @ ds - ds))),
            "sum": float(batch_two_norms(ds.sum(axis=0))),
        }


# ---- Generators ----

class ConstantGenerator:
    time_homogeneous = True

    def __init__(self, matrix: np.ndarray):
        matrix = np.array(matrix, dtype=complex)
        matrix.setflags(write=False)
        self.matrix = matrix

    def __call__(self, t: float) -> np.ndarray:
        return self.matrix

    def __repr__(self) -> str:
        return f"ConstantGenerator({np.array2string(self.matrix, precision=3)})"


class TabulatedGenerator:
    """K(t) interpolated from a table; the anti-Hermitian part of the interpolant is returned."""
    time_homogeneous = False

    def __init__(self, times: Sequence[float], values: np.ndarray, kind: str = "cubic"):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=complex)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise RejectedInputError("generator table needs at least two strictly increasing times")
        if values.shape[0] != len(times):
            raise RejectedInputError("generator table has mismatched times and values")
        if kind not in ("cubic", "linear"):
            raise RejectedInputError(f"unknown interpolation rule {kind!r}")
        self.times, self.values, self.kind = times, values, kind
        if kind == "cubic":
            self._real = CubicSpline(times, values.real, axis=0)
            self._imag = CubicSpline(times, values.imag, axis=0)

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "cubic":
            a = self._real(t) + 1j * self._imag(t)
        else:
            i = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.times) - 2))
            w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
            a = (1.0 - w) * self.values[i] + w * self.values[i + 1]
        return 0.5 * (a - a.conj().T)


def rotation_generator(dim: int, i: int, j: int, speed: float = 1.0) -> ConstantGenerator:
    """speed * (e_ji - e_ij): a plane rotation mixing basis vectors i and j."""
    if not (0 <= i < dim and 0 <= j < dim) or i == j:
        raise RejectedInputError(f"rotation({i},{j}) is not a valid plane in dimension {dim}")
    k = np.zeros((dim, dim), dtype=complex)
    k[j, i] = speed
    k[i, j] = -speed
    return ConstantGenerator(k)


def random_generator(algebra: TracialAlgebra, seed: int, scale: float = 1.0, stream: str = "path") -> ConstantGenerator:
    """Random anti-Hermitian generator with operator norm `scale` (masked to the algebra)."""
    rng = named_rng(seed, stream)
    n = algebra.dim
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if algebra.mask is not None:
        g = np.where(algebra.mask, g, 0.0)
    k = 0.5 * (g - g.conj().T)
    size = op_norm(k)
    return ConstantGenerator(k * (scale / size) if size > 0 else k)


# ---- Paths ----

class ProjectionPath:
    """Curve t -> (p_1(t), ..., p_k(t)) on a closed interval containing 0."""

    def __init__(self, base_system: ProjectionSystem, interval: Interval):
        t_min, t_max = float(interval[0]), float(interval[1])
        if not t_min <= 0.0 <= t_max or t_min == t_max:
            raise RejectedInputError(f"interval [{t_min}, {t_max}] must be non-degenerate and contain 0")
        self.base_system = base_system
        self.interval = (t_min, t_max)
        self.algebra = base_system.algebra
        self._frames = functools.lru_cache(maxsize=16384)(self._compute_frame)

    @property
    def size(self) -> int:
        return len(self.base_system)

    def check_time(self, t: float) -> float:
        t = float(t)
        t_min, t_max = self.interval
        slack = 1e-12 * (1.0 + max(abs(t_min), abs(t_max)))
        if not (t_min - slack <= t <= t_max + slack):
            raise RejectedInputError(f"t = {t} lies outside the path interval [{t_min}, {t_max}]")
        return t

    def check_subinterval(self, J: Interval) -> Interval:
        a, b = float(J[0]), float(J[1])
        if a > b:
            raise RejectedInputError(f"interval [{a}, {b}] is reversed")
        self.check_time(a)
        self.check_time(b)
        return a, b

    def frame(self, t: float) -> Frame:
        """(stack of p_i(t), stack of p_i'(t)), both shaped (k, n, n) and read-only."""
        return self._frames(self.check_time(t))

    def _compute_frame(self, t: float) -> Frame:
        raise NotImplementedError

    def frames(self, times: Sequence[float]) -> Frame:
        pairs = [self.frame(t) for t in times]
        return np.stack([p for p, _ in pairs]), np.stack([d for _, d in pairs])

    def evaluate(self, t: float) -> ProjectionSystem:
        return ProjectionSystem.from_arrays(self.algebra, self.frame(t)[0])

    def derivative(self, t: float) -> PathDerivative:
        return PathDerivative(tuple(AlgebraElement(d, self.algebra) for d in self.frame(t)[1]))


def _freeze(*arrays: np.ndarray) -> Tuple[np.ndarray, ...]:
    for a in arrays:
        a.setflags(write=False)
    return arrays


class RotationPath(ProjectionPath):
    def __init__(
        self,
        base_system: ProjectionSystem,
        generator: Callable[[float], np.ndarray],
        interval: Interval = (0.0, 1.0),
        step: float = 1e-3,
        stepper: str = "magnus4",
    ):
        super().__init__(base_system, interval)
        if step <= 0:
            raise RejectedInputError(f"unitary step must be positive, got {step}")
        self.generator = generator
        self.step = float(step)
        self.stepper = stepper
        self._base = base_system.stack
        self._checkpoints: Optional[Dict[int, np.ndarray]] = None
        self._lock = threading.Lock()

    @property
    def time_homogeneous(self) -> bool:
        return bool(getattr(self.generator, "time_homogeneous", False))

    def unitary(self, t: float) -> np.ndarray:
        t = self.check_time(t)
        if self.time_homogeneous:
            return expm(t * self.generator(0.0))
        checkpoints = self._ensure_checkpoints()
        k = int(math.trunc(t / self.step))
        k = max(min(k, max(checkpoints)), min(checkpoints))
        start = k * self.step
        return propagate(self.generator, checkpoints[k], start, t, self.step, self.stepper)

    def _ensure_checkpoints(self) -> Dict[int, np.ndarray]:
        # u at k * step for every k inside the interval, computed once.
        with self._lock:
            if self._checkpoints is None:
                n = self.algebra.dim
                checkpoints = {0: np.eye(n, dtype=complex)}
                t_min, t_max = self.interval
                for direction, bound in ((1, t_max), (-1, t_min)):
                    u = checkpoints[0]
                    for k in range(1, int(math.floor(abs(bound) / self.step + 1e-9)) + 1):
                        u = propagate(self.generator, u, direction * (k - 1) * self.step, direction * k * self.step,
                                      self.step, self.stepper)
                        checkpoints[direction * k] = u
                logger.debug("rotation path: %d unitary checkpoints precomputed", len(checkpoints))
                self._checkpoints = checkpoints
            return self._checkpoints

    def _compute_frame(self, t: float) -> Frame:
        u = self.unitary(t)
        ps = u @ self._base @ u.conj().T
        k = self.generator(t)
        dps = k @ ps - ps @ k
        return _freeze(ps, dps)


class TabulatedProjectionPath(ProjectionPath):
    def __init__(
        self,
        times: Sequence[float],
        systems: Sequence[ProjectionSystem],
        fd_order: int = 2,
        fd_step: Optional[float] = None,
        reorthogonalize: bool = False,
    ):
        times = np.asarray(times, dtype=float)
        if len(times) < 4 or np.any(np.diff(times) <= 0):
            raise RejectedInputError("a tabulated path needs at least four strictly increasing times")
        if len(systems) != len(times):
            raise RejectedInputError("a tabulated path needs one system per time")
        if fd_order not in (2, 4):
            raise RejectedInputError(f"finite-difference order must be 2 or 4, got {fd_order}")
        stacks = np.stack([s.stack for s in systems])
        self._real = CubicSpline(times, stacks.real, axis=0)
        self._imag = CubicSpline(times, stacks.imag, axis=0)
        self.fd_order = fd_order
        self.fd_step = fd_step
        self.reorthogonalize = reorthogonalize
        if not times[0] <= 0.0 <= times[-1]:
            raise RejectedInputError("the table must cover t = 0")
        base = ProjectionSystem.from_arrays(systems[0].algebra, self._interpolate(0.0))
        super().__init__(base, (times[0], times[-1]))

    def _interpolate(self, t: float) -> np.ndarray:
        ps = self._real(t) + 1j * self._imag(t)
        if self.reorthogonalize:
            ps = np.stack([_nearest_projection(p) for p in ps])
        return ps

    def _compute_frame(self, t: float) -> Frame:
        h = self.fd_step if self.fd_step is not None else 1e-5 * (1.0 + abs(t))
        p = self._interpolate
        if self.fd_order == 2:
            dps = (p(t + h) - p(t - h)) / (2.0 * h)
        else:
            dps = (-p(t + 2 * h) + 8.0 * p(t + h) - 8.0 * p(t - h) + p(t - 2 * h)) / (12.0 * h)
        return _freeze(np.array(p(t)), np.array(dps))


def _nearest_projection(p: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(0.5 * (p + p.conj().T))
    keep = vectors[:, values >= 0.5]
    return keep @ keep.conj().T


# ---- Operations ----

def make_rotation_path(
    base: ProjectionSystem,
    generator,
    interval: Interval = (0.0, 1.0),
    step: float = 1e-3,
    stepper: str = "magnus4",
    tol: float = DEFAULT_ATOL,
) -> RotationPath:
    """p_i(t) = u_t p_i(0) u_t* with u' = K(t) u, u_0 = 1."""
    base.validate(tol)
    if not callable(generator):
        generator = ConstantGenerator(as_array(generator))
    algebra = base.algebra
    for t in np.linspace(interval[0], interval[1], 9):
        k = algebra.check_array(generator(float(t)), "generator")
        if float(batch_two_norms(k + k.conj().T)) > tol * max(1.0, float(batch_two_norms(k))):
            raise RejectedInputError(f"generator is not anti-Hermitian at t = {t:g}")
    return RotationPath(base, generator, interval, step, stepper)


def evaluate(path: ProjectionPath, t: float) -> ProjectionSystem:
    return path.evaluate(t)


def derivative(path: ProjectionPath, t: float) -> PathDerivative:
    return path.derivative(t)


@dataclass(frozen=True)
class SquareSummableEstimate:
    value: float
    interval: Interval
    grid: int


def square_summable_constant(path: ProjectionPath, J: Interval, grid: int) -> SquareSummableEstimate:
    """max over the grid of lambda_max(sum_i p_i'(t)* p_i'(t)), the best D with sum ||p_i' xi||^2 <= D ||xi||^2."""
    if int(grid) < 1:
        raise RejectedInputError(f"grid must be a positive number of points, got {grid}")
    a, b = path.check_subinterval(J)
    best = 0.0
    for t in np.linspace(a, b, int(grid)):
        _, dps = path.frame(t)
        gram = np.einsum("kji,kjl->il", dps.conj(), dps)
        best = max(best, float(np.linalg.eigvalsh(gram)[-1]))
    return SquareSummableEstimate(max(best, 0.0), (a, b), int(grid))


def generator_sup_norm(path: RotationPath, J: Interval, grid: int) -> float:
    """K_J = sup ||u_t'||_inf = sup ||K(t)||_inf over the grid (u_t is unitary)."""
    a, b = path.check_subinterval(J)
    return max(op_norm(path.generator(float(t))) for t in np.linspace(a, b, max(int(grid), 1)))
