"""
Finite-dimensional tracial *-algebras.

The ambient algebra is M_n(C) with the normalized trace tau = (1/n) Tr, so that tau(1) = 1.
Elements double as vectors of the Hilbert-Schmidt space L^2(A, tau), whose inner product is
<x, y> = tau(y* x). Direct sums M_{n1} + ... + M_{nm} are represented inside M_n by a boolean
mask of allowed entries.

Superoperators act on raw arrays shaped (..., n, n) so that solvers can push whole batches
(quadrature nodes, basis elements) through them in one call. Their dense matrices are taken
with respect to the orthonormal basis {sqrt(n) e_ij} with row-major ordering; the
coordinate scaling cancels, so column k of the matrix is simply vec(F(e_k)).
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Union

import numpy as np

from algebra.errors import ConvergenceError, RejectedInputError

logger = logging.getLogger(__name__)

SeedLike = Union[None, int, Sequence[int], np.random.Generator]
ArrayMap = Callable[[np.ndarray], np.ndarray]

DEFAULT_ATOL = 1e-9  # projection identities and anti-hermiticity of generators


def named_rng(seed: int, name: str) -> np.random.Generator:
    # Named sub-stream of a scenario seed: the same (seed, name) always gives the same stream.
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


@dataclass(frozen=True, eq=False)
class TracialAlgebra:
    dim: int
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        dim = int(self.dim)
        if dim < 1:
            raise RejectedInputError(f"algebra dimension must be positive, got {self.dim}")
        object.__setattr__(self, "dim", dim)
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != (dim, dim):
                raise RejectedInputError(f"mask shape {mask.shape} does not match dimension {dim}")
            if not mask.diagonal().all():
                raise RejectedInputError("mask must contain the diagonal (the unit belongs to the algebra)")
            if not np.array_equal(mask, mask.T):
                raise RejectedInputError("mask must be symmetric (the algebra is closed under adjoints)")
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    @classmethod
    def direct_sum(cls, sizes: Sequence[int]) -> "TracialAlgebra":
        sizes = [int(s) for s in sizes]
        if not sizes or min(sizes) < 1:
            raise RejectedInputError(f"direct sum needs positive block sizes, got {sizes}")
        n = sum(sizes)
        mask = np.zeros((n, n), dtype=bool)
        start = 0
        for size in sizes:
            mask[start:start + size, start:start + size] = True
            start += size
        return cls(n, mask)

    @property
    def trace_normalization(self) -> float:
        return 1.0 / self.dim

    @property
    def basis_indices(self) -> np.ndarray:
        # Flat (row-major) indices of the matrix units belonging to the algebra.
        if self.mask is None:
            return np.arange(self.dim * self.dim)
        return np.flatnonzero(self.mask.reshape(-1))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TracialAlgebra) or other.dim != self.dim:
            return False
        if self.mask is None or other.mask is None:
            return self.mask is None and other.mask is None
        return bool(np.array_equal(self.mask, other.mask))

    def __hash__(self) -> int:
        return hash((self.dim, None if self.mask is None else self.mask.tobytes()))

    def trace(self, x: Union["AlgebraElement", np.ndarray]) -> complex:
        entries = x.entries if isinstance(x, AlgebraElement) else np.asarray(x)
        return complex(np.trace(entries, axis1=-2, axis2=-1) / self.dim)

    def element(self, entries) -> "AlgebraElement":
        return AlgebraElement(np.asarray(entries), self)

    def one(self) -> "AlgebraElement":
        return AlgebraElement(np.eye(self.dim), self)

    def zero(self) -> "AlgebraElement":
        return AlgebraElement(np.zeros((self.dim, self.dim)), self)

    def matrix_unit(self, i: int, j: int) -> "AlgebraElement":
        entries = np.zeros((self.dim, self.dim), dtype=complex)
        entries[i, j] = 1.0
        return AlgebraElement(entries, self)

    def units(self) -> np.ndarray:
        """Stack of the matrix units e_ij of the algebra, shape (m, n, n)."""
        idx = self.basis_indices
        stack = np.zeros((idx.size, self.dim * self.dim), dtype=complex)
        stack[np.arange(idx.size), idx] = 1.0
        return stack.reshape(idx.size, self.dim, self.dim)

    def hs_basis(self) -> List["AlgebraElement"]:
        """Orthonormal basis of L^2(A, tau): sqrt(n) e_ij over the allowed entries."""
        scale = np.sqrt(self.dim)
        return [AlgebraElement(scale * unit, self) for unit in self.units()]

    def to_coordinates(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return x.reshape(x.shape[:-2] + (self.dim * self.dim,))[..., self.basis_indices]

    def from_coordinates(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords)
        flat = np.zeros(coords.shape[:-1] + (self.dim * self.dim,), dtype=complex)
        flat[..., self.basis_indices] = coords
        return flat.reshape(coords.shape[:-1] + (self.dim, self.dim))

    def restrict(self, x: np.ndarray) -> np.ndarray:
        # Zero the entries outside the direct-sum blocks (rounding residue of products).
        x = np.asarray(x, dtype=complex)
        return x if self.mask is None else np.where(self.mask, x, 0.0)

    def check_array(self, x: np.ndarray, what: str = "element") -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        if x.shape[-2:] != (self.dim, self.dim):
            raise RejectedInputError(f"{what} has shape {x.shape[-2:]}, expected ({self.dim}, {self.dim})")
        if self.mask is not None and np.any(x[..., ~self.mask] != 0):
            raise RejectedInputError(f"{what} has entries outside the direct-sum blocks")
        return x


@dataclass(frozen=True, eq=False)
class AlgebraElement:
    entries: np.ndarray
    algebra: TracialAlgebra

    def __post_init__(self):
        entries = np.array(self.algebra.check_array(self.entries), dtype=complex)
        if entries.ndim != 2:
            raise RejectedInputError(f"an element is a single matrix, got shape {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def _same_algebra(self, other: "AlgebraElement") -> None:
        if not isinstance(other, AlgebraElement):
            raise RejectedInputError(f"expected an AlgebraElement, got {type(other).__name__}")
        if other.algebra != self.algebra:
            raise RejectedInputError(
                f"dimension mismatch: M_{self.algebra.dim} element combined with M_{other.algebra.dim} element"
            )

    def adjoint(self) -> "AlgebraElement":
        return AlgebraElement(self.entries.conj().T, self.algebra)

    def trace(self) -> complex:
        return self.algebra.trace(self.entries)

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        self._same_algebra(other)
        return AlgebraElement(self.entries + other.entries, self.algebra)

    def __sub__(self, other: "AlgebraElement") -> "AlgebraElement":
        self._same_algebra(other)
        return AlgebraElement(self.entries - other.entries, self.algebra)

    def __neg__(self) -> "AlgebraElement":
        return AlgebraElement(-self.entries, self.algebra)

    def __mul__(self, scalar: complex) -> "AlgebraElement":
        return AlgebraElement(complex(scalar) * self.entries, self.algebra)

    __rmul__ = __mul__

    def __matmul__(self, other: "AlgebraElement") -> "AlgebraElement":
        self._same_algebra(other)
        return AlgebraElement(self.entries @ other.entries, self.algebra)

    def __repr__(self) -> str:
        return f"AlgebraElement(M_{self.algebra.dim}, {np.array2string(self.entries, precision=4)})"


def as_array(x: Union[AlgebraElement, np.ndarray]) -> np.ndarray:
    return x.entries if isinstance(x, AlgebraElement) else np.asarray(x, dtype=complex)


def trace_inner_product(x: AlgebraElement, y: AlgebraElement) -> complex:
    """<x, y> = tau(y* x); linear in x, conjugate-linear in y."""
    x._same_algebra(y)
    return complex(np.vdot(y.entries, x.entries) / x.algebra.dim)


def two_norm(x: Union[AlgebraElement, np.ndarray], dim: Optional[int] = None) -> float:
    entries = as_array(x)
    n = x.algebra.dim if isinstance(x, AlgebraElement) else (dim or entries.shape[-1])
    return float(np.sqrt(np.sum(np.abs(entries) ** 2) / n))


def batch_two_norms(x: np.ndarray) -> np.ndarray:
    # 2-norms of a stack shaped (..., n, n).
    n = x.shape[-1]
    return np.sqrt(np.sum(np.abs(x) ** 2, axis=(-2, -1)) / n)


def op_norm(x: Union[AlgebraElement, np.ndarray]) -> float:
    return float(np.linalg.norm(as_array(x), 2))


@dataclass(frozen=True, eq=False)
class SuperOperator:
    func: ArrayMap
    domain_algebra: TracialAlgebra
    adjoint_func: Optional[ArrayMap] = None
    name: str = "superoperator"

    def apply_array(self, x: np.ndarray) -> np.ndarray:
        return self.func(np.asarray(x, dtype=complex))

    def apply(self, x: AlgebraElement) -> AlgebraElement:
        if x.algebra != self.domain_algebra:
            raise RejectedInputError(f"{self.name} acts on M_{self.domain_algebra.dim}, got M_{x.algebra.dim}")
        return AlgebraElement(self.func(x.entries), self.domain_algebra)

    __call__ = apply

    def matrix(self) -> np.ndarray:
        algebra = self.domain_algebra
        images = self.func(algebra.units())
        return algebra.to_coordinates(images).T

    def adjoint(self) -> "SuperOperator":
        if self.adjoint_func is not None:
            return SuperOperator(self.adjoint_func, self.domain_algebra, self.func, f"{self.name}*")
        algebra = self.domain_algebra
        adjoint_matrix = self.matrix().conj().T

        def func(x: np.ndarray) -> np.ndarray:
            return algebra.from_coordinates(algebra.to_coordinates(x) @ adjoint_matrix.T)

        return SuperOperator(func, algebra, self.func, f"{self.name}*")

    def compose(self, inner: "SuperOperator") -> "SuperOperator":
        """self o inner."""
        outer_func, inner_func = self.func, inner.func
        return SuperOperator(lambda x: outer_func(inner_func(x)), self.domain_algebra, name=f"{self.name}.{inner.name}")


def identity_superoperator(algebra: TracialAlgebra) -> SuperOperator:
    return SuperOperator(lambda x: x, algebra, lambda x: x, "identity")


@dataclass(frozen=True)
class NormEstimate:
    value: float
    method: str
    iterations: int = 0
    residual: float = 0.0


def superop_2to2_norm(
    operator: SuperOperator,
    method: str = "exact",
    max_iterations: int = 500,
    tol: float = 1e-12,
    seed: SeedLike = 0,
) -> NormEstimate:
    """sup{ ||F(a)||_2 : ||a||_2 = 1 }, exactly (top singular value) or by power iteration on F*F."""
    if method == "exact":
        matrix = operator.matrix()
        value = float(np.linalg.svd(matrix, compute_uv=False)[0]) if matrix.size else 0.0
        return NormEstimate(value, "exact")
    if method != "power":
        raise RejectedInputError(f"unknown norm method {method!r}; use 'exact' or 'power'")

    algebra = operator.domain_algebra
    adjoint = operator.adjoint()
    v = random_element(algebra, seed).entries
    v = v / two_norm(v)
    sigma = 0.0
    change = np.inf
    for iteration in range(1, max_iterations + 1):
        image = operator.apply_array(v)
        new_sigma = two_norm(image, algebra.dim)
        w = adjoint.apply_array(image)
        w_norm = two_norm(w, algebra.dim)
        if w_norm == 0.0:
            return NormEstimate(0.0, "power", iteration, 0.0)
        change = abs(new_sigma - sigma)
        sigma = new_sigma
        v = w / w_norm
        if change <= tol * max(sigma, 1.0):
            logger.debug("power iteration for %s converged in %d steps", operator.name, iteration)
            return NormEstimate(sigma, "power", iteration, change)
    raise ConvergenceError(
        f"power iteration for {operator.name} did not converge in {max_iterations} iterations",
        residual=float(change),
    )


def sampled_inf_norm(operator: SuperOperator, samples: Iterable[np.ndarray]) -> float:
    """Sampled lower estimate of the operator-norm-to-operator-norm bound of F."""
    best = 0.0
    for x in samples:
        size = op_norm(x)
        if size > 0.0:
            best = max(best, op_norm(operator.apply_array(x)) / size)
    return best


def random_element(algebra: TracialAlgebra, seed: SeedLike = None, kind: str = "general") -> AlgebraElement:
    """Entries i.i.d. standard complex Gaussian (E|z|^2 = 1); masked to the algebra."""
    if kind not in ("general", "selfadjoint"):
        raise RejectedInputError(f"unknown element kind {kind!r}; use 'general' or 'selfadjoint'")
    rng = np.random.default_rng(seed)
    n = algebra.dim
    g = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    if algebra.mask is not None:
        g = np.where(algebra.mask, g, 0.0)
    if kind == "selfadjoint":
        g = (g + g.conj().T) / 2.0
    return AlgebraElement(g, algebra)
