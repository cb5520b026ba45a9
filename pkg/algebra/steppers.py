# Norm-preserving integrators for u' = A(t) u with A(t) anti-Hermitian.
import math
from typing import Callable, Dict

import numpy as np
from scipy.linalg import expm

from algebra.errors import RejectedInputError

Field = Callable[[float], np.ndarray]

GAUSS_OFFSET = math.sqrt(3.0) / 6.0


def midpoint_step(field: Field, t: float, h: float) -> np.ndarray:
    # exp(h A(t + h/2)); second order.
    return expm(h * field(t + 0.5 * h))


def magnus4_step(field: Field, t: float, h: float) -> np.ndarray:
    # Fourth-order Magnus step with two Gauss-Legendre nodes.
    a1 = field(t + (0.5 - GAUSS_OFFSET) * h)
    a2 = field(t + (0.5 + GAUSS_OFFSET) * h)
    omega = 0.5 * h * (a1 + a2) + (math.sqrt(3.0) / 12.0) * h * h * (a2 @ a1 - a1 @ a2)
    return expm(omega)


STEPPERS: Dict[str, Callable[[Field, float, float], np.ndarray]] = {
    "midpoint": midpoint_step,
    "magnus4": magnus4_step,
}


def get_stepper(name: str):
    try:
        return STEPPERS[name]
    except KeyError:
        raise RejectedInputError(f"unknown stepper {name!r}; choose from {sorted(STEPPERS)}") from None


def step_count(span: float, step: float) -> int:
    if step <= 0:
        raise RejectedInputError(f"step must be positive, got {step}")
    return max(1, math.ceil(abs(span) / step - 1e-9))


def propagate(field: Field, u0: np.ndarray, t0: float, t1: float, step: float, stepper: str = "magnus4") -> np.ndarray:
    """Integrate u' = A(t) u from t0 to t1 with steps of length at most `step`."""
    if t1 == t0:
        return np.array(u0, dtype=complex)
    advance = get_stepper(stepper)
    n_steps = step_count(t1 - t0, step)
    h = (t1 - t0) / n_steps
    u = np.array(u0, dtype=complex)
    for i in range(n_steps):
        u = advance(field, t0 + i * h, h) @ u
    return u
