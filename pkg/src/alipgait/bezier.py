"""Scalar Bezier curves over a normalized phase s in [0, 1]."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "BezierCurve",
    "evaluate",
    "evaluate_many",
    "derivative",
    "retime_hold_start",
    "bernstein_matrix",
    "fit_endpoint_constrained",
]


@dataclass(frozen=True)
class BezierCurve:
    """Scalar Bezier curve defined by its control points.

    Parameters
    ----------
    coefficients : sequence of float
        Control points alpha_0 .. alpha_M.  The order is M = len - 1.
        Stored curves use at least two points; a single point (order 0)
        only appears as the derivative of a line.
    """

    coefficients: tuple

    def __post_init__(self):
        c = tuple(float(a) for a in self.coefficients)
        if len(c) < 1:
            raise ParameterError("Bezier curve needs at least one coefficient")
        if not all(math.isfinite(a) for a in c):
            raise ParameterError("Bezier coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, s):
        return evaluate(self, s)

    def as_array(self) -> np.ndarray:
        return np.array(self.coefficients, dtype=float)


def _check_phase(s):
    if not (0.0 <= s <= 1.0):
        raise DomainError(f"phase {s!r} outside [0, 1]")


def evaluate(curve: BezierCurve, s: float) -> float:
    """Evaluate the curve at phase `s` by de Casteljau recursion.

    The endpoints are reproduced exactly: ``evaluate(c, 0) == alpha_0`` and
    ``evaluate(c, 1) == alpha_M``.
    """
    s = float(s)
    _check_phase(s)
    b = list(curve.coefficients)
    n = len(b)
    t = 1.0 - s
    for r in range(1, n):
        for i in range(n - r):
            b[i] = t * b[i] + s * b[i + 1]
    return b[0]


def evaluate_many(curve: BezierCurve, s) -> np.ndarray:
    """Vectorized de Casteljau over an array of phases."""
    s = np.asarray(s, dtype=float)
    if s.size and (s.min() < 0.0 or s.max() > 1.0):
        raise DomainError("phase array leaves [0, 1]")
    c = curve.coefficients
    b = [np.full(s.shape, a) for a in c]
    t = 1.0 - s
    for r in range(1, len(c)):
        for i in range(len(c) - r):
            b[i] = t * b[i] + s * b[i + 1]
    return b[0]


def derivative(curve: BezierCurve) -> BezierCurve:
    """d/ds of the curve as a curve of one lower order.

    An order-0 input has no slope and maps to the zero constant curve.
    """
    a = curve.coefficients
    M = len(a) - 1
    if M == 0:
        return BezierCurve((0.0,))
    return BezierCurve(tuple(M * (a[k + 1] - a[k]) for k in range(M)))


def retime_hold_start(curve: BezierCurve, k: int, lam: float) -> BezierCurve:
    """Pull the first `k` interior control points toward alpha_0.

    Each pulled point becomes ``a_j + lam * (a_0 - a_j)``, which makes the
    curve linger near its initial value before moving on.  Endpoints and
    order are unchanged.
    """
    a = list(curve.coefficients)
    M = len(a) - 1
    if k < 0 or k > M - 1:
        raise ParameterError(f"k={k} must lie in [0, {M - 1}] for order {M}")
    if not (0.0 <= lam <= 1.0):
        raise ParameterError(f"lambda={lam} must lie in [0, 1]")
    for j in range(1, k + 1):
        a[j] = a[j] + lam * (a[0] - a[j])
    return BezierCurve(tuple(a))


def bernstein_matrix(order: int, s) -> np.ndarray:
    """Rows of Bernstein basis values, shape (len(s), order + 1)."""
    s = np.asarray(s, dtype=float)[:, None]
    k = np.arange(order + 1)
    binom = np.array([math.comb(order, j) for j in k], dtype=float)
    return binom * s**k * (1.0 - s) ** (order - k)


def fit_endpoint_constrained(s: Sequence[float], values: Sequence[float],
                             order: int) -> BezierCurve:
    """Least-squares fit that pins the end control points to the end samples.

    `s` must start at 0 and end at 1 so the pinned points are exact.
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(values, dtype=float)
    if order < 1 or len(s) < order + 1:
        raise ParameterError("not enough samples for the requested order")
    if s[0] != 0.0 or s[-1] != 1.0:
        raise ParameterError("samples must span the phase interval [0, 1]")
    B = bernstein_matrix(order, s)
    a0, aM = v[0], v[-1]
    if order == 1:
        return BezierCurve((a0, aM))
    rhs = v - B[:, 0] * a0 - B[:, -1] * aM
    inner, *_ = np.linalg.lstsq(B[:, 1:-1], rhs, rcond=None)
    return BezierCurve((a0, *inner.tolist(), aM))
