"""Explicit Runge-Kutta steppers shared by curve integration and H transport.

States are numpy arrays of any shape; the right-hand side maps
``(t, y) -> dy/dt`` with the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["rk4_step", "rkf45_step", "StepSizeUnderflow", "AdaptiveResult", "integrate_adaptive"]

Rhs = Callable[[float, np.ndarray], np.ndarray]


class StepSizeUnderflow(RuntimeError):
    pass


def rk4_step(f: Rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One classical fourth-order step."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Fehlberg 4(5) tableau
_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)


def rkf45_step(f: Rhs, t: float, y: np.ndarray, h: float):
    """One Fehlberg step; returns the 4th-order update and the local error estimate."""
    ks = []
    for c, row in zip(_C, _A):
        yi = y
        for a, k in zip(row, ks):
            if a:
                yi = yi + (h * a) * k
        ks.append(f(t + c * h, yi))
    y4 = y + h * sum(b * k for b, k in zip(_B4, ks) if b)
    y5 = y + h * sum(b * k for b, k in zip(_B5, ks) if b)
    return y4, y5 - y4


@dataclass
class AdaptiveResult:
    ts: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0
    max_error: float = 0.0


def integrate_adaptive(
    f: Rhs,
    y0: np.ndarray,
    t0: float,
    t1: float,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    h0: float | None = None,
    on_step: Callable[[float, np.ndarray], None] | None = None,
) -> AdaptiveResult:
    """Adaptive Fehlberg 4(5) integration from t0 to t1 (t1 > t0)."""
    span = t1 - t0
    if span <= 0:
        raise ValueError("t1 must exceed t0")
    h = h0 if h0 is not None else span / 64
    h_min = 1e-14 * max(1.0, abs(t0), abs(t1))
    t, y = t0, np.asarray(y0, dtype=float)
    res = AdaptiveResult(ts=[t], ys=[y.copy()])
    while t < t1:
        h = min(h, t1 - t)
        y_new, err = rkf45_step(f, t, y, h)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        ratio = float(np.max(np.abs(err) / scale))
        if ratio <= 1.0:
            t = t + h if t1 - t > h else t1
            y = y_new
            res.ts.append(t)
            res.ys.append(y.copy())
            res.accepted += 1
            res.max_error = max(res.max_error, float(np.max(np.abs(err))))
            if on_step is not None:
                on_step(t, y)
        else:
            res.rejected += 1
        factor = 0.9 * ratio ** -0.2 if ratio > 0 else 5.0
        h = h * min(5.0, max(0.2, factor))
        if h < h_min and t < t1:
            raise StepSizeUnderflow(f"step size underflow at t={t:.6g}")
    return res
