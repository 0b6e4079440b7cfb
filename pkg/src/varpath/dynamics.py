"""Autoparallel and geodesic curves, the norm action and its Euler-Lagrange residual.

The action of a curve is ``S = int sqrt|H_ab xdot^a xdot^b| dlambda`` with H
the transported effective metric. ``el_residual`` evaluates the
Euler-Lagrange operator of that Lagrangian on sampled curves, which is how
the autoparallel property is checked without trusting the integrator.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson

from .connection import gamma_at
from .geometry import GeometrySpec, fields_at
from .integrators import integrate_adaptive, rk4_step
from .transport import DEFAULT_STEPS_PER_UNIT, HState, h_at

__all__ = [
    "NULL_THRESHOLD",
    "Trajectory",
    "ActionReport",
    "LagrangianValue",
    "NullCurveError",
    "InsufficientSamplesError",
    "integrate_curve",
    "lagrangian_at",
    "el_residual",
    "action_value",
    "generalized_proper_time",
    "norm_drift",
    "h_along",
]

NULL_THRESHOLD = 1e-14


class NullCurveError(ValueError):
    pass


class InsufficientSamplesError(ValueError):
    pass


@dataclass(eq=False)
class Trajectory:
    kind: str  # "autoparallel" | "geodesic" | "sampled"
    lam: np.ndarray  # (N,)
    x: np.ndarray  # (N, n)
    v: np.ndarray  # (N, n)
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.shape != self.v.shape or self.x.shape[0] != self.lam.shape[0]:
            raise ValueError("lam, x and v must have matching sample counts")
        if np.any(np.diff(self.lam) <= 0):
            raise ValueError("lambda must be strictly increasing")

    def __len__(self) -> int:
        return len(self.lam)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def columns(self) -> list[str]:
        n = self.dim
        return ["lambda"] + [f"x{i}" for i in range(n)] + [f"v{i}" for i in range(n)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for lam, x, v in zip(self.lam, self.x, self.v):
            w.writerow([repr(float(lam))] + [repr(float(c)) for c in x] + [repr(float(c)) for c in v])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "columns": self.columns(),
            "lambda": self.lam.tolist(),
            "x": self.x.tolist(),
            "v": self.v.tolist(),
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(d.get("kind", "sampled"), d["lambda"], d["x"], d["v"], dict(d.get("stats", {})))

    @classmethod
    def from_csv(cls, text: str, kind: str = "sampled") -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        n = (len(header) - 1) // 2
        return cls(kind, body[:, 0], body[:, 1:1 + n], body[:, 1 + n:])


@dataclass(frozen=True)
class ActionReport:
    value: float
    el_residual_max: float
    affine_defect: float

    def to_dict(self) -> dict:
        return {"value": self.value, "el_residual_max": self.el_residual_max,
                "affine_defect": self.affine_defect}


class LagrangianValue(NamedTuple):
    value: np.ndarray | float
    null: np.ndarray | bool


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------

def _curve_rhs(spec, kind):
    n = spec.dim

    def rhs(_lam, y):
        x, v = y[:n], y[n:]
        gam = gamma_at(spec, x, kind)
        acc = -np.einsum("abc,b,c->a", gam, v, v)
        return np.concatenate([v, acc])

    return rhs


def integrate_curve(
    spec: GeometrySpec,
    kind: str,
    x0,
    v0,
    lambda_span=(0.0, 1.0),
    steps: int = 1000,
    method: str = "rk4",
    rtol: float = 1e-9,
    atol: float = 1e-12,
) -> Trajectory:
    """Solve xddot^a = -Gamma^a_bc xdot^b xdot^c from (x0, v0).

    ``kind="geodesic"`` keeps only the Levi-Civita part of Gamma. ``method`` is
    ``"rk4"`` (fixed ``steps``) or ``"rkf45"`` (adaptive, ``rtol``).
    """
    if kind not in ("autoparallel", "geodesic"):
        raise ValueError(f"kind must be 'autoparallel' or 'geodesic', got {kind!r}")
    n = spec.dim
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if x0.shape != (n,) or v0.shape != (n,):
        raise ValueError(f"x0 and v0 must have length {n}")
    if not np.any(v0):
        raise ValueError("v0 must be non-zero")
    lam0, lam1 = map(float, lambda_span)
    rhs = _curve_rhs(spec, kind)
    y0 = np.concatenate([x0, v0])
    if method == "rk4":
        h = (lam1 - lam0) / steps
        ys = np.empty((steps + 1, 2 * n))
        ys[0] = y0
        for i in range(steps):
            ys[i + 1] = rk4_step(rhs, lam0 + i * h, ys[i], h)
        lam = lam0 + h * np.arange(steps + 1)
        lam[-1] = lam1
        stats = {"integrator": "rk4", "steps": steps, "max_error_estimate": None}
    elif method == "rkf45":
        res = integrate_adaptive(rhs, y0, lam0, lam1, rtol=rtol, atol=atol,
                                 h0=(lam1 - lam0) / max(steps, 1))
        lam = np.array(res.ts)
        ys = np.array(res.ys)
        stats = {"integrator": "rkf45", "steps": res.accepted, "rejected": res.rejected,
                 "max_error_estimate": res.max_error, "rtol": rtol}
    else:
        raise ValueError(f"unknown method {method!r}")
    return Trajectory(kind, lam, ys[:, :n], ys[:, n:], stats)


# --------------------------------------------------------------------------
# Lagrangian and action
# --------------------------------------------------------------------------

def lagrangian_at(h: HState | np.ndarray, v) -> LagrangianValue:
    """sqrt|H_ab v^a v^b| and a flag for (near-)null velocities."""
    H = h.H if isinstance(h, HState) else np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    q = np.einsum("...ab,...a,...b->...", H, v, v)
    val = np.sqrt(np.abs(q))
    null = np.abs(q) < NULL_THRESHOLD
    if np.ndim(val) == 0:
        return LagrangianValue(float(val), bool(null))
    return LagrangianValue(val, null)


def h_along(spec: GeometrySpec, traj: Trajectory, steps: int | None = None) -> HState:
    """H at every sample of ``traj`` with one common transport step count."""
    if steps is None:
        dist = float(np.max(np.linalg.norm(traj.x - spec.base_point, axis=-1)))
        steps = max(1, math.ceil(DEFAULT_STEPS_PER_UNIT * dist)) if dist > 0 else 0
    return h_at(spec, traj.x, steps=steps)


def _fd_weights(z: float, xs: np.ndarray, m: int) -> np.ndarray:
    """Weights of the m-th derivative at z from values at nodes xs (Fornberg)."""
    n = len(xs)
    c1 = 1.0
    c4 = xs[0] - z
    C = np.zeros((n, m + 1))
    C[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - z
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    C[i, k] = c1 * (k * C[i - 1, k - 1] - c5 * C[i - 1, k]) / c2
                C[i, 0] = -c1 * c5 * C[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                C[j, k] = (c4 * C[j, k] - k * C[j, k - 1]) / c3
            C[j, 0] = c4 * C[j, 0] / c3
        c1 = c2
    return C[:, m]


_HALF_WIDTH = 2  # five-point centred stencil


def _stencil_derivative(lam: np.ndarray, values: np.ndarray) -> np.ndarray:
    """d/dlambda at interior samples via five-point centred weights."""
    N = len(lam)
    k = _HALF_WIDTH
    uniform = np.allclose(np.diff(lam), lam[1] - lam[0], rtol=1e-12, atol=0.0)
    if uniform:
        h = lam[1] - lam[0]
        w = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
        return sum(wj * values[j:N - 2 * k + j] for j, wj in enumerate(w) if wj)
    out = np.empty((N - 2 * k,) + values.shape[1:])
    for i in range(k, N - k):
        w = _fd_weights(lam[i], lam[i - k:i + k + 1], 1)
        out[i - k] = np.tensordot(w, values[i - k:i + k + 1], axes=1)
    return out


def _check_samples(traj: Trajectory):
    if len(traj) < 2 * _HALF_WIDTH + 1:
        raise InsufficientSamplesError(
            f"need at least {2 * _HALF_WIDTH + 1} samples for the lambda stencil, got {len(traj)}"
        )


def _lagrangian_samples(hs: HState, traj: Trajectory):
    q = np.einsum("...ab,...a,...b->...", hs.H, traj.v, traj.v)
    if np.any(np.abs(q) < NULL_THRESHOLD):
        i = int(np.argmax(np.abs(q) < NULL_THRESHOLD))
        raise NullCurveError(f"null tangent at sample {i} (lambda={traj.lam[i]:.6g}); action undefined")
    return q


def action_value(spec: GeometrySpec, traj: Trajectory, hs: HState | None = None) -> float:
    """Composite Simpson quadrature of sqrt|H(xdot, xdot)| over the samples."""
    hs = h_along(spec, traj) if hs is None else hs
    q = _lagrangian_samples(hs, traj)
    return float(simpson(np.sqrt(np.abs(q)), x=traj.lam))


def el_residual(
    spec: GeometrySpec, traj: Trajectory, steps: int | None = None, hs: HState | None = None
) -> ActionReport:
    """Euler-Lagrange residual of L = sqrt|H xdot xdot| on a sampled curve.

    d/dlambda(dL/dxdot) is taken with a centred stencil in lambda on
    ``sgn(q) H xdot / L``; dL/dx uses the algebraic ``dH``. Only interior
    samples (two away from either end) enter the maxima. A precomputed
    ``hs = h_along(spec, traj)`` may be passed to avoid a second transport.
    """
    _check_samples(traj)
    hs = h_along(spec, traj, steps) if hs is None else hs
    q = _lagrangian_samples(hs, traj)
    sgn = np.sign(q)
    L = np.sqrt(np.abs(q))
    p = sgn[:, None] * np.einsum("iab,ib->ia", hs.H, traj.v) / L[:, None]
    dLdx = sgn[:, None] * np.einsum("icab,ia,ib->ic", hs.dH, traj.v, traj.v) / (2.0 * L[:, None])
    dp = _stencil_derivative(traj.lam, p)
    k = _HALF_WIDTH
    resid = dp - dLdx[k:len(traj) - k]
    dL = _stencil_derivative(traj.lam, L)
    value = float(simpson(L, x=traj.lam))
    return ActionReport(value=value, el_residual_max=float(np.max(np.abs(resid))),
                        affine_defect=float(np.max(np.abs(dL))))


def generalized_proper_time(spec: GeometrySpec, traj: Trajectory) -> float:
    """int exp(-w/2) sqrt|g xdot xdot| dlambda with w the running integral of
    Q(xdot, xdot, xdot) / g(xdot, xdot) (cumulative trapezoid)."""
    pf = fields_at(spec, traj.x, order=0)
    gvv = np.einsum("iab,ia,ib->i", pf.g, traj.v, traj.v)
    if np.any(np.abs(gvv) < NULL_THRESHOLD):
        raise NullCurveError("g(xdot, xdot) vanishes on a sample")
    qvvv = np.einsum("iabc,ia,ib,ic->i", pf.Q, traj.v, traj.v, traj.v)
    w = cumulative_trapezoid(qvvv / gvv, traj.lam, initial=0.0)
    return float(simpson(np.exp(-0.5 * w) * np.sqrt(np.abs(gvv)), x=traj.lam))


def norm_drift(spec: GeometrySpec, traj: Trajectory, hs: HState | None = None) -> float:
    """max_i |H(v_i, v_i) - H(v_0, v_0)| / |H(v_0, v_0)|."""
    hs = h_along(spec, traj) if hs is None else hs
    q = np.einsum("iab,ia,ib->i", hs.H, traj.v, traj.v)
    ref = abs(q[0]) if q[0] != 0 else 1.0
    return float(np.max(np.abs(q - q[0])) / ref)


def trajectory_json(traj: Trajectory) -> str:
    return json.dumps(traj.to_dict(), sort_keys=True)
