"""Effective metric H with nabla H = 0, realised by parallel transport.

H is carried from the base point along straight coordinate segments with

    dH_ab/ds = xdot^c (Gamma^d_ca H_db + Gamma^d_cb H_ad),

and its partial derivatives are rebuilt algebraically from the same
relation, ``dH[c, a, b] = Gamma^d_ca H_db + Gamma^d_cb H_ad``. Whether the
result is path independent is a property of the geometry; use
:func:`holonomy_defect` to measure it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .connection import gamma_at
from .geometry import GeometrySpec
from .integrators import integrate_adaptive, rk4_step

__all__ = [
    "DEFAULT_STEPS_PER_UNIT",
    "DEFAULT_DEGENERACY_THRESHOLD",
    "HState",
    "DegeneracyReport",
    "transport_h",
    "h_at",
    "holonomy_defect",
    "holonomy_convergence",
    "degeneracy_check",
    "reconstruct_dh",
    "christoffel_of_h",
    "covariant_derivative_h",
]

DEFAULT_STEPS_PER_UNIT = 256
DEFAULT_DEGENERACY_THRESHOLD = 1e-10


@dataclass(frozen=True, eq=False)
class HState:
    x: np.ndarray
    H: np.ndarray
    detH: np.ndarray | float
    dH: np.ndarray  # dH[c, a, b] = d_c H_ab
    degenerate: np.ndarray | bool
    min_abs_det: np.ndarray | float  # smallest |det H| seen along the transport
    asymmetry: float  # largest pre-symmetrisation drift seen
    steps: int = 0

    def to_dict(self) -> dict:
        return {
            "x": np.asarray(self.x).tolist(),
            "H": np.asarray(self.H).tolist(),
            "detH": np.asarray(self.detH).tolist(),
            "dH": np.asarray(self.dH).tolist(),
            "degenerate": np.asarray(self.degenerate).tolist(),
            "min_abs_det": np.asarray(self.min_abs_det).tolist(),
            "asymmetry": float(self.asymmetry),
            "steps": int(self.steps),
        }


@dataclass(frozen=True)
class DegeneracyReport:
    detH: float
    smallest_singular_value: float
    degenerate: bool
    threshold: float
    advice: str = ""

    def to_dict(self) -> dict:
        return {
            "detH": self.detH,
            "smallest_singular_value": self.smallest_singular_value,
            "degenerate": self.degenerate,
            "threshold": self.threshold,
            "advice": self.advice,
        }


def reconstruct_dh(gamma: np.ndarray, H: np.ndarray) -> np.ndarray:
    """d_c H_ab implied by nabla H = 0."""
    t = np.einsum("...dca,...db->...cab", gamma, H)
    return t + np.swapaxes(t, -1, -2)


def christoffel_of_h(H: np.ndarray, dH: np.ndarray) -> np.ndarray:
    """1/2 (H^-1)^ad (d_b H_cd + d_c H_bd - d_d H_bc), with H^-1 the matrix inverse."""
    Hinv = np.linalg.inv(H)
    T = (np.einsum("...bcd->...dbc", dH) + np.einsum("...cbd->...dbc", dH) - dH)
    return 0.5 * np.einsum("...ad,...dbc->...abc", Hinv, T)


def covariant_derivative_h(gamma: np.ndarray, H: np.ndarray, dH: np.ndarray) -> np.ndarray:
    """nabla_c H_ab = d_c H_ab - Gamma^d_ca H_db - Gamma^d_cb H_ad."""
    return dH - reconstruct_dh(gamma, H)


def _step_rhs(spec, starts, delta):
    def rhs(s, H):
        x = starts + s * delta
        gam = gamma_at(spec, x)
        M = np.einsum("...c,...dca->...ad", delta, gam)
        return M @ H + H @ np.swapaxes(M, -1, -2)
    return rhs


def _transport_batch(spec, starts, ends, H0, steps, method, threshold, rtol=1e-10):
    """Transport H0 (B, n, n) from starts to ends (B, n) along straight segments."""
    delta = ends - starts
    H = np.array(H0, dtype=float, copy=True)
    min_det = np.abs(np.linalg.det(H))
    worst_asym = 0.0
    if steps == 0 or not np.any(delta):
        return H, min_det, worst_asym, 0

    rhs = _step_rhs(spec, starts, delta)

    def tidy(Hn):
        nonlocal worst_asym, min_det
        asym = float(np.max(np.abs(Hn - np.swapaxes(Hn, -1, -2))))
        worst_asym = max(worst_asym, asym)
        Hn = 0.5 * (Hn + np.swapaxes(Hn, -1, -2))
        min_det = np.minimum(min_det, np.abs(np.linalg.det(Hn)))
        return Hn

    if method == "rk4":
        h = 1.0 / steps
        for i in range(steps):
            H = tidy(rk4_step(rhs, i * h, H, h))
        return H, min_det, worst_asym, steps
    if method == "rkf45":
        box = {"H": H}

        def on_step(_t, y):
            box["H"] = tidy(y)

        # symmetrisation happens after acceptance; the stepper sees the raw state
        res = integrate_adaptive(rhs, H, 0.0, 1.0, rtol=rtol, atol=1e-14, h0=1.0 / max(steps, 1),
                                 on_step=on_step)
        return box["H"], min_det, worst_asym, res.accepted
    raise ValueError(f"unknown method {method!r}")


def _state(spec, x, H, min_det, asym, steps, threshold):
    gam = gamma_at(spec, x)
    det = np.linalg.det(H)
    return HState(
        x=x,
        H=H,
        detH=det if np.ndim(det) else float(det),
        dH=reconstruct_dh(gam, H),
        degenerate=(min_det <= threshold) if np.ndim(min_det) else bool(min_det <= threshold),
        min_abs_det=min_det if np.ndim(min_det) else float(min_det),
        asymmetry=asym,
        steps=steps,
    )


def _default_steps(distance: float, steps_per_unit: int) -> int:
    if distance == 0.0:
        return 0
    return max(1, math.ceil(steps_per_unit * distance))


def transport_h(
    spec: GeometrySpec,
    path,
    H_start,
    steps: int | None = None,
    method: str = "rk4",
    threshold: float = DEFAULT_DEGENERACY_THRESHOLD,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> HState:
    """Parallel transport ``H_start`` along ``path`` and return the end state.

    ``path`` is one of

    * ``(x_start, x_end)``: a straight coordinate segment;
    * an array of shape (m, n): a polyline, ``steps`` per leg;
    * a callable ``s -> (x(s), xdot(s))`` on s in [0, 1]; ``steps`` is required.

    When ``steps`` is None the segment/leg gets ``steps_per_unit`` steps per unit
    of coordinate length.
    """
    H = np.asarray(H_start, dtype=float)
    if callable(path):
        if not steps:
            raise ValueError("a parametrised path needs an explicit step count")
        return _transport_curve(spec, path, H, steps, threshold)
    if isinstance(path, tuple) and len(path) == 2:
        pts = np.array([path[0], path[1]], dtype=float)
    else:
        pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != spec.dim or len(pts) < 2:
        raise ValueError("path must be (x_start, x_end), an (m, n) polyline, or a callable")
    min_det = abs(float(np.linalg.det(H)))
    asym = 0.0
    total = 0
    for a, b in zip(pts[:-1], pts[1:]):
        k = steps if steps is not None else _default_steps(float(np.linalg.norm(b - a)), steps_per_unit)
        H, md, asm, used = _transport_batch(spec, a[None], b[None], H[None], k, method, threshold)
        H = H[0]
        min_det = min(min_det, float(md[0]) if np.ndim(md) else float(md))
        asym = max(asym, asm)
        total += used
    return _state(spec, pts[-1], H, min_det, asym, total, threshold)


def _transport_curve(spec, path: Callable, H, steps, threshold):
    def rhs(s, Hc):
        x, xdot = path(s)
        gam = gamma_at(spec, np.asarray(x, dtype=float))
        M = np.einsum("c,dca->ad", np.asarray(xdot, dtype=float), gam)
        return M @ Hc + Hc @ M.T

    min_det = abs(float(np.linalg.det(H)))
    asym = 0.0
    h = 1.0 / steps
    for i in range(steps):
        Hn = rk4_step(rhs, i * h, H, h)
        asym = max(asym, float(np.max(np.abs(Hn - Hn.T))))
        H = 0.5 * (Hn + Hn.T)
        min_det = min(min_det, abs(float(np.linalg.det(H))))
    x_end, _ = path(1.0)
    return _state(spec, np.asarray(x_end, dtype=float), H, min_det, asym, steps, threshold)


def h_at(
    spec: GeometrySpec,
    x,
    steps: int | None = None,
    method: str = "rk4",
    threshold: float = DEFAULT_DEGENERACY_THRESHOLD,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> HState:
    """H at ``x`` by transport of ``spec.h0`` along the segment from the base point.

    ``x`` may be a batch (..., n); all points are transported in lockstep with a
    common step count (the largest one needed), so the result is a smooth
    function of ``x`` at fixed ``steps``.
    """
    x = np.asarray(x, dtype=float)
    n = spec.dim
    batch = x.shape[:-1]
    flat = x.reshape(-1, n)
    starts = np.broadcast_to(spec.base_point, flat.shape)
    if steps is None:
        dist = float(np.max(np.linalg.norm(flat - starts, axis=-1))) if len(flat) else 0.0
        steps = _default_steps(dist, steps_per_unit)
    H0 = np.broadcast_to(spec.h0_matrix(), (len(flat), n, n))
    H, min_det, asym, used = _transport_batch(spec, starts, flat, H0, steps, method, threshold)
    H = H.reshape(batch + (n, n))
    min_det = np.asarray(min_det).reshape(batch)
    if not batch:
        min_det = float(min_det)
    return _state(spec, x, H, min_det, asym, used, threshold)


def _loop_points(loop) -> np.ndarray:
    pts = np.asarray(loop, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise ValueError("a polygonal loop needs at least three vertices")
    if np.max(np.abs(pts[0] - pts[-1])) > 1e-12:
        raise ValueError("loop is not closed (first and last vertex differ by more than 1e-12)")
    return pts


def holonomy_defect(
    spec: GeometrySpec,
    loop,
    H_start=None,
    steps: int = 64,
    method: str = "rk4",
) -> float:
    """max |H_returned - H_start| after transport around a closed loop.

    ``loop`` is a closed polygon (first vertex repeated at the end) with
    ``steps`` integration steps per edge, or a closed parametrised curve
    ``s -> (x, xdot)`` integrated with ``steps`` steps in total.
    """
    if callable(loop):
        x0, _ = loop(0.0)
        x1, _ = loop(1.0)
        if np.max(np.abs(np.asarray(x0) - np.asarray(x1))) > 1e-12:
            raise ValueError("loop is not closed (endpoints differ by more than 1e-12)")
        start = np.asarray(x0, dtype=float)
    else:
        pts = _loop_points(loop)
        start = pts[0]
    H0 = (np.asarray(H_start, dtype=float) if H_start is not None
          else h_at(spec, start).H)
    if callable(loop):
        end = transport_h(spec, loop, H0, steps=steps)
    else:
        end = transport_h(spec, pts, H0, steps=steps, method=method)
    return float(np.max(np.abs(end.H - H0)))


def holonomy_convergence(
    spec: GeometrySpec,
    loop,
    H_start=None,
    steps: Sequence[int] = (8, 16, 32, 64, 128),
    method: str = "rk4",
) -> list[dict]:
    """Defect for each step count and the observed order between successive rows."""
    rows = []
    prev = None
    for k in steps:
        d = holonomy_defect(spec, loop, H_start, steps=k, method=method)
        order = None
        if prev is not None and prev[1] > 0 and d > 0:
            order = math.log(prev[1] / d) / math.log(k / prev[0])
        rows.append({"steps": int(k), "defect": d, "order": order})
        prev = (k, d)
    return rows


def degeneracy_check(h: HState | np.ndarray, threshold: float = DEFAULT_DEGENERACY_THRESHOLD) -> DegeneracyReport:
    """Diagnose a (single-point) H; never raises."""
    H = np.asarray(h.H if isinstance(h, HState) else h, dtype=float)
    det = float(np.linalg.det(H))
    smin = float(np.linalg.svd(H, compute_uv=False)[-1])
    flag = abs(det) <= threshold
    advice = ""
    if flag:
        if smin > 0 and abs(det) > 0:
            advice = (
                f"|det H| = {abs(det):.3e} is below {threshold:.1e} but H is not singular "
                f"(smallest singular value {smin:.3e}); rescale h0 by a constant factor "
                "or move the base point closer to the region of interest"
            )
        else:
            advice = "H is singular; no non-degenerate effective metric from this initial value"
    return DegeneracyReport(detH=det, smallest_singular_value=smin, degenerate=flag,
                            threshold=threshold, advice=advice)
