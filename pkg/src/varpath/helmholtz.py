"""Helmholtz (Sonin-Douglas) conditions for xddot = F(x, xdot) with multiplier H.

Conditions evaluated, each reported as a max-abs residual:

* h1: d H_ab / d xdot^c - d H_cb / d xdot^a
* h2 (generic): dH_ab/dlambda + 1/2 (H_ac dF^c/dxdot^b + H_bc dF^c/dxdot^a)
* h2 (connection form): xdot^a nabla_a H_bc - xdot^a xdot^e Gamma^d_ae dH_bc/dxdot^d
* h3 (generic): (d_c H_ab - d_a H_cb) F^b + H_ab d_c F^b - H_cb d_a F^b
  - 1/2 xdot^b d_b (H_ad dF^d/dxdot^c - H_cd dF^d/dxdot^a)
* h3 (simplified, valid once nabla H = 0): xdot^a xdot^b (H_ic R_kab^c - H_kc R_iab^c)
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .connection import ConnectionPoint, connection_at, levi_civita_at, weyl_disformation
from .expr import Expression, parse
from .geometry import GeometrySpec, fields_at
from .transport import HState, h_at, reconstruct_dh

__all__ = [
    "DEFAULT_TOLERANCE",
    "ForceJet",
    "HelmholtzReport",
    "autoparallel_force",
    "helmholtz_batch",
    "helmholtz_residuals",
    "reference_force",
    "sample_states",
]

DEFAULT_TOLERANCE = 1e-7
_FD_STEP = 1e-5


class ForceJet(NamedTuple):
    F: np.ndarray  # F^a
    dF_dv: np.ndarray  # [a, b] = dF^a / dxdot^b
    dF_dx: np.ndarray  # [a, c] = dF^a / dx^c
    d2F_dxdv: np.ndarray  # [a, c, b] = d^2 F^a / dx^b dxdot^c


@dataclass(frozen=True)
class HelmholtzReport:
    x: np.ndarray
    v: np.ndarray
    h1: float
    h2_generic: float
    h2_connection: float
    h3_generic: float
    h3_simplified: float
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def residuals(self) -> dict:
        return {
            "h1": self.h1,
            "h2_generic": self.h2_generic,
            "h2_connection": self.h2_connection,
            "h3_generic": self.h3_generic,
            "h3_simplified": self.h3_simplified,
        }

    @property
    def passed(self) -> bool:
        return all(r <= self.tolerance for r in self.residuals.values())

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "v": self.v.tolist(), **self.residuals,
                "tolerance": self.tolerance, "pass": self.passed}


def _force_from(cp_gamma, cp_dgamma, v) -> ForceJet:
    F = -np.einsum("abc,b,c->a", cp_gamma, v, v)
    dF_dv = -2.0 * np.einsum("abd,d->ab", cp_gamma, v)
    dF_dx = -np.einsum("cabd,b,d->ac", cp_dgamma, v, v)
    d2F = -2.0 * np.einsum("bace,e->acb", cp_dgamma, v)
    return ForceJet(F, dF_dv, dF_dx, d2F)


def autoparallel_force(spec: GeometrySpec, x, v, cp: ConnectionPoint | None = None) -> ForceJet:
    """F^a = -Gamma^a_bc v^b v^c with exact velocity and position Jacobians."""
    cp = connection_at(spec, x) if cp is None else cp
    return _force_from(cp.gamma, cp.dgamma, np.asarray(v, dtype=float))


# --------------------------------------------------------------------------
# multiplier sources
# --------------------------------------------------------------------------

class _Multiplier(NamedTuple):
    H: np.ndarray
    dH_dx: np.ndarray  # [c, a, b]
    dH_dv: np.ndarray  # [c, a, b]
    d_dx_of: Callable  # (func(x) -> array) -> d/dx^b stacked on axis 0


def _multiplier(spec, x, v, source, cp):
    """Resolve the multiplier H and its partial derivatives at (x, v)."""
    n = spec.dim
    zeros = np.zeros((n, n, n))
    if isinstance(source, str) and source == "solved":
        hs = h_at(spec, x)
        H = hs.H
        dH = reconstruct_dh(cp.gamma, H)
        return H, dH, zeros
    if isinstance(source, HState):
        return source.H, reconstruct_dh(cp.gamma, source.H), zeros
    if isinstance(source, str) and source == "metric":
        return cp.fields.g, cp.fields.dg, zeros
    if callable(source):
        H = np.asarray(source(x, v), dtype=float)
        dx = np.empty((n, n, n))
        dv = np.empty((n, n, n))
        for c in range(n):
            e = np.zeros(n)
            e[c] = _FD_STEP
            dx[c] = (np.asarray(source(x + e, v)) - np.asarray(source(x - e, v))) / (2 * _FD_STEP)
            dv[c] = (np.asarray(source(x, v + e)) - np.asarray(source(x, v - e))) / (2 * _FD_STEP)
        return H, dx, dv
    H = np.asarray(source, dtype=float)
    if H.shape != (n, n):
        raise ValueError(f"explicit multiplier must be {n} x {n}")
    return H, zeros, zeros


def _hdF(H, dH_dx, force: ForceJet):
    """d_b (H_ad dF^d/dxdot^c) as [b, a, c] for velocity-independent H."""
    return (np.einsum("bad,dc->bac", dH_dx, force.dF_dv)
            + np.einsum("ad,dcb->bac", H, force.d2F_dxdv))


def helmholtz_residuals(
    spec: GeometrySpec,
    x,
    v,
    H_source="solved",
    tolerance: float = DEFAULT_TOLERANCE,
    force: ForceJet | None = None,
) -> HelmholtzReport:
    """All Helmholtz residuals at one state for the autoparallel force.

    ``H_source`` is ``"solved"`` (transported H, algebraic dH), an already
    solved single-point :class:`HState`, ``"metric"`` (H = g), a constant
    matrix, or a callable ``H(x, v)`` whose derivatives are taken by central
    differences. ``force`` overrides the autoparallel force.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    cp = connection_at(spec, x)
    F = autoparallel_force(spec, x, v, cp) if force is None else force
    H, dH_dx, dH_dv = _multiplier(spec, x, v, H_source, cp)
    if abs(np.linalg.det(H)) <= 1e-12:
        raise ValueError("multiplier is degenerate at this state")
    gam = cp.gamma

    # h1[c, a, b] = dH_ab/dv^c - dH_cb/dv^a
    h1 = dH_dv - np.einsum("acb->cab", dH_dv)

    dH_dlam = np.einsum("c,cab->ab", v, dH_dx) + np.einsum("c,cab->ab", F.F, dH_dv)
    HdF = H @ F.dF_dv
    h2g = dH_dlam + 0.5 * (HdF + HdF.T)

    nabla_H = dH_dx - reconstruct_dh(gam, H)
    h2c = (np.einsum("a,abc->bc", v, nabla_H)
           - np.einsum("a,e,dae,dbc->bc", v, v, gam, dH_dv))

    # generic (H3), indices (a, c) free
    t1 = np.einsum("cab,b->ac", dH_dx, F.F) - np.einsum("acb,b->ac", dH_dx, F.F)
    t2 = np.einsum("ab,bc->ac", H, F.dF_dx) - np.einsum("cb,ba->ac", H, F.dF_dx)
    D = _hdF(H, dH_dx, F)  # D[b, a, c] = d_b (H_ad dF^d/dv^c)
    t3 = -0.5 * np.einsum("b,bac->ac", v, D - np.swapaxes(D, 1, 2))
    h3g = t1 + t2 + t3

    Rv = np.einsum("kabc,a,b->kc", cp.riemann, v, v)  # R_kab^c v^a v^b
    h3s = np.einsum("ic,kc->ik", H, Rv) - np.einsum("kc,ic->ik", H, Rv)

    def norm(t):
        return float(np.max(np.abs(t)))

    return HelmholtzReport(
        x=x, v=v, h1=norm(h1), h2_generic=norm(h2g), h2_connection=norm(h2c),
        h3_generic=norm(h3g), h3_simplified=norm(h3s), tolerance=tolerance,
    )


def helmholtz_batch(
    spec: GeometrySpec,
    xs,
    vs,
    H_source="solved",
    tolerance: float = DEFAULT_TOLERANCE,
    threads: int = 1,
) -> list[HelmholtzReport]:
    """Residuals at many states, in input order.

    With ``H_source="solved"`` all points are transported together in one
    lockstep batch first. ``threads > 1`` spreads the per-state work over a
    thread pool.
    """
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    sources = [H_source] * len(xs)
    if isinstance(H_source, str) and H_source == "solved":
        hs = h_at(spec, xs)
        sources = [
            HState(x=xs[i], H=hs.H[i], detH=hs.detH[i], dH=hs.dH[i], degenerate=bool(hs.degenerate[i]),
                   min_abs_det=hs.min_abs_det[i], asymmetry=hs.asymmetry, steps=hs.steps)
            for i in range(len(xs))
        ]

    def one(i):
        return helmholtz_residuals(spec, xs[i], vs[i], sources[i], tolerance)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(len(xs))))
    return [one(i) for i in range(len(xs))]


# --------------------------------------------------------------------------
# reference forces
# --------------------------------------------------------------------------

def _table(spec, table, shape):
    """Evaluate an expression table (strings, numbers or Expressions) at x later."""
    if table is None:
        return None
    arr = np.array(table, dtype=object)
    if arr.shape != shape:
        raise ValueError(f"expected a table of shape {shape}, got {arr.shape}")
    out = np.empty(shape, dtype=object)
    for idx, item in np.ndenumerate(arr):
        out[idx] = item if isinstance(item, Expression) else parse(
            item if isinstance(item, str) else repr(float(item)), spec.coords)
    return out


def _eval_table(table, x, shape):
    if table is None:
        return np.zeros(shape)
    out = np.empty(shape)
    for idx, e in np.ndenumerate(table):
        out[idx] = e(x)
    return out


def reference_force(kind: str, spec: GeometrySpec, P, S, x, v) -> np.ndarray:
    """Most general forces compatible with H = g (``prop31``) or H = exp(-omega) g (``prop32``).

    prop31: F^a = -{a bc} v^b v^c + P^a_b v^b + S^a
    prop32: F^a = -({a bc} + L^a_bc) v^b v^c + P^a_b v^b + S^a, with L the
    closed-form Weyl disformation built from omega.
    """
    n = spec.dim
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    Pm = _eval_table(_table(spec, P, (n, n)), x, (n, n))
    Sv = _eval_table(_table(spec, S, (n,)), x, (n,))
    pf = fields_at(spec, x, order=1)
    chris, _ = levi_civita_at(pf, derivatives=False)
    if kind == "prop31":
        conn = chris
    elif kind == "prop32":
        if spec.mode != "weyl":
            raise ValueError("prop32 needs a Weyl-mode geometry (omega)")
        conn = chris + weyl_disformation(pf)
    else:
        raise ValueError(f"unknown reference force {kind!r}")
    return -np.einsum("abc,b,c->a", conn, v, v) + Pm @ v + Sv


def sample_states(rng: np.random.Generator, box, count: int, speed: float = 1.0):
    """Uniform (x, v) samples: x in the box ``[(lo, hi), ...]``, v in [-speed, speed]^n."""
    box = np.asarray(box, dtype=float)
    n = len(box)
    xs = rng.uniform(box[:, 0], box[:, 1], size=(count, n))
    vs = rng.uniform(-speed, speed, size=(count, n))
    return xs, vs
