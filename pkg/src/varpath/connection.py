"""Torsion-free affine connection built from a metric and its non-metricity.

Index conventions (all arrays may carry leading batch axes):

* ``christoffel[a, b, c]``, ``disformation[a, b, c]``, ``gamma[a, b, c]``
  hold the upper index first: Gamma^a_bc.
* ``dgamma[d, a, b, c]`` = d_d Gamma^a_bc (derivative index first).
* ``riemann[a, b, c, d]`` = R_abc^d with
  R_abc^d = d_b Gamma^d_ac - d_a Gamma^d_bc + Gamma^d_bi Gamma^i_ac - Gamma^d_ai Gamma^i_bc.

Indices are raised and lowered with ``g`` only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometrySpec, PointFields, fields_at

__all__ = [
    "ConnectionPoint",
    "levi_civita_at",
    "disformation_at",
    "disformation_derivative",
    "weyl_disformation",
    "connection_at",
    "gamma_at",
    "riemann_from",
    "rbar",
    "rbar_symmetry_residuals",
    "nonmetricity_from_connection",
    "ricci_scalar",
]


def _sym_lower(t):
    """Symmetrise the last two axes exactly."""
    return 0.5 * (t + np.swapaxes(t, -1, -2))


@dataclass(frozen=True, eq=False)
class ConnectionPoint:
    x: np.ndarray
    christoffel: np.ndarray
    disformation: np.ndarray
    gamma: np.ndarray
    dgamma: np.ndarray
    riemann: np.ndarray
    fields: PointFields


def levi_civita_at(pf: PointFields, derivatives: bool = True):
    """Christoffel symbols {a bc} and, optionally, their first derivatives.

    Returns ``(christoffel, dchristoffel)``; the second item is None when
    ``derivatives`` is false.
    """
    dg = pf.dg
    # T_dbc = d_b g_cd + d_c g_bd - d_d g_bc
    T = (np.einsum("...bcd->...dbc", dg) + np.einsum("...cbd->...dbc", dg)
         - dg)
    chris = _sym_lower(0.5 * np.einsum("...ad,...dbc->...abc", pf.ginv, T))
    if not derivatives:
        return chris, None
    d2g = pf.d2g
    dT = (np.einsum("...ebcd->...edbc", d2g) + np.einsum("...ecbd->...edbc", d2g)
          - d2g)
    dginv = -np.einsum("...ap,...epq,...qd->...ead", pf.ginv, dg, pf.ginv)
    dchris = 0.5 * (np.einsum("...ead,...dbc->...eabc", dginv, T)
                    + np.einsum("...ad,...edbc->...eabc", pf.ginv, dT))
    return chris, _sym_lower(dchris)


def disformation_at(pf: PointFields) -> np.ndarray:
    """L^a_bc = 1/2 Q^a_bc - Q_(b^a_c) = 1/2 g^ad (Q_dbc - Q_bdc - Q_cdb)."""
    Q = pf.Q
    S = Q - np.einsum("...bdc->...dbc", Q) - np.einsum("...cdb->...dbc", Q)
    return _sym_lower(0.5 * np.einsum("...ad,...dbc->...abc", pf.ginv, S))


def disformation_derivative(pf: PointFields) -> np.ndarray:
    """d_e L^a_bc, returned as ``[e, a, b, c]``."""
    Q, dQ = pf.Q, pf.dQ
    S = Q - np.einsum("...bdc->...dbc", Q) - np.einsum("...cdb->...dbc", Q)
    dS = dQ - np.einsum("...ebdc->...edbc", dQ) - np.einsum("...ecdb->...edbc", dQ)
    dginv = -np.einsum("...ap,...epq,...qd->...ead", pf.ginv, pf.dg, pf.ginv)
    dL = 0.5 * (np.einsum("...ead,...dbc->...eabc", dginv, S)
                + np.einsum("...ad,...edbc->...eabc", pf.ginv, dS))
    return _sym_lower(dL)


def weyl_disformation(pf: PointFields, domega=None) -> np.ndarray:
    """Closed form for Weyl non-metricity Q_abc = d_a omega g_bc.

    L^a_bc = 1/2 g^ad d_d omega g_bc - 1/2 (d_b omega delta^a_c + d_c omega delta^a_b)
    """
    w = pf.domega if domega is None else np.asarray(domega, dtype=float)
    if w is None:
        raise ValueError("weyl_disformation needs d_a omega")
    n = pf.g.shape[-1]
    eye = np.eye(n)
    up = np.einsum("...ad,...d->...a", pf.ginv, w)
    return (0.5 * np.einsum("...a,...bc->...abc", up, pf.g)
            - 0.5 * (np.einsum("...b,ac->...abc", w, eye) + np.einsum("...c,ab->...abc", w, eye)))


def riemann_from(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """R_abc^d from Gamma and d Gamma, following the printed index placement."""
    # d_b Gamma^d_ac  stored as dgamma[b, d, a, c]
    term_d = np.einsum("...bdac->...abcd", dgamma) - np.einsum("...adbc->...abcd", dgamma)
    quad = np.einsum("...dbi,...iac->...abcd", gamma, gamma)
    term_q = quad - np.swapaxes(quad, -4, -3)
    return term_d + term_q


def connection_at(spec: GeometrySpec, x) -> ConnectionPoint:
    """Full connection data (symbols, derivatives, curvature) at ``x``."""
    pf = fields_at(spec, x, order=2)
    chris, dchris = levi_civita_at(pf)
    L = disformation_at(pf)
    dL = disformation_derivative(pf)
    gamma = chris + L
    dgamma = dchris + dL
    return ConnectionPoint(
        x=pf.x,
        christoffel=chris,
        disformation=L,
        gamma=gamma,
        dgamma=dgamma,
        riemann=riemann_from(gamma, dgamma),
        fields=pf,
    )


def gamma_at(spec: GeometrySpec, x, kind: str = "autoparallel") -> np.ndarray:
    """Connection coefficients only (cheap path used by the integrators).

    ``kind="geodesic"`` returns the Levi-Civita part alone.
    """
    pf = fields_at(spec, x, order=1)
    chris, _ = levi_civita_at(pf, derivatives=False)
    if kind == "geodesic" or spec.mode == "none":
        return chris
    if kind != "autoparallel":
        raise ValueError(f"unknown kind {kind!r}")
    return chris + disformation_at(pf)


def nonmetricity_from_connection(pf: PointFields, gamma: np.ndarray) -> np.ndarray:
    """nabla_a g_bc = d_a g_bc - Gamma^d_ab g_dc - Gamma^d_ac g_bd."""
    t = np.einsum("...dab,...dc->...abc", gamma, pf.g)
    return pf.dg - t - np.swapaxes(t, -1, -2)


def rbar(riemann: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Rbar_abcd = R_abc^k H_kd."""
    return np.einsum("...abck,...kd->...abcd", riemann, H)


def rbar_symmetry_residuals(cp: ConnectionPoint, H) -> tuple[float, float, float]:
    """Max-abs residuals of the three pair symmetries of Rbar.

    Returns ``(first pair antisymmetry, second pair antisymmetry, pair exchange)``.
    """
    Rb = rbar(cp.riemann, np.asarray(H, dtype=float))
    r1 = Rb + np.swapaxes(Rb, -4, -3)
    r2 = Rb + np.swapaxes(Rb, -2, -1)
    r3 = Rb - np.einsum("...cdab->...abcd", Rb)
    return float(np.max(np.abs(r1))), float(np.max(np.abs(r2))), float(np.max(np.abs(r3)))


def ricci_scalar(cp: ConnectionPoint) -> np.ndarray:
    """g^ca R_adc^d; equals +2 on the unit 2-sphere."""
    ric = np.einsum("...adcd->...ca", cp.riemann)
    return np.einsum("...ca,...ca->...", cp.fields.ginv, ric)
