"""Geometry documents and pointwise field evaluation.

A geometry is a chart of dimension ``n``, a metric ``g_ab`` and a
non-metricity tensor ``Q_abc = nabla_a g_bc`` given by coordinate
expressions. Non-metricity is either an explicit table (symmetric in the
last two slots) or of Weyl form ``Q_abc = d_a omega * g_bc``.

Derivative indices always come first in stored arrays::

    dg[c, a, b]      = d_c g_ab
    d2g[c, d, a, b]  = d_c d_d g_ab
    dQ[d, a, b, c]   = d_d Q_abc
"""

from __future__ import annotations

import itertools
import json
import os
from importlib import resources
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .expr import FUNCTIONS, CONSTANTS, Expression, ExpressionError, evaluate_jet, parse

__all__ = [
    "GeometryError",
    "SchemaError",
    "SingularMetricError",
    "GeometrySpec",
    "PointFields",
    "load_geometry",
    "read_geometry",
    "bundled_geometry",
    "BUNDLED",
    "fields_at",
    "DET_THRESHOLD",
]

DET_THRESHOLD = 1e-12

_ALLOWED_KEYS = {"dim", "coords", "metric", "nonmetricity", "base_point", "h0", "name", "description"}


class GeometryError(ValueError):
    """Base class for geometry problems."""


class SchemaError(GeometryError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class SingularMetricError(GeometryError):
    def __init__(self, point, det):
        self.point = np.asarray(point, dtype=float)
        self.det = float(det)
        super().__init__(
            f"metric is degenerate at {self.point.tolist()} (|det g| = {abs(self.det):.3e})"
        )


@dataclass(frozen=True, eq=False)
class GeometrySpec:
    dim: int
    coords: tuple
    metric: tuple  # n x n nested tuples of Expression, mirror-completed
    nonmetricity: tuple | None  # n x n x n of Expression, or None
    weyl: Expression | None
    base_point: np.ndarray
    h0: np.ndarray | None = None
    name: str = ""

    @property
    def mode(self) -> str:
        if self.weyl is not None:
            return "weyl"
        if self.nonmetricity is not None:
            return "explicit"
        return "none"

    def h0_matrix(self) -> np.ndarray:
        """Initial value of the effective metric at the base point."""
        if self.h0 is not None:
            return self.h0.copy()
        return fields_at(self, self.base_point, order=0).g

    def to_document(self) -> dict:
        """Inverse of :func:`load_geometry` (only non-zero entries are written)."""
        n = self.dim
        doc: dict[str, Any] = {"dim": n, "coords": list(self.coords)}
        if self.name:
            doc["name"] = self.name
        doc["metric"] = {
            f"{a},{b}": self.metric[a][b].to_source()
            for a in range(n) for b in range(a, n)
            if not _is_zero(self.metric[a][b])
        }
        if self.weyl is not None:
            doc["nonmetricity"] = {"weyl": self.weyl.to_source()}
        elif self.nonmetricity is not None:
            doc["nonmetricity"] = {
                f"{a},{b},{c}": self.nonmetricity[a][b][c].to_source()
                for a in range(n) for b in range(n) for c in range(b, n)
                if not _is_zero(self.nonmetricity[a][b][c])
            }
        doc["base_point"] = [float(v) for v in self.base_point]
        if self.h0 is not None:
            doc["h0"] = self.h0.tolist()
        return doc


@dataclass(frozen=True, eq=False)
class PointFields:
    """Metric and non-metricity with derivatives at one point (or a batch)."""

    x: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray
    Q: np.ndarray
    dQ: np.ndarray
    det: np.ndarray | float
    domega: np.ndarray | None = None  # d_a omega in Weyl mode
    d2omega: np.ndarray | None = None


def _is_zero(e: Expression) -> bool:
    return e.is_constant and e(np.zeros(e.dim)) == 0.0


def _parse_index(key: str, arity: int, n: int, where: str) -> tuple:
    try:
        idx = tuple(int(p) for p in str(key).split(","))
    except ValueError:
        raise SchemaError(f"{where}.{key}", f"index must be {arity} comma-separated integers") from None
    if len(idx) != arity:
        raise SchemaError(f"{where}.{key}", f"expected {arity} indices, got {len(idx)}")
    if any(i < 0 or i >= n for i in idx):
        raise SchemaError(f"{where}.{key}", f"index out of range for dim {n}")
    return idx


def _parse_expr(text, coords, key) -> Expression:
    try:
        return parse(text, coords)
    except ExpressionError as exc:
        raise SchemaError(key, str(exc)) from exc


def _fill_symmetric(entries: dict, prefix_len: int, n: int, coords, where: str):
    """Parse entries keyed by index tuples, mirroring the last two slots."""
    zero = parse("0", coords)
    table: dict[tuple, Expression] = {}
    given: dict[tuple, str] = {}
    for key, text in entries.items():
        idx = _parse_index(key, prefix_len + 2, n, where)
        expr = _parse_expr(text, coords, f"{where}.{key}")
        mirror = idx[:prefix_len] + (idx[-1], idx[-2])
        for slot in {idx, mirror}:
            if slot in table and table[slot].root != expr.root:
                raise SchemaError(
                    f"{where}.{key}",
                    f"conflicts with entry {given[slot]!r}; give only one of each symmetric pair",
                )
            table[slot] = expr
            given[slot] = key
    shape = (n,) * (prefix_len + 2)
    out = np.empty(shape, dtype=object)
    for idx in itertools.product(range(n), repeat=prefix_len + 2):
        out[idx] = table.get(idx, zero)
    return out.tolist()


def _freeze(nested):
    if isinstance(nested, list):
        return tuple(_freeze(x) for x in nested)
    return nested


def load_geometry(document: str | Mapping) -> GeometrySpec:
    """Build a :class:`GeometrySpec` from a JSON text or an already decoded mapping."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("<document>", f"invalid JSON: {exc}") from exc
    if not isinstance(document, Mapping):
        raise SchemaError("<document>", "geometry document must be an object")
    for key in document:
        if key not in _ALLOWED_KEYS:
            raise SchemaError(key, "unknown key")
    for key in ("dim", "coords", "metric", "base_point"):
        if key not in document:
            raise SchemaError(key, "missing required key")

    n = document["dim"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise SchemaError("dim", "must be an integer >= 1")

    coords = document["coords"]
    if not isinstance(coords, list) or len(coords) != n:
        raise SchemaError("coords", f"must be a list of {n} names")
    for c in coords:
        if not isinstance(c, str) or not c.isidentifier():
            raise SchemaError("coords", f"invalid coordinate name {c!r}")
        if c in FUNCTIONS or c in CONSTANTS:
            raise SchemaError("coords", f"coordinate name {c!r} is reserved")
    if len(set(coords)) != n:
        raise SchemaError("coords", "coordinate names must be unique")
    coords = tuple(coords)

    metric_doc = document["metric"]
    if not isinstance(metric_doc, Mapping):
        raise SchemaError("metric", "must map 'a,b' to expressions")
    metric = _freeze(_fill_symmetric(metric_doc, 0, n, coords, "metric"))

    weyl = None
    nonmetricity = None
    q_doc = document.get("nonmetricity")
    if q_doc is not None:
        if not isinstance(q_doc, Mapping):
            raise SchemaError("nonmetricity", "must be an object")
        if "weyl" in q_doc:
            if len(q_doc) != 1:
                raise SchemaError("nonmetricity", "weyl form cannot be mixed with explicit entries")
            weyl = _parse_expr(q_doc["weyl"], coords, "nonmetricity.weyl")
        elif q_doc:
            nonmetricity = _freeze(_fill_symmetric(q_doc, 1, n, coords, "nonmetricity"))

    try:
        base_point = np.array(document["base_point"], dtype=float)
    except (TypeError, ValueError):
        raise SchemaError("base_point", "must be a list of reals") from None
    if base_point.shape != (n,) or not np.all(np.isfinite(base_point)):
        raise SchemaError("base_point", f"must be a list of {n} finite reals")

    h0 = None
    if document.get("h0") is not None:
        try:
            h0 = np.array(document["h0"], dtype=float)
        except (TypeError, ValueError):
            raise SchemaError("h0", "must be an n x n array of reals") from None
        if h0.shape != (n, n) or not np.all(np.isfinite(h0)):
            raise SchemaError("h0", f"must be a {n} x {n} array of finite reals")
        if np.max(np.abs(h0 - h0.T)) > 1e-12 * max(1.0, np.max(np.abs(h0))):
            raise SchemaError("h0", "must be symmetric")
        h0 = 0.5 * (h0 + h0.T)
        if abs(np.linalg.det(h0)) <= DET_THRESHOLD:
            raise SchemaError("h0", "must be non-degenerate")

    spec = GeometrySpec(
        dim=n,
        coords=coords,
        metric=metric,
        nonmetricity=nonmetricity,
        weyl=weyl,
        base_point=base_point,
        h0=h0,
        name=str(document.get("name", "")),
    )
    # raises SingularMetricError / DomainError for a bad base point
    fields_at(spec, base_point, order=0)
    return spec


def read_geometry(path: str | os.PathLike) -> GeometrySpec:
    with open(path, encoding="utf-8") as fh:
        return load_geometry(fh.read())


BUNDLED = ("flat2d", "sphere2", "weyl2d", "nonweyl_q111", "curved_nonweyl")


def bundled_geometry(name: str) -> GeometrySpec:
    """One of the example geometries shipped with the package (see ``BUNDLED``)."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled geometry {name!r}; choose from {', '.join(BUNDLED)}")
    text = resources.files("varpath.data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return load_geometry(text)


_PLANS: dict = {}


def _plan(table):
    """Group the slots of an expression table by distinct Expression object.

    Returns ``(constant_array, [(expr, index_arrays), ...])``; zero entries are
    dropped and constant entries are folded into ``constant_array``.
    """
    key = id(table)
    hit = _PLANS.get(key)
    if hit is not None and hit[0] is table:
        return hit[1]
    arr = np.array(table, dtype=object)
    const = np.zeros(arr.shape)
    groups: dict[int, tuple] = {}
    for idx, e in np.ndenumerate(arr):
        if e.is_constant:
            const[idx] = e(np.zeros(e.dim))
        else:
            groups.setdefault(id(e), (e, []))[1].append(idx)
    plan = (const, [(e, tuple(np.array(ix).T)) for e, ix in groups.values()])
    _PLANS[key] = (table, plan)
    return plan


def _evaluate_table(table, x, order, batch, n):
    const, groups = _plan(table)
    shape = const.shape
    value = np.broadcast_to(const, batch + shape).copy()
    grad = np.zeros(batch + (n,) + shape)
    hess = np.zeros(batch + (n, n) + shape)
    for e, ix in groups:
        j = evaluate_jet(e, x, order)
        sl = (Ellipsis,) + ix
        value[sl] = np.asarray(j.value)[..., None]
        if order >= 1:
            grad[sl] = j.grad[..., None]
        if order >= 2:
            hess[sl] = j.hess[..., None]
    return value, grad, hess


def fields_at(spec: GeometrySpec, x, order: int = 2) -> PointFields:
    """Metric to ``order`` derivatives and non-metricity to ``order - 1``.

    ``x`` may be a single point (n,) or a batch (..., n). Arrays above the
    requested order are zero-filled.
    """
    n = spec.dim
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise ValueError(f"point has shape {x.shape}, expected (..., {n})")
    batch = x.shape[:-1]

    g, dg, d2g = _evaluate_table(spec.metric, x, order, batch, n)

    det = np.linalg.det(g)
    bad = np.abs(det) <= DET_THRESHOLD
    if np.any(bad):
        i = np.unravel_index(int(np.argmax(bad)), bad.shape) if bad.ndim else ()
        raise SingularMetricError(x[i], det[i] if np.ndim(det) else det)
    ginv = np.linalg.inv(g)

    q_order = max(order - 1, 0)
    domega = d2omega = None
    if spec.weyl is not None:
        w = evaluate_jet(spec.weyl, x, max(q_order + 1, 1))
        domega, d2omega = w.grad, w.hess
        Q = np.einsum("...a,...bc->...abc", domega, g)
        if q_order >= 1:
            dQ = (np.einsum("...da,...bc->...dabc", d2omega, g)
                  + np.einsum("...a,...dbc->...dabc", domega, dg))
        else:
            dQ = np.zeros(batch + (n,) * 4)
    elif spec.nonmetricity is not None:
        Q, dQ, _ = _evaluate_table(spec.nonmetricity, x, q_order, batch, n)
    else:
        Q = np.zeros(batch + (n,) * 3)
        dQ = np.zeros(batch + (n,) * 4)

    return PointFields(
        x=x, g=g, ginv=ginv, dg=dg, d2g=d2g, Q=Q, dQ=dQ,
        det=det if batch else float(det), domega=domega, d2omega=d2omega,
    )
