"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or through pytest; the
summary lines are printed either way, outside pytest's output capture.
"""

import sys

import numpy as np
import pytest

from oracles import mp_derivatives, random_expression
from varpath.connection import connection_at, nonmetricity_from_connection, rbar_symmetry_residuals
from varpath.dynamics import (
    Trajectory,
    action_value,
    el_residual,
    generalized_proper_time,
    h_along,
    integrate_curve,
    norm_drift,
)
from varpath.expr import evaluate_jet, parse
from varpath.geometry import bundled_geometry, fields_at
from varpath.helmholtz import helmholtz_batch, sample_states
from varpath.transport import christoffel_of_h, h_at, holonomy_convergence

GEOMETRIES = ("flat2d", "sphere2", "weyl2d", "nonweyl_q111", "curved_nonweyl")


@pytest.fixture
def report(capsys):
    def emit(number, title, checks):
        """checks: list of (label, measured, bound, ok)."""
        ok = all(c[3] for c in checks)
        parts = "; ".join(f"{label} = {value:.3g} (bound {bound})" for label, value, bound, _ in checks)
        with capsys.disabled():
            print(f"\nACCEPTANCE criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {parts}")
        return ok

    return emit


def le(label, value, bound):
    return (label, float(value), f"<= {bound:g}", float(value) <= bound)


def ge(label, value, bound):
    return (label, float(value), f">= {bound:g}", float(value) >= bound)


def within(label, value, target, tol):
    return (label, float(value), f"{target:g} +- {tol:g}", abs(float(value) - target) <= tol)


# ---------------------------------------------------------------------------


def test_criterion_1_riemannian_limit(report):
    spec = bundled_geometry("sphere2")
    rng = np.random.default_rng(101)
    xs = np.column_stack([rng.uniform(0.3, np.pi - 0.3, 20), rng.uniform(-np.pi, np.pi, 20)])
    h_err = np.max(np.abs(h_at(spec, xs).H - fields_at(spec, xs, 0).g))
    traj_err = 0.0
    for x0, v0 in [((1.0, 0.0), (0.3, 0.8)), ((np.pi / 2, 0.5), (0.0, 1.0)), ((0.7, -1.0), (-0.5, 1.5))]:
        a = integrate_curve(spec, "autoparallel", x0, v0, (0, 2), steps=400)
        b = integrate_curve(spec, "geodesic", x0, v0, (0, 2), steps=400)
        traj_err = max(traj_err, np.max(np.abs(a.x - b.x)), np.max(np.abs(a.v - b.v)))
    assert report(1, "Riemannian limit on the unit sphere", [
        le("max |H - g| over 20 points", h_err, 1e-9),
        le("max |autoparallel - geodesic|", traj_err, 1e-9),
    ])


def test_criterion_2_weyl_closed_form(report):
    spec = bundled_geometry("weyl2d")
    L = connection_at(spec, [0.37, -0.21]).disformation
    hand = np.zeros((2, 2, 2))
    hand[0, 0, 0], hand[0, 1, 1], hand[1, 0, 1], hand[1, 1, 0] = -1, 1, -1, -1
    rng = np.random.default_rng(102)
    xs = rng.uniform(-1, 1, (20, 2))
    H = h_at(spec, xs).H
    h_err = np.max(np.abs(H - np.exp(-2 * xs[:, 0])[:, None, None] * np.eye(2)))
    tr = integrate_curve(spec, "autoparallel", [0, 0], [1, 0], (0, 0.5), steps=1000)
    x_err = max(np.max(np.abs(tr.x[:, 0] + np.log1p(-tr.lam))), np.max(np.abs(tr.x[:, 1])))
    gap = abs(generalized_proper_time(spec, tr) - action_value(spec, tr))
    assert report(2, "Weyl closed form", [
        le("(a) max |L - hand values|", np.max(np.abs(L - hand)), 0.0),
        le("(b) max |H - exp(-2 x0) I|", h_err, 1e-8),
        le("(c) max |x(lambda) - closed form|", x_err, 1e-8),
        le("(d) |proper time - action|", gap, 1e-7),
    ])


def test_criterion_3_euler_lagrange_non_weyl(report):
    spec = bundled_geometry("nonweyl_q111")
    x0, v0 = np.array([0.0, 0.0]), np.array([1.0, 0.5])
    tr = integrate_curve(spec, "autoparallel", x0, v0, (0, 1), steps=1000)
    hs = h_along(spec, tr)
    rep = el_residual(spec, tr, hs=hs)
    drift = norm_drift(spec, tr, hs)
    eps = 0.01
    bump = np.sin(np.pi * tr.lam)[:, None] * np.array([0.0, 1.0])
    dbump = np.pi * np.cos(np.pi * tr.lam)[:, None] * np.array([0.0, 1.0])
    perturbed = Trajectory("sampled", tr.lam, tr.x + eps * bump, tr.v + eps * dbump, {})
    neg = el_residual(spec, perturbed).el_residual_max
    assert report(3, "autoparallel extremises the norm action (generic non-Weyl Q)", [
        le("el_residual_max", rep.el_residual_max, 1e-6),
        le("norm_drift", drift, 1e-8),
        ge("perturbed-curve residual", neg, 100 * 1e-6),
    ])


def test_criterion_4_helmholtz(report):
    spec = bundled_geometry("nonweyl_q111")
    rng = np.random.default_rng(104)
    xs, vs = sample_states(rng, [[-0.5, 0.5], [-0.5, 0.5]], 100)
    solved = helmholtz_batch(spec, xs, vs, "solved")
    worst = {k: max(r.residuals[k] for r in solved) for k in solved[0].residuals}
    metric = helmholtz_batch(spec, xs, vs, "metric")
    h2_metric = max(max(r.h2_generic, r.h2_connection) for r in metric)
    checks = [le(f"max {k} (solved H)", v, 1e-7) for k, v in worst.items()]
    checks.append(ge("max h2 with H = g", h2_metric, 0.01))
    assert report(4, "Helmholtz conditions with transported H, 100 states", checks)


def test_criterion_5_integrability(report):
    spec = bundled_geometry("nonweyl_q111")
    p = spec.base_point
    side = 0.1
    loop = np.array([p, p + [side, 0], p + [side, side], p + [0, side], p])
    rows = holonomy_convergence(spec, loop, spec.h0_matrix(), steps=(8, 16, 32, 64, 128))
    orders = [r["order"] if r["order"] is not None else float("nan") for r in rows[1:]]
    worst_order = max(orders, key=lambda o: abs(o - 4.0) if np.isfinite(o) else np.inf)
    xs = sample_states(np.random.default_rng(105), [[-0.5, 0.5], [-0.5, 0.5]], 20)[0]
    hs = h_at(spec, xs)
    rbar = max(max(rbar_symmetry_residuals(connection_at(spec, x), H)) for x, H in zip(xs, hs.H))
    assert report(5, "integrability of nabla H = 0", [
        within("worst observed holonomy order", worst_order, 4.0, 0.5),
        ("final holonomy defect", rows[-1]["defect"], "reported", True),
        le("max Rbar symmetry residual", rbar, 1e-7),
    ])


def test_criterion_6_compatibility(report):
    checks = []
    for name in GEOMETRIES:
        spec = bundled_geometry(name)
        rng = np.random.default_rng(106)
        xs = spec.base_point + rng.uniform(-0.5, 0.5, (100, spec.dim))
        cp = connection_at(spec, xs)
        q_err = np.max(np.abs(nonmetricity_from_connection(cp.fields, cp.gamma) - cp.fields.Q))
        hs = h_at(spec, xs)
        c_err = np.max(np.abs(christoffel_of_h(hs.H, hs.dH) - cp.gamma))
        checks += [le(f"{name}: max |nabla g - Q|", q_err, 1e-9),
                   le(f"{name}: max |Christoffel(H) - Gamma|", c_err, 1e-8)]
    assert report(6, "compatibility identities at 100 points per geometry", checks)


def test_criterion_7_numerics_hygiene(report):
    # (a) jets against central differences on random expressions
    rng = np.random.default_rng(107)
    coords = ["x0", "x1", "x2"]
    worst = 0.0
    for _ in range(100):
        e = parse(random_expression(rng, coords), coords)
        x = rng.uniform(-1, 1, 3)
        j = evaluate_jet(e, x)
        _, g, h = mp_derivatives(e, x)
        for ad, fd in ((j.grad, g), (j.hess, h)):
            scale = np.max(np.abs(fd))
            err = np.max(np.abs(ad - fd))
            worst = max(worst, err / scale if scale > 0 else err)

    # (b) RK4 order against x0 = -ln(1 - lambda)
    spec = bundled_geometry("weyl2d")
    errs = []
    ns = (25, 50, 100, 200)
    for n in ns:
        tr = integrate_curve(spec, "autoparallel", [0, 0], [1, 0], (0, 0.5), steps=n)
        errs.append(np.max(np.abs(tr.x[:, 0] + np.log1p(-tr.lam))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    worst_order = orders[np.argmax(np.abs(orders - 4))]

    # (c) action of one curve under two parametrisations
    lam = np.linspace(0, 0.5, 1001)
    a = Trajectory("sampled", lam, np.column_stack([-np.log1p(-lam), 0 * lam]),
                   np.column_stack([1 / (1 - lam), 0 * lam]), {})
    s = np.linspace(0, 1, 1001)
    mu = 0.25 * (s + s**2)
    b = Trajectory("sampled", s, np.column_stack([-np.log1p(-mu), 0 * s]),
                   np.column_stack([0.25 * (1 + 2 * s) / (1 - mu), 0 * s]), {})
    gap = abs(action_value(spec, a) - action_value(spec, b))
    assert report(7, "numerics hygiene", [
        le("(a) worst relative jet vs finite-difference error", worst, 1e-6),
        within("(b) worst observed RK4 order", worst_order, 4.0, 0.5),
        le("(c) reparametrisation gap in the action", gap, 1e-8),
    ])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
