import numpy as np
import pytest

from oracles import fd_gradient
from varpath.geometry import bundled_geometry
from varpath.helmholtz import (
    ForceJet,
    autoparallel_force,
    helmholtz_batch,
    helmholtz_residuals,
    reference_force,
    sample_states,
)
from varpath.transport import h_at


def test_force_examples():
    assert not autoparallel_force(bundled_geometry("flat2d"), [1, 2], [3, 4]).F.any()
    F = autoparallel_force(bundled_geometry("weyl2d"), [0.2, 0.3], [1, 0]).F
    assert np.allclose(F, [1.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("name", ["sphere2", "curved_nonweyl", "nonweyl_q111"])
def test_force_jacobians_against_fd(name):
    spec = bundled_geometry(name)
    x = np.array([0.9, 0.4])
    v = np.array([0.7, -1.1])
    f = autoparallel_force(spec, x, v)
    dv = fd_gradient(lambda w: autoparallel_force(spec, x, w).F, v)  # [b, a]
    dx = fd_gradient(lambda y: autoparallel_force(spec, y, v).F, x)  # [c, a]
    dxdv = fd_gradient(lambda y: autoparallel_force(spec, y, v).dF_dv, x)  # [b, a, c]
    assert np.allclose(f.dF_dv, dv.T, atol=1e-7)
    assert np.allclose(f.dF_dx, dx.T, atol=1e-7)
    assert np.allclose(f.d2F_dxdv, np.einsum("bac->acb", dxdv), atol=1e-7)


def test_levi_civita_force_with_metric_multiplier():
    spec = bundled_geometry("sphere2")
    rng = np.random.default_rng(0)
    xs, vs = sample_states(rng, [[0.5, 2.5], [-1, 1]], 20)
    for x, v in zip(xs, vs):
        rep = helmholtz_residuals(spec, x, v, "metric", tolerance=1e-9)
        assert rep.passed, rep.residuals
        assert rep.h1 == 0.0


@pytest.mark.parametrize("name", ["weyl2d", "curved_nonweyl", "sphere2"])
def test_solved_multiplier_passes(name):
    spec = bundled_geometry(name)
    rng = np.random.default_rng(1)
    box = np.column_stack([spec.base_point - 0.4, spec.base_point + 0.4])
    xs, vs = sample_states(rng, box, 10)
    for x, v in zip(xs, vs):
        rep = helmholtz_residuals(spec, x, v)
        assert rep.passed, rep.residuals


def test_metric_multiplier_fails_for_weyl_force():
    spec = bundled_geometry("weyl2d")
    rep = helmholtz_residuals(spec, [0.1, 0.2], [1.0, 0.5], "metric")
    assert rep.h2_generic >= 0.1 and rep.h2_connection >= 0.1
    assert not rep.passed


def test_generic_and_simplified_h3_agree_when_compatible():
    # with nabla H = 0 the generic third condition reduces to the curvature form
    spec = bundled_geometry("nonweyl_q111")
    rng = np.random.default_rng(2)
    xs, vs = sample_states(rng, [[-0.5, 0.5], [-0.5, 0.5]], 10)
    for x, v in zip(xs, vs):
        rep = helmholtz_residuals(spec, x, v)
        assert rep.h3_generic == pytest.approx(rep.h3_simplified, rel=1e-6, abs=1e-12)


def test_callable_multiplier_matches_solved():
    spec = bundled_geometry("curved_nonweyl")
    x, v = np.array([0.4, -0.3]), np.array([0.6, 0.9])
    a = helmholtz_residuals(spec, x, v, lambda y, w: h_at(spec, y).H)
    assert a.passed, a.residuals


def test_constant_matrix_multiplier_flat():
    spec = bundled_geometry("flat2d")
    rep = helmholtz_residuals(spec, [0.3, 0.3], [1, 2], np.diag([2.0, 5.0]))
    assert rep.passed


def test_lorentz_force_consistent_with_metric():
    spec = bundled_geometry("flat2d")
    P = [[0, 1], [-1, 0]]
    F = reference_force("prop31", spec, P, None, [0, 0], [1, 0])
    assert np.allclose(F, [0.0, -1.0])
    force = ForceJet(F, np.array(P, dtype=float), np.zeros((2, 2)), np.zeros((2, 2, 2)))
    assert helmholtz_residuals(spec, [0, 0], [1, 0], "metric", force=force).passed
    sym = np.array([[0.0, 1.0], [1.0, 0.0]])
    bad = ForceJet(sym @ [1, 0], sym, np.zeros((2, 2)), np.zeros((2, 2, 2)))
    assert helmholtz_residuals(spec, [0, 0], [1, 0], "metric", force=bad).h2_generic >= 0.5


def test_reference_forces():
    flat = bundled_geometry("flat2d")
    assert not reference_force("prop31", flat, None, None, [1, 1], [2, 3]).any()
    weyl = bundled_geometry("weyl2d")
    rng = np.random.default_rng(3)
    for _ in range(10):
        x, v = rng.normal(size=2), rng.normal(size=2)
        assert np.allclose(reference_force("prop32", weyl, None, None, x, v),
                           autoparallel_force(weyl, x, v).F, atol=1e-14)
    F = reference_force("prop31", flat, [["x0", 0], [0, 0]], ["1", "x1"], [2.0, 3.0], [1.0, 1.0])
    assert np.allclose(F, [3.0, 3.0])
    with pytest.raises(ValueError):
        reference_force("prop32", bundled_geometry("nonweyl_q111"), None, None, [0, 0], [1, 0])


def test_degenerate_multiplier_rejected():
    with pytest.raises(ValueError):
        helmholtz_residuals(bundled_geometry("flat2d"), [0, 0], [1, 0], np.diag([1.0, 0.0]))


def test_sampling_is_seeded():
    a = sample_states(np.random.default_rng(9), [[0, 1], [2, 3]], 5)
    b = sample_states(np.random.default_rng(9), [[0, 1], [2, 3]], 5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.all((a[0][:, 1] >= 2) & (a[0][:, 1] <= 3))


def test_second_condition_forms_agree():
    for name in ("weyl2d", "nonweyl_q111", "curved_nonweyl"):
        spec = bundled_geometry(name)
        xs, vs = sample_states(np.random.default_rng(4), [[-0.5, 0.5], [-0.5, 0.5]], 10)
        for rep in helmholtz_batch(spec, xs, vs):
            assert abs(rep.h2_generic - rep.h2_connection) <= 1e-10


def test_residuals_scale_linearly():
    from varpath.geometry import fields_at

    spec = bundled_geometry("weyl2d")
    x, v = np.array([0.2, -0.3]), np.array([0.8, 0.5])
    base = helmholtz_residuals(spec, x, v, lambda y, w: fields_at(spec, y, 0).g)
    for c in (0.5, 3.0):
        scaled = helmholtz_residuals(spec, x, v, lambda y, w: c * fields_at(spec, y, 0).g)
        for key, value in base.residuals.items():
            assert scaled.residuals[key] == pytest.approx(c * value, rel=1e-6, abs=1e-12)
    solved = h_at(spec, x)
    a = helmholtz_residuals(spec, x, v, solved)
    assert a.passed
