"""Autoparallel curves of torsion-free connections and their norm action.

Given a metric and a non-metricity tensor in coordinates, build the
connection, transport an effective metric ``H`` with ``nabla H = 0``,
integrate autoparallels, and check the Euler-Lagrange and Helmholtz
conditions numerically.
"""

__version__ = "0.1.0"

from .expr import Expression, Jet2, evaluate_jet, parse
from .geometry import GeometrySpec, PointFields, bundled_geometry, fields_at, load_geometry, read_geometry
from .connection import (
    ConnectionPoint,
    connection_at,
    disformation_at,
    levi_civita_at,
    rbar_symmetry_residuals,
)
from .transport import HState, degeneracy_check, h_at, holonomy_defect, transport_h
from .dynamics import (
    ActionReport,
    Trajectory,
    action_value,
    el_residual,
    generalized_proper_time,
    integrate_curve,
    lagrangian_at,
    norm_drift,
)
from .helmholtz import HelmholtzReport, autoparallel_force, helmholtz_batch, helmholtz_residuals, reference_force

__all__ = [
    "Expression", "Jet2", "evaluate_jet", "parse",
    "GeometrySpec", "PointFields", "bundled_geometry", "fields_at", "load_geometry", "read_geometry",
    "ConnectionPoint", "connection_at", "disformation_at", "levi_civita_at", "rbar_symmetry_residuals",
    "HState", "degeneracy_check", "h_at", "holonomy_defect", "transport_h",
    "ActionReport", "Trajectory", "action_value", "el_residual", "generalized_proper_time",
    "integrate_curve", "lagrangian_at", "norm_drift",
    "HelmholtzReport", "autoparallel_force", "helmholtz_batch", "helmholtz_residuals", "reference_force",
]
