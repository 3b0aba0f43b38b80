"""Eulerian unfitted FEM for a heat equation coupled to rigid-disk motion."""

from .mesh import BackgroundMesh, build_structured_mesh, facet_patch
from .geometry import ActiveDecomposition, RigidState, classify, \
    level_set_value, strip_crossing_bound
from .cutquad import CutRule, cut_triangle, interface_normal
from .spaces import DofMap, FEFunction, build_multiplier_space, \
    build_velocity_space, transfer
from .forms import StabilizationParams, assemble_coupling_b, \
    assemble_ghost_penalty, assemble_mass, assemble_multiplier_stab, \
    assemble_nitsche, assemble_stiffness, compute_triple_norm
from .solver import FactoredSystem, condition_estimate, factor
from .stepper import SchemeConfig, StepRecord, advance_geometry, \
    aitken_update, compute_force, gamma_gp, ode_update, run_simulation, \
    step, strip_width
from .study import ErrorRow, StudyConfig, run_study, spacetime_error

__all__ = [name for name in dir() if not name.startswith("_")]
