"""Ensemble simulation of 2D incompressible Navier-Stokes flows.

J flow realizations with distinct viscosities and data advance each time step
through one shared sparse saddle-point factorization applied to J right-hand
sides, using a second-order two-step scheme on Taylor-Hood P2-P1 elements.
"""

__version__ = "0.1.0"

from .assembly import (
    apply_dirichlet,
    assemble_convection,
    assemble_diffusion,
    assemble_divergence,
    assemble_load,
    assemble_mass,
    build_operator_set,
    trilinear_action,
)
from .ensemble import (
    DivergenceError,
    EnsembleState,
    EnsembleStepper,
    MemberSpec,
    check_viscosity_condition,
    ensemble_mean,
    fluctuation,
    kinetic_energy,
    run_ensemble,
    theorem31_diagnostic,
)
from .fe_space import (
    boundary_dofs,
    build_taylor_hood,
    eval_basis,
    interpolate,
    quadrature_rule,
)
from .mesh import (
    Mesh,
    MeshError,
    MeshFormatError,
    MeshQualityError,
    gen_offset_annulus,
    gen_unit_square,
    mesh_stats,
    read_mesh,
    write_mesh,
)
from .scenarios import (
    ErrorRecorder,
    bdf2_truncation_check,
    convergence_study,
    energy_series,
    green_taylor_member,
    offset_cylinder_problem,
    solve_steady_stokes,
)
from .sparse_solve import (
    Factorization,
    SingularMatrixError,
    build_saddle_matrix,
    factorization_count,
    factorize,
    solve_multi,
)
