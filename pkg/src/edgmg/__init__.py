"""Embedded discontinuous Galerkin Poisson solver with homogeneous multigrid."""

from .mesh import (
    Point2,
    TriMesh,
    MeshHierarchy,
    build_figure1_coarse,
    refine,
    build_hierarchy,
    face_geometry,
    read_mesh,
    write_mesh,
)
from .basis import cell_basis, face_basis, cell_quadrature, face_quadrature
from .edg import (
    SkeletonDofMap,
    CellLocalSystem,
    CondensedLevel,
    FieldSolution,
    PenaltyLaw,
    build_dof_map,
    build_local_system,
    build_local_systems,
    assemble_condensed,
    reconstruct,
    l2_errors,
    weighted_skeleton_norm,
    skeleton_trace_norm,
)
from .transfer import TransferOperator, continuous_extension, build_injection, inject, restrict
from .mg import (
    SmootherConfig,
    MgHierarchy,
    SolveReport,
    build_mg_hierarchy,
    smooth,
    v_cycle,
    solve,
    nested_solve,
    estimate_extreme_eigenvalues,
)

__version__ = "0.1.0"
