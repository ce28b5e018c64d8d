"""ddlab: a laboratory for non-overlapping domain decomposition solvers.

Structured meshes are split into subdomain blocks; the coupled equilibrium
is then solved either through interface force multipliers (the dual solver,
with selectable force splitting and starting estimates) or through the
assembled interface displacements (the balanced primal solver). Every run
can be validated against a sparse direct oracle.
"""

from .assembly import (
    AssemblyError, DecomposedProblem, MaterialField, SubdomainSystem,
    build_problem, dirichlet_dofs, face_pressure_load, nodal_face_load,
    rigid_body_modes,
)
from .bdd import BddResult, CoarseBalancer, PrimalSystem, solve_bdd
from .feti import (
    CoarseProjector, DualSystem, ExactStartReport, FetiResult,
    InterfacePreconditioner, admissible_start, estimate_interface_forces,
    exact_start_check, make_coarse_weight, solve_feti,
)
from .fixtures import spring2, spring2_solution, three_patch
from .harness import (
    ComparisonReport, ConfigError, ExperimentConfig, OracleError, RunRecord,
    build_from_config, direct_oracle, load_config, render_convergence_svg,
    run_comparison, run_experiment, write_history_csv,
)
from .linalg import (
    CondensedSubdomain, FactorizationError, GeneralizedInverse, KrylovReport,
    ResidualHistory, factorize_semidefinite, factorize_spd, pcg,
    schur_complement, small_pinv,
)
from .mesh import (
    GridSpec, JumpMap, Mesh, MeshError, Partition, Subdomain, TraceMap,
    build_jump_operator, build_structured_mesh, build_trace_maps,
    expected_multiplier_count, partition_blocks,
)
from .splitting import (
    JumpGram, SplitForces, complementarity_check, make_split,
    split_classical, split_condensed, split_via_jump,
)

__version__ = "0.1.0"

__all__ = [
    "AssemblyError", "BddResult", "CoarseBalancer", "CoarseProjector",
    "ComparisonReport", "CondensedSubdomain", "ConfigError",
    "DecomposedProblem", "DualSystem", "ExactStartReport", "ExperimentConfig",
    "FactorizationError", "FetiResult", "GeneralizedInverse",
    "GridSpec", "InterfacePreconditioner", "JumpGram", "JumpMap",
    "KrylovReport", "MaterialField", "Mesh", "MeshError", "OracleError",
    "Partition", "PrimalSystem", "ResidualHistory", "RunRecord",
    "SplitForces", "Subdomain", "SubdomainSystem", "TraceMap",
    "admissible_start", "build_from_config", "build_jump_operator",
    "build_problem", "build_structured_mesh", "build_trace_maps",
    "complementarity_check", "direct_oracle", "dirichlet_dofs",
    "estimate_interface_forces", "exact_start_check",
    "expected_multiplier_count", "face_pressure_load", "factorize_semidefinite",
    "factorize_spd", "load_config", "make_coarse_weight", "make_split",
    "nodal_face_load", "partition_blocks", "pcg", "render_convergence_svg",
    "rigid_body_modes", "run_comparison", "run_experiment",
    "schur_complement", "small_pinv", "solve_bdd", "solve_feti",
    "split_classical", "split_condensed", "split_via_jump", "spring2",
    "spring2_solution", "three_patch", "write_history_csv",
]
