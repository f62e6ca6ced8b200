"""Robust min-max linear-quadratic MPC over scenario trees.

Interior-point solver whose search directions come either from a dense
reference factorization or from clique-tree message passing over the chordal
embedding of the problem's sparsity graph.
"""

from .chordal import (
    CliqueTree,
    SparsityGraph,
    Supernode,
    Term,
    build_clique_tree,
    build_sparsity_graph,
    chordal_embedding,
    check_running_intersection,
    clique_tree_to_dot,
    graph_to_dot,
    is_chordal,
    max_cliques,
    mpc_direction_structure,
)
from .ipm import (
    IpmOptions,
    Solution,
    SolveStats,
    initial_iterate,
    ipm_solve,
    step_length,
)
from .model import (
    MpcStructure,
    NonAnticipativity,
    Realization,
    ScenarioTree,
    UncertainSystem,
    assemble_rqp,
    build_nonanticipativity,
    enumerate_scenarios,
    shared_control_count,
)
from .msgpass import (
    ChordalFactors,
    EliminationBreakdown,
    build_direction_structure,
    resolve_workers,
    solve_reduced_kkt_chordal,
)
from .oracle import (
    BruteForceSolution,
    VerificationReport,
    active_set_bruteforce,
    dense_kkt_solve,
    verify_solution,
)
from .rqp import (
    EpigraphOperators,
    Iterate,
    Rqp,
    ReducedKkt,
    Residuals,
    StepDirection,
    assemble_epigraph_operators,
    build_reduced_kkt,
    kkt_residuals,
    recover_step,
    verify_direction,
)

__version__ = "0.1.0"

__all__ = [
    "CliqueTree",
    "SparsityGraph",
    "Supernode",
    "Term",
    "build_clique_tree",
    "build_sparsity_graph",
    "chordal_embedding",
    "check_running_intersection",
    "clique_tree_to_dot",
    "graph_to_dot",
    "is_chordal",
    "max_cliques",
    "mpc_direction_structure",
    "IpmOptions",
    "Solution",
    "SolveStats",
    "initial_iterate",
    "ipm_solve",
    "step_length",
    "MpcStructure",
    "NonAnticipativity",
    "Realization",
    "ScenarioTree",
    "UncertainSystem",
    "assemble_rqp",
    "build_nonanticipativity",
    "enumerate_scenarios",
    "shared_control_count",
    "ChordalFactors",
    "EliminationBreakdown",
    "build_direction_structure",
    "resolve_workers",
    "solve_reduced_kkt_chordal",
    "BruteForceSolution",
    "VerificationReport",
    "active_set_bruteforce",
    "dense_kkt_solve",
    "verify_solution",
    "EpigraphOperators",
    "Iterate",
    "Rqp",
    "ReducedKkt",
    "Residuals",
    "StepDirection",
    "assemble_epigraph_operators",
    "build_reduced_kkt",
    "kkt_residuals",
    "recover_step",
    "verify_direction",
    "__version__",
]
