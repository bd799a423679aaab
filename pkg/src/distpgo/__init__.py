"""Distributed multi-robot pose graph optimization.

Library plus CLI simulator: a centralized two-stage chordal solver, JOR/SOR
block-iterative distributed solvers with byte-accurate simulated
communication, an object-landmark extension, and a benchmark harness.
"""

from .geometry import (
    Pose,
    chordal_residual,
    exp_map,
    first_order_exp,
    log_map,
    project_to_so3,
    skew,
)
from .graph import (
    EdgeKind,
    MultiRobotGraph,
    RelativeMeasurement,
    VertexId,
    VertexKind,
    compose_measurement,
    graph_cost,
    partition_edges,
)
from .assembly import (
    BlockLinearSystem,
    apply_correction,
    build_pose_system,
    build_rotation_system,
)
from .pipeline import CentralizedResult, solve_gauss_newton, solve_two_stage
from .solvers import (
    IterationTrace,
    SolverConfig,
    flagged_initialize,
    jor_convergence_matrix,
    jor_solve,
    sor_solve,
    stopping_check,
)
from .runtime import (
    CommunicationLedger,
    DistributedRunResult,
    ScenarioSpec,
    SeparatorMessage,
    ddf_sam_comm_model,
    generate_scenario,
    monte_carlo,
    run_distributed_two_stage,
)
from .objects import (
    ObjectLandmark,
    ObjectSceneSpec,
    associate_objects,
    generate_object_scenario,
    rendezvous_share,
    solve_object_slam_distributed,
)
from .metrics import are_star, ate_star, build_comparison_table, residual_error

__version__ = "0.1.0"
