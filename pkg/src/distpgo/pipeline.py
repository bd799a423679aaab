"""Centralized baselines: the two-stage chordal method (rotation relaxation,
SVD projection, one pose solve) and a Gauss-Newton refiner that iterates
the pose linearization with step halving until stationarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (
    apply_correction,
    build_pose_system,
    build_rotation_system,
    rotations_from_vector,
    stack_estimate,
)
from .geometry import Pose, exp_map, project_to_so3
from .graph import MultiRobotGraph, VertexId, graph_cost

GN_MAX_ITERATIONS = 100
GN_STEP_TOL = 1e-8
GN_MAX_HALVINGS = 10


@dataclass
class CentralizedResult:
    estimate: dict[VertexId, Pose]
    cost: float
    stage1_residual: float
    gn_iterations: int
    diverged: bool = False


def project_rotations(raw: dict[VertexId, np.ndarray]) -> dict[VertexId, np.ndarray]:
    return {vid: project_to_so3(M) for vid, M in raw.items()}


def _relaxation_residual(graph: MultiRobotGraph, rotations: dict[VertexId, np.ndarray]) -> float:
    """Unconstrained rotation objective at (possibly non-orthogonal) matrices."""
    total = 0.0
    for e in graph.edges:
        D = rotations[e.to_vertex] - rotations[e.from_vertex] @ e.rotation
        total += e.omega_r_sq * float(np.sum(D * D))
    return total


def solve_two_stage(graph: MultiRobotGraph) -> CentralizedResult:
    """Rotation relaxation -> per-vertex SVD projection -> single pose solve.

    Deterministic: identical graphs produce bit-identical results. Raises
    ValueError for graphs whose systems are singular (disconnected).
    """
    rot_system = build_rotation_system(graph)
    r = rot_system.direct_solve()
    raw = rotations_from_vector(rot_system, r)
    stage1_residual = _relaxation_residual(graph, raw)
    rotations = project_rotations(raw)
    pose_system = build_pose_system(graph, rotations)
    p = pose_system.direct_solve()
    estimate = apply_correction(rotations, pose_system, p)
    return CentralizedResult(
        estimate=estimate,
        cost=graph_cost(graph, estimate),
        stage1_residual=stage1_residual,
        gn_iterations=0,
    )


def _apply_scaled_step(
    current: dict[VertexId, Pose],
    delta_t: dict[VertexId, np.ndarray],
    theta: dict[VertexId, np.ndarray],
    scale: float,
) -> dict[VertexId, Pose]:
    out = {}
    for vid, pose in current.items():
        if vid in delta_t:
            out[vid] = Pose(pose.rotation @ exp_map(scale * theta[vid]),
                            pose.translation + scale * delta_t[vid])
        else:
            out[vid] = pose
    return out


def solve_gauss_newton(
    graph: MultiRobotGraph,
    initial: dict[VertexId, Pose],
    max_iters: int = GN_MAX_ITERATIONS,
    tol: float = GN_STEP_TOL,
) -> CentralizedResult:
    """Iterate the pose linearization from an initial estimate.

    Each iteration rebuilds the pose system at the current rotations and
    solves for (t, theta); the step is halved (up to GN_MAX_HALVINGS) when
    the objective would increase, so accepted costs are non-increasing.
    A step that cannot be made to descend flags divergence and the best
    iterate so far is returned.
    """
    for vid in graph.vertices:
        if vid not in initial:
            raise KeyError(f"initial estimate missing vertex {vid}")
    current = dict(initial)
    cost = graph_cost(graph, current)
    iterations = 0
    diverged = False
    for _ in range(max_iters):
        rotations = {vid: pose.rotation for vid, pose in current.items()}
        system = build_pose_system(graph, rotations)
        p = system.direct_solve()
        x0 = stack_estimate(system, current)
        step = p - x0
        step_norm = float(np.linalg.norm(step))
        if step_norm <= tol:
            break
        delta_t = {vid: step[sl][0:3] for vid, sl in system.vertex_slots.items()}
        theta = {vid: step[sl][3:6] for vid, sl in system.vertex_slots.items()}
        scale = 1.0
        accepted = None
        for _ in range(GN_MAX_HALVINGS + 1):
            candidate = _apply_scaled_step(current, delta_t, theta, scale)
            candidate_cost = graph_cost(graph, candidate)
            if candidate_cost <= cost + 1e-15:
                accepted = (candidate, candidate_cost)
                break
            scale *= 0.5
        iterations += 1
        if accepted is None:
            diverged = True
            break
        current, cost = accepted
        if scale * step_norm <= tol:
            break
    return CentralizedResult(
        estimate=current,
        cost=cost,
        stage1_residual=float("nan"),
        gn_iterations=iterations,
        diverged=diverged,
    )
