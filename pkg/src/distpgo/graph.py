"""Multi-robot measurement graph: vertices owned by robots, relative-pose
edges (intra-robot, inter-robot, object factors), the generative
measurement model, and the global chordal cost.

A graph is built once (add_vertex/add_edge) and treated as immutable
afterwards; read access is safe from any thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, NamedTuple

import numpy as np

from .geometry import Pose, chordal_residual, exp_map


class VertexKind(IntEnum):
    ROBOT_POSE = 0
    OBJECT_LANDMARK = 1


class EdgeKind(IntEnum):
    ODOMETRY = 0
    LOOP_CLOSURE = 1
    INTER_ROBOT = 2
    OBJECT_POSE = 3
    OBJECT_OBJECT = 4


class VertexId(NamedTuple):
    """(owner robot, local index, kind); unique within a graph."""

    robot: int
    index: int
    kind: VertexKind = VertexKind.ROBOT_POSE

    def __str__(self) -> str:
        tag = "x" if self.kind == VertexKind.ROBOT_POSE else "o"
        return f"{tag}{self.robot}_{self.index}"


def weight_from_sigma(sigma: float) -> float:
    """Information weight 1/sigma^2; unit weight for a noiseless channel."""
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    return 1.0 / (sigma * sigma) if sigma > 0.0 else 1.0


@dataclass(frozen=True, eq=False)
class RelativeMeasurement:
    """Directed relative-pose measurement between two vertices.

    rotation/translation hold the measured transform of `to` expressed in
    the frame of `from`; omega_t_sq and omega_r_sq are the translation and
    rotation information weights.
    """

    from_vertex: VertexId
    to_vertex: VertexId
    rotation: np.ndarray
    translation: np.ndarray
    omega_t_sq: float
    omega_r_sq: float
    kind: EdgeKind

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if self.omega_t_sq <= 0.0 or self.omega_r_sq <= 0.0:
            raise ValueError("measurement information weights must be positive")
        self._check_kind()

    def _check_kind(self):
        fk, tk = self.from_vertex.kind, self.to_vertex.kind
        cross = self.from_vertex.robot != self.to_vertex.robot
        both_poses = fk == VertexKind.ROBOT_POSE and tk == VertexKind.ROBOT_POSE
        both_objects = fk == VertexKind.OBJECT_LANDMARK and tk == VertexKind.OBJECT_LANDMARK
        if self.kind == EdgeKind.INTER_ROBOT and not (cross and both_poses):
            raise ValueError("inter-robot edge must join robot poses of two robots")
        if self.kind == EdgeKind.OBJECT_OBJECT and not (cross and both_objects):
            raise ValueError("object-object edge must join landmarks of two robots")
        if self.kind in (EdgeKind.ODOMETRY, EdgeKind.LOOP_CLOSURE) and (cross or not both_poses):
            raise ValueError("odometry/loop-closure edge must join poses of one robot")
        if self.kind == EdgeKind.OBJECT_POSE and not (
            (fk == VertexKind.ROBOT_POSE) ^ (tk == VertexKind.ROBOT_POSE)
        ):
            raise ValueError("object-pose edge must join one pose and one landmark")

    def is_separator(self) -> bool:
        return self.from_vertex.robot != self.to_vertex.robot


def compose_measurement(
    x_a: Pose,
    x_b: Pose,
    noise_rot: np.ndarray | None = None,
    noise_trans: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Generate the relative measurement of x_b observed from x_a.

    Returns (R_a^T R_b exp(noise_rot), R_a^T (t_b - t_a) + noise_trans).
    """
    R = x_a.rotation.T @ x_b.rotation
    if noise_rot is not None:
        R = R @ exp_map(noise_rot)
    t = x_a.rotation.T @ (x_b.translation - x_a.translation)
    if noise_trans is not None:
        t = t + np.asarray(noise_trans, dtype=float).reshape(3)
    return R, t


@dataclass
class MultiRobotGraph:
    """Vertices, edges and gauge anchor of a multi-robot pose graph."""

    vertices: dict[VertexId, Pose | None] = field(default_factory=dict)
    edges: list[RelativeMeasurement] = field(default_factory=list)
    anchor: VertexId | None = None

    def add_vertex(self, vid: VertexId, initial: Pose | None = None):
        if vid in self.vertices:
            raise ValueError(f"duplicate vertex {vid}")
        self.vertices[vid] = initial
        if self.anchor is None and vid.kind == VertexKind.ROBOT_POSE:
            self.anchor = vid

    def add_edge(self, edge: RelativeMeasurement) -> RelativeMeasurement:
        for vid in (edge.from_vertex, edge.to_vertex):
            if vid not in self.vertices:
                raise KeyError(f"edge references unknown vertex {vid}")
        self.edges.append(edge)
        return edge

    @property
    def robots(self) -> list[int]:
        return sorted({v.robot for v in self.vertices})

    def vertices_of(self, robot: int) -> list[VertexId]:
        return sorted(v for v in self.vertices if v.robot == robot)

    def vertex_ids(self) -> list[VertexId]:
        return sorted(self.vertices)

    def is_connected(self) -> bool:
        if not self.vertices:
            return False
        adjacency: dict[VertexId, list[VertexId]] = {v: [] for v in self.vertices}
        for e in self.edges:
            adjacency[e.from_vertex].append(e.to_vertex)
            adjacency[e.to_vertex].append(e.from_vertex)
        start = next(iter(self.vertices))
        seen = {start}
        stack = [start]
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(self.vertices)

    def validate(self):
        """Raise ValueError when the structural invariants do not hold."""
        if self.anchor is None or self.anchor not in self.vertices:
            raise ValueError("graph anchor is missing")
        if self.anchor.kind != VertexKind.ROBOT_POSE:
            raise ValueError("anchor must be a robot pose")
        if not self.is_connected():
            raise ValueError("graph is not connected")


def partition_edges(
    graph: MultiRobotGraph, robot: int
) -> tuple[list[RelativeMeasurement], list[RelativeMeasurement]]:
    """Split a robot's view of the edge set into (intra, separator) lists."""
    if robot not in graph.robots:
        raise KeyError(f"unknown robot {robot}")
    intra, separators = [], []
    for e in graph.edges:
        owners = {e.from_vertex.robot, e.to_vertex.robot}
        if owners == {robot}:
            intra.append(e)
        elif robot in owners:
            separators.append(e)
    return intra, separators


def graph_cost(graph: MultiRobotGraph, estimate: dict[VertexId, Pose]) -> float:
    """Chordal maximum-likelihood objective of an estimate.

    Sum over edges of
    omega_t^2 ||t_b - t_a - R_a t_meas||^2 + (omega_r^2 / 2) ||R_b - R_a R_meas||_F^2.
    """
    total = 0.0
    for e in graph.edges:
        for vid in (e.from_vertex, e.to_vertex):
            if vid not in estimate:
                raise KeyError(f"estimate missing vertex {vid}")
        pa, pb = estimate[e.from_vertex], estimate[e.to_vertex]
        dt = pb.translation - pa.translation - pa.rotation @ e.translation
        total += e.omega_t_sq * float(dt @ dt)
        total += 0.5 * e.omega_r_sq * chordal_residual(pa.rotation, pb.rotation, e.rotation)
    return total


def transform_estimate(estimate: dict[VertexId, Pose], gauge: Pose) -> dict[VertexId, Pose]:
    """Left-multiply every pose by a fixed rigid transform."""
    return {vid: gauge.compose(p) for vid, p in estimate.items()}


def odometry_chain_estimate(graph: MultiRobotGraph, ground_anchor: Pose | None = None) -> dict[VertexId, Pose]:
    """Dead-reckoned initial guess: chain odometry edges from each robot's
    first pose; landmarks placed through their first object-pose edge.

    Robot 0's chain starts at the anchor (identity unless given); other
    robots are placed through the first separator edge that connects them
    to an already-placed vertex, so the guess covers every vertex of a
    connected graph.
    """
    estimate: dict[VertexId, Pose] = {}
    anchor = graph.anchor
    if anchor is None:
        raise ValueError("graph anchor is missing")
    estimate[anchor] = ground_anchor if ground_anchor is not None else Pose.identity()
    remaining = [e for e in graph.edges]
    # Repeated sweeps: attach any edge with exactly one placed endpoint.
    progress = True
    while progress and len(estimate) < len(graph.vertices):
        progress = False
        for e in remaining:
            a, b = e.from_vertex, e.to_vertex
            if a in estimate and b not in estimate:
                z = Pose(e.rotation, e.translation)
                estimate[b] = estimate[a].compose(z)
                progress = True
            elif b in estimate and a not in estimate:
                z = Pose(e.rotation, e.translation)
                estimate[a] = estimate[b].compose(z.inverse())
                progress = True
    missing = set(graph.vertices) - set(estimate)
    if missing:
        raise ValueError(f"cannot dead-reckon disconnected vertices: {sorted(missing)[:3]}")
    return estimate
