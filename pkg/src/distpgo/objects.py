"""Object-landmark extension with a synthetic detection front-end.

Each robot owns its object landmark variables (6-DoF, living inside the
owner's block in both linear systems). A synthetic visibility model stands
in for a vision pipeline: a robot detects every object within range of a
pose and measures its relative pose under the usual noise model. During a
rendezvous one robot communicates the labels and poses of its objects;
the receiver associates them against its own map (nearest same-label
landmark within a gate) and a zero-relative-pose factor ties each shared
pair together, pulling both robots into a single reference frame.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose
from .graph import (
    EdgeKind,
    MultiRobotGraph,
    RelativeMeasurement,
    VertexId,
    VertexKind,
    compose_measurement,
    weight_from_sigma,
)
from .runtime import (
    POSE_BLOCK_BYTES,
    CommunicationLedger,
    DistributedRunResult,
    run_distributed_two_stage,
    sample_noise,
)
from .solvers import SolverConfig

LABEL_BYTES = 8
OBJECT_RECORD_BYTES = LABEL_BYTES + POSE_BLOCK_BYTES
DEFAULT_GATE_DISTANCE = 0.5  # stands in for the 2-sigma association gate
# Same scale as the measurement information; a much stiffer tie makes the
# block iterations crawl without changing the optimum in any useful way.
DEFAULT_SHARED_INFO = 1e2


@dataclass
class ObjectLandmark:
    """One robot's variable for a physical object (pose in the owner's map)."""

    owner: int
    index: int
    label: str
    pose: Pose

    @property
    def vertex_id(self) -> VertexId:
        return VertexId(self.owner, self.index, VertexKind.OBJECT_LANDMARK)


@dataclass(frozen=True)
class SharedObjectPair:
    first: VertexId
    second: VertexId
    label: str
    info: float


@dataclass(frozen=True)
class DetectionEvent:
    """Synthetic stand-in for a detection: which pose saw which true object,
    under which label, with the measured relative pose."""

    robot: int
    pose_index: int
    true_object: int
    label: str
    rotation: np.ndarray
    translation: np.ndarray
    is_false_positive: bool = False


@dataclass
class Matched:
    landmark: VertexId


class NewLandmark:
    def __repr__(self):
        return "NewLandmark()"


def add_object_pose_factor(
    graph: MultiRobotGraph,
    pose_vertex: VertexId,
    object_vertex: VertexId,
    z: Pose,
    sigma_t: float,
    sigma_r_rad: float,
) -> RelativeMeasurement:
    """Append a pose-to-landmark factor with isotropic information weights
    derived from the measurement sigmas."""
    edge = RelativeMeasurement(
        pose_vertex, object_vertex, z.rotation, z.translation,
        omega_t_sq=weight_from_sigma(sigma_t),
        omega_r_sq=weight_from_sigma(sigma_r_rad),
        kind=EdgeKind.OBJECT_POSE,
    )
    return graph.add_edge(edge)


def associate_objects(
    label: str,
    position: np.ndarray,
    local_map: list[ObjectLandmark],
    gate_distance: float = DEFAULT_GATE_DISTANCE,
) -> Matched | NewLandmark:
    """Nearest same-label landmark within the gate, else a new landmark.

    Deterministic given input order; distance ties break toward the lowest
    landmark index.
    """
    if gate_distance <= 0.0:
        raise ValueError("gate_distance must be positive")
    position = np.asarray(position, dtype=float).reshape(3)
    best: ObjectLandmark | None = None
    best_d = gate_distance
    for lm in sorted(local_map, key=lambda l: l.index):
        if lm.label != label:
            continue
        d = float(np.linalg.norm(lm.pose.translation - position))
        if d < best_d or (best is None and d <= best_d):
            best, best_d = lm, d
    if best is None:
        return NewLandmark()
    return Matched(best.vertex_id)


@dataclass
class ObjectAgentMap:
    """A robot's local object map in its own odometry frame."""

    robot: int
    landmarks: list[ObjectLandmark] = field(default_factory=list)

    def new_landmark(self, label: str, pose: Pose) -> ObjectLandmark:
        lm = ObjectLandmark(self.robot, len(self.landmarks), label, pose)
        self.landmarks.append(lm)
        return lm


def rendezvous_share(
    map_a: ObjectAgentMap,
    map_b: ObjectAgentMap,
    initial_pose_table: dict[int, Pose],
    ledger: CommunicationLedger | None = None,
    gate_distance: float = DEFAULT_GATE_DISTANCE,
    shared_info: float = DEFAULT_SHARED_INFO,
) -> tuple[list[SharedObjectPair], list[RelativeMeasurement]]:
    """One-way object share from robot a to robot b.

    b transforms a's object poses into its own frame using the known
    initial poses (association only, never used in the optimization), runs
    the nearest-same-label association per candidate, and emits one
    zero-relative-pose factor per shared pair. The communicated bytes
    (label plus pose per object) are charged to a.
    """
    frame_a = initial_pose_table[map_a.robot]
    frame_b_inv = initial_pose_table[map_b.robot].inverse()
    pairs: list[SharedObjectPair] = []
    edges: list[RelativeMeasurement] = []
    for lm in map_a.landmarks:
        in_b = frame_b_inv.compose(frame_a.compose(lm.pose))
        match = associate_objects(lm.label, in_b.translation, map_b.landmarks, gate_distance)
        if isinstance(match, Matched):
            pairs.append(SharedObjectPair(lm.vertex_id, match.landmark, lm.label, shared_info))
            edges.append(RelativeMeasurement(
                lm.vertex_id, match.landmark, np.eye(3), np.zeros(3),
                omega_t_sq=shared_info, omega_r_sq=shared_info,
                kind=EdgeKind.OBJECT_OBJECT,
            ))
    if ledger is not None:
        ledger.record_rendezvous(map_a.robot, len(map_a.landmarks) * OBJECT_RECORD_BYTES)
    return pairs, edges


def solve_object_slam_distributed(
    graph: MultiRobotGraph, config: SolverConfig, keep_messages: bool = False
) -> DistributedRunResult:
    """Distributed solve of an object-augmented graph.

    Object variables ride inside their owner's block, so the pipeline is
    exactly the base distributed two-stage run; an object-free graph gives
    bit-identical results to calling that pipeline directly.
    """
    return run_distributed_two_stage(graph, config, keep_messages=keep_messages)


@dataclass(frozen=True)
class ObjectSceneSpec:
    """Synthetic scene: robots orbit a shared object cluster.

    Each robot drives a closed loop of poses_per_robot poses on a circle of
    loop_radius around the cluster (offset in phase and height), so every
    object is re-observed many times and each trajectory closes a loop.
    """

    robot_count: int = 2
    object_count: int = 5
    poses_per_robot: int = 16
    loop_radius: float = 0.8
    sigma_r_deg: float = 5.0
    sigma_t: float = 0.1
    rng_seed: int = 0
    detection_range: float = 3.0
    gate_distance: float = DEFAULT_GATE_DISTANCE
    shared_info: float = DEFAULT_SHARED_INFO
    label_pool: tuple[str, ...] = ("chair", "table", "lamp", "sofa", "shelf")
    false_positive_rate: float = 0.0
    height_step: float = 0.3
    object_height_span: float = 0.6


@dataclass
class ObjectScenario:
    graph: MultiRobotGraph
    ground_truth: dict[VertexId, Pose]
    detections: list[DetectionEvent]
    shared_pairs: list[SharedObjectPair]
    ledger: CommunicationLedger
    maps: dict[int, ObjectAgentMap]

    @property
    def landmark_ids(self) -> list[VertexId]:
        return [v for v in sorted(self.graph.vertices) if v.kind == VertexKind.OBJECT_LANDMARK]

    @property
    def pose_ids(self) -> list[VertexId]:
        return [v for v in sorted(self.graph.vertices) if v.kind == VertexKind.ROBOT_POSE]


def _loop_pose(spec: ObjectSceneSpec, robot: int, k: int) -> Pose:
    from .runtime import _heading_rotation  # deferred: avoids import cycle at module load
    phase = 2.0 * np.pi * robot / max(spec.robot_count, 1)
    angle = phase + 2.0 * np.pi * k / spec.poses_per_robot
    ahead_angle = phase + 2.0 * np.pi * (k + 1) / spec.poses_per_robot
    z = spec.height_step * robot
    pos = np.array([spec.loop_radius * np.cos(angle), spec.loop_radius * np.sin(angle), z])
    nxt = np.array([spec.loop_radius * np.cos(ahead_angle), spec.loop_radius * np.sin(ahead_angle), z])
    return Pose(_heading_rotation(nxt - pos), pos)


def _local_slam_estimate(graph: MultiRobotGraph, robot: int) -> dict[VertexId, Pose]:
    """Single-robot solve of the robot's intra slice (its pre-rendezvous
    map, anchored at its own first pose)."""
    from .pipeline import solve_two_stage  # deferred: objects -> pipeline only here
    sub = MultiRobotGraph()
    for vid in graph.vertices_of(robot):
        sub.add_vertex(vid)
    sub.anchor = VertexId(robot, 0)
    for e in graph.edges:
        if e.from_vertex.robot == robot and e.to_vertex.robot == robot:
            sub.add_edge(e)
    return solve_two_stage(sub).estimate


def generate_object_scenario(spec: ObjectSceneSpec) -> ObjectScenario:
    """Build the synthetic scene end to end.

    Each robot's trajectory is a closed loop (odometry plus one closing
    edge) around the object cluster; every pose detects all objects within
    range and the detection's true identity keys the mapping-time
    association (the stand-in for a front-end that verifies detections
    both semantically and geometrically; optional false positives create
    spurious landmarks instead). Before the rendezvous each robot solves
    its own subgraph, and the shares run the geometric nearest-same-label
    association against those refined landmark estimates.
    """
    rng = np.random.default_rng(spec.rng_seed)
    sigma_r_rad = float(np.radians(spec.sigma_r_deg))

    robot_truth: dict[VertexId, Pose] = {}
    for robot in range(spec.robot_count):
        for k in range(spec.poses_per_robot):
            robot_truth[VertexId(robot, k)] = _loop_pose(spec, robot, k)

    half = 0.6
    object_truth: list[tuple[str, Pose]] = []
    for i in range(spec.object_count):
        pos = np.array([rng.uniform(-half, half), rng.uniform(-half, half),
                        rng.uniform(0.0, spec.object_height_span)])
        yaw = rng.uniform(-np.pi, np.pi)
        R = np.array([[np.cos(yaw), -np.sin(yaw), 0.0],
                      [np.sin(yaw), np.cos(yaw), 0.0],
                      [0.0, 0.0, 1.0]])
        label = spec.label_pool[i % len(spec.label_pool)]
        object_truth.append((label, Pose(R, pos)))

    graph = MultiRobotGraph()
    for vid in sorted(robot_truth):
        graph.add_vertex(vid)
    graph.anchor = VertexId(0, 0)

    wt, wr = weight_from_sigma(spec.sigma_t), weight_from_sigma(sigma_r_rad)
    for robot in range(spec.robot_count):
        for k in range(spec.poses_per_robot - 1):
            a, b = VertexId(robot, k), VertexId(robot, k + 1)
            eta, eps = sample_noise(rng, sigma_r_rad, spec.sigma_t)
            R, t = compose_measurement(robot_truth[a], robot_truth[b], eta, eps)
            graph.add_edge(RelativeMeasurement(a, b, R, t, wt, wr, EdgeKind.ODOMETRY))
        a, b = VertexId(robot, spec.poses_per_robot - 1), VertexId(robot, 0)
        eta, eps = sample_noise(rng, sigma_r_rad, spec.sigma_t)
        R, t = compose_measurement(robot_truth[a], robot_truth[b], eta, eps)
        graph.add_edge(RelativeMeasurement(a, b, R, t, wt, wr, EdgeKind.LOOP_CLOSURE))

    initial_pose_table = {robot: robot_truth[VertexId(robot, 0)]
                          for robot in range(spec.robot_count)}

    detections: list[DetectionEvent] = []
    maps: dict[int, ObjectAgentMap] = {}
    truth: dict[VertexId, Pose] = dict(robot_truth)
    for robot in range(spec.robot_count):
        local_map = ObjectAgentMap(robot)
        maps[robot] = local_map
        landmark_of_object: dict[int, VertexId] = {}
        for k in range(spec.poses_per_robot):
            x_true = robot_truth[VertexId(robot, k)]
            for obj_index, (label, obj_pose) in enumerate(object_truth):
                if np.linalg.norm(obj_pose.translation - x_true.translation) > spec.detection_range:
                    continue
                eta, eps = sample_noise(rng, sigma_r_rad, spec.sigma_t)
                R, t = compose_measurement(x_true, obj_pose, eta, eps)
                false_positive = (spec.false_positive_rate > 0.0
                                  and bool(rng.uniform() < spec.false_positive_rate))
                if false_positive:
                    label = spec.label_pool[int(rng.integers(len(spec.label_pool)))]
                detections.append(DetectionEvent(robot, k, obj_index, label, R, t,
                                                 is_false_positive=false_positive))
                if false_positive or obj_index not in landmark_of_object:
                    lm = local_map.new_landmark(label, Pose(R, t))
                    target = lm.vertex_id
                    graph.add_vertex(target)
                    truth[target] = obj_pose
                    if not false_positive:
                        landmark_of_object[obj_index] = target
                else:
                    target = landmark_of_object[obj_index]
                graph.add_edge(RelativeMeasurement(VertexId(robot, k), target, R, t,
                                                   wt, wr, EdgeKind.OBJECT_POSE))
        # pre-rendezvous single-robot SLAM refines the map shared later
        local_estimate = _local_slam_estimate(graph, robot)
        for lm in local_map.landmarks:
            lm.pose = local_estimate[lm.vertex_id]

    ledger = CommunicationLedger()
    shared_pairs: list[SharedObjectPair] = []
    for a in range(spec.robot_count):
        for b in range(spec.robot_count):
            if a == b:
                continue
            pairs, edges = rendezvous_share(maps[a], maps[b], initial_pose_table, ledger,
                                            spec.gate_distance, spec.shared_info)
            for pair, edge in zip(pairs, edges):
                mirrored = any({p.first, p.second} == {pair.first, pair.second}
                               for p in shared_pairs)
                if not mirrored:
                    shared_pairs.append(pair)
                    graph.add_edge(edge)

    gauge = truth[graph.anchor].inverse()
    truth = {vid: gauge.compose(p) for vid, p in truth.items()}
    graph.validate()
    return ObjectScenario(graph=graph, ground_truth=truth, detections=detections,
                          shared_pairs=shared_pairs, ledger=ledger, maps=maps)


@dataclass(frozen=True)
class MapMemoryModel:
    """Per-robot storage of an object map versus a raw point-cloud map:
    n_objects * points_per_model * bytes_per_point against
    n_frames * points_per_frame * bytes_per_point."""

    object_map_bytes: float
    point_cloud_bytes: float

    @property
    def ratio(self) -> float:
        return self.object_map_bytes / self.point_cloud_bytes


def map_memory_model(n_objects: int, points_per_model: int,
                     n_frames: int, points_per_frame: int,
                     bytes_per_point: int) -> MapMemoryModel:
    return MapMemoryModel(
        object_map_bytes=float(n_objects * points_per_model * bytes_per_point),
        point_cloud_bytes=float(n_frames * points_per_frame * bytes_per_point),
    )
