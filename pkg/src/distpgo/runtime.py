"""Simulated multi-robot execution of the two-stage method.

Robot agents hold only their own block of each linear system plus cached
separator estimates received from neighbors; every cross-robot value
transfer is a SeparatorMessage and is charged to the communication ledger
(one payload entry per separator edge per robot per round, 72 bytes for a
rotation block and 48 for a pose block). An omniscient referee owns
scenario generation, global stopping decisions and metric assembly; the
agents never share mutable state.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor

from .assembly import (
    BlockLinearSystem,
    apply_correction,
    build_pose_system,
    build_rotation_system,
    rotations_from_vector,
)
from .geometry import Pose, exp_map, project_to_so3
from .graph import (
    EdgeKind,
    MultiRobotGraph,
    RelativeMeasurement,
    VertexId,
    VertexKind,
    compose_measurement,
    graph_cost,
    odometry_chain_estimate,
    partition_edges,
    weight_from_sigma,
)
from .pipeline import CentralizedResult, solve_gauss_newton, solve_two_stage
from .solvers import DIVERGENCE_GUARD, IterationTrace, SolverConfig, relaxed_block_update

ROTATION_BLOCK_BYTES = 72  # 9 doubles
POSE_BLOCK_BYTES = 48  # 6 doubles

GRID_ROBOT_COUNTS = (4, 9, 16, 25, 36, 49)
GRID_CUBE_SIDE = 2.0
TRACK_SEPARATION = 2.0
TRACK_STEP = 1.0

# Hamiltonian cycle over the unit-cube corners.
_CUBE_CYCLE = (
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 1, 1), (1, 1, 1), (1, 0, 1), (0, 0, 1),
)


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of a synthetic multi-robot dataset."""

    kind: str  # "grid3d" or "parallel_tracks"
    robot_count: int = 4
    poses_per_robot: int | None = None  # grid default 8, tracks default 10
    sigma_r_deg: float = 5.0
    sigma_t: float = 0.2
    rng_seed: int = 0
    link_count: int = 10  # parallel_tracks only

    def __post_init__(self):
        if self.kind not in ("grid3d", "parallel_tracks"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "grid3d" and self.robot_count not in GRID_ROBOT_COUNTS:
            raise ValueError(f"grid3d robot_count must be one of {GRID_ROBOT_COUNTS}")
        if self.kind == "parallel_tracks":
            if self.robot_count != 2:
                raise ValueError("parallel_tracks uses exactly 2 robots")
            if not 1 <= self.link_count <= self.n_poses:
                raise ValueError("link_count must lie in [1, poses_per_robot]")
        if self.sigma_r_deg < 0.0 or self.sigma_t < 0.0:
            raise ValueError("noise levels must be nonnegative")

    @property
    def n_poses(self) -> int:
        if self.poses_per_robot is not None:
            return self.poses_per_robot
        return 8 if self.kind == "grid3d" else 10

    @property
    def scenario_id(self) -> str:
        base = f"{self.kind}-r{self.robot_count}-seed{self.rng_seed}"
        if self.kind == "parallel_tracks":
            base += f"-links{self.link_count}"
        return base


def _heading_rotation(direction: np.ndarray) -> np.ndarray:
    x = direction / np.linalg.norm(direction)
    up = np.array([0.0, 0.0, 1.0]) if abs(x[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    y = np.cross(up, x)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    return np.column_stack([x, y, z])


def _grid_ground_truth(spec: ScenarioSpec) -> dict[VertexId, Pose]:
    side = int(round(np.sqrt(spec.robot_count)))
    truth: dict[VertexId, Pose] = {}
    for robot in range(spec.robot_count):
        gx, gy = robot % side, robot // side
        origin = np.array([GRID_CUBE_SIDE * gx, GRID_CUBE_SIDE * gy, 0.0])
        positions = [origin + GRID_CUBE_SIDE * np.array(_CUBE_CYCLE[k % 8], dtype=float)
                     for k in range(spec.n_poses)]
        for k in range(spec.n_poses):
            ahead = positions[(k + 1) % spec.n_poses] - positions[k]
            if np.linalg.norm(ahead) < 1e-12:
                ahead = np.array([1.0, 0.0, 0.0])
            truth[VertexId(robot, k)] = Pose(_heading_rotation(ahead), positions[k])
    return truth


def _track_ground_truth(spec: ScenarioSpec) -> dict[VertexId, Pose]:
    truth: dict[VertexId, Pose] = {}
    for robot in range(2):
        for k in range(spec.n_poses):
            pos = np.array([TRACK_STEP * k, TRACK_SEPARATION * robot, 0.0])
            truth[VertexId(robot, k)] = Pose(np.eye(3), pos)
    return truth


def _track_link_times(spec: ScenarioSpec) -> list[int]:
    n, k = spec.n_poses, spec.link_count
    if k == 1:
        return [n // 2]
    return [int(i * (n - 1) / (k - 1)) for i in range(k)]


def sample_noise(rng: np.random.Generator, sigma_r_rad: float, sigma_t: float):
    """Axis-angle Gaussian rotation noise and isotropic translation noise."""
    eta = rng.normal(0.0, sigma_r_rad, 3) if sigma_r_rad > 0.0 else None
    eps = rng.normal(0.0, sigma_t, 3) if sigma_t > 0.0 else None
    return eta, eps


def _measured_edge(
    truth: dict[VertexId, Pose],
    rng: np.random.Generator,
    a: VertexId,
    b: VertexId,
    kind: EdgeKind,
    sigma_r_rad: float,
    sigma_t: float,
) -> RelativeMeasurement:
    eta, eps = sample_noise(rng, sigma_r_rad, sigma_t)
    R, t = compose_measurement(truth[a], truth[b], eta, eps)
    return RelativeMeasurement(a, b, R, t,
                               omega_t_sq=weight_from_sigma(sigma_t),
                               omega_r_sq=weight_from_sigma(sigma_r_rad),
                               kind=kind)


def _normalize_gauge(truth: dict[VertexId, Pose], anchor: VertexId) -> dict[VertexId, Pose]:
    gauge = truth[anchor].inverse()
    return {vid: gauge.compose(p) for vid, p in truth.items()}


def generate_scenario(spec: ScenarioSpec) -> tuple[MultiRobotGraph, dict[VertexId, Pose]]:
    """Build a synthetic dataset: ground truth on the stated geometry,
    odometry along each robot's trajectory, inter-robot edges where robots
    can communicate, and measurement noise drawn from spec.rng_seed.

    Ground truth is returned in the anchored gauge (robot 0's first pose
    at the identity), so anchored solves are directly comparable to it.
    """
    rng = np.random.default_rng(spec.rng_seed)
    sigma_r_rad = float(np.radians(spec.sigma_r_deg))
    truth = _grid_ground_truth(spec) if spec.kind == "grid3d" else _track_ground_truth(spec)
    anchor = VertexId(0, 0)
    truth = _normalize_gauge(truth, anchor)

    graph = MultiRobotGraph()
    for vid in sorted(truth):
        graph.add_vertex(vid)
    graph.anchor = anchor

    n = spec.n_poses
    for robot in range(spec.robot_count):
        for k in range(n - 1):
            graph.add_edge(_measured_edge(truth, rng, VertexId(robot, k), VertexId(robot, k + 1),
                                          EdgeKind.ODOMETRY, sigma_r_rad, spec.sigma_t))
        if spec.kind == "grid3d" and n > 2:
            graph.add_edge(_measured_edge(truth, rng, VertexId(robot, n - 1), VertexId(robot, 0),
                                          EdgeKind.LOOP_CLOSURE, sigma_r_rad, spec.sigma_t))

    if spec.kind == "grid3d":
        side = int(round(np.sqrt(spec.robot_count)))
        for robot in range(spec.robot_count):
            gx, gy = robot % side, robot // side
            for ox, oy in ((1, 0), (0, 1)):
                nx, ny = gx + ox, gy + oy
                if nx >= side or ny >= side:
                    continue
                other = ny * side + nx
                # Same cube-cycle phase: the two robots sit on contiguous
                # lattice corners at every timestamp.
                for k in range(n):
                    graph.add_edge(_measured_edge(truth, rng, VertexId(robot, k), VertexId(other, k),
                                                  EdgeKind.INTER_ROBOT, sigma_r_rad, spec.sigma_t))
    else:
        for k in _track_link_times(spec):
            graph.add_edge(_measured_edge(truth, rng, VertexId(0, k), VertexId(1, k),
                                          EdgeKind.INTER_ROBOT, sigma_r_rad, spec.sigma_t))

    graph.validate()
    for vid, pose in odometry_chain_estimate(graph).items():
        graph.vertices[vid] = pose
    return graph, truth


@dataclass(frozen=True)
class SeparatorMessage:
    """One robot's separator estimates for one neighbor and round."""

    sender: int
    receiver: int
    phase: str  # "rotation" or "pose"
    round_index: int
    payload: tuple[tuple[VertexId, np.ndarray], ...]

    @property
    def byte_size(self) -> int:
        per_entry = ROTATION_BLOCK_BYTES if self.phase == "rotation" else POSE_BLOCK_BYTES
        return len(self.payload) * per_entry


@dataclass
class CommunicationLedger:
    """Per-robot, per-phase accounting of exchanged bytes and messages."""

    bytes_sent: dict[tuple[int, str], int] = field(default_factory=dict)
    messages_sent: dict[tuple[int, str], int] = field(default_factory=dict)
    rendezvous_count: dict[int, int] = field(default_factory=dict)
    rendezvous_bytes: dict[int, int] = field(default_factory=dict)

    def record_message(self, message: SeparatorMessage):
        key = (message.sender, message.phase)
        self.bytes_sent[key] = self.bytes_sent.get(key, 0) + message.byte_size
        self.messages_sent[key] = self.messages_sent.get(key, 0) + 1

    def record_rendezvous(self, robot: int, n_bytes: int):
        self.rendezvous_count[robot] = self.rendezvous_count.get(robot, 0) + 1
        self.rendezvous_bytes[robot] = self.rendezvous_bytes.get(robot, 0) + n_bytes

    def total_bytes(self, robot: int, phase: str) -> int:
        return self.bytes_sent.get((robot, phase), 0)

    def total_messages(self, robot: int, phase: str) -> int:
        return self.messages_sent.get((robot, phase), 0)

    def grand_total_bytes(self) -> int:
        return sum(self.bytes_sent.values()) + sum(self.rendezvous_bytes.values())


class RobotAgent:
    """State of one robot during a distributed solve of one linear system.

    Holds the robot's diagonal block (factored once), its right-hand side,
    the off-diagonal couplings toward separator vertices of its neighbors,
    and a cache of the latest separator values received. No other robot's
    non-separator variables are ever stored.
    """

    def __init__(self, robot: int, system: BlockLinearSystem, graph: MultiRobotGraph,
                 anchor_value: np.ndarray):
        self.robot = robot
        sl = system.robot_slices[robot]
        self.chol = cho_factor(system.diag[robot])
        self.g = system.g[sl].copy()
        self.y = np.zeros(sl.stop - sl.start)
        self.vertex_local = {vid: slice(s.start - sl.start, s.stop - sl.start)
                             for vid, s in system.vertex_slots.items()
                             if s.start >= sl.start and s.stop <= sl.stop}
        self.anchor = system.anchor
        self.anchor_value = anchor_value
        self.var_dim = system.var_dim

        _, separators = partition_edges(graph, robot)
        # One send entry per separator edge: (neighbor robot, own endpoint).
        self.send_plan: list[tuple[int, VertexId]] = []
        remote_by_neighbor: dict[int, set[VertexId]] = {}
        for e in separators:
            own, remote = ((e.from_vertex, e.to_vertex)
                           if e.from_vertex.robot == robot else (e.to_vertex, e.from_vertex))
            self.send_plan.append((remote.robot, own))
            if remote in system.vertex_slots:  # the anchor never travels
                remote_by_neighbor.setdefault(remote.robot, set()).add(remote)
        # Reduced coupling blocks: columns of H_{robot, neighbor} restricted
        # to that neighbor's separator vertices.
        self.coupling: list[tuple[list[VertexId], np.ndarray]] = []
        for neighbor, remotes in sorted(remote_by_neighbor.items()):
            if (robot, neighbor) not in system.off_diag:
                continue
            block = system.off_diag[(robot, neighbor)]
            nsl = system.robot_slices[neighbor]
            ordered = sorted(remotes, key=lambda v: system.vertex_slots[v].start)
            cols = np.hstack([
                block[:, system.vertex_slots[v].start - nsl.start:
                      system.vertex_slots[v].stop - nsl.start]
                for v in ordered
            ])
            self.coupling.append((ordered, cols))
        self.cache: dict[VertexId, np.ndarray] = {}

    def value_of(self, vid: VertexId) -> np.ndarray:
        if vid == self.anchor:
            return self.anchor_value.copy()
        return self.y[self.vertex_local[vid]].copy()

    def coupling_term(self) -> np.ndarray:
        total = np.zeros(self.y.size)
        for ordered, cols in self.coupling:
            stacked = np.concatenate([
                self.cache.get(v, np.zeros(self.var_dim)) for v in ordered
            ])
            total += cols @ stacked
        return total

    def update(self, gamma: float, pure_solve: bool = False) -> None:
        if pure_solve:
            self.y = relaxed_block_update(self.chol, self.g, self.coupling_term(), self.y, 1.0)
        else:
            self.y = relaxed_block_update(self.chol, self.g, self.coupling_term(), self.y, gamma)

    def outgoing(self, phase: str, round_index: int) -> list[SeparatorMessage]:
        grouped: dict[int, list[tuple[VertexId, np.ndarray]]] = {}
        for neighbor, own in self.send_plan:
            grouped.setdefault(neighbor, []).append((own, self.value_of(own)))
        return [SeparatorMessage(self.robot, neighbor, phase, round_index, tuple(entries))
                for neighbor, entries in sorted(grouped.items())]

    def receive(self, message: SeparatorMessage) -> None:
        for vid, value in message.payload:
            self.cache[vid] = np.asarray(value, dtype=float).copy()


@dataclass
class DistributedRunResult:
    estimate: dict[VertexId, Pose]
    cost: float
    rotation_trace: IterationTrace
    pose_trace: IterationTrace
    ledger: CommunicationLedger
    k_rotation: int
    k_pose: int
    messages: list[SeparatorMessage] = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return self.rotation_trace.diverged or self.pose_trace.diverged

    @property
    def total_iterations(self) -> int:
        return self.k_rotation + self.k_pose


def _gather(agents: dict[int, RobotAgent], system: BlockLinearSystem) -> np.ndarray:
    y = np.zeros(system.dim)
    for robot, agent in agents.items():
        y[system.robot_slices[robot]] = agent.y
    return y


def _run_phase(
    system: BlockLinearSystem,
    graph: MultiRobotGraph,
    config: SolverConfig,
    phase: str,
    anchor_value: np.ndarray,
    ledger: CommunicationLedger,
    sink: list[SeparatorMessage] | None,
) -> tuple[dict[int, RobotAgent], IterationTrace, int]:
    """Drive message rounds for one linear system until the global change
    norm passes the threshold. Round 1 is the flagged sweep when enabled;
    every round each robot sends one entry per separator edge."""
    robots = system.robots
    order = config.order_for(system)
    agents = {r: RobotAgent(r, system, graph, anchor_value) for r in robots}
    eta = config.eta_for(system)
    trace = IterationTrace(eta=eta)
    m_star = system.quadratic(system.direct_solve()) if config.record_errors else None

    def deliver(agent: RobotAgent, round_index: int):
        for msg in agent.outgoing(phase, round_index):
            ledger.record_message(msg)
            if sink is not None:
                sink.append(msg)
            agents[msg.receiver].receive(msg)

    rounds = 0
    pending_flagged = config.flagged_init
    while rounds < config.max_iterations + int(config.flagged_init):
        rounds += 1
        previous = _gather(agents, system)
        if pending_flagged:
            for robot in order:
                agents[robot].update(config.gamma, pure_solve=True)
                deliver(agents[robot], rounds)
            pending_flagged = False
        elif config.method == "jor":
            for robot in robots:
                agents[robot].update(config.gamma)
            for robot in robots:
                deliver(agents[robot], rounds)
        else:
            for robot in order:
                agents[robot].update(config.gamma)
                deliver(agents[robot], rounds)
        current = _gather(agents, system)
        per_robot = np.array([np.linalg.norm(current[system.robot_slices[r]] - previous[system.robot_slices[r]])
                              for r in robots])
        change = float(np.linalg.norm(current - previous))
        trace.iterations += 1
        trace.changes.append(change)
        trace.robot_changes.append(per_robot)
        if m_star is not None:
            trace.errors.append(system.quadratic(current) - m_star)
        if not np.isfinite(change) or change > DIVERGENCE_GUARD:
            trace.diverged = True
            break
        if rounds > 1 or not config.flagged_init:
            if change <= eta:
                trace.converged = True
                break
    final = _gather(agents, system)
    trace.linear_residual = (system.linear_residual(final)
                             if np.all(np.isfinite(final)) else float("inf"))
    return agents, trace, rounds


def run_distributed_two_stage(
    graph: MultiRobotGraph,
    config: SolverConfig,
    keep_messages: bool = False,
) -> DistributedRunResult:
    """Distributed two-stage solve over simulated agents.

    Stage 1 iterates the rotation system; each robot then projects its own
    rotation blocks locally (cached neighbor separator blocks are projected
    locally too, which costs no extra communication). Stage 2 iterates the
    pose system the same way. The referee assembles the final estimate for
    metrics only.
    """
    graph.validate()
    ledger = CommunicationLedger()
    sink: list[SeparatorMessage] | None = [] if keep_messages else None

    rot_system = build_rotation_system(graph)
    rot_agents, rot_trace, k_rot = _run_phase(
        rot_system, graph, config, "rotation", np.eye(3).flatten(), ledger, sink)
    r = _gather(rot_agents, rot_system)
    rotations = {vid: project_to_so3(M) for vid, M in rotations_from_vector(rot_system, r).items()}

    pose_system = build_pose_system(graph, rotations)
    pose_agents, pose_trace, k_pose = _run_phase(
        pose_system, graph, config, "pose", np.zeros(6), ledger, sink)
    p = _gather(pose_agents, pose_system)
    estimate = apply_correction(rotations, pose_system, p)
    finite = all(np.all(np.isfinite(pose.translation)) and np.all(np.isfinite(pose.rotation))
                 for pose in estimate.values())
    cost = graph_cost(graph, estimate) if finite else float("inf")

    return DistributedRunResult(
        estimate=estimate, cost=cost,
        rotation_trace=rot_trace, pose_trace=pose_trace,
        ledger=ledger, k_rotation=k_rot, k_pose=k_pose,
        messages=sink if sink is not None else [],
    )


def ddf_sam_comm_model(s: int, k_gn: int = 1) -> int:
    """Bytes a robot sends under the Gaussian-elimination baseline's model:
    k_gn * (s * B_p + (s * B_p)^2) with B_p = 48. Modeling only."""
    if s < 0:
        raise ValueError("separator count must be nonnegative")
    linear = s * POSE_BLOCK_BYTES
    return k_gn * (linear + linear * linear)


def separator_count(graph: MultiRobotGraph, robot: int) -> int:
    return len(partition_edges(graph, robot)[1])


@dataclass
class MethodOutcome:
    method: str
    estimate: dict[VertexId, Pose]
    cost: float
    iterations: int
    diverged: bool = False
    run: DistributedRunResult | None = None
    centralized: CentralizedResult | None = None


def run_method(graph: MultiRobotGraph, method: str, config: SolverConfig) -> MethodOutcome:
    """Dispatch one named method on a graph.

    two-stage: centralized direct solves; gn: Gauss-Newton refinement from
    the two-stage output; dgs/dj: SOR/JOR at gamma=1; sor/jor: the
    configured gamma.
    """
    method = method.lower()
    if method == "two-stage":
        res = solve_two_stage(graph)
        return MethodOutcome(method, res.estimate, res.cost, 0, centralized=res)
    if method == "gn":
        start = solve_two_stage(graph)
        res = solve_gauss_newton(graph, start.estimate)
        return MethodOutcome(method, res.estimate, res.cost, res.gn_iterations,
                             diverged=res.diverged, centralized=res)
    overrides: dict[str, object] = {}
    if method == "dgs":
        overrides = {"method": "sor", "gamma": 1.0}
    elif method == "dj":
        overrides = {"method": "jor", "gamma": 1.0}
    elif method in ("sor", "jor"):
        overrides = {"method": method}
    else:
        raise ValueError(f"unknown method {method!r}")
    run = run_distributed_two_stage(graph, dataclasses.replace(config, **overrides))
    return MethodOutcome(method, run.estimate, run.cost, run.total_iterations,
                         diverged=run.diverged, run=run)


@dataclass
class MonteCarloResult:
    spec: ScenarioSpec
    methods: tuple[str, ...]
    runs: list[dict[str, MethodOutcome]]
    seeds: list[int]

    def costs(self, method: str) -> np.ndarray:
        return np.array([run[method].cost for run in self.runs])

    def iterations(self, method: str) -> np.ndarray:
        return np.array([run[method].iterations for run in self.runs])

    def mean_cost(self, method: str) -> float:
        return float(np.mean(self.costs(method)))

    def std_cost(self, method: str) -> float:
        return float(np.std(self.costs(method)))

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            m: {
                "mean_cost": self.mean_cost(m),
                "std_cost": self.std_cost(m),
                "mean_iterations": float(np.mean(self.iterations(m))),
                "std_iterations": float(np.std(self.iterations(m))),
            }
            for m in self.methods
        }


def monte_carlo(
    spec: ScenarioSpec,
    config: SolverConfig,
    runs: int,
    methods: tuple[str, ...] = ("dgs", "two-stage", "gn"),
) -> MonteCarloResult:
    """Repeat a scenario over seeds derived from spec.rng_seed and collect
    per-method outcomes; identical inputs give identical aggregates."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = [int(s) for s in np.random.SeedSequence(spec.rng_seed).generate_state(runs)]
    outcomes: list[dict[str, MethodOutcome]] = []
    for seed in seeds:
        graph, _ = generate_scenario(dataclasses.replace(spec, rng_seed=seed))
        outcomes.append({m: run_method(graph, m, config) for m in methods})
    return MonteCarloResult(spec=spec, methods=tuple(methods), runs=outcomes, seeds=seeds)
