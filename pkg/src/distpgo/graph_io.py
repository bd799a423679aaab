"""Pose-graph file I/O in a g2o-flavored text format with explicit robot
ownership, plus the JSON run-configuration schema.

Quaternions (x, y, z, w convention) appear only at this boundary;
everything internal is rotation matrices. Records:

    VERTEX_SE3:QUAT id x y z qx qy qz qw
    EDGE_SE3:QUAT from to x y z qx qy qz qw i11 i12 ... i66  (21 upper-tri)
    OWNER id robot local_index POSE|OBJECT
    ANCHOR id

Ownership records partition vertices across robots; files without them
parse as a single-robot graph. Edge information matrices must be isotropic
diagonal diag(wt, wt, wt, wr, wr, wr); anything else is rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from .geometry import Pose
from .graph import (
    EdgeKind,
    MultiRobotGraph,
    RelativeMeasurement,
    VertexId,
    VertexKind,
)
from .solvers import SolverConfig

FLOAT_FORMAT = "{:.17g}"


class GraphParseError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def _quat_to_matrix(q: np.ndarray, line_number: int) -> np.ndarray:
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > 1e-3:
        raise GraphParseError(line_number, f"quaternion norm {norm:.6f} is not unit")
    return ScipyRotation.from_quat(q / norm).as_matrix()


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    q = ScipyRotation.from_matrix(R).as_quat()
    # Deterministic hemisphere: w >= 0.
    return -q if q[3] < 0.0 else q


def _upper_triangular(info: np.ndarray) -> list[float]:
    return [info[i, j] for i in range(6) for j in range(i, 6)]


def _info_from_upper(values: list[float], line_number: int) -> tuple[float, float]:
    info = np.zeros((6, 6))
    it = iter(values)
    for i in range(6):
        for j in range(i, 6):
            info[i, j] = info[j, i] = next(it)
    diag = np.diag(info)
    off = info - np.diag(diag)
    if np.any(np.abs(off) > 1e-9 * max(1.0, float(np.max(np.abs(diag))))):
        raise GraphParseError(line_number, "information matrix must be diagonal (isotropic model)")
    wt, wr = diag[:3], diag[3:]
    if np.ptp(wt) > 1e-9 * max(1.0, wt.max()) or np.ptp(wr) > 1e-9 * max(1.0, wr.max()):
        raise GraphParseError(line_number, "information diagonal must be isotropic per block")
    if wt[0] <= 0.0 or wr[0] <= 0.0:
        raise GraphParseError(line_number, "information weights must be positive")
    return float(wt[0]), float(wr[0])


def _classify_edge(a: VertexId, b: VertexId) -> EdgeKind:
    if a.kind == VertexKind.OBJECT_LANDMARK and b.kind == VertexKind.OBJECT_LANDMARK:
        return EdgeKind.OBJECT_OBJECT
    if a.kind == VertexKind.OBJECT_LANDMARK or b.kind == VertexKind.OBJECT_LANDMARK:
        return EdgeKind.OBJECT_POSE
    if a.robot != b.robot:
        return EdgeKind.INTER_ROBOT
    return EdgeKind.ODOMETRY if abs(a.index - b.index) == 1 else EdgeKind.LOOP_CLOSURE


def parse_graph(path: str) -> MultiRobotGraph:
    """Parse a graph file; malformed lines raise GraphParseError with the
    offending line number."""
    vertices: dict[int, Pose] = {}
    owners: dict[int, VertexId] = {}
    anchor_file_id: int | None = None
    edge_records: list[tuple[int, int, int, np.ndarray, np.ndarray, float, float]] = []

    with open(path, "r", encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            tag = fields[0]
            try:
                if tag == "VERTEX_SE3:QUAT":
                    if len(fields) != 9:
                        raise GraphParseError(line_number, "vertex record needs 8 values")
                    vid = int(fields[1])
                    values = np.array([float(v) for v in fields[2:]])
                    vertices[vid] = Pose(_quat_to_matrix(values[3:], line_number), values[:3])
                elif tag == "EDGE_SE3:QUAT":
                    if len(fields) != 3 + 7 + 21:
                        raise GraphParseError(line_number, "edge record needs 28 values")
                    a, b = int(fields[1]), int(fields[2])
                    values = [float(v) for v in fields[3:]]
                    t = np.array(values[:3])
                    R = _quat_to_matrix(np.array(values[3:7]), line_number)
                    wt, wr = _info_from_upper(values[7:], line_number)
                    edge_records.append((line_number, a, b, R, t, wt, wr))
                elif tag == "OWNER":
                    if len(fields) != 5 or fields[4] not in ("POSE", "OBJECT"):
                        raise GraphParseError(line_number, "owner record is OWNER id robot index POSE|OBJECT")
                    kind = VertexKind.ROBOT_POSE if fields[4] == "POSE" else VertexKind.OBJECT_LANDMARK
                    owners[int(fields[1])] = VertexId(int(fields[2]), int(fields[3]), kind)
                elif tag == "ANCHOR":
                    if len(fields) != 2:
                        raise GraphParseError(line_number, "anchor record is ANCHOR id")
                    anchor_file_id = int(fields[1])
                else:
                    raise GraphParseError(line_number, f"unknown record {tag!r}")
            except GraphParseError:
                raise
            except (ValueError, StopIteration) as exc:
                raise GraphParseError(line_number, f"malformed record: {exc}") from exc

    if not edge_records:
        raise ValueError(f"{path}: graph has no edges (degenerate)")

    graph = MultiRobotGraph()
    id_map: dict[int, VertexId] = {}
    for file_id in sorted(vertices):
        vid = owners.get(file_id, VertexId(0, file_id, VertexKind.ROBOT_POSE))
        id_map[file_id] = vid
        graph.add_vertex(vid, vertices[file_id])
    for line_number, a, b, R, t, wt, wr in edge_records:
        if a not in id_map or b not in id_map:
            raise GraphParseError(line_number, f"edge references unknown vertex id {a if a not in id_map else b}")
        va, vb = id_map[a], id_map[b]
        graph.add_edge(RelativeMeasurement(va, vb, R, t, wt, wr, _classify_edge(va, vb)))
    if anchor_file_id is not None:
        if anchor_file_id not in id_map:
            raise ValueError(f"{path}: anchor references unknown vertex {anchor_file_id}")
        graph.anchor = id_map[anchor_file_id]
    else:
        poses = [v for v in graph.vertex_ids() if v.kind == VertexKind.ROBOT_POSE]
        graph.anchor = poses[0] if poses else None
    graph.validate()
    return graph


def _fmt(values) -> str:
    return " ".join(FLOAT_FORMAT.format(float(v)) for v in values)


def serialize_graph(graph: MultiRobotGraph, estimate: dict[VertexId, Pose] | None = None) -> str:
    """Render a graph (vertex values from `estimate`, else stored initials,
    else identity). Round trips are lossless to within 1e-12 per field."""
    order = graph.vertex_ids()
    file_ids = {vid: i for i, vid in enumerate(order)}
    lines = ["# distpgo graph v1"]
    for vid in order:
        pose = (estimate or {}).get(vid) or graph.vertices.get(vid) or Pose.identity()
        q = _matrix_to_quat(pose.rotation)
        lines.append(f"VERTEX_SE3:QUAT {file_ids[vid]} {_fmt(pose.translation)} {_fmt(q)}")
    for vid in order:
        kind = "POSE" if vid.kind == VertexKind.ROBOT_POSE else "OBJECT"
        lines.append(f"OWNER {file_ids[vid]} {vid.robot} {vid.index} {kind}")
    if graph.anchor is not None:
        lines.append(f"ANCHOR {file_ids[graph.anchor]}")
    for e in graph.edges:
        q = _matrix_to_quat(e.rotation)
        info = np.diag([e.omega_t_sq] * 3 + [e.omega_r_sq] * 3)
        lines.append(
            f"EDGE_SE3:QUAT {file_ids[e.from_vertex]} {file_ids[e.to_vertex]} "
            f"{_fmt(e.translation)} {_fmt(q)} {_fmt(_upper_triangular(info))}"
        )
    return "\n".join(lines) + "\n"


def write_graph(path: str, graph: MultiRobotGraph, estimate: dict[VertexId, Pose] | None = None):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(serialize_graph(graph, estimate))


@dataclass
class RunConfig:
    """Validated bundle of scenario, solver and output settings."""

    scenario: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    method: str = "dgs"
    seed: int = 0
    output_dir: str | None = None

    _METHODS = ("dgs", "dj", "jor", "sor", "two-stage", "gn")

    def validate(self) -> "RunConfig":
        if self.method not in self._METHODS:
            raise ValueError(f"method must be one of {self._METHODS}")
        self.solver_config()  # raises on bad solver fields
        return self

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def to_json(self) -> str:
        return json.dumps({
            "scenario": self.scenario,
            "solver": self.solver,
            "method": self.method,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("run config must be a JSON object")
        unknown = set(data) - {"scenario", "solver", "method", "seed", "output_dir"}
        if unknown:
            raise ValueError(f"unknown run config fields: {sorted(unknown)}")
        return RunConfig(
            scenario=data.get("scenario", {}),
            solver=data.get("solver", {}),
            method=data.get("method", "dgs"),
            seed=int(data.get("seed", 0)),
            output_dir=data.get("output_dir"),
        ).validate()


TRACE_SCHEMA_VERSION = "distpgo-trace-v1"


def trace_to_csv(rotation_trace, pose_trace) -> str:
    """Per-iteration CSV of both phases (fixed, versioned schema)."""
    lines = [f"# {TRACE_SCHEMA_VERSION}", "phase,iteration,error,change"]
    for phase, trace in (("rotation", rotation_trace), ("pose", pose_trace)):
        for k in range(trace.iterations):
            err = trace.errors[k] if k < len(trace.errors) else float("nan")
            lines.append(f"{phase},{k + 1},{err:.12g},{trace.changes[k]:.12g}")
    return "\n".join(lines) + "\n"


def ledger_to_json(ledger, k_rotation: int, k_pose: int) -> str:
    robots = sorted({robot for robot, _ in ledger.bytes_sent} | set(ledger.rendezvous_count))
    payload = {
        "k_rotation": k_rotation,
        "k_pose": k_pose,
        "per_robot": {
            str(robot): {
                "rotation_bytes": ledger.total_bytes(robot, "rotation"),
                "pose_bytes": ledger.total_bytes(robot, "pose"),
                "rotation_messages": ledger.total_messages(robot, "rotation"),
                "pose_messages": ledger.total_messages(robot, "pose"),
                "rendezvous": ledger.rendezvous_count.get(robot, 0),
                "rendezvous_bytes": ledger.rendezvous_bytes.get(robot, 0),
            }
            for robot in robots
        },
        "total_bytes": ledger.grand_total_bytes(),
    }
    return json.dumps(payload, indent=2, sort_keys=True)
