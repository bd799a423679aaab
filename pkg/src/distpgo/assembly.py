"""Assembly of the two stage-wise normal-equation systems with explicit
per-robot block structure.

Stage 1 relaxes the rotation subproblem over unconstrained 9-vectors
r = vec of the rotation rows; each edge contributes
omega_r^2 ||r_to - (I3 kron R_meas^T) r_from||^2.
Stage 2 linearizes the full chordal objective around rotation estimates
R_hat, with unknowns (t, theta) per vertex and the parametrization
R = R_hat Exp(theta).

The gauge is removed by eliminating the anchor variables: their known
values (identity rotation, zero translation/correction) move into the
right-hand side, which keeps every assembled matrix positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .geometry import SO3_GENERATORS, Pose, exp_map, skew
from .graph import MultiRobotGraph, VertexId

ROTATION_DIM = 9
POSE_DIM = 6

# Row-stacked identity rotation, the anchored value of stage 1.
IDENTITY_ROTATION_VECTOR = np.eye(3).flatten()


@dataclass
class BlockLinearSystem:
    """Normal equations H y = g partitioned into per-robot blocks.

    Diagonal blocks are dense; off-diagonal blocks exist only for robot
    pairs joined by a separator edge (the Laplacian block sparsity of the
    underlying graph). `vertex_slots` maps each unanchored vertex to its
    slice of the stacked vector.
    """

    kind: str
    var_dim: int
    robot_slices: dict[int, slice]
    vertex_slots: dict[VertexId, slice]
    diag: dict[int, np.ndarray]
    off_diag: dict[tuple[int, int], np.ndarray]
    g: np.ndarray
    anchor: VertexId | None = None
    _solution: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.g.size

    @property
    def robots(self) -> list[int]:
        return sorted(self.robot_slices)

    def neighbors(self, robot: int) -> list[int]:
        return sorted(b for (a, b) in self.off_diag if a == robot)

    def robot_vertices(self, robot: int) -> list[VertexId]:
        sl = self.robot_slices[robot]
        inside = [v for v, s in self.vertex_slots.items() if s.start >= sl.start and s.stop <= sl.stop]
        return sorted(inside, key=lambda v: self.vertex_slots[v].start)

    def sparse_h(self) -> scipy.sparse.csr_matrix:
        robots = self.robots
        index = {r: i for i, r in enumerate(robots)}
        grid = [[None] * len(robots) for _ in robots]
        for r in robots:
            grid[index[r]][index[r]] = scipy.sparse.csr_matrix(self.diag[r])
        for (a, b), block in self.off_diag.items():
            grid[index[a]][index[b]] = scipy.sparse.csr_matrix(block)
        return scipy.sparse.bmat(grid, format="csr")

    def dense_h(self) -> np.ndarray:
        return self.sparse_h().toarray()

    def direct_solve(self) -> np.ndarray:
        """Reference solution of H y = g (cached; deterministic)."""
        if self._solution is None:
            H = self.sparse_h()
            try:
                y = scipy.sparse.linalg.spsolve(H.tocsc(), self.g)
            except RuntimeError as exc:  # singular factorization
                raise ValueError(f"{self.kind} system is singular: {exc}") from exc
            if not np.all(np.isfinite(y)):
                raise ValueError(f"{self.kind} system is singular (disconnected graph?)")
            self._solution = np.asarray(y, dtype=float)
        return self._solution.copy()

    def quadratic(self, y: np.ndarray) -> float:
        """Shifted least-squares objective y^T H y - 2 g^T y.

        Differs from ||A y - b||^2 only by the constant b^T b, so
        differences between two evaluations are exact residual gaps.
        """
        y = np.asarray(y, dtype=float)
        return float(y @ (self.sparse_h() @ y) - 2.0 * (self.g @ y))

    def linear_residual(self, y: np.ndarray) -> float:
        return float(np.linalg.norm(self.sparse_h() @ np.asarray(y, dtype=float) - self.g))

    @staticmethod
    def from_blocks(
        diag: dict[int, np.ndarray],
        off_diag: dict[tuple[int, int], np.ndarray],
        g_blocks: dict[int, np.ndarray],
        kind: str = "generic",
        var_dim: int = 1,
    ) -> "BlockLinearSystem":
        """Build a system directly from per-robot blocks (used for synthetic
        systems in diagnostics and tests); symmetrizes missing transposes."""
        robots = sorted(diag)
        slices, offset = {}, 0
        for r in robots:
            d = diag[r].shape[0]
            slices[r] = slice(offset, offset + d)
            offset += d
        full_off = dict(off_diag)
        for (a, b), block in list(off_diag.items()):
            full_off.setdefault((b, a), block.T)
        g = np.concatenate([np.asarray(g_blocks[r], dtype=float).ravel() for r in robots])
        return BlockLinearSystem(kind=kind, var_dim=var_dim, robot_slices=slices,
                                 vertex_slots={}, diag={r: np.asarray(diag[r], dtype=float) for r in robots},
                                 off_diag=full_off, g=g)


class _Accumulator:
    """Scatters weighted edge contributions into per-robot blocks."""

    def __init__(self, graph: MultiRobotGraph, var_dim: int, kind: str):
        graph.validate()
        self.var_dim = var_dim
        self.kind = kind
        self.anchor = graph.anchor
        self.robot_slices: dict[int, slice] = {}
        self.vertex_slots: dict[VertexId, slice] = {}
        offset = 0
        for robot in graph.robots:
            start = offset
            for vid in graph.vertices_of(robot):
                if vid == self.anchor:
                    continue
                self.vertex_slots[vid] = slice(offset, offset + var_dim)
                offset += var_dim
            self.robot_slices[robot] = slice(start, offset)
        self.dim = offset
        self.diag = {r: np.zeros((s.stop - s.start, s.stop - s.start))
                     for r, s in self.robot_slices.items()}
        self.off_diag: dict[tuple[int, int], np.ndarray] = {}
        self.g = np.zeros(offset)

    def local(self, vid: VertexId) -> slice:
        s = self.vertex_slots[vid]
        base = self.robot_slices[vid.robot].start
        return slice(s.start - base, s.stop - base)

    def add_edge_rows(self, w: float, cols: dict[VertexId, np.ndarray], c: np.ndarray):
        """Add weight * ||sum_v J_v y_v - c||^2 for one edge's row block."""
        items = list(cols.items())
        for vid_a, J_a in items:
            sl_a = self.local(vid_a)
            self.g[self.vertex_slots[vid_a]] += w * (J_a.T @ c)
            for vid_b, J_b in items:
                block = w * (J_a.T @ J_b)
                ra, rb = vid_a.robot, vid_b.robot
                if ra == rb:
                    self.diag[ra][sl_a, self.local(vid_b)] += block
                else:
                    key = (ra, rb)
                    if key not in self.off_diag:
                        da = self.robot_slices[ra]
                        db = self.robot_slices[rb]
                        self.off_diag[key] = np.zeros((da.stop - da.start, db.stop - db.start))
                    self.off_diag[key][sl_a, self.local(vid_b)] += block

    def finish(self) -> BlockLinearSystem:
        return BlockLinearSystem(kind=self.kind, var_dim=self.var_dim,
                                 robot_slices=self.robot_slices, vertex_slots=self.vertex_slots,
                                 diag=self.diag, off_diag=self.off_diag, g=self.g,
                                 anchor=self.anchor)


def rotation_coupling(R_meas: np.ndarray) -> np.ndarray:
    """9x9 map Q with vec(R_a @ R_meas) == Q @ vec(R_a) (row-stacked vec)."""
    return np.kron(np.eye(3), np.asarray(R_meas, dtype=float).T)


def build_rotation_system(graph: MultiRobotGraph) -> BlockLinearSystem:
    """Normal equations of the unconstrained rotation relaxation.

    Every edge contributes omega_r^2 ||r_to - Q r_from||^2 over the
    row-stacked rotation 9-vectors; the anchored rotation is eliminated
    and its identity value moves into the right-hand side.
    """
    acc = _Accumulator(graph, ROTATION_DIM, "rotation")
    e_anchor = IDENTITY_ROTATION_VECTOR
    for edge in graph.edges:
        w = edge.omega_r_sq
        Q = rotation_coupling(edge.rotation)
        a, b = edge.from_vertex, edge.to_vertex
        cols: dict[VertexId, np.ndarray] = {}
        c = np.zeros(ROTATION_DIM)
        if a == acc.anchor and b == acc.anchor:
            continue
        if a == acc.anchor:
            c += Q @ e_anchor
        else:
            cols[a] = -Q
        if b == acc.anchor:
            c -= e_anchor
        else:
            cols[b] = np.eye(ROTATION_DIM)
        acc.add_edge_rows(w, cols, c)
    return acc.finish()


def rotations_from_vector(
    system: BlockLinearSystem, r: np.ndarray
) -> dict[VertexId, np.ndarray]:
    """Unstack a rotation-system vector into per-vertex 3x3 matrices
    (unprojected); the anchor maps to the identity."""
    out: dict[VertexId, np.ndarray] = {}
    if system.anchor is not None:
        out[system.anchor] = np.eye(3)
    for vid, sl in system.vertex_slots.items():
        out[vid] = np.asarray(r[sl], dtype=float).reshape(3, 3)
    return out


def build_pose_system(
    graph: MultiRobotGraph, rotation_estimate: dict[VertexId, np.ndarray]
) -> BlockLinearSystem:
    """Quadratic approximation of the full objective around R_hat.

    Unknowns per vertex are (t, theta). Translation rows carry weight
    omega_t, rotation rows omega_r/sqrt(2) so their squared norms
    reproduce the omega_t^2 and omega_r^2/2 terms of the objective.
    """
    acc = _Accumulator(graph, POSE_DIM, "pose")
    for vid in graph.vertices:
        if vid not in rotation_estimate:
            raise KeyError(f"rotation estimate missing vertex {vid}")
    for edge in graph.edges:
        a, b = edge.from_vertex, edge.to_vertex
        if a == acc.anchor and b == acc.anchor:
            continue
        Ra = rotation_estimate[a]
        Rb = rotation_estimate[b]
        t_meas = edge.translation
        R_meas = edge.rotation

        # Translation rows: t_b - t_a + Ra S(t_meas) theta_a - Ra t_meas.
        cols_t: dict[VertexId, np.ndarray] = {}
        if a != acc.anchor:
            Ja = np.zeros((3, POSE_DIM))
            Ja[:, 0:3] = -np.eye(3)
            Ja[:, 3:6] = Ra @ skew(t_meas)
            cols_t[a] = Ja
        if b != acc.anchor:
            Jb = np.zeros((3, POSE_DIM))
            Jb[:, 0:3] = np.eye(3)
            cols_t[b] = Jb
        acc.add_edge_rows(edge.omega_t_sq, cols_t, Ra @ t_meas)

        # Rotation rows, row-stacked 3x3 residual:
        # (Rb - Ra R_meas) + Rb S(theta_b) - Ra S(theta_a) R_meas.
        cols_r: dict[VertexId, np.ndarray] = {}
        if a != acc.anchor:
            Ja = np.zeros((ROTATION_DIM, POSE_DIM))
            for i, G in enumerate(SO3_GENERATORS):
                Ja[:, 3 + i] = -(Ra @ G @ R_meas).flatten()
            cols_r[a] = Ja
        if b != acc.anchor:
            Jb = np.zeros((ROTATION_DIM, POSE_DIM))
            for i, G in enumerate(SO3_GENERATORS):
                Jb[:, 3 + i] = (Rb @ G).flatten()
            cols_r[b] = Jb
        c_rot = (Ra @ R_meas - Rb).flatten()
        acc.add_edge_rows(0.5 * edge.omega_r_sq, cols_r, c_rot)
    return acc.finish()


def apply_correction(
    rotation_estimate: dict[VertexId, np.ndarray],
    system: BlockLinearSystem,
    p: np.ndarray,
) -> dict[VertexId, Pose]:
    """Assemble poses (R_hat Exp(theta), t) from a pose-system solution;
    the anchor keeps its rotation estimate with zero translation."""
    p = np.asarray(p, dtype=float)
    if p.size != system.dim:
        raise ValueError(f"correction has dimension {p.size}, expected {system.dim}")
    estimate: dict[VertexId, Pose] = {}
    for vid, sl in system.vertex_slots.items():
        t = p[sl][0:3]
        theta = p[sl][3:6]
        estimate[vid] = Pose(rotation_estimate[vid] @ exp_map(theta), t)
    if system.anchor is not None:
        estimate[system.anchor] = Pose(rotation_estimate[system.anchor], np.zeros(3))
    return estimate


def stack_estimate(system: BlockLinearSystem, estimate: dict[VertexId, Pose]) -> np.ndarray:
    """Inverse of apply_correction's layout for (t, theta=0) stacking."""
    y = np.zeros(system.dim)
    for vid, sl in system.vertex_slots.items():
        y[sl.start:sl.start + 3] = estimate[vid].translation
    return y
