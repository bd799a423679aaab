import numpy as np
import pytest

from distpgo.assembly import (
    IDENTITY_ROTATION_VECTOR,
    POSE_DIM,
    ROTATION_DIM,
    apply_correction,
    build_pose_system,
    build_rotation_system,
    rotation_coupling,
    rotations_from_vector,
    stack_estimate,
)
from distpgo.geometry import Pose, chordal_residual, exp_map, first_order_exp, project_to_so3, skew
from distpgo.graph import (
    EdgeKind,
    MultiRobotGraph,
    RelativeMeasurement,
    VertexId,
    graph_cost,
)
from distpgo.runtime import ScenarioSpec, generate_scenario

from conftest import random_rotation


def build_random_graph(rng, n_robots=2, poses_each=3, extra_edges=2, sigma=0.1):
    """Small connected multi-robot graph with random measurements."""
    g = MultiRobotGraph()
    truth = {}
    for robot in range(n_robots):
        for k in range(poses_each):
            vid = VertexId(robot, k)
            truth[vid] = Pose(random_rotation(rng), rng.normal(size=3))
            g.add_vertex(vid)

    def add(a, b, kind):
        noise = (rng.normal(0, sigma, 3), rng.normal(0, sigma, 3)) if sigma else (None, None)
        Ra = truth[a].rotation
        R = Ra.T @ truth[b].rotation @ exp_map(noise[0]) if noise[0] is not None else Ra.T @ truth[b].rotation
        t = Ra.T @ (truth[b].translation - truth[a].translation)
        if noise[1] is not None:
            t = t + noise[1]
        wt, wr = rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)
        g.add_edge(RelativeMeasurement(a, b, R, t, wt, wr, kind))

    for robot in range(n_robots):
        for k in range(poses_each - 1):
            add(VertexId(robot, k), VertexId(robot, k + 1), EdgeKind.ODOMETRY)
    for robot in range(1, n_robots):
        add(VertexId(0, 0), VertexId(robot, 0), EdgeKind.INTER_ROBOT)
    for _ in range(extra_edges):
        a, b = rng.choice(n_robots, 2)
        i, j = rng.choice(poses_each, 2, replace=False)
        va, vb = VertexId(int(a), int(i)), VertexId(int(b), int(j))
        if va == vb or va == g.anchor and vb == g.anchor:
            continue
        kind = EdgeKind.INTER_ROBOT if a != b else EdgeKind.LOOP_CLOSURE
        add(va, vb, kind)
    return g, truth


def explicit_rotation_stacking(graph):
    """Independent construction of the rotation normal equations: the
    residual of each edge is evaluated entrywise on the 3x3 matrices and
    differentiated by unit-vector probing (exact, the residual is linear)."""
    order = [v for v in graph.vertex_ids() if v != graph.anchor]
    index = {v: i for i, v in enumerate(order)}
    dim = ROTATION_DIM * len(order)
    rows_A, rows_b, weights = [], [], []

    def residual(edge, r):
        def matrix_of(v):
            if v == graph.anchor:
                return np.eye(3)
            sl = slice(ROTATION_DIM * index[v], ROTATION_DIM * (index[v] + 1))
            return r[sl].reshape(3, 3)
        return (matrix_of(edge.to_vertex) - matrix_of(edge.from_vertex) @ edge.rotation).flatten()

    for edge in graph.edges:
        r0 = residual(edge, np.zeros(dim))
        A = np.zeros((ROTATION_DIM, dim))
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = 1.0
            A[:, j] = residual(edge, e) - r0
        rows_A.append(A)
        rows_b.append(-r0)
        weights.append(edge.omega_r_sq)

    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    for A, b, w in zip(rows_A, rows_b, weights):
        H += w * (A.T @ A)
        g += w * (A.T @ b)
    return H, g, order


def explicit_pose_stacking(graph, rotations):
    """Same probing oracle for the pose linearization residuals."""
    order = [v for v in graph.vertex_ids() if v != graph.anchor]
    index = {v: i for i, v in enumerate(order)}
    dim = POSE_DIM * len(order)

    def unpack(x, v):
        if v == graph.anchor:
            return np.zeros(3), np.zeros(3)
        sl = slice(POSE_DIM * index[v], POSE_DIM * (index[v] + 1))
        return x[sl][:3], x[sl][3:]

    def residuals(edge, x):
        ta, tha = unpack(x, edge.from_vertex)
        tb, thb = unpack(x, edge.to_vertex)
        Ra, Rb = rotations[edge.from_vertex], rotations[edge.to_vertex]
        res_t = tb - ta - Ra @ edge.translation - Ra @ skew(tha) @ edge.translation
        res_R = (Rb - Ra @ edge.rotation + Rb @ skew(thb) - Ra @ skew(tha) @ edge.rotation)
        return res_t, res_R.flatten()

    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    for edge in graph.edges:
        for which, weight in ((0, edge.omega_t_sq), (1, 0.5 * edge.omega_r_sq)):
            r0 = residuals(edge, np.zeros(dim))[which]
            A = np.zeros((r0.size, dim))
            for j in range(dim):
                e = np.zeros(dim)
                e[j] = 1.0
                A[:, j] = residuals(edge, e)[which] - r0
            H += weight * (A.T @ A)
            g += weight * (A.T @ -r0)
    return H, g, order


def reorder_to_system(system, H, g, order):
    """Map the oracle's vertex-major layout onto the system's layout."""
    perm = np.zeros(system.dim, dtype=int)
    width = system.var_dim
    for i, v in enumerate(order):
        sl = system.vertex_slots[v]
        perm[sl] = np.arange(width * i, width * (i + 1))
    return H[np.ix_(perm, perm)], g[perm]


class TestRotationSystem:
    def test_coupling_identity(self, rng):
        R_a, R_meas = random_rotation(rng), random_rotation(rng)
        np.testing.assert_allclose(
            (R_a @ R_meas).flatten(), rotation_coupling(R_meas) @ R_a.flatten(), atol=1e-12)

    def test_two_pose_consensus(self):
        g = MultiRobotGraph()
        a, b = VertexId(0, 0), VertexId(0, 1)
        g.add_vertex(a)
        g.add_vertex(b)
        g.add_edge(RelativeMeasurement(a, b, np.eye(3), np.zeros(3), 1.0, 1.0,
                                       EdgeKind.ODOMETRY))
        system = build_rotation_system(g)
        r = system.direct_solve()
        np.testing.assert_allclose(r, IDENTITY_ROTATION_VECTOR, atol=1e-12)

    def test_three_pose_chain_exact_recovery(self, rng):
        g, truth = build_random_graph(rng, n_robots=1, poses_each=3, extra_edges=0, sigma=0.0)
        system = build_rotation_system(g)
        raw = rotations_from_vector(system, system.direct_solve())
        gauge = truth[g.anchor].rotation
        for vid, R_true in ((v, p.rotation) for v, p in truth.items()):
            R_est = project_to_so3(raw[vid])
            np.testing.assert_allclose(R_est, gauge.T @ R_true, atol=1e-8)

    def test_matches_explicit_stacking_oracle(self, rng):
        g, _ = build_random_graph(rng, n_robots=2, poses_each=3, extra_edges=3)
        system = build_rotation_system(g)
        H_o, g_o, order = explicit_rotation_stacking(g)
        H_o, g_o = reorder_to_system(system, H_o, g_o, order)
        np.testing.assert_allclose(system.dense_h(), H_o, atol=1e-10)
        np.testing.assert_allclose(system.g, g_o, atol=1e-10)

    def test_disconnected_graph_rejected(self):
        g = MultiRobotGraph()
        for k in range(4):
            g.add_vertex(VertexId(0, k))
        g.add_edge(RelativeMeasurement(VertexId(0, 0), VertexId(0, 1), np.eye(3),
                                       np.zeros(3), 1.0, 1.0, EdgeKind.ODOMETRY))
        g.add_edge(RelativeMeasurement(VertexId(0, 2), VertexId(0, 3), np.eye(3),
                                       np.zeros(3), 1.0, 1.0, EdgeKind.ODOMETRY))
        with pytest.raises(ValueError):
            build_rotation_system(g)


class TestPoseSystem:
    def test_matches_explicit_stacking_oracle(self, rng):
        g, truth = build_random_graph(rng, n_robots=2, poses_each=3, extra_edges=3)
        rotations = {vid: random_rotation(rng) for vid in g.vertices}
        system = build_pose_system(g, rotations)
        H_o, g_o, order = explicit_pose_stacking(g, rotations)
        H_o, g_o = reorder_to_system(system, H_o, g_o, order)
        np.testing.assert_allclose(system.dense_h(), H_o, atol=1e-10)
        np.testing.assert_allclose(system.g, g_o, atol=1e-10)

    def test_noiseless_solution_recovers_truth(self, rng):
        g, truth = build_random_graph(rng, n_robots=2, poses_each=4, extra_edges=2, sigma=0.0)
        gauge = truth[g.anchor].inverse()
        anchored_truth = {v: gauge.compose(p) for v, p in truth.items()}
        rotations = {v: p.rotation for v, p in anchored_truth.items()}
        system = build_pose_system(g, rotations)
        p = system.direct_solve()
        estimate = apply_correction(rotations, system, p)
        for vid, pose in anchored_truth.items():
            np.testing.assert_allclose(estimate[vid].translation, pose.translation, atol=1e-8)
            np.testing.assert_allclose(estimate[vid].rotation, pose.rotation, atol=1e-8)

    def test_single_edge_closed_form_translation(self, rng):
        g = MultiRobotGraph()
        a, b = VertexId(0, 0), VertexId(0, 1)
        g.add_vertex(a)
        g.add_vertex(b)
        R_meas, t_meas = random_rotation(rng), rng.normal(size=3)
        g.add_edge(RelativeMeasurement(a, b, R_meas, t_meas, 1.0, 1.0, EdgeKind.ODOMETRY))
        rotations = {a: np.eye(3), b: R_meas}
        system = build_pose_system(g, rotations)
        p = system.direct_solve()
        estimate = apply_correction(rotations, system, p)
        np.testing.assert_allclose(estimate[b].translation, rotations[a] @ t_meas, atol=1e-10)

    def test_missing_rotation_estimate(self, rng):
        g, _ = build_random_graph(rng)
        with pytest.raises(KeyError):
            build_pose_system(g, {})


class TestApplyCorrection:
    def test_zero_correction(self, rng):
        g, _ = build_random_graph(rng)
        rotations = {v: random_rotation(rng) for v in g.vertices}
        system = build_pose_system(g, rotations)
        estimate = apply_correction(rotations, system, np.zeros(system.dim))
        for vid in g.vertices:
            np.testing.assert_allclose(estimate[vid].rotation, rotations[vid])
            np.testing.assert_allclose(estimate[vid].translation, np.zeros(3))

    def test_anchor_untouched(self, rng):
        g, _ = build_random_graph(rng)
        rotations = {v: random_rotation(rng) for v in g.vertices}
        system = build_pose_system(g, rotations)
        estimate = apply_correction(rotations, system, rng.normal(size=system.dim))
        np.testing.assert_allclose(estimate[g.anchor].rotation, rotations[g.anchor])
        np.testing.assert_allclose(estimate[g.anchor].translation, np.zeros(3))

    def test_small_theta_matches_first_order(self, rng):
        g, _ = build_random_graph(rng, n_robots=1, poses_each=2, extra_edges=0)
        rotations = {v: random_rotation(rng) for v in g.vertices}
        system = build_pose_system(g, rotations)
        p = np.zeros(system.dim)
        vid = next(iter(system.vertex_slots))
        theta = np.array([1e-3, -2e-3, 0.5e-3])
        p[system.vertex_slots[vid]][3:6] = theta  # no-op on a copy
        p[system.vertex_slots[vid].start + 3:system.vertex_slots[vid].start + 6] = theta
        estimate = apply_correction(rotations, system, p)
        approx = rotations[vid] @ first_order_exp(theta)
        gap = np.linalg.norm(estimate[vid].rotation - approx) ** 2
        assert gap <= 10.0 * np.linalg.norm(theta) ** 4

    def test_dimension_mismatch(self, rng):
        g, _ = build_random_graph(rng)
        rotations = {v: random_rotation(rng) for v in g.vertices}
        system = build_pose_system(g, rotations)
        with pytest.raises(ValueError):
            apply_correction(rotations, system, np.zeros(system.dim + 1))


@pytest.fixture(scope="module")
def systems():
    spec = ScenarioSpec(kind="grid3d", robot_count=9, sigma_r_deg=5.0, sigma_t=0.2,
                        rng_seed=11)
    graph, _ = generate_scenario(spec)
    rot = build_rotation_system(graph)
    rotations = {v: project_to_so3(M)
                 for v, M in rotations_from_vector(rot, rot.direct_solve()).items()}
    pose = build_pose_system(graph, rotations)
    return graph, rot, pose


class TestSystemInvariants:

    def test_symmetry_and_positive_definite(self, systems):
        _, rot, pose = systems
        for system in (rot, pose):
            H = system.dense_h()
            assert np.linalg.norm(H - H.T) <= 1e-9
            assert np.linalg.eigvalsh(H).min() > 0.0
            for r in system.robots:
                assert np.linalg.eigvalsh(system.diag[r]).min() > 0.0

    def test_off_diagonal_support_is_separator_adjacency(self, systems):
        graph, rot, pose = systems
        adjacency = set()
        for e in graph.edges:
            ra, rb = e.from_vertex.robot, e.to_vertex.robot
            if ra != rb:
                adjacency.add((ra, rb))
                adjacency.add((rb, ra))
        for system in (rot, pose):
            support = {k for k, block in system.off_diag.items() if np.any(block != 0.0)}
            assert support <= adjacency
            # every adjacent pair with unanchored endpoints couples
            assert support == {k for k in adjacency if k in system.off_diag}

    def test_quadratic_matches_norm_identity(self, systems, rng):
        _, rot, _ = systems
        y_star = rot.direct_solve()
        y = y_star + rng.normal(size=rot.dim)
        gap = rot.quadratic(y) - rot.quadratic(y_star)
        H = rot.dense_h()
        d = y - y_star
        np.testing.assert_allclose(gap, d @ (H @ d), rtol=1e-8, atol=1e-8)

    def test_stack_estimate_inverts_translations(self, systems, rng):
        _, _, pose = systems
        p = rng.normal(size=pose.dim)
        rotations = {v: np.eye(3) for v in list(pose.vertex_slots) + [pose.anchor]}
        estimate = apply_correction(rotations, pose, p)
        restacked = stack_estimate(pose, estimate)
        for vid, sl in pose.vertex_slots.items():
            np.testing.assert_allclose(restacked[sl][:3], p[sl][:3])
