import numpy as np
import pytest

from distpgo.assembly import BlockLinearSystem, build_rotation_system
from distpgo.runtime import ScenarioSpec, generate_scenario
from distpgo.solvers import (
    SolverConfig,
    flagged_initialize,
    jor_convergence_matrix,
    jor_solve,
    solve_system,
    sor_solve,
    stopping_check,
)


def random_block_system(rng, n_blocks, coupling=0.2, kind="generic"):
    """Random anchored block-SPD system; coupling scales the off-diagonal
    blocks so the block-Jacobi iteration stays contractive."""
    dims = [int(rng.integers(3, 9)) for _ in range(n_blocks)]
    diag, off, g = {}, {}, {}
    for r, d in enumerate(dims):
        A = rng.normal(size=(d, d))
        diag[r] = A @ A.T + d * np.eye(d)
        g[r] = rng.normal(size=d)
    for a in range(n_blocks):
        for b in range(a + 1, n_blocks):
            if rng.uniform() < 0.6:
                off[(a, b)] = coupling * rng.normal(size=(dims[a], dims[b]))
    system = BlockLinearSystem.from_blocks(diag, off, g, kind=kind)
    H = system.dense_h()
    floor = np.linalg.eigvalsh(H).min()
    if floor <= 0.1:
        for r, d in enumerate(dims):
            diag[r] = diag[r] + (0.2 - floor) * np.eye(d)
        system = BlockLinearSystem.from_blocks(diag, off, g, kind=kind)
    return system


@pytest.fixture(scope="module")
def grid9_rotation():
    spec = ScenarioSpec(kind="grid3d", robot_count=9, sigma_r_deg=5.0, sigma_t=0.2, rng_seed=2)
    graph, _ = generate_scenario(spec)
    return build_rotation_system(graph)


class TestJor:
    def test_single_robot_first_round_is_direct_solve(self, rng):
        system = random_block_system(rng, 1)
        config = SolverConfig(gamma=1.0, eta_r=1e-6, method="jor", flagged_init=False)
        y, trace = jor_solve(system, config)
        np.testing.assert_allclose(y, system.direct_solve(), atol=1e-10)
        # fixed point reached at round 1: the follow-up round changes nothing
        assert trace.changes[-1] == 0.0

    def test_three_block_fixed_point_matches_dense(self, rng):
        system = random_block_system(rng, 3)
        config = SolverConfig(gamma=1.0, eta_r=1e-10, method="jor", flagged_init=False,
                              max_iterations=5000)
        y, trace = jor_solve(system, config)
        assert trace.converged
        np.testing.assert_allclose(y, system.direct_solve(), atol=1e-6)

    def test_gamma_above_one_diverges_on_grid(self, grid9_rotation):
        config = SolverConfig(gamma=1.2, eta_r=1e-2, method="jor")
        _, trace = jor_solve(grid9_rotation, config, flagged_initialize(grid9_rotation))
        assert trace.diverged and not trace.converged

    def test_divergence_guard_flags_partial_trace(self, grid9_rotation):
        config = SolverConfig(gamma=1.5, eta_r=1e-2, method="jor")
        y, trace = jor_solve(grid9_rotation, config)
        assert trace.diverged
        assert len(trace.changes) == trace.iterations


class TestSor:
    def test_dgs_matches_dense(self, grid9_rotation):
        config = SolverConfig(gamma=1.0, eta_r=1e-8, method="sor")
        y, trace = solve_system(grid9_rotation, config)
        assert trace.converged
        np.testing.assert_allclose(y, grid9_rotation.direct_solve(), atol=1e-6)

    @pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0, 1.5, 1.9])
    def test_convergence_region(self, gamma, rng):
        system = random_block_system(rng, 5, coupling=0.5)
        config = SolverConfig(gamma=gamma, eta_r=1e-9, method="sor", max_iterations=50000)
        y, trace = sor_solve(system, config)
        assert trace.converged
        np.testing.assert_allclose(y, system.direct_solve(), atol=1e-6)

    def test_gamma_outside_region_diverges(self, grid9_rotation):
        config = SolverConfig(gamma=2.1, eta_r=1e-2, method="sor")
        _, trace = sor_solve(grid9_rotation, config)
        assert trace.diverged

    def test_custom_order_changes_path_not_fixed_point(self, grid9_rotation):
        ref = grid9_rotation.direct_solve()
        for order in (None, tuple(reversed(grid9_rotation.robots))):
            config = SolverConfig(gamma=1.0, eta_r=1e-8, method="sor", sor_order=order)
            y, trace = solve_system(grid9_rotation, config)
            np.testing.assert_allclose(y, ref, atol=1e-6)

    def test_bad_order_rejected(self, grid9_rotation):
        config = SolverConfig(gamma=1.0, sor_order=(0, 1))
        with pytest.raises(ValueError):
            sor_solve(grid9_rotation, config)

    def test_jor_and_sor_share_fixed_point(self, rng):
        system = random_block_system(rng, 4)
        config = SolverConfig(gamma=1.0, eta_r=1e-8, max_iterations=50000)
        y_jor, t_jor = jor_solve(system, config)
        y_sor, t_sor = sor_solve(system, config)
        assert t_jor.converged and t_sor.converged
        np.testing.assert_allclose(y_jor, y_sor, atol=1e-6)


class TestFlaggedInitialize:
    def test_single_robot_is_direct_block_solve(self, rng):
        system = random_block_system(rng, 1)
        np.testing.assert_allclose(flagged_initialize(system), system.direct_solve(),
                                   atol=1e-10)

    def test_two_robot_semantics(self, rng):
        system = random_block_system(rng, 2, coupling=0.5)
        if (0, 1) not in system.off_diag:
            system.off_diag[(0, 1)] = 0.3 * rng.normal(size=(system.diag[0].shape[0],
                                                             system.diag[1].shape[0]))
            system.off_diag[(1, 0)] = system.off_diag[(0, 1)].T
        y = flagged_initialize(system)
        s0, s1 = system.robot_slices[0], system.robot_slices[1]
        first = np.linalg.solve(system.diag[0], system.g[s0])
        np.testing.assert_allclose(y[s0], first, atol=1e-10)
        second = np.linalg.solve(system.diag[1],
                                 system.g[s1] - system.off_diag[(1, 0)] @ first)
        np.testing.assert_allclose(y[s1], second, atol=1e-10)

    def test_all_robots_initialized(self, grid9_rotation):
        y = flagged_initialize(grid9_rotation)
        assert np.all(np.isfinite(y))
        for robot in grid9_rotation.robots:
            assert np.any(y[grid9_rotation.robot_slices[robot]] != 0.0)

    def test_flagged_strictly_fewer_iterations_than_zero(self, grid9_rotation):
        config = SolverConfig(gamma=1.0, eta_r=1e-1, method="sor")
        _, from_zero = sor_solve(grid9_rotation, config)
        _, from_flagged = sor_solve(grid9_rotation, config,
                                    flagged_initialize(grid9_rotation))
        assert from_flagged.iterations < from_zero.iterations


class TestStoppingCheck:
    def test_zero_change_stops(self):
        assert stopping_check([0.0], 1e-9)

    def test_half_change_does_not_stop_at_tenth(self):
        assert not stopping_check([0.5], 1e-1)

    def test_requires_history(self):
        with pytest.raises(ValueError):
            stopping_check([], 1e-1)

    def test_stricter_threshold_needs_more_iterations(self, grid9_rotation):
        counts = {}
        for eta in (1e-1, 1e-2):
            config = SolverConfig(gamma=1.0, eta_r=eta, method="sor")
            _, trace = solve_system(grid9_rotation, config)
            counts[eta] = trace.iterations
        assert counts[1e-2] > counts[1e-1]


class TestConvergenceMatrix:
    def test_diagonal_system_closed_form(self, rng):
        system = random_block_system(rng, 3, coupling=0.0)
        system.off_diag.clear()
        for gamma in (0.5, 1.0, 1.5):
            M, rho = jor_convergence_matrix(system, gamma)
            np.testing.assert_allclose(M, (1.0 - gamma) * np.eye(system.dim), atol=1e-12)
            assert rho == pytest.approx(abs(1.0 - gamma), abs=1e-7)

    def test_grid_rotation_dj_contractive(self, grid9_rotation):
        M, rho = jor_convergence_matrix(grid9_rotation, 1.0)
        assert rho < 1.0
        dense = np.max(np.abs(np.linalg.eigvals(M)))
        assert rho == pytest.approx(dense, rel=1e-4)

    def test_prediction_matches_empirical_divergence(self, grid9_rotation):
        _, rho = jor_convergence_matrix(grid9_rotation, 1.5)
        assert rho > 1.0
        config = SolverConfig(gamma=1.5, eta_r=1e-2, method="jor")
        _, trace = jor_solve(grid9_rotation, config)
        assert trace.diverged


class TestDeterminism:
    def test_bit_identical_traces(self, rng):
        system = random_block_system(rng, 4)
        config = SolverConfig(gamma=1.0, eta_r=1e-8)
        y1, t1 = sor_solve(system, config)
        y2, t2 = sor_solve(system, config)
        assert np.array_equal(y1, y2)
        assert t1.changes == t2.changes
        assert t1.errors == t2.errors

    def test_linear_residual_scales_with_eta(self, grid9_rotation):
        residuals = {}
        for eta in (1e-4, 1e-8):
            config = SolverConfig(gamma=1.0, eta_r=eta, method="sor")
            _, trace = solve_system(grid9_rotation, config)
            assert trace.converged
            assert np.isfinite(trace.residual_over_eta)
            assert trace.linear_residual == pytest.approx(trace.residual_over_eta * eta)
            residuals[eta] = trace.linear_residual
        # the reported constant c stays comparable, so the residual tracks eta
        assert residuals[1e-8] <= 1e-2 * residuals[1e-4]
