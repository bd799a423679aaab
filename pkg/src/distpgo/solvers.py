"""Block-iterative linear solvers over per-robot partitions: Jacobi
over-relaxation (JOR) and successive over-relaxation (SOR), their gamma=1
special cases (distributed Jacobi / distributed Gauss-Seidel), flagged
initialization, stopping rules, and the spectral-radius convergence test
for the JOR iteration matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .assembly import BlockLinearSystem

DIVERGENCE_GUARD = 1e12
DEFAULT_MAX_ITERATIONS = 20000


@dataclass
class SolverConfig:
    """Knobs shared by the matrix-level solvers and the simulated runtime."""

    gamma: float = 1.0
    eta_r: float = 1e-1
    eta_p: float = 1e-1
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    flagged_init: bool = True
    method: str = "sor"  # "sor" or "jor"
    sor_order: tuple[int, ...] | None = None  # default: ascending robot id
    record_errors: bool = True

    def __post_init__(self):
        if not np.isfinite(self.gamma):
            raise ValueError("gamma must be finite")
        if self.eta_r <= 0.0 or self.eta_p <= 0.0:
            raise ValueError("stopping thresholds must be positive")
        if self.method not in ("sor", "jor"):
            raise ValueError(f"unknown method {self.method!r}")

    def eta_for(self, system: BlockLinearSystem) -> float:
        return self.eta_p if system.kind == "pose" else self.eta_r

    def order_for(self, system: BlockLinearSystem) -> list[int]:
        robots = system.robots
        if self.sor_order is None:
            return robots
        if sorted(self.sor_order) != robots:
            raise ValueError("sor_order must be a permutation of the robot ids")
        return list(self.sor_order)


@dataclass
class IterationTrace:
    """Per-round record of a block-iterative solve.

    errors[k] is the residual gap of the objective against the direct
    solution (empty when error recording is off); changes[k] is the global
    estimate-change norm and robot_changes[k] the per-robot norms.
    """

    errors: list[float] = field(default_factory=list)
    changes: list[float] = field(default_factory=list)
    robot_changes: list[np.ndarray] = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    iterations: int = 0
    eta: float = float("nan")
    linear_residual: float = float("nan")

    @property
    def residual_over_eta(self) -> float:
        return self.linear_residual / self.eta


def stopping_check(changes: list[float], eta: float) -> bool:
    """True once the latest global estimate-change norm is within eta."""
    if not changes:
        raise ValueError("stopping_check requires at least one completed iteration")
    return changes[-1] <= eta


def block_cholesky(system: BlockLinearSystem) -> dict[int, tuple]:
    """Factor each diagonal block once; reused across iterations."""
    return {r: cho_factor(system.diag[r]) for r in system.robots}


def _coupling(system: BlockLinearSystem, robot: int, y: np.ndarray) -> np.ndarray:
    """Sum of H_{robot, delta} y_delta over separator neighbors."""
    sl = system.robot_slices[robot]
    total = np.zeros(sl.stop - sl.start)
    for other in system.neighbors(robot):
        total += system.off_diag[(robot, other)] @ y[system.robot_slices[other]]
    return total


def relaxed_block_update(chol, g_block: np.ndarray, coupling: np.ndarray,
                         y_prev: np.ndarray, gamma: float) -> np.ndarray:
    """One robot's update: blend the previous value with its block solve."""
    return (1.0 - gamma) * y_prev + gamma * cho_solve(chol, g_block - coupling)


def flagged_initialize(system: BlockLinearSystem, order: list[int] | None = None) -> np.ndarray:
    """One ordered sweep of pure block solves that ignore separator edges
    to robots not yet processed; afterwards every robot is initialized."""
    order = order if order is not None else system.robots
    chol = block_cholesky(system)
    y = np.zeros(system.dim)
    initialized: set[int] = set()
    for robot in order:
        sl = system.robot_slices[robot]
        coupling = np.zeros(sl.stop - sl.start)
        for other in system.neighbors(robot):
            if other in initialized:
                coupling += system.off_diag[(robot, other)] @ y[system.robot_slices[other]]
        y[sl] = cho_solve(chol[robot], system.g[sl] - coupling)
        initialized.add(robot)
    return y


def _iterate(system: BlockLinearSystem, config: SolverConfig,
             initial: np.ndarray | None, simultaneous: bool) -> tuple[np.ndarray, IterationTrace]:
    robots = system.robots
    order = config.order_for(system)
    chol = block_cholesky(system)
    y = np.zeros(system.dim) if initial is None else np.asarray(initial, dtype=float).copy()
    if y.size != system.dim:
        raise ValueError(f"initial vector has dimension {y.size}, expected {system.dim}")
    eta = config.eta_for(system)
    trace = IterationTrace(eta=eta)
    m_star = system.quadratic(system.direct_solve()) if config.record_errors else None

    for _ in range(config.max_iterations):
        previous = y.copy()
        if simultaneous:
            y_next = y.copy()
            for robot in robots:
                sl = system.robot_slices[robot]
                y_next[sl] = relaxed_block_update(
                    chol[robot], system.g[sl], _coupling(system, robot, previous),
                    previous[sl], config.gamma)
            y = y_next
        else:
            for robot in order:
                sl = system.robot_slices[robot]
                y[sl] = relaxed_block_update(
                    chol[robot], system.g[sl], _coupling(system, robot, y),
                    y[sl], config.gamma)
        per_robot = np.array([np.linalg.norm(y[system.robot_slices[r]] - previous[system.robot_slices[r]])
                              for r in robots])
        change = float(np.linalg.norm(y - previous))
        trace.iterations += 1
        trace.changes.append(change)
        trace.robot_changes.append(per_robot)
        if m_star is not None:
            trace.errors.append(system.quadratic(y) - m_star)
        if not np.isfinite(change) or change > DIVERGENCE_GUARD:
            trace.diverged = True
            break
        if stopping_check(trace.changes, eta):
            trace.converged = True
            break
    trace.linear_residual = system.linear_residual(y) if np.all(np.isfinite(y)) else float("inf")
    return y, trace


def jor_solve(system: BlockLinearSystem, config: SolverConfig,
              initial: np.ndarray | None = None) -> tuple[np.ndarray, IterationTrace]:
    """Jacobi over-relaxation: every robot updates simultaneously from the
    previous round's values. gamma=1 is the distributed Jacobi method."""
    return _iterate(system, config, initial, simultaneous=True)


def sor_solve(system: BlockLinearSystem, config: SolverConfig,
              initial: np.ndarray | None = None) -> tuple[np.ndarray, IterationTrace]:
    """Successive over-relaxation: robots update sequentially per round in
    config order, each using neighbors' freshest values. gamma=1 is the
    distributed Gauss-Seidel method."""
    return _iterate(system, config, initial, simultaneous=False)


def solve_system(system: BlockLinearSystem, config: SolverConfig) -> tuple[np.ndarray, IterationTrace]:
    """Run the configured method from flagged or zero initialization."""
    initial = flagged_initialize(system, config.order_for(system)) if config.flagged_init else None
    solver = jor_solve if config.method == "jor" else sor_solve
    return solver(system, config, initial)


def jor_convergence_matrix(system: BlockLinearSystem, gamma: float,
                           seed: int = 0, tol: float = 1e-8,
                           max_power_iterations: int = 5000) -> tuple[np.ndarray, float]:
    """Iteration matrix M = (1-gamma) I - gamma D^{-1} (H - D) and its
    spectral radius: rho(M) < 1 is necessary and sufficient for JOR to
    converge from any start.

    The radius comes from power iteration with a deterministic seed; on
    stagnation (eigenvalue pairs of equal magnitude) it falls back to a
    dense eigensolve, which is fine at desk scale.
    """
    H = system.dense_h()
    n = H.shape[0]
    D = np.zeros_like(H)
    for r in system.robots:
        sl = system.robot_slices[r]
        D[sl, sl] = system.diag[r]
    M = (1.0 - gamma) * np.eye(n) - gamma * np.linalg.solve(D, H - D)

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(max_power_iterations):
        w = M @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return M, 0.0
        if abs(norm - rho) <= tol * max(1.0, norm):
            return M, norm
        rho = norm
        v = w / norm
    return M, float(np.max(np.abs(np.linalg.eigvals(M))))
