"""Command-line interface: generate | solve | bench | analyze.

Every run writes a manifest (config hash, seed, versions) alongside its
outputs so it can be reproduced exactly. Failures exit nonzero with a
machine-readable JSON error on stderr. The default output directory can
be set through the DISTPGO_OUT_DIR environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from importlib.metadata import PackageNotFoundError, version as _dist_version
from pathlib import Path

import numpy as np
import scipy

from .graph_io import (
    RunConfig,
    ledger_to_json,
    parse_graph,
    trace_to_csv,
    write_graph,
)
from .metrics import build_comparison_table, rows_to_csv
from .runtime import ScenarioSpec, generate_scenario, run_method
from .solvers import SolverConfig, jor_convergence_matrix
from .assembly import build_rotation_system, build_pose_system
from .pipeline import solve_two_stage
from .geometry import project_to_so3
from .assembly import rotations_from_vector

OUTPUT_DIR_ENV = "DISTPGO_OUT_DIR"


def _package_version() -> str:
    try:
        return _dist_version("distpgo")
    except PackageNotFoundError:
        return "unknown"


def _output_dir(arg: str | None) -> Path:
    path = Path(arg or os.environ.get(OUTPUT_DIR_ENV, "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(out_dir: Path, config: dict, seed: int):
    canonical = json.dumps(config, sort_keys=True)
    manifest = {
        "config": config,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "distpgo": _package_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _spec_from_args(args) -> ScenarioSpec:
    return ScenarioSpec(
        kind=args.kind,
        robot_count=args.robots,
        poses_per_robot=args.poses_per_robot,
        sigma_r_deg=args.sigma_r,
        sigma_t=args.sigma_t,
        rng_seed=args.seed,
        link_count=args.links,
    )


def _solver_from_args(args) -> SolverConfig:
    order = None
    if args.sor_order:
        order = tuple(int(v) for v in args.sor_order.split(","))
    return SolverConfig(
        gamma=args.gamma,
        eta_r=args.eta_r,
        eta_p=args.eta_p,
        max_iterations=args.max_iterations,
        flagged_init=args.flagged,
        sor_order=order,
    )


def cmd_generate(args) -> int:
    out_dir = _output_dir(args.out_dir)
    spec = _spec_from_args(args)
    graph, truth = generate_scenario(spec)
    stem = args.name or spec.scenario_id
    write_graph(str(out_dir / f"{stem}.g2o"), graph)
    write_graph(str(out_dir / f"{stem}.gt.g2o"), graph, estimate=truth)
    write_manifest(out_dir, {"command": "generate", "spec": dataclasses.asdict(spec)}, spec.rng_seed)
    print(json.dumps({"graph": f"{stem}.g2o", "ground_truth": f"{stem}.gt.g2o",
                      "vertices": len(graph.vertices), "edges": len(graph.edges)}))
    return 0


def cmd_solve(args) -> int:
    out_dir = _output_dir(args.out_dir)
    config = _solver_from_args(args)
    run_config = RunConfig(solver=dataclasses.asdict(config), method=args.method,
                           seed=args.seed).validate()
    graph = parse_graph(args.graph)
    outcome = run_method(graph, args.method, config)
    write_graph(str(out_dir / "estimate.g2o"), graph, estimate=outcome.estimate)
    summary = {
        "method": args.method,
        "cost": outcome.cost,
        "iterations": outcome.iterations,
        "diverged": outcome.diverged,
    }
    if outcome.run is not None:
        (out_dir / "trace.csv").write_text(
            trace_to_csv(outcome.run.rotation_trace, outcome.run.pose_trace))
        (out_dir / "ledger.json").write_text(
            ledger_to_json(outcome.run.ledger, outcome.run.k_rotation, outcome.run.k_pose))
        summary["k_rotation"] = outcome.run.k_rotation
        summary["k_pose"] = outcome.run.k_pose
    write_manifest(out_dir, {"command": "solve", "run": json.loads(run_config.to_json()),
                             "graph": os.path.abspath(args.graph)}, args.seed)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary))
    return 0


def cmd_bench(args) -> int:
    out_dir = _output_dir(args.out_dir)
    config = _solver_from_args(args)
    robots = [int(v) for v in args.robots_list.split(",")]
    seeds = [int(s) for s in np.random.SeedSequence(args.seed).generate_state(args.runs)]
    specs = []
    for n in robots:
        for seed in seeds:
            specs.append(ScenarioSpec(kind=args.kind, robot_count=n, sigma_r_deg=args.sigma_r,
                                      sigma_t=args.sigma_t, rng_seed=seed, link_count=args.links))
    methods = args.methods.split(",")
    rows = build_comparison_table(specs, methods, config)
    csv_path = out_dir / (args.name or "bench.csv")
    csv_path.write_text(rows_to_csv(rows))
    write_manifest(out_dir, {"command": "bench", "kind": args.kind, "robots": robots,
                             "runs": args.runs, "methods": methods,
                             "sigma_r": args.sigma_r, "sigma_t": args.sigma_t}, args.seed)
    print(json.dumps({"rows": sum(len(r.methods) for r in rows), "csv": csv_path.name}))
    return 0


def cmd_analyze(args) -> int:
    out_dir = _output_dir(args.out_dir)
    graph = parse_graph(args.graph)
    gammas = [float(v) for v in args.gamma_grid.split(",")]
    rot_system = build_rotation_system(graph)
    systems = {"rotation": rot_system}
    if args.include_pose:
        stage1 = solve_two_stage(graph)
        rotations = {vid: pose.rotation for vid, pose in stage1.estimate.items()}
        systems["pose"] = build_pose_system(graph, rotations)
    report = {}
    for name, system in systems.items():
        report[name] = []
        for gamma in gammas:
            _, rho = jor_convergence_matrix(system, gamma)
            report[name].append({"gamma": gamma, "rho": rho, "converges": bool(rho < 1.0)})
    write_manifest(out_dir, {"command": "analyze", "graph": os.path.abspath(args.graph),
                             "gammas": gammas}, 0)
    (out_dir / "analyze.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distpgo",
                                     description="Distributed pose-graph optimization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_args(p):
        p.add_argument("--kind", choices=("grid3d", "parallel_tracks"), default="grid3d")
        p.add_argument("--robots", type=int, default=4)
        p.add_argument("--poses-per-robot", type=int, default=None)
        p.add_argument("--sigma-r", type=float, default=5.0, help="rotation noise (degrees)")
        p.add_argument("--sigma-t", type=float, default=0.2, help="translation noise (meters)")
        p.add_argument("--links", type=int, default=10, help="parallel_tracks link count")

    def add_solver_args(p):
        p.add_argument("--gamma", type=float, default=1.0)
        p.add_argument("--eta-r", type=float, default=1e-1)
        p.add_argument("--eta-p", type=float, default=1e-1)
        p.add_argument("--max-iterations", type=int, default=20000)
        p.add_argument("--flagged", action=argparse.BooleanOptionalAction, default=True)
        p.add_argument("--sor-order", type=str, default=None,
                       help="comma-separated robot permutation")

    p_gen = sub.add_parser("generate", help="write a synthetic scenario + ground truth")
    add_scenario_args(p_gen)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out-dir", type=str, default=None)
    p_gen.add_argument("--name", type=str, default=None)
    p_gen.set_defaults(func=cmd_generate)

    p_solve = sub.add_parser("solve", help="solve a graph file with one method")
    p_solve.add_argument("--graph", required=True)
    p_solve.add_argument("--method", choices=("dgs", "dj", "jor", "sor", "two-stage", "gn"),
                         default="dgs")
    add_solver_args(p_solve)
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--out-dir", type=str, default=None)
    p_solve.set_defaults(func=cmd_solve)

    p_bench = sub.add_parser("bench", help="Monte-Carlo comparison table (CSV)")
    add_scenario_args(p_bench)
    add_solver_args(p_bench)
    p_bench.add_argument("--robots-list", type=str, default="4")
    p_bench.add_argument("--runs", type=int, default=10)
    p_bench.add_argument("--methods", type=str, default="dgs,two-stage,gn")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out-dir", type=str, default=None)
    p_bench.add_argument("--name", type=str, default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_an = sub.add_parser("analyze", help="spectral-radius diagnostics over a gamma grid")
    p_an.add_argument("--graph", required=True)
    p_an.add_argument("--gamma-grid", type=str, default="1.0")
    p_an.add_argument("--include-pose", action="store_true")
    p_an.add_argument("--out-dir", type=str, default=None)
    p_an.set_defaults(func=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface machine-readable failures
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
