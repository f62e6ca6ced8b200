"""Command-line front end: parse problem files, solve, inspect, verify, simulate.

Problems are JSON documents with row-major nested arrays for matrices.  Exit
codes are part of the contract: 0 optimal, 2 iteration budget exhausted,
3 numerical breakdown, 4 bad input; ``verify`` exits 1 when any check fails.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from dataclasses import replace

import numpy as np

from .chordal import clique_tree_to_dot, graph_to_dot
from .ipm import IpmOptions, ipm_solve
from .model import Realization, UncertainSystem, assemble_rqp, enumerate_scenarios
from .msgpass import build_direction_structure, resolve_workers, solve_reduced_kkt_chordal
from .oracle import active_set_bruteforce, dense_kkt_solve, verify_solution
from .rqp import build_reduced_kkt, kkt_residuals

__all__ = [
    "ProblemFormatError",
    "parse_problem",
    "serialize_problem",
    "main",
]

EXIT_OPTIMAL = 0
EXIT_CHECK_FAILED = 1
EXIT_MAX_ITER = 2
EXIT_BREAKDOWN = 3
EXIT_INPUT = 4

_STATUS_CODES = {
    "optimal": EXIT_OPTIMAL,
    "max_iter": EXIT_MAX_ITER,
    "numerical_breakdown": EXIT_BREAKDOWN,
}


class ProblemFormatError(ValueError):
    """Problem file rejected; the message names the offending field."""


def _need(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise ProblemFormatError(f"missing field '{path}'")
    return obj[key]


def _shaped(value, shape, path):
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise ProblemFormatError(f"{path} has shape {arr.shape}, expected {shape}")
    return arr


def parse_problem(path):
    """Read and validate a JSON problem file into an UncertainSystem."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ProblemFormatError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"{path} is not valid JSON: {exc}") from exc

    N = int(_need(raw, "horizon", "horizon"))
    N_r = int(_need(raw, "robust_horizon", "robust_horizon"))
    n_x = int(_need(raw, "nx", "nx"))
    n_u = int(_need(raw, "nu", "nu"))
    x0 = _need(raw, "x0", "x0")
    cost = _need(raw, "cost", "cost")
    Q = _shaped(_need(cost, "Q", "cost.Q"), (n_x + n_u, n_x + n_u), "cost.Q")
    S = _shaped(_need(cost, "S", "cost.S"), (n_x, n_x), "cost.S")
    cons = _need(raw, "constraints", "constraints")
    C = np.asarray(_need(cons, "C", "constraints.C"), dtype=float)
    if C.ndim != 2 or C.shape[1] != n_x:
        raise ProblemFormatError(
            f"constraints.C has shape {C.shape}, expected (q, {n_x})"
        )
    q = C.shape[0]
    D = _shaped(_need(cons, "D", "constraints.D"), (q, n_u), "constraints.D")
    e_raw = _need(cons, "e", "constraints.e")
    if len(e_raw) != N:
        raise ProblemFormatError(f"constraints.e has {len(e_raw)} entries, expected {N}")
    e = [_shaped(ek, (q,), f"constraints.e[{k}]") for k, ek in enumerate(e_raw)]
    stages_raw = _need(raw, "realizations", "realizations")
    if len(stages_raw) != N:
        raise ProblemFormatError(
            f"realizations has {len(stages_raw)} stages, expected {N}"
        )
    stages = []
    for k, stage in enumerate(stages_raw):
        entries = []
        for i, entry in enumerate(stage):
            where = f"realizations[{k}][{i}]"
            entries.append(
                Realization(
                    A=_shaped(_need(entry, "A", where + ".A"), (n_x, n_x), where + ".A"),
                    B=_shaped(_need(entry, "B", where + ".B"), (n_x, n_u), where + ".B"),
                    v=_shaped(_need(entry, "v", where + ".v"), (n_x,), where + ".v"),
                )
            )
        stages.append(entries)
    try:
        return UncertainSystem(
            n_x=n_x,
            n_u=n_u,
            N=N,
            N_r=N_r,
            realizations=stages,
            Q=Q,
            S=S,
            C=C,
            D=D,
            e=e,
            x_bar=_shaped(x0, (n_x,), "x0"),
        )
    except ValueError as exc:
        raise ProblemFormatError(str(exc)) from exc


def serialize_problem(sys_):
    """Inverse of parse_problem, suitable for json.dump."""
    return {
        "horizon": sys_.N,
        "robust_horizon": sys_.N_r,
        "nx": sys_.n_x,
        "nu": sys_.n_u,
        "x0": sys_.x_bar.tolist(),
        "cost": {"Q": sys_.Q.tolist(), "S": sys_.S.tolist()},
        "constraints": {
            "C": sys_.C.tolist(),
            "D": sys_.D.tolist(),
            "e": [ek.tolist() for ek in sys_.e],
        },
        "realizations": [
            [{"A": r.A.tolist(), "B": r.B.tolist(), "v": r.v.tolist()} for r in stage]
            for stage in sys_.realizations
        ],
    }


def _load(path):
    sys_ = parse_problem(path)
    return sys_, assemble_rqp(enumerate_scenarios(sys_), sys_)


def _first_control(rqp, z):
    n_x = rqp.structure.sys.n_x
    n_u = rqp.structure.sys.n_u
    lo = rqp.z_offset(0, 0) + n_x
    return z[lo : lo + n_u]


def _solver_options(args, **extra):
    fields = {
        "tol_feas": args.tol,
        "tol_comp": args.tol,
        "max_iter": args.max_iter,
        "backend": getattr(args, "backend", "chordal"),
    }
    fields.update(extra)
    return IpmOptions(**fields)


def cmd_solve(args):
    sys_, rqp = _load(args.file)
    sol = ipm_solve(rqp, _solver_options(args))
    u0 = _first_control(rqp, sol.iterate.z)
    if args.json_out:
        print(
            json.dumps(
                {
                    "status": sol.status,
                    "tau": sol.objective,
                    "iterations": sol.stats.iterations,
                    "u0": u0.tolist(),
                }
            )
        )
    else:
        costs = sol.per_scenario_costs
        print(f"status:         {sol.status}")
        print(f"objective:      {sol.objective:.12g}")
        print(f"iterations:     {sol.stats.iterations}")
        print(f"backend:        {args.backend} ({resolve_workers(None)} workers max)")
        print(f"wall time:      {sol.stats.wall_time:.3f} s")
        print(f"u0:             {np.array2string(u0, precision=8)}")
        print(f"worst scenario: {int(np.argmax(costs)) + 1} of {rqp.M}")
        print(f"scenario costs: {np.array2string(costs, precision=8)}")
    return _STATUS_CODES[sol.status]


def cmd_tree(args):
    _, rqp = _load(args.file)
    struct = build_direction_structure(rqp)
    tree = struct.tree
    sep_sizes = [len(s) for c, s in enumerate(tree.separators) if tree.parent[c] >= 0]
    fills = struct.embedding.edge_count() - struct.graph.edge_count()
    print(f"supernodes:      {struct.graph.n}")
    print(f"fill edges:      {fills}")
    print(f"cliques:         {len(tree.cliques)}")
    print(f"max clique size: {max(len(c) for c in tree.cliques)}")
    print(f"separator sizes: {sorted(sep_sizes)}")
    if args.dot:
        text = graph_to_dot(struct.graph) + "\n" + clique_tree_to_dot(tree) + "\n"
        with open(args.dot, "w") as fh:
            fh.write(text)
        print(f"wrote DOT to {args.dot}")
    return EXIT_OPTIMAL


def cmd_verify(args):
    _, rqp = _load(args.file)
    checks = []

    sol_dense = ipm_solve(rqp, _solver_options(args, keep_iterates=True, backend="dense"))
    sol_chordal = ipm_solve(rqp, _solver_options(args, backend="chordal"))
    checks.append(("dense solve optimal", sol_dense.status == "optimal", sol_dense.status))
    checks.append(
        ("chordal solve optimal", sol_chordal.status == "optimal", sol_chordal.status)
    )
    gap = abs(sol_dense.objective - sol_chordal.objective) / (
        1.0 + abs(sol_dense.objective)
    )
    checks.append(("backends agree on objective", gap <= 1e-9, f"{gap:.2e}"))

    struct = build_direction_structure(rqp)
    iterates = sol_dense.stats.iterates
    picks = sorted({0, len(iterates) // 2, len(iterates) - 1}) if iterates else []
    worst = 0.0
    for ix in picks:
        it = iterates[ix]
        res = kkt_residuals(rqp, it)
        red = build_reduced_kkt(rqp, it, res)
        dz_d, dl_d = dense_kkt_solve(red)
        dz_c, dl_c, _ = solve_reduced_kkt_chordal(red, struct)
        dev = max(np.max(np.abs(dz_d - dz_c)), np.max(np.abs(dl_d - dl_c)))
        worst = max(worst, dev / (1.0 + np.max(np.abs(dz_d))))
    checks.append(("directions agree at sampled iterates", worst <= 1e-8, f"{worst:.2e}"))

    target = sol_chordal
    if args.inject_corruption:
        broken = replace(target.iterate, z=target.iterate.z + 1e-3)
        target = replace(target, iterate=broken)
    report = verify_solution(rqp, target, tol=1e-7)
    worst_block = max(report.kkt_block_norms.values())
    checks.append(("independent optimality check", report.passed, f"{worst_block:.2e}"))

    if rqp.n_rows + rqp.m_ineq <= 14:
        bf = active_set_bruteforce(rqp)
        if bf.status == "optimal":
            rel = abs(sol_chordal.objective - bf.tau) / (1.0 + abs(bf.tau))
            checks.append(("brute-force objective match", rel <= 1e-6, f"{rel:.2e}"))
        else:
            checks.append(("brute-force objective match", False, bf.status))
    else:
        print("brute-force check: skipped (instance above enumeration cap)")

    width = max(len(name) for name, _, _ in checks)
    failed = False
    for name, ok, detail in checks:
        print(f"{name:<{width}}  {'pass' if ok else 'FAIL'}  {detail}")
        failed = failed or not ok
    return EXIT_CHECK_FAILED if failed else EXIT_OPTIMAL


def cmd_simulate(args):
    sys_, _ = _load(args.file)
    rng = np.random.default_rng(args.seed)
    x = sys_.x_bar.copy()
    steps = []
    code = EXIT_OPTIMAL
    for _ in range(args.steps):
        stage_sys = replace(sys_, x_bar=x, realizations=list(sys_.realizations), e=list(sys_.e))
        rqp = assemble_rqp(enumerate_scenarios(stage_sys), stage_sys)
        sol = ipm_solve(rqp, _solver_options(args))
        if sol.status != "optimal":
            code = EXIT_MAX_ITER
            break
        u0 = _first_control(rqp, sol.iterate.z)
        pick = int(rng.integers(len(sys_.realizations[0])))
        real = sys_.realizations[0][pick]
        steps.append(
            {
                "x": x.tolist(),
                "u": u0.tolist(),
                "realized": pick,
                "tau": sol.objective,
            }
        )
        x = real.A @ x + real.B @ u0 + real.v
    payload = {"steps": steps, "final_state": x.tolist(), "completed": code == 0}
    if args.json_out:
        print(json.dumps(payload))
    else:
        for i, rec in enumerate(steps):
            print(
                f"step {i}: x={np.round(rec['x'], 6).tolist()} "
                f"u={np.round(rec['u'], 6).tolist()} "
                f"realized={rec['realized']} tau={rec['tau']:.6g}"
            )
        print(f"final state: {np.round(x, 6).tolist()}")
        if code != EXIT_OPTIMAL:
            print("solver failed mid-run; log is partial", file=_sys.stderr)
    return code


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rmpc",
        description="Robust scenario-tree MPC solver (interior point, chordal backend).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a problem file")
    p_solve.add_argument("file")
    p_solve.add_argument("--backend", choices=("dense", "chordal"), default="chordal")
    p_solve.add_argument("--tol", type=float, default=1e-8)
    p_solve.add_argument("--max-iter", type=int, default=100)
    p_solve.add_argument("--json-out", action="store_true")
    p_solve.set_defaults(func=cmd_solve)

    p_tree = sub.add_parser("tree", help="report the chordal decomposition")
    p_tree.add_argument("file")
    p_tree.add_argument("--dot", metavar="PATH", help="write DOT output here")
    p_tree.set_defaults(func=cmd_tree)

    p_verify = sub.add_parser("verify", help="cross-check backends and optimality")
    p_verify.add_argument("file")
    p_verify.add_argument("--tol", type=float, default=1e-8)
    p_verify.add_argument("--max-iter", type=int, default=100)
    p_verify.add_argument("--inject-corruption", action="store_true", help=argparse.SUPPRESS)
    p_verify.set_defaults(func=cmd_verify)

    p_sim = sub.add_parser("simulate", help="closed-loop receding-horizon run")
    p_sim.add_argument("file")
    p_sim.add_argument("--steps", type=int, required=True)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--backend", choices=("dense", "chordal"), default="chordal")
    p_sim.add_argument("--tol", type=float, default=1e-8)
    p_sim.add_argument("--max-iter", type=int, default=100)
    p_sim.add_argument("--json-out", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProblemFormatError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    _sys.exit(main())
