"""
Command-line harness.

    qdsg graph      --config cfg.json [--seed S] [--out adjacency.txt]
    qdsg solve-ref  --config cfg.json [--out problem_dir]
    qdsg run        --config cfg.json [--seed S] [--mode quantized|dsg] [--out metrics.csv]
    qdsg sweep-bits --config cfg.json [--out sweep.csv]

The network and the regression data are drawn from ``instance_seed``; the
per-run ``seeds`` only drive initialization and quantization.  Exit codes:
0 success, 1 config error, 2 invariant breach, 3 connectivity failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algorithm import bound_inputs_for, rounds_to_threshold, run
from .config import ExperimentConfig, parse_config
from .errors import ConfigError, ConnectivityError, InvariantError
from .graph import MixingMatrix, Network, generate_rgg, lazy_metropolis, write_adjacency
from .metrics import CSV_COLUMNS
from .problems import ProblemInstance, load_reference, make_regression_problem, save_problem, solve_reference

SWEEP_COLUMNS = ("bits", "seed", "iterations_to_threshold")
CAP_SENTINEL = -1
F_STAR_TOL = 1e-12


@dataclass
class Instance:
    network: Network
    mixing: MixingMatrix
    problem: ProblemInstance


def build_instance(cfg: ExperimentConfig, with_reference: bool = True) -> Instance:
    """Network, mixing matrix and regression problem for ``cfg.instance_seed``."""
    rng = np.random.default_rng(cfg.instance_seed)
    net = generate_rgg(cfg.n, cfg.radius, rng, max_attempts=cfg.max_attempts)
    A = lazy_metropolis(net)
    problem = make_regression_problem(cfg.n, cfg.d, cfg.loss_kind, cfg.points_per_node, rng,
                                      lower=cfg.lower, upper=cfg.upper, bits=cfg.bits[0])
    if with_reference:
        if cfg.reference_path is not None:
            problem.set_reference(load_reference(cfg.reference_path))
        else:
            solve_reference(problem, cfg.ref_iterations)
    return Instance(net, A, problem)


def _map(fn, tasks, workers):
    """Apply ``fn`` to every task; results come back in task order."""
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _write_meta(path: Path, **meta) -> None:
    """JSON sidecar ``<path>.meta.json`` describing how the CSV was produced."""
    path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_graph(cfg: ExperimentConfig, out=None, stream=None) -> dict:
    stream = stream or sys.stdout
    rng = np.random.default_rng(cfg.instance_seed)
    net = generate_rgg(cfg.n, cfg.radius, rng, max_attempts=cfg.max_attempts)
    A = lazy_metropolis(net)
    path = Path(out or cfg.output_path)
    write_adjacency(net, path)
    report = dict(n=net.n, edges=len(net.edges), attempts=net.attempts,
                  sigma2=A.sigma2, spectral_gap=1.0 - A.sigma2)
    for key, val in report.items():
        print(f"{key}: {val:.17g}" if isinstance(val, float) else f"{key}: {val}", file=stream)
    return report


def cmd_solve_ref(cfg: ExperimentConfig, out=None, stream=None):
    stream = stream or sys.stdout
    inst = build_instance(cfg, with_reference=False)
    ref = solve_reference(inst.problem, cfg.ref_iterations)
    path = save_problem(inst.problem, Path(out or cfg.output_path))
    print(f"f_star: {ref.f_star:.17g}", file=stream)
    print(f"x_star: {' '.join(f'{v:.17g}' for v in ref.x_star)}", file=stream)
    print(f"problem: {path}", file=stream)
    return ref.x_star, ref.f_star


def cmd_run(cfg: ExperimentConfig, out=None, workers=None) -> Path:
    """Metric CSV for every (bits, seed) pair, rows in that order."""
    inst = build_instance(cfg)
    P, A = inst.problem, inst.mixing
    schedule = cfg.schedule.resolve(P.mu, A.sigma2)
    bits_list = cfg.bits if cfg.mode == "quantized" else cfg.bits[:1]
    problems = {b: P.with_bits(b) for b in bits_list}
    bounds = None
    if cfg.mode == "quantized" and schedule.kind != "asymptotic":
        bounds = {b: bound_inputs_for(Q, A, schedule, cfg.seeds) for b, Q in problems.items()}
    tasks = [(b, s) for b in bits_list for s in cfg.seeds]

    def task(bs):
        b, seed = bs
        return run(problems[b], A, schedule, cfg.mode, cfg.rounds, seed, cfg.checkpoints,
                   bound_inputs=bounds[b] if bounds else None)

    results = _map(task, tasks, cfg.workers if workers is None else workers)
    path = Path(out or cfg.output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rows in results:
            for row in rows:
                w.writerow(row.csv_fields())
    _write_meta(path, mode=cfg.mode, schedule=schedule.to_dict(), beta_clamped=schedule.beta_clamped,
                rounds=cfg.rounds, instance_seed=cfg.instance_seed)
    return path


def cmd_sweep_bits(cfg: ExperimentConfig, out=None, workers=None) -> Path:
    """Iterations until the worst-node gap meets the threshold, per (bits, seed).

    The threshold is relative, ``gap_max / f* <= threshold``, unless ``f* = 0``
    in which case ``gap_max <= abs_epsilon`` is used.  Runs that never cross
    before ``round_cap`` record ``-1``.
    """
    inst = build_instance(cfg)
    P, A = inst.problem, inst.mixing
    schedule = cfg.schedule.resolve(P.mu, A.sigma2)
    relative = abs(P.reference_solution.f_star) > F_STAR_TOL
    limit = cfg.threshold if relative else cfg.abs_epsilon
    problems = {b: P.with_bits(b) for b in cfg.bits}
    tasks = [(b, s) for b in cfg.bits for s in cfg.seeds]

    def task(bs):
        b, seed = bs
        return rounds_to_threshold(problems[b], A, schedule, seed, threshold=limit,
                                   cap=cfg.round_cap, relative=relative)

    results = _map(task, tasks, cfg.workers if workers is None else workers)
    path = Path(out or cfg.output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for (b, s), r in zip(tasks, results):
            w.writerow([b, s, r])
    _write_meta(
        path,
        threshold_rule="worst node: max_i f(z_i(k)) - f*",
        criterion="relative" if relative else "absolute",
        threshold=limit,
        f_star=P.reference_solution.f_star,
        round_cap=cfg.round_cap,
        cap_sentinel=CAP_SENTINEL,
        schedule=schedule.to_dict(),
        beta_clamped=schedule.beta_clamped,
    )
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdsg", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("graph", "generate the network and report its spectrum"),
                        ("solve-ref", "solve the centralized problem and save it"),
                        ("run", "run the distributed method and write metrics CSV"),
                        ("sweep-bits", "iterations to the error threshold for each bit width")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config; defaults apply when omitted")
        p.add_argument("--seed", type=int, help="replaces the first configured seed")
        p.add_argument("--out", help="output path (overrides output_path)")
        p.add_argument("--mode", choices=("quantized", "dsg"))
        p.add_argument("--workers", type=int, help="threads for independent runs")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seeds"] = [args.seed, *cfg.seeds[1:]]
    if args.mode is not None:
        changes["mode"] = args.mode
    if args.workers is not None:
        changes["workers"] = args.workers
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "graph":
            cmd_graph(cfg, args.out)
        elif args.command == "solve-ref":
            cmd_solve_ref(cfg, args.out)
        elif args.command == "run":
            print(cmd_run(cfg, args.out))
        else:
            print(cmd_sweep_bits(cfg, args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2
    except ConnectivityError as exc:
        print(f"connectivity failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
