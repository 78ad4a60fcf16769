"""Command-line entry point: field training, planning, benchmarking, fit demo and run history."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .aip import AUDIT_OVERSAMPLE, AipParams, endpoint_collisions, optimize
from .benchmark import load_suite, plan_problem, run_suite, summarize, sweep, write_csv, write_summary
from .config import (
    DEFAULT_BENCH_TIMEOUT,
    DEFAULT_C_BOX,
    DEFAULT_EPSILON,
    DEFAULT_FIELD_POINTS,
    DEFAULT_HARMONICS,
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    DEFAULT_SMO_MAX_PASSES,
    DEFAULT_SMO_TOL,
    FIELD_SOURCES,
    DocumentError,
    get_data_dir,
    load_problem,
    worker_count,
)
from .ffs import REFERENCE_KINDS, SampleGrid, compare_fits, cosine_series
from .hamiltonian import FieldSource, make_field
from .robot import load_robot
from .run_history import RunRecord, add_run, add_runs, count_runs_since, get_recent_runs
from .scene import load_scene
from .svm_field import (
    COLLIDED,
    SAFE,
    DatasetParams,
    ModelFileError,
    SmoParams,
    configurations_for_points,
    generate_dataset,
    load_model,
    save_model,
    train_collision_field,
    train_smo,
    training_report,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_SINGLE_CLASS = 2
EXIT_ENDPOINT_COLLISION = 3
EXIT_NOT_FEASIBLE = 4

HISTORY_WINDOW = 24 * 3600.0  # seconds


def cmd_train_field(args: argparse.Namespace) -> int:
    """Label workspace samples against the scene, train the field and write the model file."""
    robot = load_robot(args.robot)
    scene = load_scene(args.scene)
    dataset = generate_dataset(
        robot,
        scene,
        DatasetParams(n_samples=configurations_for_points(args.n, robot), epsilon=args.epsilon, seed=args.seed),
    )
    if not np.any(dataset.labels == COLLIDED):
        print("error: no collided samples; the field needs both classes", file=sys.stderr)
        return EXIT_SINGLE_CLASS
    if not np.any(dataset.labels == SAFE):
        print("error: no safe samples; the field needs both classes", file=sys.stderr)
        return EXIT_SINGLE_CLASS

    hyper = SmoParams(sigma=args.sigma, c_box=args.cbox, tol=args.tol, max_passes=args.max_passes, seed=args.seed)
    result = train_smo(dataset, hyper)
    out = args.out or get_data_dir() / "models" / f"{robot.name}_{scene.name}.json"
    save_model(result.model, out)
    report = training_report(result.model, dataset)
    print(f"model:            {out}")
    print(f"points:           {len(dataset)} (collided {dataset.collided_fraction:.1%})")
    print(f"support vectors:  {report.n_support}")
    print(f"sigma:            {result.model.sigma:.4g}")
    print(f"accuracy:         {report.accuracy:.4f}")
    print(f"collided recall:  {report.collided_recall:.4f}")
    print(f"converged:        {result.converged} ({result.iterations} iterations)")
    print(f"wall time:        {result.wall_time:.2f}s")
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    """Optimize one problem file and write the oversampled trajectory CSV."""
    problem_file = load_problem(args.problem)
    if args.field:
        problem_file.params.field = args.field
    if args.svm_model:
        problem_file.params.svm_model = args.svm_model
    problem = plan_problem(problem_file)

    colliding = endpoint_collisions(problem)
    if colliding:
        for label in colliding:
            print(f"error: {label} state in collision", file=sys.stderr)
        return EXIT_ENDPOINT_COLLISION

    params = AipParams.from_plan(problem_file.params)
    if args.rho is not None:
        params.rho = args.rho
    model = None
    source = params.field_source
    if source is FieldSource.SVM:
        if problem_file.params.svm_model is not None:
            model = load_model(problem_file.params.svm_model)
        elif not problem.scene.obstacles:
            logger.info("Empty scene, planning against the raw field")
            source = FieldSource.RAW
        else:
            logger.info("No model file given, training a collision field first")
            plan = problem_file.params
            trained, _ = train_collision_field(
                problem.robot,
                problem.scene,
                problem.epsilon,
                args.field_points,
                seed=plan.seed,
                hyper=SmoParams(sigma=plan.field_sigma, seed=plan.seed),
            )
            model = trained.model
    field = make_field(source, problem.scene, problem.epsilon, model)

    started = time.perf_counter()
    result = optimize(problem, params, field)
    wall = time.perf_counter() - started

    out = args.out or get_data_dir() / "plans" / f"{problem.name}.csv"
    times = problem.grid.fine_times(AUDIT_OVERSAMPLE)
    thetas = cosine_series(result.a_final.data.T, times, problem.grid.T)
    write_csv(
        out,
        "plan",
        ["t", *(f"theta_{m + 1}" for m in range(problem.M))],
        ([repr(float(t)), *(repr(float(v)) for v in row)] for t, row in zip(times, thetas)),
    )
    print(
        f"{problem.name}: converged={result.converged} feasible={result.feasible} "
        f"iterations={result.iterations} hamiltonian={result.hamiltonian:.6g} wall={wall:.2f}s -> {out}"
    )
    add_run(
        RunRecord(
            kind="plan",
            problem=problem.name,
            mode=source.value,
            success=result.feasible,
            iterations=result.iterations,
            wall_time=wall,
            hamiltonian=result.hamiltonian,
            termination=result.termination.value,
        )
    )
    return EXIT_OK if result.feasible else EXIT_NOT_FEASIBLE


def cmd_bench(args: argparse.Namespace) -> int:
    """Run a suite in one or both modes and print the per-class table."""
    suite = load_suite(args.suite)
    workers = args.workers or worker_count()
    if args.sweep:
        cells = sweep(suite, workers=workers, timeout=args.timeout, n_field_points=args.field_points)
        out = args.out or get_data_dir() / "bench" / f"{suite.path.stem}_sweep.csv"
        write_csv(
            out,
            "sweep",
            ("lambda", "decay", "success_rate", "mean_time"),
            ((c["lambda"], c["decay"], f"{c['success_rate']:.2f}", f"{c['mean_time']:.4f}") for c in cells),
        )
        for c in cells:
            print(
                f"lambda={c['lambda']:<8g} decay={c['decay']:.2f}  "
                f"Scr={c['success_rate']:6.2f}%  Avt={c['mean_time']:.3f}s"
            )
        print(f"-> {out}")
        return EXIT_OK

    modes = ("aip", "ffsomp") if args.mode == "both" else (args.mode,)
    records = run_suite(suite, modes, workers=workers, timeout=args.timeout, n_field_points=args.field_points)
    rows = summarize(records)
    out = args.out or get_data_dir() / "bench" / f"{suite.path.stem}.csv"
    write_summary(out, rows)
    print(f"{'class':<6}{'mode':<8}{'runs':>6}{'Scr(%)':>9}{'Avt(s)':>9}{'Sdt(s)':>9}")
    for r in rows:
        print(f"{r.task_class:<6}{r.mode:<8}{r.runs:>6}{r.success_rate:>9.2f}{r.mean_time:>9.3f}{r.std_time:>9.3f}")
    print(f"-> {out}")
    add_runs(
        [
            RunRecord(
                kind="bench",
                problem=r.problem,
                mode=r.mode,
                success=r.success,
                iterations=r.iterations,
                wall_time=r.wall_time,
                hamiltonian=r.hamiltonian,
                termination=r.termination,
            )
            for r in records
        ]
    )
    return EXIT_OK


def cmd_demo_ffs(args: argparse.Namespace) -> int:
    """Cosine versus full Fourier fit of a start-goal reference, for plotting."""
    comparison = compare_fits(args.reference, args.N, SampleGrid(args.T))
    out = args.out or get_data_dir() / "demo" / f"ffs_{args.reference}.csv"
    write_csv(
        out,
        "demo-ffs",
        ("t", "reference", "cosine_fit", "fourier_fit"),
        zip(comparison.times, comparison.reference, comparison.cosine, comparison.fourier),
    )
    cos_err, fourier_err = comparison.endpoint_errors()
    print(f"endpoint error: cosine {cos_err:.4g}, full Fourier {fourier_err:.4g} -> {out}")
    return EXIT_OK


def cmd_history(args: argparse.Namespace) -> int:
    runs = get_recent_runs(args.limit)
    if not runs:
        print("no runs recorded")
        return EXIT_OK
    for run in runs:
        stamp = time.strftime("%Y-%m-%d %H:%M:%S", time.localtime(run["recorded_at"]))
        status = "ok" if run["success"] else "FAIL"
        print(f"{stamp}  {run['kind']:<5} {run['mode']:<7} {status:<4} {run['wall_time']:7.2f}s  {run['problem']}")
    since = time.time() - HISTORY_WINDOW
    print(f"last 24h: {count_runs_since(since, 'plan')} plan, {count_runs_since(since, 'bench')} bench runs")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harmonic-planner", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-field", help="learn a collision field for a robot in a scene")
    p.add_argument("--robot", type=Path, required=True)
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--n", type=int, default=DEFAULT_FIELD_POINTS, help="labeled workspace points")
    p.add_argument("--sigma", type=float, default=None, help="kernel width (default: nearest-neighbour heuristic)")
    p.add_argument("--cbox", type=float, default=DEFAULT_C_BOX)
    p.add_argument("--tol", type=float, default=DEFAULT_SMO_TOL)
    p.add_argument("--max-passes", type=int, default=DEFAULT_SMO_MAX_PASSES)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_train_field)

    p = sub.add_parser("plan", help="optimize one problem file")
    p.add_argument("problem", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--field", choices=FIELD_SOURCES, default=None)
    p.add_argument("--svm-model", type=Path, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--field-points", type=int, default=DEFAULT_FIELD_POINTS)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("suite", type=Path)
    p.add_argument("--mode", choices=("aip", "ffsomp", "both"), default="both")
    p.add_argument("--sweep", action="store_true", help="grid over lambda and alpha=beta in ffsomp mode")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--timeout", type=float, default=DEFAULT_BENCH_TIMEOUT)
    p.add_argument("--field-points", type=int, default=DEFAULT_FIELD_POINTS)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("demo-ffs", help="compare cosine and full Fourier fits of a reference motion")
    p.add_argument("--N", type=int, default=DEFAULT_HARMONICS)
    p.add_argument("--T", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--reference", choices=REFERENCE_KINDS, default="step")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_demo_ffs)

    p = sub.add_parser("history", help="show recent plan and bench runs")
    p.add_argument("--limit", type=int, default=20)
    p.set_defaults(func=cmd_history)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    try:
        return args.func(args)
    except (DocumentError, ModelFileError, ValueError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
