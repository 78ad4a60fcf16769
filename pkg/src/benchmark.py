"""Benchmark suites: task classification, parallel runs and success/timing summaries."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .aip import AipParams, PlanProblem, Termination, endpoint_collisions, initial_trajectory, optimize
from .config import (
    DEFAULT_BENCH_TIMEOUT,
    DEFAULT_FIELD_POINTS,
    FORMAT_VERSION,
    DocumentError,
    ProblemFile,
    check_fields,
    load_problem,
    read_document,
)
from .ffs import SampleGrid, discretize
from .hamiltonian import FieldSource, make_field
from .robot import ball_centers, load_robot
from .scene import load_scene
from .svm_field import CollisionFieldModel, SmoParams, load_model, train_collision_field

logger = logging.getLogger(__name__)

TASK_CLASSES = ("A", "B", "C")
CLASS_B_THRESHOLD = 8
CLASS_C_THRESHOLD = 16

# Bench mode -> collision field used by the optimizer
MODES = {"aip": FieldSource.RAW, "ffsomp": FieldSource.SVM}

SWEEP_LAMBDAS = (1e-3, 1e-2, 1e-1, 1.0)
SWEEP_DECAYS = (0.50, 0.90, 0.95)


@dataclass
class SuiteEntry:
    problem: ProblemFile
    task_class: str


@dataclass
class BenchmarkSuite:
    path: Path
    entries: list[SuiteEntry]
    repeats: int = 1


@dataclass
class BenchRecord:
    problem: str
    task_class: str
    mode: str
    repeat: int
    success: bool
    wall_time: float
    iterations: int
    termination: str
    hamiltonian: Optional[float] = None


@dataclass
class SummaryRow:
    task_class: str
    mode: str
    runs: int
    success_rate: float  # percent
    mean_time: float
    std_time: float


@dataclass
class _Job:
    problem: ProblemFile
    task_class: str
    mode: str
    repeat: int
    model: Optional[CollisionFieldModel]
    overrides: dict[str, Any]
    timeout: float


def load_suite(path: Path) -> BenchmarkSuite:
    """Read a suite document; problem paths resolve against the suite's directory."""
    path = Path(path)
    doc = read_document(path, ("problems",), ("repeats", "name", "notes"))
    repeats = int(doc.get("repeats", 1))
    if repeats < 1:
        raise DocumentError(f"{path}: repeats must be at least 1")
    entries = []
    for i, item in enumerate(doc["problems"]):
        where = f"{path}: problems[{i}]"
        check_fields(item, ("path", "class"), where=where)
        if item["class"] not in TASK_CLASSES:
            raise DocumentError(f"{where}: class must be one of {TASK_CLASSES}")
        entries.append(SuiteEntry(problem=load_problem(path.parent / item["path"]), task_class=item["class"]))
    if not entries:
        raise DocumentError(f"{path}: suite has no problems")
    return BenchmarkSuite(path=path, entries=entries, repeats=repeats)


def plan_problem(problem: ProblemFile) -> PlanProblem:
    """Load the robot and scene a problem file refers to."""
    robot = load_robot(problem.robot)
    if problem.start.size != robot.dof:
        raise DocumentError(f"{problem.path}: start/goal have {problem.start.size} joints, robot has {robot.dof}")
    try:
        return PlanProblem(
            robot=robot,
            scene=load_scene(problem.scene),
            theta0=problem.start,
            theta_goal=problem.goal,
            grid=SampleGrid(problem.samples),
            N=problem.harmonics,
            epsilon=problem.params.epsilon,
            name=problem.name,
        )
    except ValueError as e:
        raise DocumentError(f"{problem.path}: {e}") from e


def task_class(colliding: int) -> str:
    if colliding < CLASS_B_THRESHOLD:
        return "A"
    if colliding < CLASS_C_THRESHOLD:
        return "B"
    return "C"


def classify_task(problem: PlanProblem, epsilon: Optional[float] = None) -> tuple[int, str]:
    """Count ball-sample pairs in collision along the initial trajectory and map the count to a class."""
    epsilon = problem.epsilon if epsilon is None else epsilon
    if not problem.scene.obstacles:
        return 0, "A"
    thetas = discretize(initial_trajectory(problem), problem.grid)
    centers = ball_centers(problem.robot, thetas)
    K, B, _ = centers.shape
    d = problem.scene.distances(centers.reshape(-1, 3)).reshape(K, B) - problem.robot.radii
    colliding = int(np.sum(d < epsilon))
    return colliding, task_class(colliding)


def _field_key(problem: ProblemFile) -> tuple:
    return (
        str(problem.robot),
        str(problem.scene),
        problem.params.epsilon,
        problem.params.seed,
        problem.params.field_sigma,
    )


def prepare_fields(
    problems: Iterable[ProblemFile],
    n_points: int = DEFAULT_FIELD_POINTS,
) -> dict[tuple, CollisionFieldModel]:
    """Load or train one learned field per (robot, scene, epsilon, seed, kernel width)."""
    models: dict[tuple, CollisionFieldModel] = {}
    for problem in problems:
        key = _field_key(problem)
        if key in models:
            continue
        if problem.params.svm_model is not None:
            models[key] = load_model(problem.params.svm_model)
            continue
        scene = load_scene(problem.scene)
        if not scene.obstacles:
            logger.debug("%s: no obstacles, nothing to learn", problem.scene.stem)
            continue
        logger.info("Training collision field for %s in %s", problem.robot.stem, problem.scene.stem)
        result, _ = train_collision_field(
            load_robot(problem.robot),
            scene,
            problem.params.epsilon,
            n_points,
            seed=problem.params.seed,
            hyper=SmoParams(sigma=problem.params.field_sigma, seed=problem.params.seed),
        )
        models[key] = result.model
    return models


def _run_job(job: _Job) -> BenchRecord:
    started = time.perf_counter()
    try:
        problem = plan_problem(job.problem)
        if endpoint_collisions(problem):
            logger.warning("%s: start or goal in collision, counted as failure", problem.name)
            return BenchRecord(
                job.problem.name, job.task_class, job.mode, job.repeat, False, 0.0, 0, "endpoint_collision"
            )
        params = dataclasses.replace(
            AipParams.from_plan(job.problem.params, time_limit=job.timeout),
            field_source=MODES[job.mode],
            **job.overrides,
        )
        if params.field_source is FieldSource.SVM and job.model is None and not problem.scene.obstacles:
            # Both fields vanish in an empty scene
            field = make_field(FieldSource.RAW, problem.scene, problem.epsilon)
        else:
            field = make_field(params.field_source, problem.scene, problem.epsilon, job.model)
        result = optimize(problem, params, field)
    except Exception as e:
        logger.error("%s (%s, repeat %d) failed: %s", job.problem.name, job.mode, job.repeat, e)
        return BenchRecord(
            job.problem.name,
            job.task_class,
            job.mode,
            job.repeat,
            False,
            time.perf_counter() - started,
            0,
            "error",
        )
    wall = time.perf_counter() - started
    success = result.feasible and result.termination is not Termination.TIMEOUT and wall <= job.timeout
    return BenchRecord(
        problem=job.problem.name,
        task_class=job.task_class,
        mode=job.mode,
        repeat=job.repeat,
        success=success,
        wall_time=wall,
        iterations=result.iterations,
        termination=result.termination.value,
        hamiltonian=result.hamiltonian,
    )


def run_suite(
    suite: BenchmarkSuite,
    modes: Sequence[str] = ("aip", "ffsomp"),
    workers: int = 1,
    overrides: Optional[dict[str, Any]] = None,
    timeout: float = DEFAULT_BENCH_TIMEOUT,
    n_field_points: int = DEFAULT_FIELD_POINTS,
    models: Optional[dict[tuple, CollisionFieldModel]] = None,
) -> list[BenchRecord]:
    """
    Run every problem in every mode `repeats` times; records come back in input order.

    Learned fields are prepared before dispatch and do not count toward per-problem time.
    """
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown bench mode {mode!r}")
    overrides = dict(overrides or {})

    for entry in suite.entries:
        count, measured = classify_task(plan_problem(entry.problem))
        if measured != entry.task_class:
            logger.warning(
                "%s is tagged class %s but its initial trajectory has %d colliding samples (class %s)",
                entry.problem.name,
                entry.task_class,
                count,
                measured,
            )

    if "ffsomp" in modes and models is None:
        models = prepare_fields((e.problem for e in suite.entries), n_field_points)
    models = models or {}

    jobs = [
        _Job(
            problem=entry.problem,
            task_class=entry.task_class,
            mode=mode,
            repeat=r,
            model=models.get(_field_key(entry.problem)) if mode == "ffsomp" else None,
            overrides=overrides,
            timeout=timeout,
        )
        for entry in suite.entries
        for mode in modes
        for r in range(suite.repeats)
    ]
    logger.info("Running %d benchmark jobs on %d worker(s)", len(jobs), workers)
    if workers <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def summarize(records: Iterable[BenchRecord]) -> list[SummaryRow]:
    """Success rate, mean and standard deviation of wall time per (class, mode)."""
    groups: dict[tuple[str, str], list[BenchRecord]] = {}
    for record in records:
        groups.setdefault((record.task_class, record.mode), []).append(record)
    mode_order = list(MODES)
    rows = []
    for (cls, mode), group in sorted(groups.items(), key=lambda kv: (kv[0][0], mode_order.index(kv[0][1]))):
        times = np.array([r.wall_time for r in group])
        rows.append(
            SummaryRow(
                task_class=cls,
                mode=mode,
                runs=len(group),
                success_rate=100.0 * float(np.mean([r.success for r in group])),
                mean_time=float(np.mean(times)),
                std_time=float(np.std(times)),
            )
        )
    return rows


def sweep(
    suite: BenchmarkSuite,
    lambdas: Sequence[float] = SWEEP_LAMBDAS,
    decays: Sequence[float] = SWEEP_DECAYS,
    workers: int = 1,
    timeout: float = DEFAULT_BENCH_TIMEOUT,
    n_field_points: int = DEFAULT_FIELD_POINTS,
) -> list[dict[str, float]]:
    """Success rate and mean time of the learned-field mode over a (λ, α=β) grid."""
    models = prepare_fields((e.problem for e in suite.entries), n_field_points)
    cells = []
    for lam in lambdas:
        for decay in decays:
            records = run_suite(
                suite,
                modes=("ffsomp",),
                workers=workers,
                overrides={"lam": lam, "alpha": decay, "beta": decay},
                timeout=timeout,
                models=models,
            )
            times = [r.wall_time for r in records]
            cells.append(
                {
                    "lambda": lam,
                    "decay": decay,
                    "success_rate": 100.0 * float(np.mean([r.success for r in records])),
                    "mean_time": float(np.mean(times)),
                }
            )
            logger.info("Sweep cell lambda=%g decay=%.2f: %.1f%%", lam, decay, cells[-1]["success_rate"])
    return cells


def write_csv(path: Path, kind: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """CSV with a leading "# <kind> v<version>" line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# {kind} v{FORMAT_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_summary(path: Path, rows: Sequence[SummaryRow]) -> None:
    write_csv(
        path,
        "bench",
        ("class", "mode", "runs", "success_rate", "mean_time", "std_time"),
        (
            (r.task_class, r.mode, r.runs, f"{r.success_rate:.2f}", f"{r.mean_time:.4f}", f"{r.std_time:.4f}")
            for r in rows
        ),
    )
