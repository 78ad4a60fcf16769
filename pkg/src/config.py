"""Defaults, JSON document reading and problem-file configuration."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_DATA_DIR = PROJECT_ROOT / "data"
DEFAULT_ASSETS_DIR = PROJECT_ROOT / "assets"

FORMAT_VERSION = 1

# Optimizer defaults (‖Λ‖∞ and α/β from the tuned grid; step tolerance and cap chosen for desk tasks)
DEFAULT_RHO = 0.1
DEFAULT_LAMBDA = 1e-2
DEFAULT_ALPHA = 0.90
DEFAULT_BETA = 0.90
DEFAULT_STEP_TOL = 1e-3
DEFAULT_MAX_ITER = 100
DEFAULT_EPSILON = 0.05  # meters
DEFAULT_HARMONICS = 6
DEFAULT_SAMPLES = 40
DEFAULT_SEED = 0

# Clearance the optimizer plans against beyond epsilon, and how it widens when a run stalls in collision
DEFAULT_MARGIN = 0.1  # meters
DEFAULT_MARGIN_GROWTH = 0.1  # meters
DEFAULT_MAX_ESCALATIONS = 3
DEFAULT_PATIENCE = 10  # iterations without a 0.1% drop in H
DEFAULT_SPEED_OFFSET = 1.0  # added to the ball speed in the planner's cost weight

# Collision field learning defaults
DEFAULT_FIELD_POINTS = 2000
DEFAULT_FIELD_SIGMA = 0.3  # meters, kernel width of fields trained for planning
DEFAULT_C_BOX = 10.0
DEFAULT_SMO_TOL = 1e-3
DEFAULT_SMO_MAX_PASSES = 20

DEFAULT_BENCH_TIMEOUT = 30.0  # seconds per problem
THREADS_ENV = "HP_THREADS"
DATA_DIR_ENV = "HP_DATA_DIR"

FIELD_SOURCES = ("raw", "svm")


class DocumentError(ValueError):
    """A JSON document is unreadable or does not match its schema."""


def get_data_dir() -> Path:
    """Return the data directory, creating it if needed."""
    path = Path(os.environ.get(DATA_DIR_ENV) or DEFAULT_DATA_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def worker_count() -> int:
    """Number of benchmark workers: HP_THREADS if set (capped at the CPU count), else the CPU count."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return cpus
    try:
        requested = int(raw)
    except ValueError:
        logger.warning("Ignoring invalid %s=%r", THREADS_ENV, raw)
        return cpus
    if requested > cpus:
        logger.warning("%s=%d exceeds the %d available CPUs, using %d", THREADS_ENV, requested, cpus, cpus)
    return min(max(1, requested), cpus)


def read_document(
    path: Path,
    required: Iterable[str],
    optional: Iterable[str] = (),
) -> dict[str, Any]:
    """
    Load a versioned JSON document and check its top-level fields.

    Raises DocumentError for unreadable JSON, a wrong version, missing fields or unknown fields.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DocumentError(f"{path}: cannot read document: {e}") from e
    if not isinstance(doc, dict):
        raise DocumentError(f"{path}: top level must be an object")
    check_fields(doc, (*required, "version"), optional, where=str(path))
    if doc["version"] != FORMAT_VERSION:
        raise DocumentError(f"{path}: unsupported version {doc['version']!r} (expected {FORMAT_VERSION})")
    return doc


def check_fields(doc: dict, required: Iterable[str], optional: Iterable[str] = (), where: str = "document") -> None:
    """Reject missing required fields and any field not listed."""
    if not isinstance(doc, dict):
        raise DocumentError(f"{where}: expected an object")
    required = set(required)
    allowed = required | set(optional)
    missing = sorted(required - doc.keys())
    if missing:
        raise DocumentError(f"{where}: missing field(s) {', '.join(missing)}")
    unknown = sorted(doc.keys() - allowed)
    if unknown:
        raise DocumentError(f"{where}: unknown field(s) {', '.join(unknown)}")


def as_vector(value: Any, length: Optional[int] = None, where: str = "value") -> np.ndarray:
    """Convert a JSON list to a finite float vector."""
    try:
        vec = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise DocumentError(f"{where}: expected a list of numbers") from e
    if vec.ndim != 1 or (length is not None and vec.size != length):
        raise DocumentError(f"{where}: expected a vector of length {length}, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise DocumentError(f"{where}: non-finite entries")
    return vec


@dataclass
class PlanParams:
    """Per-problem optimizer and collision settings."""

    rho: float
    lam: float
    alpha: float
    beta: float
    step_tol: float
    max_iter: int
    epsilon: float
    field: str
    svm_model: Optional[Path]
    seed: int
    field_sigma: float = DEFAULT_FIELD_SIGMA

    @classmethod
    def defaults(cls) -> PlanParams:
        return cls(
            rho=DEFAULT_RHO,
            lam=DEFAULT_LAMBDA,
            alpha=DEFAULT_ALPHA,
            beta=DEFAULT_BETA,
            step_tol=DEFAULT_STEP_TOL,
            max_iter=DEFAULT_MAX_ITER,
            epsilon=DEFAULT_EPSILON,
            field="raw",
            svm_model=None,
            seed=DEFAULT_SEED,
        )


_PARAM_FIELDS = (
    "rho",
    "lambda",
    "alpha",
    "beta",
    "step_tol",
    "max_iter",
    "epsilon",
    "field",
    "svm_model",
    "seed",
    "field_sigma",
)


def _dict_to_params(d: dict[str, Any], base_dir: Path) -> PlanParams:
    check_fields(d, (), _PARAM_FIELDS, where="params")
    model = d.get("svm_model")
    params = PlanParams(
        rho=float(d.get("rho", DEFAULT_RHO)),
        lam=float(d.get("lambda", DEFAULT_LAMBDA)),
        alpha=float(d.get("alpha", DEFAULT_ALPHA)),
        beta=float(d.get("beta", DEFAULT_BETA)),
        step_tol=float(d.get("step_tol", DEFAULT_STEP_TOL)),
        max_iter=int(d.get("max_iter", DEFAULT_MAX_ITER)),
        epsilon=float(d.get("epsilon", DEFAULT_EPSILON)),
        field=str(d.get("field", "raw")),
        svm_model=(base_dir / model) if model else None,
        seed=int(d.get("seed", DEFAULT_SEED)),
        field_sigma=float(d.get("field_sigma", DEFAULT_FIELD_SIGMA)),
    )
    if params.field not in FIELD_SOURCES:
        raise DocumentError(f"params: field must be one of {FIELD_SOURCES}, got {params.field!r}")
    if params.epsilon <= 0:
        raise DocumentError("params: epsilon must be positive")
    if params.field_sigma <= 0:
        raise DocumentError("params: field_sigma must be positive")
    return params


@dataclass
class ProblemFile:
    """A planning problem: robot and scene files, endpoints, discretization and parameters."""

    path: Path
    robot: Path
    scene: Path
    start: np.ndarray
    goal: np.ndarray
    harmonics: int
    samples: int
    params: PlanParams

    @property
    def name(self) -> str:
        return self.path.stem


def load_problem(path: Path) -> ProblemFile:
    """Read a problem file; relative paths resolve against its directory."""
    path = Path(path)
    doc = read_document(path, ("robot", "scene", "start", "goal"), ("N", "T", "params", "name"))
    base = path.parent
    robot_path = base / doc["robot"]
    scene_path = base / doc["scene"]
    for ref in (robot_path, scene_path):
        if not ref.exists():
            raise DocumentError(f"{path}: referenced file {ref} does not exist")
    start = as_vector(doc["start"], where=f"{path}: start")
    goal = as_vector(doc["goal"], length=start.size, where=f"{path}: goal")
    params = _dict_to_params(doc.get("params", {}), base)
    if params.svm_model is not None and not params.svm_model.exists():
        raise DocumentError(f"{path}: referenced file {params.svm_model} does not exist")
    return ProblemFile(
        path=path,
        robot=robot_path,
        scene=scene_path,
        start=start,
        goal=goal,
        harmonics=int(doc.get("N", DEFAULT_HARMONICS)),
        samples=int(doc.get("T", DEFAULT_SAMPLES)),
        params=params,
    )
