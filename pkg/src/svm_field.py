"""Learned collision field: SDF-labeled workspace samples, Gaussian-kernel SMO training and the clamped field."""

from __future__ import annotations

import json
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .config import FORMAT_VERSION, DocumentError, check_fields
from .robot import RobotModel, ball_centers
from .scene import Scene

logger = logging.getLogger(__name__)

SAFE = -1
COLLIDED = 1

MIN_COLLIDED_FRACTION = 0.10
SUPPORT_THRESHOLD = 1e-8  # multipliers at or below are dropped from the stored model
FALLBACK_SIGMA = 0.1  # meters
_CACHE_BYTES = 256 * 1024 * 1024


class ModelFileError(OSError):
    """A collision field model file is missing, truncated or incompatible."""


@dataclass(frozen=True)
class LabeledPoint:
    x: np.ndarray
    y: int


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Workspace points (n, 3) with labels in {-1 safe, +1 collided}."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.labels) != len(self.points):
            raise ValueError("dataset needs (n, 3) points and n labels")
        if not np.all(np.isin(self.labels, (SAFE, COLLIDED))):
            raise ValueError("labels must be -1 or +1")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> LabeledPoint:
        return LabeledPoint(x=self.points[i], y=int(self.labels[i]))

    @property
    def collided_fraction(self) -> float:
        return float(np.mean(self.labels == COLLIDED)) if len(self) else 0.0


@dataclass(frozen=True)
class DatasetParams:
    n_samples: int  # configurations drawn; each yields one point per ball
    epsilon: float
    seed: int = 0
    min_collided_fraction: float = MIN_COLLIDED_FRACTION
    near_band: float = 0.1  # meters beyond the buffer that count as near-obstacle
    draw_budget: Optional[int] = None  # extra configurations for rebalancing, default 20 x n_samples


def label_points(scene: Scene, centers: np.ndarray, radii: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Signed distances of balls (radius folded in) and their labels."""
    d = scene.distances(centers) - radii
    return d, np.where(d <= epsilon, COLLIDED, SAFE)


def generate_dataset(robot: RobotModel, scene: Scene, params: DatasetParams) -> LabeledDataset:
    """
    Label every ball center of uniformly drawn configurations (+1 when d <= ε).

    When fewer than min_collided_fraction of the points are collided, extra configurations are
    drawn and only their near-obstacle points kept, until the fraction is reached or the budget
    runs out. Deterministic for a given seed.
    """
    if params.n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(params.seed)
    n_balls = len(robot.balls)

    def draw(count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        thetas = rng.uniform(robot.lower, robot.upper, size=(count, robot.dof))
        centers = ball_centers(robot, thetas).reshape(-1, 3)
        d, y = label_points(scene, centers, np.tile(robot.radii, count), params.epsilon)
        return centers, d, y

    points, _, labels = draw(params.n_samples)
    budget = params.draw_budget if params.draw_budget is not None else 20 * params.n_samples
    drawn = 0
    extra_points, extra_labels = [], []
    n_collided, n_total = int(np.sum(labels == COLLIDED)), len(labels)
    while scene.obstacles and n_collided < params.min_collided_fraction * n_total and drawn < budget:
        batch = min(params.n_samples, budget - drawn)
        centers, d, y = draw(batch)
        drawn += batch
        near = d <= params.epsilon + params.near_band
        extra_points.append(centers[near])
        extra_labels.append(y[near])
        n_collided += int(np.sum(y[near] == COLLIDED))
        n_total += int(np.sum(near))
        if n_total >= 2 * len(labels):
            break
    if extra_points:
        logger.info("Rebalanced dataset with %d near-obstacle points from %d extra draws", n_total - len(labels), drawn)
        points = np.vstack([points, *extra_points])
        labels = np.concatenate([labels, *extra_labels])
    dataset = LabeledDataset(points=points, labels=labels.astype(int))
    logger.info(
        "Dataset: %d points from %d configurations x %d balls, collided fraction %.3f",
        len(dataset),
        params.n_samples,
        n_balls,
        dataset.collided_fraction,
    )
    return dataset


def default_sigma(dataset: LabeledDataset) -> float:
    """Twice the mean nearest-neighbour distance among unique collided points."""
    collided = np.unique(dataset.points[dataset.labels == COLLIDED], axis=0)
    if len(collided) < 2:
        return FALLBACK_SIGMA
    dist, _ = cKDTree(collided).query(collided, k=2)
    mean_nn = float(np.mean(dist[:, 1]))
    return 2.0 * mean_nn if mean_nn > 0 else FALLBACK_SIGMA


@dataclass(frozen=True, eq=False)
class CollisionFieldModel:
    support_vectors: np.ndarray  # (n_sv, 3)
    alphas: np.ndarray  # (n_sv,)
    labels: np.ndarray  # (n_sv,)
    bias: float
    sigma: float
    box: float
    converged: bool = True

    def __post_init__(self) -> None:
        n = len(self.alphas)
        if n < 1:
            raise ValueError("model needs at least one support vector")
        if self.support_vectors.shape != (n, 3) or len(self.labels) != n:
            raise ValueError("support vectors, multipliers and labels disagree in length")
        if not self.sigma > 0:
            raise ValueError("kernel width must be positive")

    @property
    def n_support(self) -> int:
        return len(self.alphas)

    @property
    def weights(self) -> np.ndarray:
        return self.alphas * self.labels


@dataclass
class SmoParams:
    sigma: Optional[float] = None  # None selects default_sigma
    c_box: float = 10.0
    tol: float = 1e-3
    max_passes: int = 20  # iteration cap is max_passes x dataset size
    seed: int = 0


@dataclass
class TrainingResult:
    model: CollisionFieldModel
    alphas: np.ndarray  # full multiplier vector, dataset order
    converged: bool
    iterations: int
    wall_time: float


class _KernelRows:
    """Gaussian kernel rows with a bounded LRU cache."""

    def __init__(self, points: np.ndarray, sigma: float):
        self.points = points
        self.sq_norms = np.einsum("ij,ij->i", points, points)
        self.scale = -0.5 / sigma**2
        self.capacity = max(4, _CACHE_BYTES // (8 * len(points)))
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        cached = self._cache.get(i)
        if cached is not None:
            self._cache.move_to_end(i)
            return cached
        sq = self.sq_norms + self.sq_norms[i] - 2.0 * (self.points @ self.points[i])
        row = np.exp(self.scale * np.maximum(sq, 0.0))
        self._cache[i] = row
        if len(self._cache) > self.capacity:
            self._cache.popitem(last=False)
        return row


def train_smo(dataset: LabeledDataset, hyper: SmoParams) -> TrainingResult:
    """
    Soft-margin Gaussian-kernel SVM by SMO on the maximal violating pair.

    Works on signed multipliers β = α·y with bounds A = min(0, yC), B = max(0, yC) and gradient
    g = y - Kβ; stops when max_{β<B} g - min_{β>A} g <= tol, which bounds every KKT residual by tol.
    """
    labels = np.asarray(dataset.labels, dtype=float)
    if len(np.unique(labels)) < 2:
        raise ValueError("training data must contain both safe and collided points")
    sigma = hyper.sigma if hyper.sigma is not None else default_sigma(dataset)
    started = time.perf_counter()

    order = np.random.default_rng(hyper.seed).permutation(len(dataset))
    X = dataset.points[order]
    y = labels[order]
    n = len(y)
    kernel = _KernelRows(X, sigma)
    lower = np.minimum(0.0, y * hyper.c_box)
    upper = np.maximum(0.0, y * hyper.c_box)
    beta = np.zeros(n)
    grad = y.copy()

    converged = False
    max_iter = hyper.max_passes * n
    it = 0
    gi = gj = 0.0
    for it in range(1, max_iter + 1):
        up = beta < upper - 1e-12
        low = beta > lower + 1e-12
        i = int(np.argmax(np.where(up, grad, -np.inf)))
        j = int(np.argmin(np.where(low, grad, np.inf)))
        gi, gj = grad[i], grad[j]
        if gi - gj <= hyper.tol:
            converged = True
            break
        ki, kj = kernel.row(i), kernel.row(j)
        curvature = ki[i] + kj[j] - 2.0 * ki[j]
        step = min(upper[i] - beta[i], beta[j] - lower[j])
        if curvature > 1e-12:
            step = min(step, (gi - gj) / curvature)
        beta[i] += step
        beta[j] -= step
        grad -= step * (ki - kj)
        if it % 5000 == 0:
            logger.debug("SMO iteration %d: gap %.3g", it, gi - gj)
    if not converged:
        logger.warning("SMO stopped after %d iterations with gap %.3g > tol %.3g", it, gi - gj, hyper.tol)

    alpha = np.abs(beta)
    free = (alpha > SUPPORT_THRESHOLD) & (alpha < hyper.c_box - SUPPORT_THRESHOLD)
    bias = float(np.mean(grad[free])) if np.any(free) else 0.5 * (gi + gj)

    keep = alpha > SUPPORT_THRESHOLD
    model = CollisionFieldModel(
        support_vectors=X[keep].copy(),
        alphas=alpha[keep].copy(),
        labels=y[keep].astype(int),
        bias=bias,
        sigma=float(sigma),
        box=float(hyper.c_box),
        converged=converged,
    )
    alphas = np.empty(n)
    alphas[order] = alpha
    wall = time.perf_counter() - started
    logger.info("SMO: %d support vectors of %d points, %d iterations, %.2fs", model.n_support, n, it, wall)
    return TrainingResult(model=model, alphas=alphas, converged=converged, iterations=it, wall_time=wall)


def kernel_matrix(model: CollisionFieldModel, X: np.ndarray) -> np.ndarray:
    sq = cdist(np.atleast_2d(X), model.support_vectors, "sqeuclidean")
    return np.exp(-sq / (2.0 * model.sigma**2))


def decision_values(model: CollisionFieldModel, X: np.ndarray) -> np.ndarray:
    """Σ α_n y_n k(x, x_n) + b for each row of X."""
    return kernel_matrix(model, X) @ model.weights + model.bias


def field_values(model: CollisionFieldModel, X: np.ndarray) -> np.ndarray:
    return np.maximum(decision_values(model, X) + 1.0, 0.0)


def field_value(model: CollisionFieldModel, x: np.ndarray) -> float:
    """ĉ(x) = max(decision(x) + 1, 0); the safe-side margin is the zero level set."""
    return float(field_values(model, np.asarray(x, dtype=float)[None, :])[0])


def decision_gradients(model: CollisionFieldModel, X: np.ndarray, k: Optional[np.ndarray] = None) -> np.ndarray:
    """Σ -(α_n y_n / σ²) k(x, x_n)(x - x_n) for each row of X, without the clamp."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = kernel_matrix(model, X) if k is None else k
    coeff = -(k * model.weights) / model.sigma**2
    return coeff.sum(axis=1)[:, None] * X - coeff @ model.support_vectors


def field_gradient(model: CollisionFieldModel, x: np.ndarray) -> np.ndarray:
    """∇ĉ where ĉ > 0, zero on the clamp."""
    x = np.asarray(x, dtype=float)
    k = kernel_matrix(model, x[None, :])
    if float(k[0] @ model.weights) + model.bias + 1.0 <= 0.0:
        return np.zeros(3)
    return decision_gradients(model, x[None, :], k)[0]


def boundary_slope(model: CollisionFieldModel) -> float:
    """Median decision-gradient norm at the support vectors, i.e. field units per meter near the boundary."""
    norms = np.linalg.norm(decision_gradients(model, model.support_vectors), axis=1)
    return float(np.median(norms))


@dataclass
class TrainingReport:
    n_support: int
    accuracy: float
    collided_recall: float


def training_report(model: CollisionFieldModel, dataset: LabeledDataset) -> TrainingReport:
    predicted = np.where(decision_values(model, dataset.points) >= 0.0, COLLIDED, SAFE)
    collided = dataset.labels == COLLIDED
    recall = float(np.mean(predicted[collided] == COLLIDED)) if np.any(collided) else 1.0
    return TrainingReport(
        n_support=model.n_support,
        accuracy=float(np.mean(predicted == dataset.labels)),
        collided_recall=recall,
    )


def kkt_violations(
    alphas: np.ndarray,
    labels: np.ndarray,
    decisions: np.ndarray,
    c_box: float,
    tol: float,
) -> int:
    """Count points whose multiplier and margin y·f(x) break the soft-margin KKT conditions."""
    margin = labels * decisions
    at_zero = alphas <= SUPPORT_THRESHOLD
    at_box = alphas >= c_box - SUPPORT_THRESHOLD
    free = ~at_zero & ~at_box
    bad = (at_zero & (margin < 1.0 - tol)) | (at_box & (margin > 1.0 + tol)) | (free & (np.abs(margin - 1.0) > tol))
    return int(np.sum(bad))


def convexity_fraction(
    model: CollisionFieldModel,
    lower: np.ndarray,
    upper: np.ndarray,
    n_segments: int = 1000,
    seed: int = 0,
) -> float:
    """Fraction of random segments whose midpoint value is below the chord (midpoint convexity)."""
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(lower, upper, size=(n_segments, 3))
    x2 = rng.uniform(lower, upper, size=(n_segments, 3))
    mid = field_values(model, 0.5 * (x1 + x2))
    chord = 0.5 * (field_values(model, x1) + field_values(model, x2))
    return float(np.mean(mid <= chord + 1e-12))


def save_model(model: CollisionFieldModel, path: Path) -> None:
    """Write the model as a versioned JSON document (floats round-trip exactly)."""
    doc = {
        "version": FORMAT_VERSION,
        "sigma": float(model.sigma),
        "bias": float(model.bias),
        "box": float(model.box),
        "converged": bool(model.converged),
        "svs": [
            {"x": [float(v) for v in x], "alpha": float(a), "y": int(y)}
            for x, a, y in zip(model.support_vectors, model.alphas, model.labels)
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path: Path) -> CollisionFieldModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        check_fields(doc, ("version", "sigma", "bias", "svs"), ("box", "converged"), where=str(path))
        if doc["version"] != FORMAT_VERSION:
            raise DocumentError(f"{path}: unsupported model version {doc['version']!r}")
        for i, sv in enumerate(doc["svs"]):
            check_fields(sv, ("x", "alpha", "y"), where=f"{path}: svs[{i}]")
        return CollisionFieldModel(
            support_vectors=np.array([sv["x"] for sv in doc["svs"]], dtype=float).reshape(-1, 3),
            alphas=np.array([sv["alpha"] for sv in doc["svs"]], dtype=float),
            labels=np.array([sv["y"] for sv in doc["svs"]], dtype=int),
            bias=float(doc["bias"]),
            sigma=float(doc["sigma"]),
            box=float(doc.get("box", np.inf)),
            converged=bool(doc.get("converged", True)),
        )
    except (OSError, json.JSONDecodeError, ValueError, TypeError, KeyError) as e:
        raise ModelFileError(f"cannot load collision field model {path}: {e}") from e


def configurations_for_points(n_points: int, robot: RobotModel) -> int:
    """Configurations needed for about n_points labeled ball centers."""
    return max(1, -(-n_points // len(robot.balls)))


def train_collision_field(
    robot: RobotModel,
    scene: Scene,
    epsilon: float,
    n_points: int,
    seed: int = 0,
    hyper: Optional[SmoParams] = None,
) -> tuple[TrainingResult, LabeledDataset]:
    """Generate a labeled dataset for the robot in the scene and fit the field to it."""
    hyper = hyper or SmoParams(seed=seed)
    dataset = generate_dataset(
        robot,
        scene,
        DatasetParams(n_samples=configurations_for_points(n_points, robot), epsilon=epsilon, seed=seed),
    )
    return train_smo(dataset, hyper), dataset
