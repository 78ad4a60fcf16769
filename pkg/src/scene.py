"""Analytic obstacle scenes: composite signed distance, gradients and the ε-buffered collision cost."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import DocumentError, as_vector, check_fields, read_document

logger = logging.getLogger(__name__)

# Gradient returned where the distance gradient is undefined (sphere/capsule core points)
_TIE_DIRECTION = np.array([1.0, 0.0, 0.0])


class Primitive:
    """Interface for analytic obstacle primitives."""

    kind = "primitive"

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return exact signed distances (n,) and their gradients (n, 3) at points (n, 3)."""
        raise NotImplementedError


def _radial(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Norms of v and unit directions, using the tie direction where v vanishes."""
    norms = np.linalg.norm(v, axis=1)
    grads = np.tile(_TIE_DIRECTION, (v.shape[0], 1))
    nz = norms > 0
    grads[nz] = v[nz] / norms[nz, None]
    return norms, grads


@dataclass(frozen=True, eq=False)
class Sphere(Primitive):
    center: np.ndarray
    radius: float
    kind = "sphere"

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        norms, grads = _radial(points - self.center)
        return norms - self.radius, grads


@dataclass(frozen=True, eq=False)
class Box(Primitive):
    """Axis-aligned box between two corners."""

    lower: np.ndarray
    upper: np.ndarray
    kind = "box"

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        center = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower)
        rel = points - center
        q = np.abs(rel) - half
        outside = np.maximum(q, 0.0)
        out_norm = np.linalg.norm(outside, axis=1)
        dist = out_norm + np.minimum(q.max(axis=1), 0.0)

        signs = np.where(rel >= 0, 1.0, -1.0)
        grads = np.zeros_like(points)
        out = out_norm > 0
        grads[out] = signs[out] * outside[out] / out_norm[out, None]
        inner = np.flatnonzero(~out)
        face = np.argmax(q[inner], axis=1)
        grads[inner, face] = signs[inner, face]
        return dist, grads


@dataclass(frozen=True, eq=False)
class Capsule(Primitive):
    """Segment p0-p1 swept by a sphere of the given radius."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float
    kind = "capsule"

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        seg = self.p1 - self.p0
        length2 = float(seg @ seg)
        rel = points - self.p0
        h = np.clip(rel @ seg / length2, 0.0, 1.0) if length2 > 0 else np.zeros(points.shape[0])
        norms, grads = _radial(rel - h[:, None] * seg)
        return norms - self.radius, grads


@dataclass(frozen=True, eq=False)
class Scene:
    obstacles: tuple[Primitive, ...] = ()
    name: str = "scene"

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Minimum SDF over primitives (lowest index wins ties) and its gradient, batched."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        if not self.obstacles:
            return np.full(n, np.inf), np.zeros((n, 3))
        dists = np.empty((len(self.obstacles), n))
        grads = np.empty((len(self.obstacles), n, 3))
        for k, obstacle in enumerate(self.obstacles):
            dists[k], grads[k] = obstacle.evaluate(points)
        nearest = np.argmin(dists, axis=0)
        cols = np.arange(n)
        return dists[nearest, cols], grads[nearest, cols]

    def distances(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(points)[0]

    def signed_distance(self, point: np.ndarray, ball_radius: float = 0.0) -> tuple[float, np.ndarray]:
        """Distance from a ball's surface to the nearest obstacle, and the unit gradient ∇d."""
        point = np.asarray(point, dtype=float)
        if not np.all(np.isfinite(point)):
            raise ValueError("query point must be finite")
        d, g = self.evaluate(point[None, :])
        return float(d[0] - ball_radius), g[0]


@dataclass(frozen=True)
class CostParams:
    epsilon: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def collision_cost(d: float, params: CostParams) -> tuple[float, float]:
    """Hinge cost: 0 beyond the buffer (d > ε), ε - d inside it; returns (c, dc/dd)."""
    if d > params.epsilon:
        return 0.0, 0.0
    return params.epsilon - d, -1.0


def _parse_sphere(d: dict, where: str) -> Primitive:
    check_fields(d, ("type", "center", "radius"), where=where)
    radius = float(d["radius"])
    if not radius > 0:
        raise DocumentError(f"{where}: radius must be positive")
    return Sphere(center=as_vector(d["center"], 3, where), radius=radius)


def _parse_box(d: dict, where: str) -> Primitive:
    check_fields(d, ("type", "min", "max"), where=where)
    lower, upper = as_vector(d["min"], 3, where), as_vector(d["max"], 3, where)
    if not np.all(lower < upper):
        raise DocumentError(f"{where}: box min must be below max componentwise")
    return Box(lower=lower, upper=upper)


def _parse_capsule(d: dict, where: str) -> Primitive:
    check_fields(d, ("type", "p0", "p1", "radius"), where=where)
    radius = float(d["radius"])
    if not radius > 0:
        raise DocumentError(f"{where}: radius must be positive")
    return Capsule(p0=as_vector(d["p0"], 3, where), p1=as_vector(d["p1"], 3, where), radius=radius)


# Registry of obstacle parsers keyed by the document "type" field
_PRIMITIVE_PARSERS: dict[str, Callable[[dict, str], Primitive]] = {
    "sphere": _parse_sphere,
    "box": _parse_box,
    "capsule": _parse_capsule,
}


def load_scene(path: Path) -> Scene:
    """Read a scene document with an obstacles list."""
    path = Path(path)
    doc = read_document(path, ("obstacles",), ("name", "notes"))
    obstacles = []
    for i, item in enumerate(doc["obstacles"]):
        where = f"{path}: obstacles[{i}]"
        kind = item.get("type") if isinstance(item, dict) else None
        parser = _PRIMITIVE_PARSERS.get(kind)
        if parser is None:
            raise DocumentError(f"{where}: unknown obstacle type {kind!r}")
        obstacles.append(parser(item, where))
    scene = Scene(obstacles=tuple(obstacles), name=str(doc.get("name", path.stem)))
    logger.debug("Loaded scene %s with %d obstacles", scene.name, len(scene.obstacles))
    return scene
