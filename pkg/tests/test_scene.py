"""Tests for scene module."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from src.config import DEFAULT_ASSETS_DIR, DocumentError
from src.scene import (
    Box,
    Capsule,
    CostParams,
    Scene,
    Sphere,
    collision_cost,
    load_scene,
)

SCENES = DEFAULT_ASSETS_DIR / "scenes"


def unit_sphere():
    return Sphere(center=np.zeros(3), radius=1.0)


def fd_gradient(primitive, point, h=1e-6):
    grad = np.zeros(3)
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        plus, _ = primitive.evaluate((point + step)[None, :])
        minus, _ = primitive.evaluate((point - step)[None, :])
        grad[k] = (plus[0] - minus[0]) / (2 * h)
    return grad


class TestSphere:
    def test_outside(self):
        d, g = unit_sphere().evaluate(np.array([[2.0, 0.0, 0.0]]))
        assert d[0] == pytest.approx(1.0)
        np.testing.assert_allclose(g[0], [1.0, 0.0, 0.0])

    def test_center_tie_break(self):
        d, g = unit_sphere().evaluate(np.zeros((1, 3)))
        assert d[0] == pytest.approx(-1.0)
        np.testing.assert_allclose(g[0], [1.0, 0.0, 0.0])


class TestBox:
    box = Box(lower=np.array([-1.0, -1.0, -1.0]), upper=np.array([1.0, 1.0, 1.0]))

    def test_outside_face(self):
        d, g = self.box.evaluate(np.array([[3.0, 0.0, 0.0]]))
        assert d[0] == pytest.approx(2.0)
        np.testing.assert_allclose(g[0], [1.0, 0.0, 0.0])

    def test_outside_corner(self):
        d, g = self.box.evaluate(np.array([[2.0, 2.0, 0.0]]))
        assert d[0] == pytest.approx(np.sqrt(2.0))
        np.testing.assert_allclose(g[0], [np.sqrt(0.5), np.sqrt(0.5), 0.0])

    def test_inside_nearest_face(self):
        d, g = self.box.evaluate(np.array([[0.0, -0.8, 0.1]]))
        assert d[0] == pytest.approx(-0.2)
        np.testing.assert_allclose(g[0], [0.0, -1.0, 0.0])


class TestCapsule:
    capsule = Capsule(p0=np.array([0.0, 0.0, -1.0]), p1=np.array([0.0, 0.0, 1.0]), radius=0.5)

    def test_beside_segment(self):
        d, g = self.capsule.evaluate(np.array([[2.0, 0.0, 0.3]]))
        assert d[0] == pytest.approx(1.5)
        np.testing.assert_allclose(g[0], [1.0, 0.0, 0.0])

    def test_beyond_end(self):
        d, _ = self.capsule.evaluate(np.array([[0.0, 0.0, 3.0]]))
        assert d[0] == pytest.approx(1.5)

    def test_degenerate_segment_is_sphere(self):
        capsule = Capsule(p0=np.ones(3), p1=np.ones(3), radius=0.5)
        d, _ = capsule.evaluate(np.array([[1.0, 1.0, 3.0]]))
        assert d[0] == pytest.approx(1.5)


class TestGradients:
    @pytest.mark.parametrize(
        "primitive",
        [
            Sphere(center=np.array([0.2, -0.1, 0.3]), radius=0.4),
            Box(lower=np.array([-0.5, -0.2, 0.0]), upper=np.array([0.5, 0.4, 0.3])),
            Capsule(p0=np.array([-0.5, 0.0, 0.0]), p1=np.array([0.5, 0.2, 0.1]), radius=0.2),
        ],
    )
    def test_unit_norm_and_finite_difference(self, primitive):
        rng = np.random.default_rng(0)
        points = rng.uniform(-2.0, 2.0, size=(200, 3))
        _, grads = primitive.evaluate(points)
        np.testing.assert_allclose(np.linalg.norm(grads, axis=1), 1.0, atol=1e-9)
        checked = 0
        for p, g in zip(points, grads):
            fd = fd_gradient(primitive, p)
            # Skip points on ridges where the distance is not differentiable
            if abs(np.linalg.norm(fd) - 1.0) > 1e-4:
                continue
            np.testing.assert_allclose(g, fd, atol=1e-5)
            checked += 1
        assert checked > 150


class TestScene:
    def test_empty_scene(self):
        d, g = Scene().evaluate(np.zeros((2, 3)))
        assert np.all(np.isinf(d))
        np.testing.assert_array_equal(g, 0.0)

    def test_minimum_over_obstacles(self):
        scene = Scene(obstacles=(unit_sphere(), Sphere(center=np.array([5.0, 0.0, 0.0]), radius=1.0)))
        d = scene.distances(np.array([[4.5, 0.0, 0.0], [-2.0, 0.0, 0.0]]))
        np.testing.assert_allclose(d, [-0.5, 1.0])

    def test_tie_goes_to_lowest_index(self):
        left = Sphere(center=np.array([-1.0, 0.0, 0.0]), radius=0.5)
        right = Sphere(center=np.array([1.0, 0.0, 0.0]), radius=0.5)
        _, g = Scene(obstacles=(left, right)).signed_distance(np.zeros(3))
        np.testing.assert_allclose(g, [1.0, 0.0, 0.0])

    def test_signed_distance_subtracts_radius(self):
        d, _ = Scene(obstacles=(unit_sphere(),)).signed_distance(np.array([3.0, 0.0, 0.0]), ball_radius=0.5)
        assert d == pytest.approx(1.5)

    def test_signed_distance_rejects_nan(self):
        with pytest.raises(ValueError):
            Scene(obstacles=(unit_sphere(),)).signed_distance(np.array([np.nan, 0.0, 0.0]))


class TestCollisionCost:
    params = CostParams(epsilon=0.05)

    def test_outside_buffer(self):
        assert collision_cost(0.2, self.params) == (0.0, 0.0)

    def test_inside_buffer(self):
        c, dc = collision_cost(0.01, self.params)
        assert c == pytest.approx(0.04)
        assert dc == -1.0

    def test_penetration(self):
        assert collision_cost(-0.1, self.params)[0] == pytest.approx(0.15)

    def test_non_increasing_in_distance(self):
        costs = [collision_cost(d, self.params)[0] for d in np.linspace(-1, 1, 101)]
        assert all(a >= b for a, b in zip(costs, costs[1:]))

    def test_epsilon_positive(self):
        with pytest.raises(ValueError):
            CostParams(epsilon=0.0)


class TestLoadScene:
    def _write(self, tmp, obstacles):
        path = Path(tmp) / "scene.json"
        path.write_text(json.dumps({"version": 1, "obstacles": obstacles}))
        return path

    def test_bundled_scenes(self):
        assert len(load_scene(SCENES / "empty.json").obstacles) == 0
        shelf = load_scene(SCENES / "shelf.json")
        assert shelf.name == "shelf"
        assert all(isinstance(o, Box) for o in shelf.obstacles)

    def test_unknown_type(self):
        with tempfile.TemporaryDirectory() as tmp:
            with pytest.raises(DocumentError):
                load_scene(self._write(tmp, [{"type": "torus"}]))

    def test_bad_radius(self):
        with tempfile.TemporaryDirectory() as tmp:
            with pytest.raises(DocumentError):
                load_scene(self._write(tmp, [{"type": "sphere", "center": [0, 0, 0], "radius": -1}]))

    def test_inverted_box(self):
        with tempfile.TemporaryDirectory() as tmp:
            with pytest.raises(DocumentError):
                load_scene(self._write(tmp, [{"type": "box", "min": [1, 0, 0], "max": [0, 1, 1]}]))

