"""Tests for svm_field module."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from src.config import DEFAULT_ASSETS_DIR
from src.robot import load_robot
from src.scene import load_scene
from src.svm_field import (
    COLLIDED,
    FALLBACK_SIGMA,
    SAFE,
    CollisionFieldModel,
    DatasetParams,
    LabeledDataset,
    ModelFileError,
    SmoParams,
    configurations_for_points,
    convexity_fraction,
    decision_values,
    default_sigma,
    field_gradient,
    field_value,
    field_values,
    generate_dataset,
    kkt_violations,
    label_points,
    load_model,
    save_model,
    train_collision_field,
    train_smo,
    training_report,
)

ASSETS = DEFAULT_ASSETS_DIR


@pytest.fixture
def planar2():
    return load_robot(ASSETS / "robots" / "planar2.json")


@pytest.fixture
def disc():
    return load_scene(ASSETS / "scenes" / "disc.json")


def blob_dataset(n=300, seed=0):
    """Collided points inside a ball of radius 0.5, safe points elsewhere in the unit cube."""
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(n, 3))
    labels = np.where(np.linalg.norm(points, axis=1) < 0.5, COLLIDED, SAFE)
    return LabeledDataset(points=points, labels=labels)


def gaussian_blobs(n, seed):
    """Two well separated clouds: collided around -x, safe around +x."""
    rng = np.random.default_rng(seed)
    labels = np.where(np.arange(n) % 2 == 0, COLLIDED, SAFE)
    centers = np.outer(-labels, [1.0, 0.0, 0.0])
    return LabeledDataset(points=centers + rng.normal(scale=0.3, size=(n, 3)), labels=labels)


def dual_objective(alphas, labels, K):
    weights = alphas * labels
    return float(np.sum(alphas) - 0.5 * weights @ K @ weights)


def two_point_model(bias=0.0):
    return CollisionFieldModel(
        support_vectors=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        alphas=np.array([1.0, 1.0]),
        labels=np.array([COLLIDED, SAFE]),
        bias=bias,
        sigma=0.5,
        box=10.0,
    )


class TestLabeling:
    def test_radius_folded_into_distance(self, disc):
        centers = np.array([[1.0, 0.0, 0.0], [1.2, 0.0, 0.0]])
        d, y = label_points(disc, centers, np.array([0.1, 0.1]), 0.05)
        np.testing.assert_allclose(d, [0.15, -0.05])
        assert y.tolist() == [SAFE, COLLIDED]

    def test_buffer_boundary_is_collided(self, disc):
        _, y = label_points(disc, np.array([[1.0, 0.0, 0.0]]), np.array([0.2]), 0.05)
        assert y.tolist() == [COLLIDED]


class TestDataset:
    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            LabeledDataset(points=np.zeros((2, 3)), labels=np.array([0, 1]))

    def test_item_access(self):
        data = blob_dataset(n=10)
        assert len(data) == 10
        item = data[3]
        np.testing.assert_array_equal(item.x, data.points[3])
        assert item.y == data.labels[3]

    def test_one_point_per_ball(self, planar2, disc):
        data = generate_dataset(planar2, disc, DatasetParams(n_samples=50, epsilon=0.05, draw_budget=0))
        assert len(data) == 50 * len(planar2.balls)

    def test_deterministic_for_seed(self, planar2, disc):
        params = DatasetParams(n_samples=40, epsilon=0.05, seed=3)
        a = generate_dataset(planar2, disc, params)
        b = generate_dataset(planar2, disc, params)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_empty_scene_is_all_safe(self, planar2):
        empty = load_scene(ASSETS / "scenes" / "empty.json")
        data = generate_dataset(planar2, empty, DatasetParams(n_samples=20, epsilon=0.05))
        assert np.all(data.labels == SAFE)
        assert len(data) == 20 * len(planar2.balls)

    def test_rebalancing_raises_collided_fraction(self, planar2, disc):
        plain = generate_dataset(planar2, disc, DatasetParams(n_samples=100, epsilon=0.05, draw_budget=0))
        rebalanced = generate_dataset(planar2, disc, DatasetParams(n_samples=100, epsilon=0.05))
        assert plain.collided_fraction < 0.1
        assert rebalanced.collided_fraction > plain.collided_fraction

    def test_configurations_for_points(self, planar2):
        assert configurations_for_points(20000, planar2) == 3334
        assert configurations_for_points(1, planar2) == 1


class TestSigma:
    def test_fallback_without_collided_pairs(self):
        data = LabeledDataset(points=np.zeros((3, 3)), labels=np.array([SAFE, SAFE, COLLIDED]))
        assert default_sigma(data) == FALLBACK_SIGMA

    def test_twice_mean_nearest_neighbour(self):
        points = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [5.0, 0.0, 0.0]])
        data = LabeledDataset(points=points, labels=np.array([COLLIDED, COLLIDED, SAFE]))
        assert default_sigma(data) == pytest.approx(0.2)


class TestTraining:
    def test_single_class_rejected(self):
        data = LabeledDataset(points=np.zeros((4, 3)), labels=np.full(4, SAFE))
        with pytest.raises(ValueError):
            train_smo(data, SmoParams(sigma=0.3))

    def test_converged_solution_satisfies_kkt(self):
        data = blob_dataset()
        hyper = SmoParams(sigma=0.3, c_box=10.0, tol=1e-3)
        result = train_smo(data, hyper)
        assert result.converged
        decisions = decision_values(result.model, data.points)
        assert kkt_violations(result.alphas, data.labels, decisions, hyper.c_box, hyper.tol + 1e-5) == 0

    def test_multipliers_in_box(self):
        data = blob_dataset()
        result = train_smo(data, SmoParams(sigma=0.3, c_box=1.0))
        assert np.all(result.alphas >= 0.0)
        assert np.all(result.alphas <= 1.0 + 1e-12)
        np.testing.assert_allclose(np.sum(result.alphas * data.labels), 0.0, atol=1e-9)

    def test_model_keeps_only_support_vectors(self):
        data = blob_dataset()
        result = train_smo(data, SmoParams(sigma=0.3))
        assert result.model.n_support == int(np.sum(result.alphas > 1e-8))
        assert result.model.n_support < len(data)

    def test_separates_training_points(self):
        data = blob_dataset()
        report = training_report(train_smo(data, SmoParams(sigma=0.3)).model, data)
        assert report.accuracy > 0.95

    def test_seed_gives_identical_model(self):
        data = blob_dataset()
        a = train_smo(data, SmoParams(sigma=0.3, seed=1)).model
        b = train_smo(data, SmoParams(sigma=0.3, seed=1)).model
        np.testing.assert_array_equal(a.support_vectors, b.support_vectors)
        assert a.bias == b.bias

    def test_two_points_split_halfway(self):
        data = LabeledDataset(points=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), labels=np.array([SAFE, COLLIDED]))
        model = train_smo(data, SmoParams(sigma=1.0, c_box=10.0)).model
        d = decision_values(model, np.array([[0.25, 0.0, 0.0], [0.5, 0.0, 0.0], [0.75, 0.0, 0.0]]))
        assert d[0] < 0.0 < d[2]
        assert d[1] == pytest.approx(0.0, abs=1e-6)

    def test_dual_objective_matches_dense_solve(self):
        rng = np.random.default_rng(4)
        labels = np.where(np.arange(30) < 15, COLLIDED, SAFE)
        points = np.outer(labels == SAFE, [0.5, 0.0, 0.0]) + rng.normal(scale=0.25, size=(30, 3))
        data = LabeledDataset(points=points, labels=labels)
        sigma, c_box = 0.4, 1.0
        result = train_smo(data, SmoParams(sigma=sigma, c_box=c_box, tol=1e-6, max_passes=200))

        K = np.exp(-cdist(points, points, "sqeuclidean") / (2 * sigma**2))
        Q = np.outer(labels, labels) * K
        dense = minimize(
            lambda a: -(np.sum(a) - 0.5 * a @ Q @ a),
            np.zeros(30),
            jac=lambda a: Q @ a - 1.0,
            bounds=[(0.0, c_box)] * 30,
            constraints=[{"type": "eq", "fun": lambda a: a @ labels, "jac": lambda a: labels.astype(float)}],
            method="SLSQP",
            options={"ftol": 1e-12, "maxiter": 1000},
        )
        assert dense.success
        assert dual_objective(result.alphas, labels, K) == pytest.approx(-dense.fun, abs=1e-3)

    def test_blobs_generalize(self):
        model = train_smo(gaussian_blobs(200, seed=0), SmoParams(sigma=0.5)).model
        assert training_report(model, gaussian_blobs(200, seed=1)).accuracy >= 0.99

    @pytest.mark.slow
    def test_field_recall_on_held_out_shelf_points(self):
        chain6 = load_robot(ASSETS / "robots" / "chain6.json")
        shelf = load_scene(ASSETS / "scenes" / "shelf.json")
        result, _ = train_collision_field(chain6, shelf, 0.05, 20000, seed=0)
        held_out = generate_dataset(
            chain6, shelf, DatasetParams(n_samples=configurations_for_points(5000, chain6), epsilon=0.05, seed=1)
        )
        assert training_report(result.model, held_out).collided_recall >= 0.95


class TestKktViolations:
    def test_counts_each_case(self):
        alphas = np.array([0.0, 1.0, 0.5, 0.5])
        labels = np.array([1, 1, -1, 1])
        decisions = np.array([0.2, 1.5, -1.0, 2.0])
        # zero multiplier inside the margin, box multiplier outside it, free off the margin
        assert kkt_violations(alphas, labels, decisions, c_box=1.0, tol=1e-3) == 3


class TestField:
    def test_decision_is_kernel_sum(self):
        model = two_point_model(bias=0.25)
        x = np.array([0.3, 0.1, -0.2])
        k = np.exp(-np.sum((x - model.support_vectors) ** 2, axis=1) / (2 * 0.25))
        assert decision_values(model, x[None, :])[0] == pytest.approx(k[0] - k[1] + 0.25)

    def test_clamped_far_from_data(self):
        model = two_point_model(bias=-2.0)
        far = np.array([5.0, 5.0, 5.0])
        assert field_value(model, far) == 0.0
        np.testing.assert_array_equal(field_gradient(model, far), 0.0)

    def test_gradient_matches_finite_difference(self):
        model = two_point_model()
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(20):
            x = rng.uniform(-0.5, 1.5, size=3)
            if field_value(model, x) < 1e-3:
                continue
            fd = np.array(
                [(field_value(model, x + h * e) - field_value(model, x - h * e)) / (2 * h) for e in np.eye(3)]
            )
            np.testing.assert_allclose(field_gradient(model, x), fd, atol=1e-7)

    def test_trained_gradient_matches_finite_difference(self):
        model = train_smo(blob_dataset(), SmoParams(sigma=0.3)).model
        rng = np.random.default_rng(5)
        candidates = rng.uniform(-0.7, 0.7, size=(5000, 3))
        inside = candidates[field_values(model, candidates) > 1e-3][:500]
        assert len(inside) == 500
        h = 1e-6
        for x in inside:
            fd = np.array(
                [(field_value(model, x + h * e) - field_value(model, x - h * e)) / (2 * h) for e in np.eye(3)]
            )
            np.testing.assert_allclose(field_gradient(model, x), fd, atol=1e-5)

    def test_convexity_fraction_is_a_fraction(self):
        frac = convexity_fraction(two_point_model(), np.full(3, -1.0), np.full(3, 2.0), n_segments=200)
        assert 0.0 <= frac <= 1.0

    def test_model_validation(self):
        with pytest.raises(ValueError):
            CollisionFieldModel(
                support_vectors=np.zeros((1, 3)), alphas=np.ones(1), labels=np.ones(1), bias=0.0, sigma=0.0, box=1.0
            )


class TestModelFile:
    def test_save_and_load(self):
        model = two_point_model(bias=0.123456789)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "models" / "field.json"
            save_model(model, path)
            loaded = load_model(path)
        np.testing.assert_array_equal(loaded.support_vectors, model.support_vectors)
        np.testing.assert_array_equal(loaded.weights, model.weights)
        assert loaded.bias == model.bias
        assert loaded.sigma == model.sigma

    def test_saved_multipliers_stay_balanced(self):
        model = train_smo(blob_dataset(), SmoParams(sigma=0.3)).model
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "field.json"
            save_model(model, path)
            loaded = load_model(path)
        assert np.sum(loaded.alphas * loaded.labels) == pytest.approx(0.0, abs=1e-6)

    def test_missing_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            with pytest.raises(ModelFileError):
                load_model(Path(tmp) / "nope.json")

    def test_truncated_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "field.json"
            save_model(two_point_model(), path)
            path.write_text(path.read_text()[:40])
            with pytest.raises(ModelFileError):
                load_model(path)

    def test_wrong_version(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "field.json"
            save_model(two_point_model(), path)
            doc = json.loads(path.read_text())
            doc["version"] = 99
            path.write_text(json.dumps(doc))
            with pytest.raises(ModelFileError):
                load_model(path)
