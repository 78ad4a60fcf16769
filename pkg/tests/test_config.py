"""Tests for config module."""

import json
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from src.config import (
    DATA_DIR_ENV,
    DEFAULT_ASSETS_DIR,
    DEFAULT_HARMONICS,
    DEFAULT_LAMBDA,
    DEFAULT_RHO,
    THREADS_ENV,
    DocumentError,
    as_vector,
    get_data_dir,
    load_problem,
    read_document,
    worker_count,
)

ROBOT = DEFAULT_ASSETS_DIR / "robots" / "planar2.json"
SCENE = DEFAULT_ASSETS_DIR / "scenes" / "empty.json"


@pytest.fixture
def temp_dir():
    """Scratch directory for documents."""
    with tempfile.TemporaryDirectory() as tmp:
        yield Path(tmp)


def write(path, doc):
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return path


def problem_doc(**extra):
    doc = {"version": 1, "robot": str(ROBOT), "scene": str(SCENE), "start": [0.1, 0.2], "goal": [0.3, 0.4]}
    doc.update(extra)
    return doc


def test_read_document_fields(temp_dir):
    """Required and optional fields pass."""
    path = write(temp_dir / "doc.json", {"version": 1, "a": 1, "b": 2})
    assert read_document(path, ("a",), ("b",))["b"] == 2


def test_read_document_rejects_unknown_field(temp_dir):
    """Unknown top-level fields are errors."""
    path = write(temp_dir / "doc.json", {"version": 1, "a": 1, "extra": 0})
    with pytest.raises(DocumentError, match="extra"):
        read_document(path, ("a",))


def test_read_document_rejects_missing_field(temp_dir):
    """Missing required fields are errors."""
    path = write(temp_dir / "doc.json", {"version": 1})
    with pytest.raises(DocumentError, match="a"):
        read_document(path, ("a",))


def test_read_document_rejects_bad_json(temp_dir):
    """Unparseable files are errors."""
    path = write(temp_dir / "doc.json", "{not json")
    with pytest.raises(DocumentError):
        read_document(path, ())


def test_read_document_rejects_version(temp_dir):
    """Only version 1 is understood."""
    path = write(temp_dir / "doc.json", {"version": 2})
    with pytest.raises(DocumentError, match="version"):
        read_document(path, ())


def test_as_vector_checks_length_and_values():
    """Vectors must be finite and of the expected length."""
    assert as_vector([1, 2], 2).tolist() == [1.0, 2.0]
    with pytest.raises(DocumentError):
        as_vector([1, 2], 3)
    with pytest.raises(DocumentError):
        as_vector([1, float("nan")])
    with pytest.raises(DocumentError):
        as_vector("abc")


def test_load_problem_defaults(temp_dir):
    """Omitted discretization and parameters take their defaults."""
    problem = load_problem(write(temp_dir / "p.json", problem_doc()))
    assert problem.name == "p"
    assert problem.harmonics == DEFAULT_HARMONICS
    assert problem.params.rho == DEFAULT_RHO
    assert problem.params.lam == DEFAULT_LAMBDA
    assert problem.params.field == "raw"
    assert problem.params.svm_model is None


def test_load_problem_params(temp_dir):
    """The "lambda" key maps onto lam; model paths resolve against the problem file."""
    (temp_dir / "field.json").write_text("{}")
    doc = problem_doc(N=4, T=20, params={"lambda": 0.5, "field": "svm", "svm_model": "field.json"})
    problem = load_problem(write(temp_dir / "p.json", doc))
    assert problem.harmonics == 4
    assert problem.samples == 20
    assert problem.params.lam == 0.5
    assert problem.params.svm_model == temp_dir / "field.json"


def test_load_problem_relative_paths():
    """Bundled problems refer to robots and scenes by relative path."""
    problem = load_problem(DEFAULT_ASSETS_DIR / "problems" / "planar2_disc.json")
    assert problem.robot.exists()
    assert problem.scene.name == "disc.json"


def test_load_problem_missing_reference(temp_dir):
    """Referenced files must exist."""
    with pytest.raises(DocumentError, match="does not exist"):
        load_problem(write(temp_dir / "p.json", problem_doc(scene="nowhere.json")))
    with pytest.raises(DocumentError, match="does not exist"):
        load_problem(write(temp_dir / "q.json", problem_doc(params={"svm_model": "missing.json"})))


def test_load_problem_rejects_bad_params(temp_dir):
    """Unknown parameter keys and field sources are errors."""
    with pytest.raises(DocumentError):
        load_problem(write(temp_dir / "p.json", problem_doc(params={"gamma": 1})))
    with pytest.raises(DocumentError):
        load_problem(write(temp_dir / "q.json", problem_doc(params={"field": "mesh"})))
    with pytest.raises(DocumentError):
        load_problem(write(temp_dir / "r.json", problem_doc(params={"epsilon": 0})))


def test_load_problem_goal_length(temp_dir):
    """Start and goal must have the same length."""
    with pytest.raises(DocumentError):
        load_problem(write(temp_dir / "p.json", problem_doc(goal=[0.1])))


def test_worker_count_from_env():
    """HP_THREADS overrides the CPU count; invalid values are ignored."""
    with patch.dict("os.environ", {THREADS_ENV: "3"}), patch("os.cpu_count", return_value=8):
        assert worker_count() == 3
    with patch.dict("os.environ", {THREADS_ENV: "0"}), patch("os.cpu_count", return_value=8):
        assert worker_count() == 1
    with patch.dict("os.environ", {THREADS_ENV: "many"}), patch("os.cpu_count", return_value=5):
        assert worker_count() == 5


def test_worker_count_capped_at_cpu_count():
    """Asking for more workers than CPUs falls back to the CPU count."""
    with patch.dict("os.environ", {THREADS_ENV: "64"}), patch("os.cpu_count", return_value=4):
        assert worker_count() == 4
    with patch.dict("os.environ", {}, clear=True), patch("os.cpu_count", return_value=None):
        assert worker_count() == 1


def test_data_dir_from_env(temp_dir):
    """HP_DATA_DIR selects and creates the data directory."""
    target = temp_dir / "nested" / "data"
    with patch.dict("os.environ", {DATA_DIR_ENV: str(target)}):
        assert get_data_dir() == target
    assert target.is_dir()
