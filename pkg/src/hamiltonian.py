"""Potential energy of a sampled trajectory, its amplitude gradients and the balanced Hamiltonian."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .ffs import AmplitudeMatrix, SampleGrid, check_sample, cosine_row, derivative_row, kinetic_energy
from .robot import RobotModel, forward_kinematics, jacobian_rate
from .scene import Scene
from .svm_field import CollisionFieldModel, boundary_slope, decision_gradients, kernel_matrix

logger = logging.getLogger(__name__)

DEFAULT_ETA = 1e-6


class FieldSource(str, Enum):
    RAW = "raw"
    SVM = "svm"


class CollisionField:
    """Collision cost c and its workspace gradient ∇c for collision-check balls."""

    margin: float = 0.0  # meters of extra clearance planned against

    def costs(self, centers: np.ndarray, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Costs (B,) and gradients (B, 3) for ball centers (B, 3)."""
        raise NotImplementedError

    def cost(self, center: np.ndarray, radius: float) -> tuple[float, np.ndarray]:
        c, g = self.costs(np.asarray(center, dtype=float)[None, :], np.array([radius]))
        return float(c[0]), g[0]

    def with_margin(self, margin: float) -> CollisionField:
        """The same field with its zero level pushed `margin` meters further out; fields without one ignore it."""
        return self


def _check_margin(margin: float) -> float:
    if margin < 0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    return float(margin)


class RawSdfField(CollisionField):
    """Hinge on the scene SDF: c = ε + margin - d inside the buffer, ∇c = -∇d there, zero outside."""

    def __init__(self, scene: Scene, epsilon: float, margin: float = 0.0):
        if not epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.scene = scene
        self.epsilon = epsilon
        self.margin = _check_margin(margin)

    def costs(self, centers: np.ndarray, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        clearance = self.epsilon + self.margin
        d, grad_d = self.scene.evaluate(centers)
        d = d - radii
        inside = d <= clearance
        c = np.where(inside, clearance - d, 0.0)
        return c, np.where(inside[:, None], -grad_d, 0.0)

    def with_margin(self, margin: float) -> RawSdfField:
        return RawSdfField(self.scene, self.epsilon, margin)


class LearnedField(CollisionField):
    """
    SVM field ĉ over ball centers, rescaled to meters; radii are folded into the training labels.

    The cost is max(s·(decision + 1) + margin, 0) with s the inverse of the boundary slope, so
    with no margin it is s·ĉ and the optimizer sees unit gradients near the learned boundary
    just as it does on the raw SDF.
    """

    def __init__(self, model: CollisionFieldModel, margin: float = 0.0, scale: Optional[float] = None):
        self.model = model
        self.margin = _check_margin(margin)
        if scale is None:
            slope = boundary_slope(model)
            scale = 1.0 / slope if slope > 0 else 1.0
        if not scale > 0:
            raise ValueError(f"scale must be positive, got {scale}")
        self.scale = float(scale)

    def costs(self, centers: np.ndarray, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = kernel_matrix(self.model, centers)
        c = self.scale * (k @ self.model.weights + self.model.bias + 1.0) + self.margin
        inside = c > 0.0
        grads = self.scale * decision_gradients(self.model, centers, k)
        return np.where(inside, c, 0.0), np.where(inside[:, None], grads, 0.0)

    def with_margin(self, margin: float) -> LearnedField:
        return LearnedField(self.model, margin, self.scale)


def make_field(
    source: FieldSource | str,
    scene: Scene,
    epsilon: float,
    model: Optional[CollisionFieldModel] = None,
    margin: float = 0.0,
) -> CollisionField:
    source = FieldSource(source)
    if source is FieldSource.RAW:
        return RawSdfField(scene, epsilon, margin)
    if model is None:
        raise ValueError("the svm field source needs a trained model")
    return LearnedField(model, margin)


@dataclass(frozen=True)
class PotentialOptions:
    """
    weight: "velocity" scales the cost by the ball speed ‖ẋ‖, "position" by ‖x‖.
    gradient: "exact" is the derivative of the discrete f_p; "functional" is the
    arc-length obstacle functional gradient with its curvature term.
    eta: floor on the weight and threshold below which the curvature term is dropped.
    speed_offset: constant added to the floored weight, so a ball that slows down inside an
    obstacle still pays for it.
    """

    weight: str = "velocity"
    gradient: str = "exact"
    eta: float = DEFAULT_ETA
    speed_offset: float = 0.0

    def __post_init__(self) -> None:
        if self.weight not in ("velocity", "position"):
            raise ValueError(f"unknown weight {self.weight!r}")
        if self.gradient not in ("exact", "functional"):
            raise ValueError(f"unknown gradient {self.gradient!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.speed_offset < 0:
            raise ValueError("speed_offset must be non-negative")


@dataclass(frozen=True)
class HamiltonianParams:
    rho: float

    def __post_init__(self) -> None:
        if self.rho < 0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")


@dataclass(frozen=True, eq=False)
class PotentialEval:
    f: np.ndarray  # (T/2+1,)
    F_grad: np.ndarray  # (T/2+1, M(N+1))
    argmax_ball: np.ndarray  # (T/2+1,)


@dataclass(frozen=True, eq=False)
class SampleState:
    """Kinematics of every ball at one sample: positions, velocities, accelerations, costs."""

    theta: np.ndarray
    theta_dot: np.ndarray
    centers: np.ndarray  # (B, 3)
    velocities: np.ndarray  # (B, 3)
    accelerations: np.ndarray  # (B, 3), J·θ̈ only
    jacobians: np.ndarray  # (B, 3, M)
    costs: np.ndarray
    cost_grads: np.ndarray
    rows: tuple[np.ndarray, np.ndarray, np.ndarray]  # cosine row and its two derivatives


def sample_state(
    a: AmplitudeMatrix, t: float, robot: RobotModel, field: CollisionField, grid: SampleGrid
) -> SampleState:
    check_sample(t, grid)
    if a.M != robot.dof:
        raise ValueError(f"amplitudes have {a.M} joints, robot has {robot.dof}")
    # Rates are per unit of the normalized time s = 2πt/T that the kinetic energy is measured in
    scale = grid.T / (2.0 * np.pi)
    row = cosine_row(t, grid.T, a.N)
    row_d = scale * derivative_row(t, grid.T, a.N, 1)
    row_dd = scale**2 * derivative_row(t, grid.T, a.N, 2)
    theta, theta_dot, theta_dd = a.data @ row, a.data @ row_d, a.data @ row_dd
    states = forward_kinematics(robot, theta)
    centers = np.array([s.center for s in states])
    jacobians = np.array([s.jacobian for s in states])
    costs, grads = field.costs(centers, robot.radii)
    return SampleState(
        theta=theta,
        theta_dot=theta_dot,
        centers=centers,
        velocities=jacobians @ theta_dot,
        accelerations=jacobians @ theta_dd,
        jacobians=jacobians,
        costs=costs,
        cost_grads=grads,
        rows=(row, row_d, row_dd),
    )


def _weights(state: SampleState, options: PotentialOptions) -> np.ndarray:
    vectors = state.velocities if options.weight == "velocity" else state.centers
    return np.maximum(np.linalg.norm(vectors, axis=1), options.eta) + options.speed_offset


def _lift(v: np.ndarray, row: np.ndarray) -> np.ndarray:
    """C_tᵀ v for a joint-space vector v: the outer product flattened joint-major."""
    return np.outer(v, row).ravel()


def functional_bracket(x_dot: np.ndarray, x_ddot: np.ndarray, c: float, grad_c: np.ndarray, eta: float) -> np.ndarray:
    """(I - ẋ̂ẋ̂ᵀ)∇c - cκ with κ = ‖ẋ‖⁻²(I - ẋ̂ẋ̂ᵀ)ẍ; plain ∇c when ‖ẋ‖ < eta."""
    speed = float(np.linalg.norm(x_dot))
    if speed < eta:
        return np.asarray(grad_c, dtype=float).copy()
    unit = x_dot / speed
    proj = np.eye(3) - np.outer(unit, unit)
    kappa = proj @ x_ddot / speed**2
    return proj @ grad_c - c * kappa


def sample_potential(
    a: AmplitudeMatrix,
    t: float,
    robot: RobotModel,
    field: CollisionField,
    grid: SampleGrid,
    options: Optional[PotentialOptions] = None,
    ball: Optional[int] = None,
) -> tuple[float, np.ndarray, int]:
    """
    f_p at sample t, its gradient w.r.t. the flat amplitudes and the ball used.

    f_p = max_i c(x_i)·w_i with ties going to the lowest ball index; passing `ball`
    freezes the maximizing ball (used for finite-difference checks).
    """
    options = options or PotentialOptions()
    state = sample_state(a, t, robot, field, grid)
    values = state.costs * _weights(state, options)
    i = int(np.argmax(values)) if ball is None else ball
    c, grad_c = state.costs[i], state.cost_grads[i]
    J = state.jacobians[i]
    row, row_d, _ = state.rows

    if options.gradient == "functional":
        speed = float(np.linalg.norm(state.velocities[i]))
        bracket = functional_bracket(state.velocities[i], state.accelerations[i], c, grad_c, options.eta)
        weighted = max(speed, options.eta) * bracket + options.speed_offset * grad_c
        grad = _lift(J.T @ weighted, row) / grid.n_samples
        return float(values[i]), grad, i

    w = _weights(state, options)[i]
    grad = w * _lift(J.T @ grad_c, row)
    if c != 0.0:
        if options.weight == "velocity":
            x_dot = state.velocities[i]
            speed = float(np.linalg.norm(x_dot))
            if speed >= options.eta:
                unit = x_dot / speed
                J_dot = jacobian_rate(robot, state.theta, state.theta_dot)[i]
                grad += c * (_lift(J_dot.T @ unit, row) + _lift(J.T @ unit, row_d))
        else:
            x = state.centers[i]
            norm = float(np.linalg.norm(x))
            if norm >= options.eta:
                grad += c * _lift(J.T @ (x / norm), row)
    return float(values[i]), grad, i


def fp(a: AmplitudeMatrix, t: float, robot: RobotModel, field: CollisionField, grid: SampleGrid, options=None) -> float:
    """Per-sample potential max_i c(x_i)·‖ẋ_i‖."""
    options = options or PotentialOptions()
    state = sample_state(a, t, robot, field, grid)
    return float(np.max(state.costs * _weights(state, options)))


def grad_fp(
    a: AmplitudeMatrix, t: float, robot: RobotModel, field: CollisionField, grid: SampleGrid, options=None
) -> np.ndarray:
    return sample_potential(a, t, robot, field, grid, options)[1]


def potential_energy(
    a: AmplitudeMatrix,
    robot: RobotModel,
    field: CollisionField,
    grid: SampleGrid,
    options: Optional[PotentialOptions] = None,
) -> tuple[float, PotentialEval]:
    """Σ_t f_p(θ_t)² over the integer samples, with the stacked residuals and gradients."""
    f = np.zeros(grid.n_samples)
    F = np.zeros((grid.n_samples, a.data.size))
    balls = np.zeros(grid.n_samples, dtype=int)
    for k, t in enumerate(grid.times):
        f[k], F[k], balls[k] = sample_potential(a, t, robot, field, grid, options)
    return float(f @ f), PotentialEval(f=f, F_grad=F, argmax_ball=balls)


def hamiltonian(
    a: AmplitudeMatrix,
    params: HamiltonianParams,
    robot: RobotModel,
    field: CollisionField,
    grid: SampleGrid,
    options: Optional[PotentialOptions] = None,
) -> float:
    """ϱ·aᵀKa + potential energy."""
    potential, _ = potential_energy(a, robot, field, grid, options)
    return params.rho * kinetic_energy(a) + potential
