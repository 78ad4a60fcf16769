"""Adaptive interior-point trajectory optimization over cosine amplitudes."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg

from .config import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_EPSILON,
    DEFAULT_LAMBDA,
    DEFAULT_MARGIN,
    DEFAULT_MARGIN_GROWTH,
    DEFAULT_MAX_ESCALATIONS,
    DEFAULT_MAX_ITER,
    DEFAULT_PATIENCE,
    DEFAULT_RHO,
    DEFAULT_SPEED_OFFSET,
    DEFAULT_STEP_TOL,
    PlanParams,
)
from .ffs import (
    AmplitudeMatrix,
    SampleGrid,
    basis_matrix,
    cosine_series,
    discretize,
    endpoint_constraints,
    init_min_kinetic,
    kinetic_energy,
    kinetic_hessian,
)
from .hamiltonian import CollisionField, FieldSource, PotentialOptions, RawSdfField, potential_energy
from .qp import QpProblem, QpStatus, solve_qp
from .robot import RobotModel, ball_centers
from .scene import Scene

logger = logging.getLogger(__name__)

LIMIT_SLACK = 1e-8
AUDIT_OVERSAMPLE = 10
STALL_DECREASE = 1e-3  # relative drop in H that counts as progress


class Termination(str, Enum):
    STEP_TOL = "step_tol"
    MAX_ITER = "max_iter"
    QP_INFEASIBLE = "qp_infeasible"
    TIMEOUT = "timeout"


@dataclass
class AipParams:
    alpha: float  # EMA decay for f
    beta: float  # EMA decay for F
    lam: float  # isotropic damping ‖Λ‖∞
    rho: float
    step_tol: float
    max_iter: int
    field_source: FieldSource = FieldSource.RAW
    time_limit: Optional[float] = None  # seconds
    margin: float = DEFAULT_MARGIN  # meters beyond epsilon
    margin_growth: float = DEFAULT_MARGIN_GROWTH
    max_escalations: int = DEFAULT_MAX_ESCALATIONS
    patience: int = DEFAULT_PATIENCE

    def __post_init__(self) -> None:
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ValueError("alpha and beta must lie in (0, 1]")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.margin < 0 or self.margin_growth < 0:
            raise ValueError("margin and margin_growth must be non-negative")
        if self.max_escalations < 0:
            raise ValueError("max_escalations must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        self.field_source = FieldSource(self.field_source)

    @classmethod
    def defaults(cls) -> AipParams:
        return cls(
            alpha=DEFAULT_ALPHA,
            beta=DEFAULT_BETA,
            lam=DEFAULT_LAMBDA,
            rho=DEFAULT_RHO,
            step_tol=DEFAULT_STEP_TOL,
            max_iter=DEFAULT_MAX_ITER,
        )

    @classmethod
    def from_plan(cls, plan: PlanParams, time_limit: Optional[float] = None) -> AipParams:
        return cls(
            alpha=plan.alpha,
            beta=plan.beta,
            lam=plan.lam,
            rho=plan.rho,
            step_tol=plan.step_tol,
            max_iter=plan.max_iter,
            field_source=FieldSource(plan.field),
            time_limit=time_limit,
        )


@dataclass(eq=False)
class PlanProblem:
    robot: RobotModel
    scene: Scene
    theta0: np.ndarray
    theta_goal: np.ndarray
    grid: SampleGrid
    N: int
    epsilon: float = DEFAULT_EPSILON
    name: str = "problem"

    def __post_init__(self) -> None:
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.theta_goal = np.asarray(self.theta_goal, dtype=float)
        M = self.robot.dof
        if self.theta0.shape != (M,) or self.theta_goal.shape != (M,):
            raise ValueError(f"start and goal must have {M} joints")
        for label, theta in (("start", self.theta0), ("goal", self.theta_goal)):
            if not (np.all(theta > self.robot.lower) and np.all(theta < self.robot.upper)):
                raise ValueError(f"{label} configuration is not strictly within joint limits")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def M(self) -> int:
        return self.robot.dof


@dataclass
class IterationRecord:
    iteration: int
    hamiltonian: float
    step_norm: float
    max_penetration: float
    qp_status: str
    margin: float = 0.0


@dataclass
class AipState:
    a: AmplitudeMatrix
    f_hist: np.ndarray
    F_hist: np.ndarray
    iter: int = 0
    trace: list[IterationRecord] = field(default_factory=list)


@dataclass
class AuditReport:
    violations: int  # oversampled times at which some ball has positive raw collision cost
    min_distance: float
    limits_ok: bool

    @property
    def feasible(self) -> bool:
        return self.violations == 0 and self.limits_ok


@dataclass
class PlanResult:
    a_final: AmplitudeMatrix
    converged: bool
    iterations: int
    feasible: bool
    trace: list[IterationRecord]
    termination: Termination
    hamiltonian: float = 0.0
    initial_hamiltonian: float = 0.0
    wall_time: float = 0.0
    audit: Optional[AuditReport] = None
    escalations: int = 0


def ema_update(hist: np.ndarray, new: np.ndarray, decay: float) -> np.ndarray:
    """(1 - decay)·hist + decay·new."""
    if np.shape(hist) != np.shape(new):
        raise ValueError(f"shape mismatch {np.shape(hist)} vs {np.shape(new)}")
    return (1.0 - decay) * hist + decay * new


def bias_correct(hist: np.ndarray, decay: float, i: int) -> np.ndarray:
    """hist / (1 - (1 - decay)^i); i counts updates from 1."""
    if i < 1:
        raise ValueError(f"bias correction needs i >= 1, got {i}")
    return hist / (1.0 - (1.0 - decay) ** i)


def build_model(
    a: AmplitudeMatrix,
    f_hat: np.ndarray,
    F_hat: np.ndarray,
    params: AipParams,
    problem: PlanProblem,
    K: Optional[np.ndarray] = None,
    basis: Optional[np.ndarray] = None,
) -> QpProblem:
    """
    Quadratic model in δa.

    Q = 2(ϱK + F̂ᵀF̂ + λI), c = 2(ϱKa + F̂ᵀf̂); endpoints held by C₀δa = θ₀ - C₀a and
    C_{T/2}δa = θ_g - C_{T/2}a; every waypoint kept within limits by ±𝒞δa.
    """
    M, N, grid = problem.M, a.N, problem.grid
    K = kinetic_hessian(M, N) if K is None else K
    basis = basis_matrix(grid, M, N) if basis is None else basis
    x = a.flat()
    Q = 2.0 * (params.rho * K + F_hat.T @ F_hat + params.lam * np.eye(x.size))
    c = 2.0 * (params.rho * K @ x + F_hat.T @ f_hat)
    ends = endpoint_constraints(grid, M, N)
    beq = np.concatenate([problem.theta0, problem.theta_goal]) - ends @ x
    waypoints = basis @ x
    upper = np.tile(problem.robot.upper, grid.n_samples)
    lower = np.tile(problem.robot.lower, grid.n_samples)
    return QpProblem(
        Q=0.5 * (Q + Q.T),
        c=c,
        Aeq=ends,
        beq=beq,
        Ain=np.vstack([basis, -basis]),
        bin=np.concatenate([upper - waypoints, waypoints - lower]),
    )


def _fit_within_limits(a: AmplitudeMatrix, problem: PlanProblem) -> AmplitudeMatrix:
    """Clip the waypoints of a into the limits and refit amplitudes by constrained least squares."""
    M, N, grid = problem.M, a.N, problem.grid
    robot = problem.robot
    margin = 1e-6 * (robot.upper - robot.lower)
    target = np.clip(discretize(a, grid), robot.lower + margin, robot.upper - margin).reshape(-1)
    basis = basis_matrix(grid, M, N)
    n = basis.shape[1]
    fit = solve_qp(
        QpProblem(
            Q=basis.T @ basis + 1e-9 * np.eye(n),
            c=-basis.T @ target,
            Aeq=endpoint_constraints(grid, M, N),
            beq=np.concatenate([problem.theta0, problem.theta_goal]),
            Ain=np.vstack([basis, -basis]),
            bin=np.concatenate([np.tile(robot.upper, grid.n_samples), -np.tile(robot.lower, grid.n_samples)]),
        )
    )
    if fit.status is not QpStatus.OPTIMAL:
        logger.warning("Limit refit of the initial trajectory ended with status %s", fit.status.value)
    return AmplitudeMatrix.from_flat(fit.x, M, N)


def initial_trajectory(problem: PlanProblem) -> AmplitudeMatrix:
    """Minimum-kinetic amplitudes, refit into the joint limits when a waypoint leaves them."""
    a = init_min_kinetic(problem.theta0, problem.theta_goal, problem.M, problem.N, problem.grid)
    waypoints = discretize(a, problem.grid)
    if np.any(waypoints < problem.robot.lower) or np.any(waypoints > problem.robot.upper):
        logger.warning("%s: initial trajectory leaves the joint limits, refitting", problem.name)
        a = _fit_within_limits(a, problem)
    return a


def _trajectory_distances(robot: RobotModel, scene: Scene, thetas: np.ndarray) -> np.ndarray:
    """Ball surface distances (K, B) along configurations (K, M)."""
    centers = ball_centers(robot, thetas)
    K, B, _ = centers.shape
    return scene.distances(centers.reshape(-1, 3)).reshape(K, B) - robot.radii


def max_penetration(problem: PlanProblem, a: AmplitudeMatrix) -> float:
    """Deepest raw SDF penetration over the integer samples (0 when clear)."""
    if not problem.scene.obstacles:
        return 0.0
    d = _trajectory_distances(problem.robot, problem.scene, discretize(a, problem.grid))
    return float(max(0.0, -np.min(d)))


def audit_trajectory(
    robot: RobotModel,
    scene: Scene,
    a: AmplitudeMatrix,
    grid: SampleGrid,
    epsilon: float,
    oversample: int = AUDIT_OVERSAMPLE,
) -> AuditReport:
    """Raw-SDF collision and limit check at oversampled, mostly non-integer times."""
    times = grid.fine_times(oversample)
    thetas = cosine_series(a.data.T, times, grid.T)
    limits_ok = bool(np.all(thetas >= robot.lower - LIMIT_SLACK) and np.all(thetas <= robot.upper + LIMIT_SLACK))
    if not scene.obstacles:
        return AuditReport(violations=0, min_distance=float("inf"), limits_ok=limits_ok)
    d = _trajectory_distances(robot, scene, thetas)
    violations = int(np.sum(np.any(d < epsilon, axis=1)))
    return AuditReport(violations=violations, min_distance=float(np.min(d)), limits_ok=limits_ok)


def endpoint_collisions(problem: PlanProblem, epsilon: Optional[float] = None) -> list[str]:
    """Which of "start" and "goal" has a ball with positive raw collision cost."""
    epsilon = problem.epsilon if epsilon is None else epsilon
    if not problem.scene.obstacles:
        return []
    d = _trajectory_distances(problem.robot, problem.scene, np.vstack([problem.theta0, problem.theta_goal]))
    return [label for label, row in zip(("start", "goal"), d) if np.any(row < epsilon)]


def _audit(problem: PlanProblem, a: AmplitudeMatrix) -> AuditReport:
    return audit_trajectory(problem.robot, problem.scene, a, problem.grid, problem.epsilon)


def optimize(
    problem: PlanProblem,
    params: AipParams,
    collision_field: Optional[CollisionField] = None,
    options: Optional[PotentialOptions] = None,
) -> PlanResult:
    """
    Run the adaptive interior-point loop from the minimum-kinetic initialization.

    Each iteration evaluates the potential residuals f and gradients F against a field whose
    zero level lies `margin` beyond ε, smooths both with bias-corrected exponential moving
    averages and solves the quadratic model for δa. The run stops once ‖δa‖ <= step_tol.
    While the audit still finds collisions, a small step or `patience` iterations without a
    drop in H widen the margin by `margin_growth` and restart the averages instead, at most
    `max_escalations` times. When the last iterate fails the audit, the lowest-H iterate that
    passed it is returned.
    """
    if collision_field is None:
        if params.field_source is not FieldSource.RAW:
            raise ValueError("a learned field must be passed for the svm field source")
        collision_field = RawSdfField(problem.scene, problem.epsilon)
    options = options or PotentialOptions(speed_offset=DEFAULT_SPEED_OFFSET)
    started = time.perf_counter()
    M, N, grid = problem.M, problem.N, problem.grid
    K = kinetic_hessian(M, N)
    basis = basis_matrix(grid, M, N)
    ends = endpoint_constraints(grid, M, N)
    ends_pinv = scipy.linalg.pinv(ends)
    targets = np.concatenate([problem.theta0, problem.theta_goal])

    a0 = initial_trajectory(problem)
    state = AipState(
        a=a0,
        f_hist=np.zeros(grid.n_samples),
        F_hist=np.zeros((grid.n_samples, M * (N + 1))),
    )
    base_field = collision_field.with_margin(params.margin)
    planning_field = base_field
    margin = params.margin
    escalations = 0
    restart = 0  # iteration the averages last restarted after
    best_h, since_best = float("inf"), 0
    best_clear: Optional[tuple[float, AmplitudeMatrix]] = None
    initial_h: Optional[float] = None
    termination = Termination.MAX_ITER
    converged = False

    for i in range(1, params.max_iter + 1):
        if params.time_limit is not None and time.perf_counter() - started > params.time_limit:
            termination = Termination.TIMEOUT
            logger.warning("%s: time limit %.1fs reached at iteration %d", problem.name, params.time_limit, i)
            break
        potential, ev = potential_energy(state.a, problem.robot, planning_field, grid, options)
        h = params.rho * kinetic_energy(state.a) + potential
        if initial_h is None:
            initial_h = h
        if (best_clear is None or h < best_clear[0]) and _audit(problem, state.a).feasible:
            best_clear = (h, state.a)

        k = i - restart
        state.f_hist = ema_update(state.f_hist, ev.f, params.alpha)
        state.F_hist = ema_update(state.F_hist, ev.F_grad, params.beta)
        f_hat = bias_correct(state.f_hist, params.alpha, k)
        F_hat = bias_correct(state.F_hist, params.beta, k)

        sol = solve_qp(build_model(state.a, f_hat, F_hat, params, problem, K, basis))
        state.iter = i
        if sol.status is QpStatus.INFEASIBLE:
            termination = Termination.QP_INFEASIBLE
            logger.error("%s: quadratic subproblem infeasible at iteration %d", problem.name, i)
            break
        if sol.status is QpStatus.MAX_ITER:
            logger.warning("%s: quadratic subproblem hit its iteration cap at iteration %d", problem.name, i)

        x = state.a.flat() + sol.x
        x -= ends_pinv @ (ends @ x - targets)
        state.a = AmplitudeMatrix.from_flat(x, M, N)
        step_norm = float(np.linalg.norm(sol.x))
        record = IterationRecord(
            iteration=i,
            hamiltonian=h,
            step_norm=step_norm,
            max_penetration=max_penetration(problem, state.a),
            qp_status=sol.status.value,
            margin=margin,
        )
        state.trace.append(record)
        logger.debug(
            "%s iter %d: H=%.6g |da|=%.3g penetration=%.3g qp=%s",
            problem.name,
            i,
            h,
            step_norm,
            record.max_penetration,
            record.qp_status,
        )

        if h < best_h * (1.0 - STALL_DECREASE):
            best_h, since_best = h, 0
        else:
            since_best += 1
        small_step = step_norm <= params.step_tol
        if (small_step or since_best >= params.patience) and escalations < params.max_escalations:
            if not _audit(problem, state.a).feasible:
                escalations += 1
                margin += params.margin_growth
                planning_field = collision_field.with_margin(margin)
                state.f_hist = np.zeros_like(state.f_hist)
                state.F_hist = np.zeros_like(state.F_hist)
                restart = i
                best_h, since_best = float("inf"), 0
                logger.info("%s: still colliding at iteration %d, planning margin now %.3g", problem.name, i, margin)
                continue
        if small_step:
            termination = Termination.STEP_TOL
            converged = True
            break

    audit = _audit(problem, state.a)
    if not audit.feasible and best_clear is not None:
        logger.info("%s: returning the best collision-free iterate (H %.6g)", problem.name, best_clear[0])
        state.a = best_clear[1]
        audit = _audit(problem, state.a)
    final_potential, _ = potential_energy(state.a, problem.robot, base_field, grid, options)
    final_h = params.rho * kinetic_energy(state.a) + final_potential
    wall = time.perf_counter() - started
    logger.info(
        "%s: %s after %d iterations, feasible=%s, H %.6g -> %.6g, %d escalations, %.2fs",
        problem.name,
        termination.value,
        state.iter,
        audit.feasible,
        initial_h if initial_h is not None else final_h,
        final_h,
        escalations,
        wall,
    )
    return PlanResult(
        a_final=state.a,
        converged=converged,
        iterations=state.iter,
        feasible=audit.feasible,
        trace=state.trace,
        termination=termination,
        hamiltonian=final_h,
        initial_hamiltonian=initial_h if initial_h is not None else final_h,
        wall_time=wall,
        audit=audit,
        escalations=escalations,
    )
