"""Revolute serial chains with collision-check balls: forward kinematics and ball Jacobians."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .config import DocumentError, as_vector, check_fields, read_document

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Joint:
    """Revolute joint: rotation axis in its parent frame and the translation from the parent origin."""

    axis: np.ndarray
    offset: np.ndarray


@dataclass(frozen=True, eq=False)
class CollisionBall:
    """Collision-check ball rigidly attached to the frame of joint `parent`."""

    parent: int
    offset: np.ndarray
    radius: float


@dataclass(frozen=True, eq=False)
class BallState:
    center: np.ndarray
    radius: float
    jacobian: np.ndarray  # 3 x M, d center / d theta


@dataclass(frozen=True, eq=False)
class RobotModel:
    joints: tuple[Joint, ...]
    lower: np.ndarray
    upper: np.ndarray
    balls: tuple[CollisionBall, ...]
    name: str = "robot"

    def __post_init__(self) -> None:
        M = len(self.joints)
        if M == 0:
            raise ValueError("robot needs at least one joint")
        if self.lower.shape != (M,) or self.upper.shape != (M,):
            raise ValueError(f"joint limits must have length {M}")
        if not np.all(self.lower < self.upper):
            raise ValueError("joint limits must satisfy min < max componentwise")
        if not self.balls:
            raise ValueError("robot needs at least one collision-check ball")
        for i, ball in enumerate(self.balls):
            if not 0 <= ball.parent < M:
                raise ValueError(f"ball {i}: parent {ball.parent} outside 0..{M - 1}")
            if ball.radius <= 0:
                raise ValueError(f"ball {i}: radius must be positive")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls])


def _chain(robot: RobotModel, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Joint origins, world axes and frame rotations for a batch of configurations.

    Returns origins (K, M, 3), axes (K, M, 3), rotations (K, M, 3, 3); frame j includes the
    rotation of joint j, while origin j and axis j are fixed in frame j-1.
    """
    K, M = thetas.shape
    origins = np.empty((K, M, 3))
    axes = np.empty((K, M, 3))
    rotations = np.empty((K, M, 3, 3))
    parent_rot = np.broadcast_to(np.eye(3), (K, 3, 3))
    parent_pos = np.zeros((K, 3))
    for j, joint in enumerate(robot.joints):
        origins[:, j] = parent_pos + parent_rot @ joint.offset
        axes[:, j] = parent_rot @ joint.axis
        local = Rotation.from_rotvec(thetas[:, j, None] * joint.axis[None, :]).as_matrix()
        rotations[:, j] = parent_rot @ local
        parent_rot = rotations[:, j]
        parent_pos = origins[:, j]
    return origins, axes, rotations


def ball_centers(robot: RobotModel, thetas: np.ndarray) -> np.ndarray:
    """Ball centers for a batch of configurations, shape (K, |B|, 3)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != robot.dof:
        raise ValueError(f"expected configurations with {robot.dof} joints, got {thetas.shape[1]}")
    origins, _, rotations = _chain(robot, thetas)
    centers = np.empty((thetas.shape[0], len(robot.balls), 3))
    for i, ball in enumerate(robot.balls):
        centers[:, i] = origins[:, ball.parent] + rotations[:, ball.parent] @ ball.offset
    return centers


def forward_kinematics(robot: RobotModel, theta: np.ndarray) -> list[BallState]:
    """Ball centers and 3 x M Jacobians; joints downstream of a ball's parent get zero columns."""
    theta = np.asarray(theta, dtype=float)
    origins, axes, rotations = _chain(robot, theta[None, :])
    origins, axes, rotations = origins[0], axes[0], rotations[0]
    states = []
    for ball in robot.balls:
        center = origins[ball.parent] + rotations[ball.parent] @ ball.offset
        jac = np.zeros((3, robot.dof))
        upstream = slice(0, ball.parent + 1)
        jac[:, upstream] = np.cross(axes[upstream], center - origins[upstream]).T
        states.append(BallState(center=center, radius=ball.radius, jacobian=jac))
    return states


def jacobian_rate(robot: RobotModel, theta: np.ndarray, theta_dot: np.ndarray) -> list[np.ndarray]:
    """
    Time derivative J̇ of every ball Jacobian along joint velocity theta_dot.

    Column j of J is z_j x (x - p_j); its rate is ż_j x (x - p_j) + z_j x (ẋ - ṗ_j), where z_j and
    p_j move with frame j-1 at angular velocity Σ_{k<j} θ̇_k z_k.
    """
    theta = np.asarray(theta, dtype=float)
    theta_dot = np.asarray(theta_dot, dtype=float)
    origins, axes, rotations = _chain(robot, theta[None, :])
    origins, axes, rotations = origins[0], axes[0], rotations[0]
    M = robot.dof

    # Angular velocity of frame j-1 and velocity of origin j
    omega_prev = np.zeros((M, 3))
    origin_vel = np.zeros((M, 3))
    omega = np.zeros(3)
    for j in range(M):
        omega_prev[j] = omega
        if j > 0:
            spin = theta_dot[:j, None] * axes[:j]
            origin_vel[j] = np.sum(np.cross(spin, origins[j] - origins[:j]), axis=0)
        omega = omega + theta_dot[j] * axes[j]
    axis_rate = np.cross(omega_prev, axes)

    rates = []
    for ball in robot.balls:
        center = origins[ball.parent] + rotations[ball.parent] @ ball.offset
        up = slice(0, ball.parent + 1)
        arm = center - origins[up]
        center_vel = np.sum(theta_dot[up, None] * np.cross(axes[up], arm), axis=0)
        jdot = np.zeros((3, M))
        jdot[:, up] = (np.cross(axis_rate[up], arm) + np.cross(axes[up], center_vel - origin_vel[up])).T
        rates.append(jdot)
    return rates


def within_limits(robot: RobotModel, theta: np.ndarray, slack: float = 0.0) -> bool:
    """True iff θ_min - slack <= θ <= θ_max + slack componentwise (boundaries inclusive)."""
    theta = np.asarray(theta, dtype=float)
    return bool(np.all(theta >= robot.lower - slack) and np.all(theta <= robot.upper + slack))


def _unit_axis(value, where: str) -> np.ndarray:
    axis = as_vector(value, 3, where)
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise DocumentError(f"{where}: zero rotation axis")
    if abs(norm - 1.0) > 1e-9:
        logger.debug("%s: normalizing axis of length %.6g", where, norm)
    return axis / norm


def load_robot(path: Path) -> RobotModel:
    """Read a robot config (joints, limits, ccbs); units radians and meters."""
    path = Path(path)
    doc = read_document(path, ("joints", "limits", "ccbs"), ("name", "notes"))
    joints = []
    for i, j in enumerate(doc["joints"]):
        where = f"{path}: joints[{i}]"
        check_fields(j, ("axis", "offset"), where=where)
        joints.append(Joint(axis=_unit_axis(j["axis"], where), offset=as_vector(j["offset"], 3, where)))
    check_fields(doc["limits"], ("min", "max"), where=f"{path}: limits")
    balls = []
    for i, b in enumerate(doc["ccbs"]):
        where = f"{path}: ccbs[{i}]"
        check_fields(b, ("parent", "offset", "radius"), where=where)
        balls.append(
            CollisionBall(parent=int(b["parent"]), offset=as_vector(b["offset"], 3, where), radius=float(b["radius"]))
        )
    try:
        robot = RobotModel(
            joints=tuple(joints),
            lower=as_vector(doc["limits"]["min"], len(joints), f"{path}: limits.min"),
            upper=as_vector(doc["limits"]["max"], len(joints), f"{path}: limits.max"),
            balls=tuple(balls),
            name=str(doc.get("name", path.stem)),
        )
    except ValueError as e:
        raise DocumentError(f"{path}: {e}") from e
    logger.debug("Loaded robot %s: %d joints, %d balls", robot.name, robot.dof, len(robot.balls))
    return robot
