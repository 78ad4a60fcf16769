"""Dense convex QP by Mehrotra predictor-corrector primal-dual interior point."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

FRACTION_TO_BOUNDARY = 0.995
FACTOR_SHIFT = 1e-10  # added to the Hessian block only when factorizing
RANK_TOL = 1e-10
MAX_BACKTRACKS = 30


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max-iter"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class QpProblem:
    """
    min ½xᵀQx + cᵀx  s.t.  Aeq x = beq,  Ain x <= bin.

    Missing constraint blocks are stored as 0-row matrices.
    """

    Q: np.ndarray
    c: np.ndarray
    Aeq: Optional[np.ndarray] = None
    beq: Optional[np.ndarray] = None
    Ain: Optional[np.ndarray] = None
    bin: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ValueError(f"Q must be square, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-10, rtol=0.0):
            raise ValueError("Q must be symmetric")
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if c.shape != (n,):
            raise ValueError(f"c must have length {n}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        for A_name, b_name in (("Aeq", "beq"), ("Ain", "bin")):
            A, b = getattr(self, A_name), getattr(self, b_name)
            A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
            b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
            if A.shape[1] != n or A.shape[0] != b.shape[0]:
                raise ValueError(f"{A_name} must be rows x {n} with a matching {b_name}")
            object.__setattr__(self, A_name, A)
            object.__setattr__(self, b_name, b)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass(frozen=True)
class QpOptions:
    tol: float = 1e-8
    max_iter: int = 100


@dataclass
class KktResiduals:
    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float


@dataclass
class QpSolution:
    x: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    status: QpStatus
    kkt_residuals: KktResiduals
    iterations: int = 0
    merit_trace: list[float] = field(default_factory=list)


def kkt_residuals(problem: QpProblem, x: np.ndarray, nu: np.ndarray, lam: np.ndarray) -> KktResiduals:
    """Infinity norms of stationarity Qx + c + Aeqᵀν + Ainᵀλ, feasibility and λ∘(Ain x - bin)."""
    grad = problem.Q @ x + problem.c + problem.Aeq.T @ nu + problem.Ain.T @ lam
    gap = problem.Ain @ x - problem.bin
    return KktResiduals(
        stationarity=_inf_norm(grad),
        primal_eq=_inf_norm(problem.Aeq @ x - problem.beq),
        primal_ineq=_inf_norm(np.maximum(gap, 0.0)),
        complementarity=_inf_norm(lam * gap),
    )


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _independent_rows(A: np.ndarray, b: np.ndarray) -> Optional[np.ndarray]:
    """Indices of a maximal independent row subset of A, or None if the dropped rows are inconsistent."""
    if A.shape[0] == 0:
        return np.arange(0)
    _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1.0)))
    keep = np.sort(piv[:rank])
    if rank < A.shape[0]:
        x, *_ = scipy.linalg.lstsq(A[keep], b[keep])
        if _inf_norm(A @ x - b) > 1e-9 * (1.0 + _inf_norm(b)):
            return None
        logger.debug("Dropped %d redundant equality rows", A.shape[0] - rank)
    return keep


def _step_to_boundary(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest α in (0, 1] with v + α·dv >= 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_qp(problem: QpProblem, opts: Optional[QpOptions] = None) -> QpSolution:
    """
    Solve the QP by Mehrotra predictor-corrector path following.

    Inequalities get slacks s = bin - Ain x >= 0 and duals λ >= 0; each Newton system is reduced
    to [Q + AinᵀDAin, Aeqᵀ; Aeq, 0] with D = λ/s and LU-factorized once for both predictor and
    corrector. Deterministic for fixed inputs.
    """
    opts = opts or QpOptions()
    n = problem.n
    keep = _independent_rows(problem.Aeq, problem.beq)
    if keep is None:
        logger.warning("QP equality constraints are inconsistent")
        x = np.zeros(n)
        nu = np.zeros(problem.Aeq.shape[0])
        lam = np.zeros(problem.Ain.shape[0])
        return QpSolution(x, nu, lam, QpStatus.INFEASIBLE, kkt_residuals(problem, x, nu, lam))

    Q, c = problem.Q, problem.c
    Aeq, beq = problem.Aeq[keep], problem.beq[keep]
    Ain, bin_ = problem.Ain, problem.bin
    p, q = Aeq.shape[0], Ain.shape[0]

    if p:
        x, *_ = scipy.linalg.lstsq(Aeq, beq)
    else:
        x = np.zeros(n)
    s = np.maximum(bin_ - Ain @ x, 1.0)
    lam = np.ones(q)
    nu = np.zeros(p)

    def merit_of(x, nu, s, lam) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, float]:
        r_d = Q @ x + c + Aeq.T @ nu + Ain.T @ lam
        r_e = Aeq @ x - beq
        r_i = Ain @ x + s - bin_
        mu = float(s @ lam) / q if q else 0.0
        return max(_inf_norm(r_d), _inf_norm(r_e), _inf_norm(r_i)) + mu, r_d, r_e, r_i, mu

    merit, r_d, r_e, r_i, mu = merit_of(x, nu, s, lam)
    merit_trace: list[float] = []
    status = QpStatus.MAX_ITER
    it = 0

    for it in range(opts.max_iter + 1):
        merit_trace.append(merit)
        # Absolute KKT residuals of the unscaled problem
        if (
            _inf_norm(r_d) <= opts.tol
            and _inf_norm(r_e) <= opts.tol
            and _inf_norm(np.maximum(Ain @ x - bin_, 0.0)) <= opts.tol
            and _inf_norm(lam * (Ain @ x - bin_)) <= opts.tol
        ):
            status = QpStatus.OPTIMAL
            break
        if it == opts.max_iter:
            break

        D = lam / s
        H = Q + Ain.T @ (D[:, None] * Ain) + FACTOR_SHIFT * np.eye(n)
        kkt = np.block([[H, Aeq.T], [Aeq, np.zeros((p, p))]])
        try:
            factor = scipy.linalg.lu_factor(kkt, check_finite=True)
        except (ValueError, scipy.linalg.LinAlgError) as e:
            logger.warning("QP factorization failed at iteration %d: %s", it, e)
            break

        def newton(r_c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
            rhs = np.concatenate([-r_d + Ain.T @ ((r_c - lam * r_i) / s), -r_e])
            sol = scipy.linalg.lu_solve(factor, rhs)
            dx, dnu = sol[:n], sol[n:]
            ds = -r_i - Ain @ dx
            dlam = -(r_c + lam * ds) / s
            return dx, dnu, ds, dlam

        # Predictor (affine scaling)
        dx, dnu, ds, dlam = newton(s * lam)
        if q:
            step_aff = min(_step_to_boundary(s, ds), _step_to_boundary(lam, dlam))
            mu_aff = float((s + step_aff * ds) @ (lam + step_aff * dlam)) / q
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # Corrector with centering
            dx, dnu, ds, dlam = newton(s * lam + ds * dlam - sigma * mu)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dlam))):
            logger.warning("QP Newton step is not finite at iteration %d", it)
            break

        step = 1.0
        if q:
            step = min(1.0, FRACTION_TO_BOUNDARY * min(_step_to_boundary(s, ds), _step_to_boundary(lam, dlam)))
        # Accepted iterates strictly decrease the merit
        for _ in range(MAX_BACKTRACKS):
            trial = (x + step * dx, nu + step * dnu, s + step * ds, lam + step * dlam)
            evaluated = merit_of(*trial)
            if evaluated[0] < merit:
                break
            step *= 0.5
        else:
            logger.debug("QP merit did not decrease at iteration %d (merit %.3g)", it, merit)
            break
        x, nu, s, lam = trial
        merit, r_d, r_e, r_i, mu = evaluated

    if status is not QpStatus.OPTIMAL:
        logger.warning("QP stopped without convergence after %d iterations (merit %.3g)", it, merit)

    eq_duals = np.zeros(problem.Aeq.shape[0])
    eq_duals[keep] = nu
    return QpSolution(
        x=x,
        eq_duals=eq_duals,
        ineq_duals=lam,
        status=status,
        kkt_residuals=kkt_residuals(problem, x, eq_duals, lam),
        iterations=it,
        merit_trace=merit_trace,
    )
