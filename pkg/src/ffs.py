"""Cosine-only finite Fourier series: trajectory representation, sampling and kinetic energy."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

# Regularization added to the DC block of K when solving the init KKT system
DC_REGULARIZATION = 1e-10


@dataclass(frozen=True, eq=False)
class AmplitudeMatrix:
    """Cosine amplitudes a[m, n] for joint m and harmonic order n (n = 0 is the DC term)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise ValueError(f"amplitude matrix must be M x (N+1), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("amplitude matrix contains non-finite entries")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def M(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1] - 1

    def flat(self) -> np.ndarray:
        """Joint-major, harmonic-minor vector [a_10..a_1N, a_20..a_2N, ...]."""
        return self.data.reshape(-1).copy()

    @classmethod
    def from_flat(cls, vec: np.ndarray, M: int, N: int) -> AmplitudeMatrix:
        vec = np.asarray(vec, dtype=float)
        if vec.size != M * (N + 1):
            raise ValueError(f"expected {M * (N + 1)} amplitudes, got {vec.size}")
        return cls(vec.reshape(M, N + 1))

    @classmethod
    def constant(cls, q: np.ndarray, N: int) -> AmplitudeMatrix:
        """DC-only amplitudes holding configuration q for all time."""
        q = np.asarray(q, dtype=float)
        data = np.zeros((q.size, N + 1))
        data[:, 0] = q
        return cls(data)

    def padded(self, N: int) -> AmplitudeMatrix:
        """Same trajectory with zero amplitudes appended up to order N."""
        if N < self.N:
            raise ValueError("cannot pad to fewer harmonics")
        data = np.zeros((self.M, N + 1))
        data[:, : self.N + 1] = self.data
        return AmplitudeMatrix(data)


@dataclass(frozen=True)
class SampleGrid:
    """Integer sample indices 0..T/2 over the half period."""

    T: int

    def __post_init__(self) -> None:
        if not isinstance(self.T, (int, np.integer)) or self.T < 2 or self.T % 2:
            raise ValueError(f"T must be an even integer >= 2, got {self.T!r}")

    @property
    def half(self) -> int:
        return self.T // 2

    @property
    def n_samples(self) -> int:
        return self.T // 2 + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples, dtype=float)

    def fine_times(self, oversample: int = 10) -> np.ndarray:
        """Times oversampled between the integer samples (endpoints included)."""
        return np.linspace(0.0, float(self.half), oversample * self.half + 1)


def cosine_row(t: float, period: float, N: int) -> np.ndarray:
    """(1, cos(2πt/T), ..., cos(2Nπt/T))."""
    n = np.arange(N + 1)
    return np.cos(2.0 * np.pi * n * t / period)


def derivative_row(t: float, period: float, N: int, order: int) -> np.ndarray:
    n = np.arange(N + 1)
    w = 2.0 * np.pi * n / period
    if order == 1:
        return -w * np.sin(w * t)
    if order == 2:
        return -(w**2) * np.cos(w * t)
    raise ValueError(f"derivative order must be 1 or 2, got {order}")


def check_sample(t: float, grid: SampleGrid) -> None:
    if not 0 <= t <= grid.half:
        raise ValueError(f"sample index {t} outside [0, {grid.half}]")


def basis_row(t: float, grid: SampleGrid, M: int, N: int) -> np.ndarray:
    """Block-diagonal C_t = I_M ⊗ cosine row, shape M x M(N+1)."""
    check_sample(t, grid)
    return np.kron(np.eye(M), cosine_row(t, grid.T, N)[None, :])


def basis_derivative(t: float, grid: SampleGrid, M: int, N: int, order: int = 1) -> np.ndarray:
    """Time derivative of C_t (order 1 or 2) in sample-index time."""
    check_sample(t, grid)
    return np.kron(np.eye(M), derivative_row(t, grid.T, N, order)[None, :])


def basis_matrix(grid: SampleGrid, M: int, N: int) -> np.ndarray:
    """Stacked [C_0; C_1; ...; C_{T/2}], shape M(T/2+1) x M(N+1)."""
    table = np.cos(2.0 * np.pi * np.outer(grid.times, np.arange(N + 1)) / grid.T)
    blocks = np.einsum("tn,mk->tmkn", table, np.eye(M))
    return blocks.reshape(grid.n_samples * M, M * (N + 1))


def endpoint_constraints(grid: SampleGrid, M: int, N: int) -> np.ndarray:
    """Stacked [C_0; C_{T/2}] for the start and goal equalities."""
    return np.vstack([basis_row(0, grid, M, N), basis_row(grid.half, grid, M, N)])


def evaluate(a: AmplitudeMatrix, t: float, period: float) -> np.ndarray:
    """Configuration θ(t) = Σ_n a[:, n] cos(2πnt/T); accepts non-integer t."""
    return a.data @ cosine_row(t, period, a.N)


def velocity(a: AmplitudeMatrix, t: float, period: float) -> np.ndarray:
    """Joint velocities; zero at t = 0 and t = T/2 for every a."""
    return a.data @ derivative_row(t, period, a.N, 1)


def discretize(a: AmplitudeMatrix, grid: SampleGrid) -> np.ndarray:
    """Waypoint stack 𝒞·a reshaped to (T/2+1) x M; row t is θ(t)."""
    if not isinstance(a, AmplitudeMatrix):
        raise ValueError("discretize expects an AmplitudeMatrix")
    table = np.cos(2.0 * np.pi * np.outer(grid.times, np.arange(a.N + 1)) / grid.T)
    return table @ a.data.T


def kinetic_hessian(M: int, N: int) -> np.ndarray:
    """K with F_kinetic = aᵀKa: I_M ⊗ diag(0, 1, 4, ..., N²) scaled by π/4."""
    orders = np.arange(N + 1, dtype=float)
    return (math.pi / 4.0) * np.kron(np.eye(M), np.diag(orders**2))


def kinetic_energy(a: AmplitudeMatrix) -> float:
    """(π/4) Σ_m Σ_n n² a[m, n]²; equals ∫₀^{T/2} ‖θ̇‖²/2 dt for period 2π."""
    orders = np.arange(a.N + 1, dtype=float)
    return float((math.pi / 4.0) * np.sum(orders**2 * a.data**2))


def init_min_kinetic(
    theta0: np.ndarray,
    theta_goal: np.ndarray,
    M: int,
    N: int,
    grid: SampleGrid,
) -> AmplitudeMatrix:
    """
    Minimum-kinetic-energy amplitudes meeting the start and goal equalities.

    Solves the KKT system of min aᵀKa s.t. C_0 a = θ₀, C_{T/2} a = θ_g, with K
    regularized on its DC block (K alone is only semidefinite).
    """
    if N < 1:
        raise ValueError("at least one harmonic is needed to connect distinct endpoints")
    theta0 = np.asarray(theta0, dtype=float)
    theta_goal = np.asarray(theta_goal, dtype=float)
    if theta0.shape != (M,) or theta_goal.shape != (M,):
        raise ValueError(f"start/goal must have length {M}")

    K = kinetic_hessian(M, N)
    K[np.arange(0, M * (N + 1), N + 1), np.arange(0, M * (N + 1), N + 1)] += DC_REGULARIZATION
    A = endpoint_constraints(grid, M, N)
    b = np.concatenate([theta0, theta_goal])
    n, p = K.shape[0], A.shape[0]
    kkt = np.block([[2.0 * K, A.T], [A, np.zeros((p, p))]])
    rhs = np.concatenate([np.zeros(n), b])
    try:
        sol = scipy.linalg.solve(kkt, rhs)
    except scipy.linalg.LinAlgError as e:
        raise RuntimeError(f"singular initialization KKT system: {e}") from e
    a0 = AmplitudeMatrix.from_flat(sol[:n], M, N)
    logger.debug("Min-kinetic init: energy %.6g", kinetic_energy(a0))
    return a0


def _least_squares(basis: np.ndarray, samples: np.ndarray) -> np.ndarray:
    coeffs, *_ = scipy.linalg.lstsq(basis, samples)
    return coeffs


def fit_cosine(samples: np.ndarray, times: np.ndarray, period: float, N: int) -> np.ndarray:
    """Least-squares cosine amplitudes (N+1 per column of samples) at the given times."""
    basis = np.cos(2.0 * np.pi * np.outer(times, np.arange(N + 1)) / period)
    return _least_squares(basis, samples)


def cosine_series(coeffs: np.ndarray, times: np.ndarray, period: float) -> np.ndarray:
    N = coeffs.shape[0] - 1
    return np.cos(2.0 * np.pi * np.outer(times, np.arange(N + 1)) / period) @ coeffs


def _fourier_basis(times: np.ndarray, period: float, N: int) -> np.ndarray:
    n = np.arange(1, N + 1)
    phase = 2.0 * np.pi * np.outer(times, n) / period
    return np.hstack([np.ones((times.size, 1)), np.cos(phase), np.sin(phase)])


def fit_fourier(samples: np.ndarray, times: np.ndarray, period: float, N: int) -> np.ndarray:
    """Least-squares full (sine + cosine) Fourier coefficients, layout [dc, cos_1..N, sin_1..N]."""
    return _least_squares(_fourier_basis(times, period, N), samples)


def fourier_series(coeffs: np.ndarray, times: np.ndarray, period: float) -> np.ndarray:
    N = (coeffs.shape[0] - 1) // 2
    return _fourier_basis(times, period, N) @ coeffs


REFERENCE_KINDS = ("constant", "smoothstep", "step")


def reference_motion(kind: str, times: np.ndarray, half: float) -> np.ndarray:
    """Scalar start-to-goal reference on [0, half] rising from 0 to 1 (constant stays at 1)."""
    s = np.clip(np.asarray(times, dtype=float) / half, 0.0, 1.0)
    if kind == "constant":
        return np.ones_like(s)
    if kind == "smoothstep":
        return s * s * (3.0 - 2.0 * s)
    if kind == "step":
        return (s >= 0.5).astype(float)
    raise ValueError(f"unknown reference {kind!r}, expected one of {REFERENCE_KINDS}")


@dataclass
class FitComparison:
    times: np.ndarray
    reference: np.ndarray
    cosine: np.ndarray
    fourier: np.ndarray

    def endpoint_errors(self) -> tuple[float, float]:
        """Largest deviation from the reference at t = 0 and t = T/2, cosine then full Fourier."""
        ends = [0, -1]
        return (
            float(np.max(np.abs(self.cosine[ends] - self.reference[ends]))),
            float(np.max(np.abs(self.fourier[ends] - self.reference[ends]))),
        )


def compare_fits(kind: str, N: int, grid: SampleGrid, oversample: int = 10) -> FitComparison:
    """
    Fit a reference motion sampled on 0..T/2 with the cosine series (period T, mirrored about
    T/2) and with a full Fourier series that treats the half period as periodic.
    """
    samples = reference_motion(kind, grid.times, grid.half)
    fine = grid.fine_times(oversample)
    cos_coeffs = fit_cosine(samples, grid.times, grid.T, N)
    fourier_coeffs = fit_fourier(samples, grid.times, grid.half, N)
    return FitComparison(
        times=fine,
        reference=reference_motion(kind, fine, grid.half),
        cosine=cosine_series(cos_coeffs, fine, grid.T),
        fourier=fourier_series(fourier_coeffs, fine, grid.half),
    )
