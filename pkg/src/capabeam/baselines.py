"""Classical beamforming baselines expressed in coefficient space."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .beamfield import power_vector, project_power, spectral_efficiency
from .physics import Scenario
from .quadrature import channel_samples, riemann_grid


class BaselineDomainError(ArithmeticError):
    pass


@dataclass
class WmmseResult:
    coeffs: np.ndarray
    objective_trace: list = field(default_factory=list)
    power_residuals: list = field(default_factory=list)  # |sum ||v||^2 - p_max| / p_max, when active
    mu_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    regularized: bool = False
    solver: str = ""
    M: int | None = None
    wall_time: float = 0.0

    def record(self, scene_hash: str = "", final_se: float | None = None) -> dict:
        return {
            "scene_hash": scene_hash,
            "solver": self.solver,
            "M": self.M,
            "iterations": self.iterations,
            "objective_trace": [float(x) for x in self.objective_trace],
            "final_se": None if final_se is None else float(final_se),
            "wall_time": self.wall_time,
        }


def mf_coefficients(q: np.ndarray, powers) -> np.ndarray:
    """Matched-filter beams: stream k uses conj(H'_k) scaled to power ``p_k``."""
    d = np.real(np.diagonal(q))
    if np.any(d <= 0):
        raise BaselineDomainError("a user has a zero-norm channel")
    powers = np.asarray(powers, float)
    if np.any(powers < 0):
        raise ValueError("powers must be nonnegative")
    return np.diag(np.sqrt(powers / d)).astype(complex)


def _sum_rate(T: np.ndarray) -> float:
    """Sum rate from the effective gain matrix T[k, j] = a_k^H v_j (noise 1)."""
    return float(spectral_efficiency(T, 1.0))


def _power_at(mu, lam, c2):
    return float(np.sum(c2 / (lam[:, None] + mu) ** 2))


def _solve_mu(lam, c2, p_max, n_bisect: int = 64):
    """Smallest mu >= 0 with total power <= p_max; returns (mu, active)."""
    # Directions outside the range of the weighted covariance carry no signal.
    keep = lam > 1e-13 * max(lam.max(), 1e-300)
    lam, c2 = lam[keep], c2[keep]
    if _power_at(0.0, lam, c2) <= p_max:
        return 0.0, False
    hi = max(lam.max(), 1e-30)
    while _power_at(hi, lam, c2) > p_max:
        hi *= 2.0
    lo = 0.0
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if _power_at(mid, lam, c2) > p_max:
            lo = mid
        else:
            hi = mid
    return hi, True


def _wmmse(A: np.ndarray, V: np.ndarray, p_max: float, tol: float, max_iters: int,
           result: WmmseResult) -> np.ndarray:
    """Sum-rate WMMSE with a total power constraint.

    ``A`` holds SNR-scaled effective channels as columns (N x K) so that the
    gain of stream j at user k is ``a_k^H v_j`` and the noise power is 1.
    """
    T = A.conj().T @ V
    result.objective_trace.append(_sum_rate(T))
    for it in range(max_iters):
        interf = np.sum(np.abs(T) ** 2, axis=1) + 1.0
        tkk = np.diagonal(T)
        u = tkk / interf
        w = 1.0 / np.real(1.0 - np.conj(u) * tkk)
        phi = (A * (w * np.abs(u) ** 2)) @ A.conj().T
        rhs = A * (w * u)
        lam, U = np.linalg.eigh(phi)
        lam = np.clip(lam, 0.0, None)
        c = U.conj().T @ rhs
        mu, active = _solve_mu(lam, np.abs(c) ** 2, p_max)
        keep = lam > 1e-13 * max(lam.max(), 1e-300)
        inv = np.zeros_like(lam)
        inv[keep] = 1.0 / (lam[keep] + mu)
        V = U @ (inv[:, None] * c)
        power = float(np.sum(np.abs(V) ** 2))
        result.mu_trace.append(mu)
        if active:
            result.power_residuals.append(abs(power - p_max) / p_max)
        T = A.conj().T @ V
        obj = _sum_rate(T)
        prev = result.objective_trace[-1]
        result.objective_trace.append(obj)
        result.iterations = it + 1
        if abs(obj - prev) <= tol * max(abs(obj), 1e-12):
            result.converged = True
            break
    return V


def _mf_init(A: np.ndarray, p_max: float) -> np.ndarray:
    K = A.shape[1]
    return A / np.linalg.norm(A, axis=0) * np.sqrt(p_max / K)


def wmmse_power_allocation(q: np.ndarray, zeta: float, p_max: float = 1.0, iters: int = 200,
                           tol: float = 0.0, return_trace: bool = False):
    """Optimize matched-filter stream powers with scalar WMMSE.

    With unit-power MF beams the gain of stream j at user k is
    ``c_kj = q_kj / sqrt(q_jj)``; the returned powers sum to ``p_max``.
    """
    q = np.asarray(q)
    K = q.shape[0]
    d = np.real(np.diagonal(q))
    h = np.sqrt(zeta) * q / np.sqrt(d)[None, :]
    h2 = np.abs(h) ** 2
    hkk = np.diagonal(h)
    v = np.full(K, np.sqrt(p_max / K))
    trace = []

    def rate(v):
        return float(np.sum(np.log2(1 + h2.diagonal() * v ** 2 / (h2 @ v ** 2 - h2.diagonal() * v ** 2 + 1))))

    trace.append(rate(v))
    for _ in range(iters):
        interf = h2 @ v ** 2 + 1.0
        u = hkk * v / interf
        w = 1.0 / (1.0 - np.real(np.conj(u) * hkk) * v)
        num = w * np.real(np.conj(u) * hkk)
        den = (w * np.abs(u) ** 2) @ h2  # sum_k w_k |u_k|^2 |h_kj|^2 for each j
        def total(mu):
            return np.sum((num / (den + mu)) ** 2)
        if total(0.0) <= p_max:
            mu = 0.0
        else:
            lo, hi = 0.0, max(den.max(), 1e-30)
            while total(hi) > p_max:
                hi *= 2
            for _ in range(64):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if total(mid) > p_max else (lo, mid)
            mu = hi
        v = np.clip(num / (den + mu), 0.0, None)
        trace.append(rate(v))
        if tol > 0 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-1]):
            break
    p = v ** 2
    # Scaling all powers up never lowers any SINR, so land on the budget.
    p = p * (p_max / p.sum())
    return (p, trace) if return_trace else p


def spd_wmmse(scene: Scenario, m_per_axis: int, zeta: float | None = None,
              p_max: float | None = None, tol: float = 1e-6, max_iters: int = 500) -> WmmseResult:
    """WMMSE on the aperture discretized into ``m_per_axis**2`` patches.

    The patch precoders are lifted back to coefficients through the Gram
    matrix of the same grid, so ``V_k`` is a combination of conjugate channels.
    """
    zeta = scene.zeta if zeta is None else zeta
    p_max = scene.p_max if p_max is None else p_max
    t0 = time.perf_counter()
    grid = riemann_grid(scene.aperture, m_per_axis, m_per_axis)
    h = channel_samples(scene, grid) * np.sqrt(grid.weights)  # (K, M)
    A = np.sqrt(zeta) * h.conj().T  # gains a_k^H v_j = sqrt(zeta) sum_m h_km v_jm
    result = WmmseResult(coeffs=None, solver="spd_wmmse", M=len(grid))
    V = _wmmse(A, _mf_init(A, p_max), p_max, tol, max_iters, result)
    qm = h @ h.conj().T
    rhs = h @ V
    try:
        coeffs = np.linalg.solve(qm, rhs)
        if not np.all(np.isfinite(coeffs)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        result.regularized = True
        coeffs = np.linalg.solve(qm + 1e-10 * np.trace(qm).real / len(qm) * np.eye(len(qm)), rhs)
    result.coeffs = coeffs
    result.wall_time = time.perf_counter() - t0
    return result


def _cholesky(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q)
    K = q.shape[0]
    try:
        return np.linalg.cholesky(q)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(q).real / K
        try:
            return np.linalg.cholesky(q + jitter * np.eye(K))
        except np.linalg.LinAlgError as exc:
            raise BaselineDomainError("Gram matrix is indefinite beyond jitter") from exc


def gram_wmmse(q: np.ndarray, zeta: float, p_max: float = 1.0, tol: float = 1e-6,
               max_iters: int = 500) -> WmmseResult:
    """WMMSE directly in coefficient space via the Cholesky factor of the Gram matrix."""
    t0 = time.perf_counter()
    L = _cholesky(q)
    A = np.sqrt(zeta) * L.conj().T  # column k = conj(L[k, :])
    result = WmmseResult(coeffs=None, solver="gram_wmmse", M=None)
    X = _wmmse(A, _mf_init(A, p_max), p_max, tol, max_iters, result)
    result.coeffs = np.linalg.solve(L.conj().T, X)
    result.wall_time = time.perf_counter() - t0
    return result


@dataclass(frozen=True)
class StructureParams:
    lam: np.ndarray
    p_dl: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lam) < 0) or np.any(np.asarray(self.p_dl) < 0):
            raise ValueError("structure parameters must be nonnegative")


def optimal_structure(q: np.ndarray, params: StructureParams, sigma: float = 1.0) -> np.ndarray:
    """``B* = (sigma^2 I + diag(lam) Q)^{-1} diag(p)^{1/2}``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    K = q.shape[0]
    m = sigma ** 2 * np.eye(K) + np.diag(params.lam) @ q
    try:
        return np.linalg.solve(m, np.diag(np.sqrt(params.p_dl)).astype(complex))
    except np.linalg.LinAlgError as exc:
        raise BaselineDomainError("singular structure matrix") from exc


def evaluate_coeffs(q: np.ndarray, b: np.ndarray, zeta: float, p_max: float = 1.0,
                    mode: str = "total") -> float:
    """SE of ``b`` after projecting it to the budget with exact powers."""
    from .beamfield import gain_matrix, project_equal_power

    p = power_vector(q, b)
    if mode == "total":
        bp = project_power(b, p, p_max)
    elif mode == "equal":
        bp = project_equal_power(b, p, p_max)
    else:
        raise ValueError(f"unknown power mode {mode!r}")
    return float(spectral_efficiency(gain_matrix(q, bp), zeta))
