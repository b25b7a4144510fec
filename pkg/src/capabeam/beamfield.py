"""Beamformers as coefficient matrices over the conjugate channel subspace.

Column ``k`` of a coefficient matrix ``B`` describes stream ``k``'s field
``V_k(r) = sum_j B[j, k] conj(H'_j(r))``. With the Gram matrix
``Q[k, i] = int H'_k conj(H'_i)`` every power and gain reduces to algebra:
``G = Q @ B`` and ``p_k = b_k^H Q b_k``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .physics import Scenario, channel_matrix
from .quadrature import QuadratureGrid, channel_samples, complex_to_pairs, gram_from_samples, \
    pairs_to_complex


class DegenerateBeamError(ArithmeticError):
    """Projection requested for a beam with no power."""


def _check_square(q, b):
    q = np.asarray(q)
    b = np.asarray(b)
    if q.shape[-1] != q.shape[-2] or b.shape[-2:] != q.shape[-2:]:
        raise ValueError(f"dimension mismatch: Q {q.shape}, B {b.shape}")
    return q, b


def synthesize_beam(scene: Scenario, b: np.ndarray, k: int, r) -> complex:
    """Field of stream ``k`` at point ``r``."""
    b = np.asarray(b)
    h = channel_matrix(scene.users, np.asarray(r, float).reshape(1, 3), scene.aperture,
                       scene.constants)[:, 0]
    return complex(np.sum(b[:, k] * h.conj()))


def synthesize_fields(scene: Scenario, b: np.ndarray, points) -> np.ndarray:
    """All stream fields at many points, shape (K, M)."""
    h = channel_matrix(scene.users, points, scene.aperture, scene.constants)
    return np.asarray(b).T @ h.conj()


def power_vector(q: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-stream power ``p_k = sum_ij b_ik conj(b_jk) q_ji``; batched over leading axes."""
    q, b = _check_square(q, b)
    return np.einsum("...jk,...ji,...ik->...k", b.conj(), q, b).real


def gain_matrix(q: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``G = Q @ B``: row is the observing user, column the data stream."""
    q, b = _check_square(q, b)
    return q @ b


def sinr_vector(g: np.ndarray, zeta: float) -> np.ndarray:
    g2 = zeta * np.abs(np.asarray(g)) ** 2
    signal = np.diagonal(g2, axis1=-2, axis2=-1)
    interference = g2.sum(axis=-1) - signal
    return signal / (interference + 1.0)


def spectral_efficiency(g: np.ndarray, zeta: float) -> np.ndarray | float:
    """Sum of ``log2(1 + sinr)`` over users (bits/s/Hz)."""
    se = np.log2(1.0 + sinr_vector(g, zeta)).sum(axis=-1)
    return float(se) if np.ndim(se) == 0 else se


def scene_se(q: np.ndarray, b: np.ndarray, zeta: float):
    return spectral_efficiency(gain_matrix(q, b), zeta)


def project_power(b: np.ndarray, p: np.ndarray, p_max: float = 1.0) -> np.ndarray:
    """Scale all streams jointly so the total power equals ``p_max``."""
    total = np.sum(np.asarray(p), axis=-1)
    if np.any(~(total > 0)):
        raise DegenerateBeamError("total beam power is not positive")
    return np.asarray(b) * np.sqrt(p_max / total)[..., None, None]


def project_equal_power(b: np.ndarray, p: np.ndarray, p_max: float = 1.0) -> np.ndarray:
    """Scale every stream to ``p_max / K`` individually."""
    p = np.asarray(p)
    if np.any(~(p > 0)):
        raise DegenerateBeamError("a stream has no power")
    K = p.shape[-1]
    return np.asarray(b) * np.sqrt(p_max / K / p)[..., None, :]


@dataclass
class SubspaceResult:
    coeffs: np.ndarray
    scale: float  # the rescaling factor C >= 1
    se_before: float
    se_after: float
    residual_ratio: np.ndarray  # per stream, ||V_perp|| / ||V||
    rank_deficient: bool = False

    @property
    def se_gain(self) -> float:
        return self.se_after - self.se_before


def subspace_improvement(scene: Scenario, grid: QuadratureGrid, fields: np.ndarray,
                         h: np.ndarray | None = None) -> SubspaceResult:
    """Project arbitrary fields onto the conjugate channel subspace and rescale.

    ``fields`` holds K stream fields sampled at the grid nodes (K, M) with total
    power at most ``p_max``. The in-subspace component keeps every gain while
    using less power; rescaling it back to the budget cannot lower the SE.
    """
    fields = np.asarray(fields, dtype=complex)
    if h is None:
        h = channel_samples(scene, grid)
    w = grid.weights
    q = gram_from_samples(h, w)
    # Weighted least squares: (Phi^H W Phi) b = Phi^H W v with Phi = conj(h).T,
    # whose normal matrix is Q itself.
    rhs = (h * w) @ fields.T  # [j, k] = sum_m w h_j v_k
    rank_deficient = np.linalg.matrix_rank(q, tol=1e-10 * np.trace(q).real) < q.shape[0]
    if rank_deficient:
        warnings.warn("channel set is rank deficient; using pseudo-inverse projection",
                      RuntimeWarning, stacklevel=2)
        coeffs = np.linalg.pinv(q, hermitian=True) @ rhs
    else:
        coeffs = np.linalg.solve(q, rhs)
    par = coeffs.T @ h.conj()
    perp = fields - par
    norm_v = np.sqrt((np.abs(fields) ** 2) @ w)
    norm_perp = np.sqrt((np.abs(perp) ** 2) @ w)
    gains_before = (h * w) @ fields.T
    se_before = spectral_efficiency(gains_before, scene.zeta)
    p_par = power_vector(q, coeffs).sum()
    scale = float(np.sqrt(scene.p_max / p_par))
    coeffs = coeffs * scale
    se_after = spectral_efficiency(gain_matrix(q, coeffs), scene.zeta)
    return SubspaceResult(coeffs, scale, se_before, se_after,
                          np.divide(norm_perp, norm_v, out=np.zeros_like(norm_v), where=norm_v > 0),
                          bool(rank_deficient))


def coeffs_to_json(b: np.ndarray, scene: Scenario | None = None, **extra) -> str:
    d = {"K": int(np.shape(b)[0]), "b": complex_to_pairs(b)}
    if scene is not None:
        d["scene_hash"] = scene.digest()
    d.update(extra)
    return json.dumps(d)


def coeffs_from_json(text: str) -> np.ndarray:
    return pairs_to_complex(json.loads(text)["b"])
