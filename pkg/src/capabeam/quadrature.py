"""Node/weight rules over the aperture and the channel Gram matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .physics import Aperture, Scenario, channel_matrix


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray  # (M, 3)
    weights: np.ndarray  # (M,)
    rule_tag: str

    def __len__(self):
        return len(self.weights)

    @property
    def tag(self) -> str:
        return self.rule_tag


def _tensor_grid(aperture: Aperture, su, wu, sv, wv, tag) -> QuadratureGrid:
    """Map 1-D rules on [-1, 1] to the aperture rectangle."""
    uu, vv = np.meshgrid(su * aperture.side_u / 2, sv * aperture.side_v / 2, indexing="ij")
    nodes = (aperture.center + uu.reshape(-1, 1) * aperture.u_axis
             + vv.reshape(-1, 1) * aperture.v_axis)
    jac = aperture.side_u * aperture.side_v / 4.0
    weights = np.outer(wu, wv).reshape(-1) * jac
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureGrid(nodes, weights, tag)


def _check_counts(a, b):
    if int(a) < 1 or int(b) < 1 or int(a) != a or int(b) != b:
        raise ValueError(f"node counts must be positive integers, got ({a}, {b})")


def _key(aperture: Aperture):
    # Aperture holds arrays, so hash on a tuple view for the cache.
    return _ApertureKey(tuple(aperture.center), tuple(aperture.normal), tuple(aperture.u_axis),
                        aperture.side_u, aperture.side_v)


@dataclass(frozen=True)
class _ApertureKey:
    center: tuple
    normal: tuple
    u_axis: tuple
    side_u: float
    side_v: float

    @property
    def aperture(self) -> Aperture:
        return Aperture(np.array(self.center), np.array(self.normal), np.array(self.u_axis),
                        self.side_u, self.side_v)


def riemann_grid(aperture: Aperture, m_u: int, m_v: int | None = None) -> QuadratureGrid:
    """Midpoint rule on an ``m_u x m_v`` partition into equal sub-rectangles."""
    m_v = m_u if m_v is None else m_v
    _check_counts(m_u, m_v)
    return _riemann_from_key(_key(aperture), int(m_u), int(m_v))


def gauss_legendre_grid(aperture: Aperture, n_u: int, n_v: int | None = None) -> QuadratureGrid:
    """Tensor-product Gauss-Legendre rule mapped affinely onto the aperture."""
    n_v = n_u if n_v is None else n_v
    _check_counts(n_u, n_v)
    return _gl_from_key(_key(aperture), int(n_u), int(n_v))


@lru_cache(maxsize=64)
def _riemann_from_key(key: _ApertureKey, m_u: int, m_v: int) -> QuadratureGrid:
    su = -1.0 + (2.0 * np.arange(m_u) + 1.0) / m_u
    sv = -1.0 + (2.0 * np.arange(m_v) + 1.0) / m_v
    return _tensor_grid(key.aperture, su, np.full(m_u, 2.0 / m_u), sv, np.full(m_v, 2.0 / m_v),
                        f"riemann({m_u},{m_v})")


@lru_cache(maxsize=64)
def _gl_from_key(key: _ApertureKey, n_u: int, n_v: int) -> QuadratureGrid:
    su, wu = np.polynomial.legendre.leggauss(n_u)
    sv, wv = np.polynomial.legendre.leggauss(n_v)
    return _tensor_grid(key.aperture, su, wu, sv, wv, f"gauss_legendre({n_u},{n_v})")


def default_grid(aperture: Aperture, wavelength: float = 0.0107) -> QuadratureGrid:
    """Label/evaluation grid: Gauss-Legendre (32, 32), grown with side/wavelength.

    Node density is kept at no less than 4 nodes per wavelength along the
    aperture diagonal relative to the 0.5 m x 0.5 m reference aperture.
    """
    scale = max(aperture.side_u, aperture.side_v) / 0.5
    n = max(32, int(np.ceil(32 * scale)))
    return gauss_legendre_grid(aperture, n, n)


def integrand_periods(aperture: Aperture, users, wavelength: float = 0.0107) -> float:
    """Phase periods of ``H'_k conj(H'_i)`` along the aperture diagonal, worst pair.

    Each Gram integrand oscillates with ``k0 (d_k - d_i)``; its variation
    between opposite corners sets how many nodes the rule needs.
    """
    users = np.asarray(users, float).reshape(-1, 3)
    half_u = aperture.u_axis * aperture.side_u / 2
    half_v = aperture.v_axis * aperture.side_v / 2
    corners = [(aperture.center - half_u - half_v, aperture.center + half_u + half_v),
               (aperture.center - half_u + half_v, aperture.center + half_u - half_v)]
    worst = 0.0
    for a, b in corners:
        da = np.linalg.norm(users - a, axis=1)
        db = np.linalg.norm(users - b, axis=1)
        change = (db - da)[:, None] - (db - da)[None, :]
        worst = max(worst, float(np.abs(change).max()) / wavelength)
    # a single user still has the amplitude variation; count it as one period
    return max(worst, 1.0)


def nodes_per_period(grid_nodes_per_axis: int, aperture: Aperture, users,
                     wavelength: float = 0.0107) -> float:
    """Nodes along the diagonal per integrand phase period (guard: >= 4)."""
    return grid_nodes_per_axis / integrand_periods(aperture, users, wavelength)


def integrate(grid: QuadratureGrid, f) -> complex:
    """Weighted sum of ``f`` sampled at the grid nodes.

    ``f`` maps an (M, 3) node array to M samples.
    """
    samples = np.asarray(f(grid.nodes))
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise FloatingPointError(f"non-finite integrand sample at node {bad[0]}")
    return complex(np.sum(grid.weights * samples))


def channel_samples(scene: Scenario, grid: QuadratureGrid) -> np.ndarray:
    """Normalized channels of all users at the grid nodes, shape (K, M)."""
    return channel_matrix(scene.users, grid.nodes, scene.aperture, scene.constants)


def gram_from_samples(h: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``q_ki = sum_m w_m h_k(r_m) conj(h_i(r_m))`` over the last axis, batched."""
    q = np.einsum("...km,...im->...ki", h * weights, h.conj())
    # Mirror the upper triangle so the result is exactly Hermitian.
    iu = np.triu_indices(q.shape[-1], 1)
    q[..., iu[1], iu[0]] = q[..., iu[0], iu[1]].conj()
    d = np.arange(q.shape[-1])
    q[..., d, d] = q[..., d, d].real
    return q


def channel_gram(scene: Scenario, grid: QuadratureGrid) -> np.ndarray:
    """Gram matrix of the normalized channels, ``q_ki = int H'_k conj(H'_i)``."""
    return gram_from_samples(channel_samples(scene, grid), grid.weights)


def batch_gram(users: np.ndarray, template: Scenario, grid: QuadratureGrid,
               chunk: int = 512) -> np.ndarray:
    """Gram matrices for a stack of user sets (N, K, 3) sharing one aperture."""
    users = np.asarray(users, float)
    out = np.empty(users.shape[:-1] + (users.shape[-2],), dtype=complex)
    for start in range(0, len(users), chunk):
        sl = slice(start, start + chunk)
        h = channel_matrix(users[sl], grid.nodes, template.aperture, template.constants)
        out[sl] = gram_from_samples(h, grid.weights)
    return out


def complex_to_pairs(a: np.ndarray) -> list:
    a = np.asarray(a)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def pairs_to_complex(p) -> np.ndarray:
    p = np.asarray(p, float)
    return p[..., 0] + 1j * p[..., 1]


def gram_to_json(q: np.ndarray, grid_tag: str) -> str:
    return json.dumps({"grid": grid_tag, "K": int(q.shape[0]), "q": complex_to_pairs(q)})


def gram_from_json(text: str) -> tuple[np.ndarray, str]:
    d = json.loads(text)
    return pairs_to_complex(d["q"]), d["grid"]
