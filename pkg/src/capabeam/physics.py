"""Near-field line-of-sight channel model and scenario geometry.

All channel functions live on a planar aperture. A user is represented by the
center of its (point-approximated) receive aperture; its channel over the
transmit aperture is fully determined by that position.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ETA = 120.0 * np.pi


class ScenarioError(ValueError):
    """Invalid scenario geometry or parameters."""


class ChannelDomainError(ArithmeticError):
    """Channel evaluated where it is not finite (user on the aperture point)."""


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ScenarioError(f"cannot normalize vector {v}")
    return v / n


@dataclass(frozen=True)
class Aperture:
    """Rectangular planar aperture.

    ``normal`` is the radiating direction; ``u_axis`` and ``v_axis`` span the
    plane and define the side lengths ``side_u`` and ``side_v`` (meters).
    """

    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    u_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    side_u: float = 0.5
    side_v: float = 0.5

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3)
        normal = _unit(self.normal)
        u_axis = _unit(self.u_axis)
        if abs(normal @ u_axis) > 1e-9:
            raise ScenarioError("u_axis must be orthogonal to the normal")
        if not (self.side_u > 0 and self.side_v > 0):
            raise ScenarioError("aperture sides must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "u_axis", u_axis)
        object.__setattr__(self, "side_u", float(self.side_u))
        object.__setattr__(self, "side_v", float(self.side_v))

    @property
    def v_axis(self) -> np.ndarray:
        return np.cross(self.normal, self.u_axis)

    @property
    def area(self) -> float:
        return self.side_u * self.side_v

    @classmethod
    def square(cls, area: float, normal=(0.0, 0.0, 1.0), u_axis=(1.0, 0.0, 0.0)):
        side = float(np.sqrt(area))
        return cls(normal=np.asarray(normal, float), u_axis=np.asarray(u_axis, float),
                   side_u=side, side_v=side)

    def local_coords(self, points) -> np.ndarray:
        """Return (u, v, n) coordinates of ``points`` in the aperture frame."""
        d = np.asarray(points, dtype=float) - self.center
        return np.stack([d @ self.u_axis, d @ self.v_axis, d @ self.normal], axis=-1)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        uvn = self.local_coords(points)
        return ((np.abs(uvn[..., 0]) <= self.side_u / 2 + tol)
                & (np.abs(uvn[..., 1]) <= self.side_v / 2 + tol)
                & (np.abs(uvn[..., 2]) <= tol))


@dataclass(frozen=True)
class PhysicalConstants:
    wavelength: float = 0.0107

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ScenarioError("wavelength must be positive")

    @property
    def k0(self) -> float:
        return 2.0 * np.pi / self.wavelength

    @property
    def eta(self) -> float:
        return ETA

    @property
    def user_aperture(self) -> float:
        return self.wavelength ** 2 / (4.0 * np.pi)

    @property
    def normalization(self) -> float:
        """Scale mapping raw channels H to normalized channels H'."""
        return 2.0 * np.sqrt(np.pi) / (self.k0 * self.eta)


@dataclass(frozen=True)
class Scenario:
    """A downlink scene: aperture, users, and the normalized SNR scale ``zeta``.

    ``sigma`` and ``p_max`` are the noise level and power budget in normalized
    units; both default to 1 so that ``zeta`` is the single SNR knob.
    """

    users: np.ndarray
    aperture: Aperture = field(default_factory=Aperture)
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    zeta: float = 1e5
    sigma: float = 1.0
    p_max: float = 1.0

    def __post_init__(self):
        users = np.array(self.users, dtype=float)
        if users.ndim == 1:
            users = users.reshape(1, 3)
        if users.ndim != 2 or users.shape[1] != 3 or users.shape[0] < 1:
            raise ScenarioError("users must be a K x 3 array with K >= 1")
        if not np.all(np.isfinite(users)):
            raise ScenarioError("user positions must be finite")
        if not self.zeta > 0:
            raise ScenarioError("zeta must be positive")
        offset = np.abs(self.aperture.local_coords(users)[:, 2])
        if np.any(offset <= self.constants.wavelength):
            raise ScenarioError("every user must lie more than one wavelength off the aperture plane")
        users.setflags(write=False)
        object.__setattr__(self, "users", users)

    @property
    def K(self) -> int:
        return self.users.shape[0]

    def with_users(self, users) -> "Scenario":
        return Scenario(users=users, aperture=self.aperture, constants=self.constants,
                        zeta=self.zeta, sigma=self.sigma, p_max=self.p_max)

    def to_dict(self) -> dict:
        ap = self.aperture
        return {
            "wavelength": self.constants.wavelength,
            "aperture": {
                "center": ap.center.tolist(),
                "normal": ap.normal.tolist(),
                "u_axis": ap.u_axis.tolist(),
                "side_u": ap.side_u,
                "side_v": ap.side_v,
            },
            "users": self.users.tolist(),
            "zeta": self.zeta,
            "sigma": self.sigma,
            "p_max": self.p_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        ap = d.get("aperture", {})
        aperture = Aperture(
            center=np.asarray(ap.get("center", [0.0, 0.0, 0.0]), float),
            normal=np.asarray(ap.get("normal", [0.0, 0.0, 1.0]), float),
            u_axis=np.asarray(ap.get("u_axis", [1.0, 0.0, 0.0]), float),
            side_u=ap.get("side_u", 0.5),
            side_v=ap.get("side_v", 0.5),
        )
        return cls(users=np.asarray(d["users"], float), aperture=aperture,
                   constants=PhysicalConstants(d.get("wavelength", 0.0107)),
                   zeta=d.get("zeta", 1e5), sigma=d.get("sigma", 1.0),
                   p_max=d.get("p_max", 1.0))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        """Short stable hash of the scene, used for provenance records."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def channel_matrix(users, points, aperture: Aperture, constants: PhysicalConstants,
                   normalized: bool = True) -> np.ndarray:
    """Channel of every user at every point.

    Parameters
    ----------
    users : array (..., K, 3)
        User positions. Leading batch dimensions are allowed.
    points : array (M, 3)
        Points on the aperture.

    Returns
    -------
    array (..., K, M) complex
        ``H'_k(r_m)`` when ``normalized`` else the raw ``H_k(r_m)``.
    """
    users = np.asarray(users, dtype=float)
    points = np.asarray(points, dtype=float)
    diff = users[..., :, None, :] - points  # s_k - r
    dist = np.sqrt(np.einsum("...i,...i->...", diff, diff))
    if np.any(dist == 0):
        raise ChannelDomainError("user coincides with an aperture point")
    proj = diff @ aperture.normal
    directivity = np.sqrt(np.clip(proj, 0.0, None) / dist)
    k0 = constants.k0
    kd = k0 * dist
    h = directivity * (1j * k0 * constants.eta * np.exp(-1j * kd) / (4.0 * np.pi * dist)) \
        * (1.0 + 1j / kd - 1.0 / kd ** 2)
    if normalized:
        h = h * constants.normalization
    if not np.all(np.isfinite(h)):
        raise ChannelDomainError("non-finite channel value")
    return h


def channel_response(scene: Scenario, k: int, r) -> complex:
    """Raw channel ``H_k(r)`` of user ``k`` (0-based) at aperture point ``r``."""
    if not 0 <= k < scene.K:
        raise IndexError(f"user index {k} out of range for K={scene.K}")
    r = np.asarray(r, dtype=float).reshape(1, 3)
    return complex(channel_matrix(scene.users[k:k + 1], r, scene.aperture, scene.constants,
                                  normalized=False)[0, 0])


def channel_response_normalized(scene: Scenario, k: int, r) -> complex:
    """Normalized channel ``H'_k(r)``; SINR then uses ``zeta`` and unit noise/power."""
    return channel_response(scene, k, r) * scene.constants.normalization


def zeta_from_physical(constants: PhysicalConstants, p_max: float, sigma0: float) -> float:
    """SNR scale collecting user aperture, impedance, wavenumber, power and noise."""
    A = constants.user_aperture
    return A / sigma0 ** 2 * constants.k0 ** 2 * constants.eta ** 2 / (4.0 * np.pi) * p_max


def default_scenario(users=None, area: float = 0.25, zeta: float = 1e5,
                     wavelength: float = 0.0107) -> Scenario:
    """Aperture in the x-y plane at the origin facing +z, users near z = 30 m."""
    if users is None:
        users = np.array([[-0.6, 0.4, 30.0], [0.5, 0.7, 30.0],
                          [0.2, -0.8, 30.0], [-0.3, -0.2, 30.0]])
    return Scenario(users=users, aperture=Aperture.square(area),
                    constants=PhysicalConstants(wavelength), zeta=zeta)
