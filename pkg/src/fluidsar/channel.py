"""Geometric multipath channel between a fluid-antenna BS and single-antenna users.

Conventions used across the package:
  * antenna layouts are float arrays of shape (M, 2), rows t_m = (x_m, y_m) in meters
  * channel matrices H are complex arrays of shape (K, M), row k is h_k
  * precoders P are complex arrays of shape (M, K), column k serves user k
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Region",
    "PathSet",
    "ChannelRealization",
    "ConfigurationError",
    "dbm_to_watts",
    "propagation_delta",
    "field_response_vector",
    "channel_vector",
    "channel_matrix",
    "sinr",
    "sinr_all",
    "min_weighted_sinr",
    "sample_channel",
    "uniform_line_layout",
    "min_pairwise_distance",
    "layout_is_feasible",
]

DEFAULT_WAVELENGTH = 0.01  # 30 GHz carrier
DEFAULT_NOISE_W = 10.0 ** ((-105.0 - 30.0) / 10.0)  # -105 dBm in watts


class ConfigurationError(ValueError):
    """Raised for dimension or parameter errors in problem setup."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class Region:
    """Square placement region S = [-A, A] x [-A, A].

    ``half_width`` is expressed in wavelengths; coordinates handed to the
    geometry functions are in meters, so the box edge in meters is
    ``half_width * wavelength``.
    """

    half_width: float = 1.0
    wavelength: float = DEFAULT_WAVELENGTH

    def __post_init__(self):
        if self.half_width <= 0:
            raise ConfigurationError("region half_width must be positive")
        if self.wavelength <= 0:
            raise ConfigurationError("wavelength must be positive")

    @property
    def half_width_m(self) -> float:
        return self.half_width * self.wavelength

    def contains(self, positions: np.ndarray, tol: float = 0.0) -> bool:
        pts = np.atleast_2d(np.asarray(positions, dtype=float))
        return bool(np.all(np.abs(pts) <= self.half_width_m + tol))

    def clip(self, position: np.ndarray) -> np.ndarray:
        a = self.half_width_m
        return np.clip(np.asarray(position, dtype=float), -a, a)


@dataclass(frozen=True)
class PathSet:
    """Departure geometry and complex gains of the L paths toward one user."""

    elevation_aods: np.ndarray
    azimuth_aods: np.ndarray
    path_gains: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.elevation_aods, dtype=float)
        phi = np.asarray(self.azimuth_aods, dtype=float)
        gains = np.asarray(self.path_gains, dtype=complex)
        if theta.ndim != 1 or theta.size < 1:
            raise ConfigurationError("need at least one path")
        if phi.shape != theta.shape or gains.shape != theta.shape:
            raise ConfigurationError("AoD and gain arrays must share one length")
        object.__setattr__(self, "elevation_aods", theta)
        object.__setattr__(self, "azimuth_aods", phi)
        object.__setattr__(self, "path_gains", gains)
        # direction cosines of the phase ramp, cached once per path set
        object.__setattr__(self, "_dir_x", np.sin(theta) * np.cos(phi))
        object.__setattr__(self, "_dir_y", np.cos(theta))

    @property
    def count(self) -> int:
        return self.elevation_aods.size

    @property
    def direction_cosines(self) -> tuple[np.ndarray, np.ndarray]:
        return self._dir_x, self._dir_y


@dataclass(frozen=True)
class ChannelRealization:
    """Per-user path sets plus the receiver noise variance (watts)."""

    paths: tuple[PathSet, ...]
    noise_variance: float = DEFAULT_NOISE_W
    seed: int | None = None

    def __post_init__(self):
        if self.noise_variance <= 0:
            raise ConfigurationError("noise variance must be positive")
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def num_users(self) -> int:
        return len(self.paths)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "noise_variance": self.noise_variance,
            "users": [
                {
                    "elevation_aods": ps.elevation_aods.tolist(),
                    "azimuth_aods": ps.azimuth_aods.tolist(),
                    "path_gains": [[g.real, g.imag] for g in ps.path_gains],
                }
                for ps in self.paths
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ChannelRealization":
        paths = tuple(
            PathSet(
                elevation_aods=np.array(u["elevation_aods"], dtype=float),
                azimuth_aods=np.array(u["azimuth_aods"], dtype=float),
                path_gains=np.array([complex(re, im) for re, im in u["path_gains"]]),
            )
            for u in doc["users"]
        )
        return cls(paths=paths, noise_variance=doc["noise_variance"], seed=doc.get("seed"))

    @classmethod
    def from_json(cls, text: str) -> "ChannelRealization":
        return cls.from_json_dict(json.loads(text))


def propagation_delta(position, theta, phi):
    """Path-length difference between ``position`` and the origin for one AoD.

    Returns x*sin(theta)*cos(phi) + y*cos(theta); broadcasts over path arrays.
    """
    pos = np.asarray(position, dtype=float)
    return pos[0] * np.sin(theta) * np.cos(phi) + pos[1] * np.cos(theta)


def field_response_vector(position, paths: PathSet, wavelength: float = DEFAULT_WAVELENGTH) -> np.ndarray:
    """Unit-modulus per-path phase vector g(t_m) for a single antenna position."""
    ax, ay = paths.direction_cosines
    pos = np.asarray(position, dtype=float)
    rho = pos[0] * ax + pos[1] * ay
    return np.exp(1j * (2.0 * np.pi / wavelength) * rho)


def channel_vector(positions: np.ndarray, paths: PathSet, wavelength: float = DEFAULT_WAVELENGTH) -> np.ndarray:
    """Channel h toward one user: element m is g(t_m)^H f."""
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    ax, ay = paths.direction_cosines
    # rho has shape (M, L); h_m = sum_p exp(-j 2pi/lambda rho[m, p]) f_p
    rho = np.outer(pts[:, 0], ax) + np.outer(pts[:, 1], ay)
    return np.exp(-1j * (2.0 * np.pi / wavelength) * rho) @ paths.path_gains


def channel_matrix(positions: np.ndarray, realization: ChannelRealization,
                   wavelength: float = DEFAULT_WAVELENGTH) -> np.ndarray:
    """Stack per-user channel vectors into H of shape (K, M)."""
    return np.stack([channel_vector(positions, ps, wavelength) for ps in realization.paths])


def sinr(precoder: np.ndarray, realization: ChannelRealization, positions: np.ndarray,
         k: int, wavelength: float = DEFAULT_WAVELENGTH) -> float:
    """SINR of user k for the given precoder and antenna layout."""
    h = channel_vector(positions, realization.paths[k], wavelength)
    gains = np.abs(h.conj() @ precoder) ** 2
    signal = gains[k]
    interference = float(np.sum(np.delete(gains, k)))
    return float(signal / (interference + realization.noise_variance))


def sinr_all(precoder: np.ndarray, H: np.ndarray, noise_variance: float) -> np.ndarray:
    """All K SINRs from a precomputed channel matrix H (K, M)."""
    gains = np.abs(H.conj() @ precoder) ** 2  # (K, K): row k holds |h_k^H p_j|^2
    signal = np.diag(gains).copy()
    # off-diagonal sum, not rowsum-minus-diagonal: the latter cancels
    # catastrophically when the signal term dominates
    off = gains.copy()
    np.fill_diagonal(off, 0.0)
    interference = off.sum(axis=1)
    return signal / (interference + noise_variance)


def min_weighted_sinr(precoder: np.ndarray, H: np.ndarray, noise_variance: float,
                      weights: np.ndarray) -> float:
    return float(np.min(sinr_all(precoder, H, noise_variance) / np.asarray(weights, dtype=float)))


def sample_channel(rng_seed: int, M: int, K: int, L: int,
                   noise_variance: float = DEFAULT_NOISE_W) -> ChannelRealization:
    """Draw one channel realization.

    AoDs are i.i.d. Uniform[0, pi] (elevation and azimuth independently),
    path gains are circularly-symmetric CN(0, 1). Deterministic per seed.
    """
    if M < 1 or K < 1 or L < 1:
        raise ConfigurationError(f"invalid dimensions M={M}, K={K}, L={L}")
    rng = np.random.default_rng(rng_seed)
    paths = []
    for _ in range(K):
        theta = rng.uniform(0.0, np.pi, size=L)
        phi = rng.uniform(0.0, np.pi, size=L)
        gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2.0)
        paths.append(PathSet(theta, phi, gains))
    return ChannelRealization(paths=tuple(paths), noise_variance=noise_variance, seed=rng_seed)


def uniform_line_layout(M: int, region: Region, spacing: float | None = None) -> np.ndarray:
    """Wavelength/2-spaced line of M antennas centered on the x-axis of S."""
    if spacing is None:
        spacing = region.wavelength / 2.0
    span = (M - 1) * spacing
    if span > 2.0 * region.half_width_m:
        raise ConfigurationError(
            f"line of {M} antennas at spacing {spacing:g} m does not fit in the region")
    x = (np.arange(M) - (M - 1) / 2.0) * spacing
    return np.column_stack([x, np.zeros(M)])


def min_pairwise_distance(positions: np.ndarray) -> float:
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    if pts.shape[0] < 2:
        return np.inf
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    iu = np.triu_indices(pts.shape[0], k=1)
    return float(dist[iu].min())


def layout_is_feasible(positions: np.ndarray, region: Region, min_distance: float,
                       tol: float = 1e-9) -> bool:
    return region.contains(positions, tol=tol) and min_pairwise_distance(positions) >= min_distance - tol
