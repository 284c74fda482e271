"""Reconfigurable surface model: aperture sampling, phase configuration and reradiation.

The surface is a sampled aperture with modulation ``Gamma = R sqrt(eta) A exp(j phi)``.
Reradiated fields are physical-optics sums over the samples::

    E(obs) = sum_q E_inc(q) Gamma_q (j k / 2 pi) exp(-j k r_q) / r_q  sqrt(cos_i cos_r)  dA

Fields use the same normalization as traced paths, so a source of unit
strength gives ``E_inc = lambda / (4 pi r) exp(-j k r)``.  At a specular
stationary point the obliquity equals ``cos(theta)`` and the sum reproduces
the image-method path; away from specular the geometric-mean obliquity keeps
reradiated power within ``eta R^2`` of the intercepted power.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .raytrace import C0


class RisGeometryError(ValueError):
    """Raised when a source or observer lies behind the surface."""


def facade_axes(normal) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical in-plane unit axes of a surface with ``normal``."""
    n = np.asarray(normal, dtype=float)
    x = np.cross([0.0, 0.0, 1.0], n)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(n, x)
    return x, y / np.linalg.norm(y)


@dataclass(frozen=True, eq=False)
class RisUnit:
    center: np.ndarray
    outward_normal: np.ndarray
    width: float
    height: float
    frequency: float
    sample_spacing: float = 0.5
    roughness_r: float = 1.0
    efficiency_eta: float = 1.0
    amplitude: np.ndarray | None = None
    phase: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("RIS width and height must be positive")
        if not (0 < self.roughness_r <= 1) or not (0 <= self.efficiency_eta <= 1):
            raise ValueError("roughness must lie in (0, 1] and efficiency in [0, 1]")
        n = np.asarray(self.outward_normal, dtype=float)
        object.__setattr__(self, "outward_normal", n / np.linalg.norm(n))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        nx, ny = self.grid_shape
        if self.amplitude is None:
            object.__setattr__(self, "amplitude", np.ones(nx * ny))
        if self.phase is None:
            object.__setattr__(self, "phase", np.zeros(nx * ny))
        if self.amplitude.shape != (nx * ny,) or self.phase.shape != (nx * ny,):
            raise ValueError("amplitude and phase profiles must have one value per sample")
        if np.any(self.amplitude < 0):
            raise ValueError("amplitude profile must be nonnegative")
        if self.roughness_r * np.sqrt(self.efficiency_eta) * self.amplitude.max(initial=0.0) > 1 + 1e-12:
            raise ValueError("R sqrt(eta) max(A) must not exceed 1")

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency

    @property
    def k(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def grid_shape(self) -> tuple[int, int]:
        step = self.sample_spacing * self.wavelength
        return max(1, int(np.ceil(self.width / step - 1e-9))), max(1, int(np.ceil(self.height / step - 1e-9)))

    @property
    def n_samples(self) -> int:
        nx, ny = self.grid_shape
        return nx * ny

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return facade_axes(self.outward_normal)

    @property
    def cell_area(self) -> float:
        nx, ny = self.grid_shape
        return (self.width / nx) * (self.height / ny)

    def local_coords(self) -> np.ndarray:
        """In-plane (x, y) of every sample relative to the center, (Q, 2)."""
        if "uv" not in self._cache:
            nx, ny = self.grid_shape
            u = (np.arange(nx) + 0.5) * self.width / nx - self.width / 2
            v = (np.arange(ny) + 0.5) * self.height / ny - self.height / 2
            U, V = np.meshgrid(u, v, indexing="ij")
            self._cache["uv"] = np.stack([U.ravel(), V.ravel()], axis=1)
        return self._cache["uv"]

    def sample_points(self) -> np.ndarray:
        if "pts" not in self._cache:
            x, y = self.axes
            uv = self.local_coords()
            self._cache["pts"] = self.center[None] + uv[:, :1] * x[None] + uv[:, 1:] * y[None]
        return self._cache["pts"]

    def gamma(self, phase=None) -> np.ndarray:
        ph = self.phase if phase is None else phase
        return self.roughness_r * np.sqrt(self.efficiency_eta) * self.amplitude * np.exp(1j * ph)

    def with_phase(self, phase) -> "RisUnit":
        return replace(self, phase=np.asarray(phase, dtype=float), _cache=self._cache)

    def with_eta(self, eta: float) -> "RisUnit":
        return replace(self, efficiency_eta=eta, _cache=self._cache)

    def side(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - self.center[None]) @ self.outward_normal


def make_ris(center, normal, width, height, frequency, eta=1.0, r=1.0) -> RisUnit:
    return RisUnit(np.asarray(center, float), np.asarray(normal, float), float(width), float(height), frequency,
                   roughness_r=r, efficiency_eta=eta)


# ----------------------------------------------------------------------
# phase configuration

def linear_phase(unit: RisUnit, incident_dir, desired_dir) -> np.ndarray:
    """Phase gradient steering a plane wave arriving along ``incident_dir`` into ``desired_dir``."""
    ki = np.asarray(incident_dir, dtype=float)
    kr = np.asarray(desired_dir, dtype=float)
    ki = ki / np.linalg.norm(ki)
    kr = kr / np.linalg.norm(kr)
    x, y = unit.axes
    dk = kr - ki
    grad = -unit.k * np.array([dk @ x, dk @ y])
    return unit.local_coords() @ grad


def configure_anomalous_phase(unit: RisUnit, incident_dir, desired_dir, frequency: float | None = None) -> np.ndarray:
    """Linear phase profile realizing anomalous reflection; ``A`` stays 1."""
    if frequency is not None and not np.isclose(frequency, unit.frequency):
        unit = replace(unit, frequency=frequency, amplitude=None, phase=None, _cache={})
    n = unit.outward_normal
    if np.dot(incident_dir, n) >= 0:
        raise RisGeometryError("incident direction must travel into the surface")
    if np.dot(desired_dir, n) <= 0:
        raise RisGeometryError("desired direction must leave the surface on its outward side")
    return linear_phase(unit, incident_dir, desired_dir)


def specular_dir(incident_dir, normal) -> np.ndarray:
    d = np.asarray(incident_dir, dtype=float)
    n = np.asarray(normal, dtype=float)
    return d - 2 * (d @ n) * n


# ----------------------------------------------------------------------
# reradiation

def _incident_weights(unit: RisUnit, sources, src_coef, phase=None, check=True):
    """Per-source sample weights E_inc Gamma dA sqrt(cos_i) (jk/2pi), shape (S, Q)."""
    src = np.atleast_2d(np.asarray(sources, dtype=float))
    if check and np.any(unit.side(src) <= 0):
        raise RisGeometryError("source is not on the outward side of the surface")
    q = unit.sample_points()
    v = q[None] - src[:, None]
    r1 = np.linalg.norm(v, axis=2)
    cos_i = np.clip(-(v @ unit.outward_normal) / r1, 0.0, None)
    lam, k = unit.wavelength, unit.k
    inc = lam / (4 * np.pi * r1) * np.exp(-1j * k * r1)
    coef = np.ones(len(src)) if src_coef is None else np.asarray(src_coef)
    g = unit.gamma(phase)
    return coef[:, None] * inc * g[None] * np.sqrt(cos_i) * unit.cell_area * (1j * k / (2 * np.pi))


def _outgoing_kernel(unit: RisUnit, obs, check=True):
    """sqrt(cos_r) exp(-j k r) / r from every sample to each observer, (O, Q)."""
    o = np.atleast_2d(np.asarray(obs, dtype=float))
    if check and np.any(unit.side(o) <= 0):
        raise RisGeometryError("observation point is not on the outward side of the surface")
    q = unit.sample_points()
    v = o[:, None] - q[None]
    r2 = np.linalg.norm(v, axis=2)
    cos_r = np.clip((v @ unit.outward_normal) / r2, 0.0, None)
    return np.sqrt(cos_r) * np.exp(-1j * unit.k * r2) / r2


def reradiated_field(unit: RisUnit, sources, observations, src_coef=None, phase=None, check=True) -> np.ndarray:
    """Reradiated field for every (source, observer) pair, shape (S, O)."""
    w = _incident_weights(unit, sources, src_coef, phase, check)
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    out = np.zeros((w.shape[0], len(obs)), dtype=complex)
    chunk = max(1, 2_000_000 // max(unit.n_samples, 1))
    for c0 in range(0, len(obs), chunk):
        K = _outgoing_kernel(unit, obs[c0:c0 + chunk], check)
        out[:, c0:c0 + chunk] = w @ K.T
    return out


def reradiated_amplitude(unit: RisUnit, source, observation, frequency: float | None = None) -> complex:
    if frequency is not None and not np.isclose(frequency, unit.frequency):
        raise ValueError("frequency differs from the unit's configured frequency")
    return complex(reradiated_field(unit, source, observation)[0, 0])


def far_field_pattern(unit: RisUnit, source, dirs, phase=None) -> np.ndarray:
    """r * E(r * dir) as r -> infinity, for unit-strength source, shape (D,)."""
    w = _incident_weights(unit, source, None, phase)[0]
    d = np.atleast_2d(dirs)
    q = unit.sample_points() - unit.center[None]
    cos_r = np.clip(d @ unit.outward_normal, 0.0, None)
    out = np.zeros(len(d), dtype=complex)
    chunk = max(1, 2_000_000 // max(unit.n_samples, 1))
    for c0 in range(0, len(d), chunk):
        ph = np.exp(1j * unit.k * (d[c0:c0 + chunk] @ q.T))
        out[c0:c0 + chunk] = np.sqrt(cos_r[c0:c0 + chunk]) * (ph @ w)
    return out


def intercepted_power(unit: RisUnit, source) -> float:
    """Incident power through the aperture in units where |E|^2 is power density."""
    q = unit.sample_points()
    v = q - np.asarray(source, dtype=float)[None]
    r = np.linalg.norm(v, axis=1)
    cos_i = np.clip(-(v @ unit.outward_normal) / r, 0.0, None)
    e2 = (unit.wavelength / (4 * np.pi * r)) ** 2
    return float(np.sum(e2 * cos_i) * unit.cell_area)


def hemisphere_quadrature(n_mu: int, n_phi: int, normal):
    """Gauss-Legendre in cos(theta) times uniform azimuth over the outward hemisphere."""
    mu, wmu = np.polynomial.legendre.leggauss(n_mu)
    mu = 0.5 * (mu + 1.0)
    wmu = 0.5 * wmu
    phi = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    M, P = np.meshgrid(mu, phi, indexing="ij")
    s = np.sqrt(1 - M**2)
    x, y = facade_axes(normal)
    n = np.asarray(normal, dtype=float)
    dirs = (s * np.cos(P))[..., None] * x + (s * np.sin(P))[..., None] * y + M[..., None] * n
    w = np.repeat(wmu[:, None], n_phi, axis=1) * (2 * np.pi / n_phi)
    return dirs.reshape(-1, 3), w.ravel()


def conservation_check(unit: RisUnit, source, frequency: float | None = None, n_mu: int | None = None,
                       n_phi: int | None = None) -> float:
    """Reradiated power over the outward hemisphere divided by intercepted power."""
    if frequency is not None and not np.isclose(frequency, unit.frequency):
        raise ValueError("frequency differs from the unit's configured frequency")
    p_in = intercepted_power(unit, source)
    if p_in == 0 or not np.any(unit.gamma()):
        return 0.0
    size = max(unit.width, unit.height) / unit.wavelength
    n_mu = n_mu or int(12 * size) + 48
    n_phi = n_phi or int(24 * size) + 96
    dirs, w = hemisphere_quadrature(n_mu, n_phi, unit.outward_normal)
    F = far_field_pattern(unit, source, dirs)
    return float(np.sum(np.abs(F) ** 2 * w) / p_in)


def flat_plate_far_field(area: float, d1: float, d2: float) -> float:
    """|E| of a uniform unit-reflection plate at normal incidence and broadside observation."""
    return area / (4 * np.pi * d1 * d2)


# ----------------------------------------------------------------------
# composing base station -> surface -> user paths

@dataclass(frozen=True, eq=False)
class IncidentField:
    """Paths from one BS site to a surface, each seen as a virtual point source.

    ``coef`` holds the path's interaction product so the field at the surface
    matches the traced amplitude; ``dep`` is the departure direction at the BS.
    """

    sources: np.ndarray
    coef: np.ndarray
    dep: np.ndarray
    power: np.ndarray

    def __len__(self):
        return len(self.coef)

    def strongest(self) -> int:
        return int(np.argmax(self.power))

    def arrival_dir(self, unit: RisUnit, i: int) -> np.ndarray:
        d = unit.center - self.sources[i]
        return d / np.linalg.norm(d)

    def top(self, dynamic_range_db: float = 40.0) -> "IncidentField":
        if len(self) == 0:
            return self
        keep = self.power >= self.power.max() * 10 ** (-dynamic_range_db / 10)
        return IncidentField(self.sources[keep], self.coef[keep], self.dep[keep], self.power[keep])


def incident_from_paths(unit: RisUnit, ps, amp: np.ndarray) -> IncidentField:
    """Build virtual sources from paths traced to (just in front of) the surface center."""
    if len(ps) == 0:
        return IncidentField(np.zeros((0, 3)), np.zeros(0, complex), np.zeros((0, 3)), np.zeros(0))
    lam = unit.wavelength
    k = unit.k
    L = ps.length
    fs = lam / (4 * np.pi * L) * np.exp(-1j * k * L)
    src = unit.center[None] - ps.arr * L[:, None]
    ok = unit.side(src) > 0
    return IncidentField(src[ok], (amp / fs)[ok], ps.dep[ok], (np.abs(amp) ** 2)[ok])


def ris_channel(unit: RisUnit, inc: IncidentField, sector, ue, phase=None) -> np.ndarray:
    """BS-array channel vector of the BS -> surface -> ``ue`` paths."""
    h = np.zeros(sector.size, dtype=complex)
    if len(inc) == 0 or unit.efficiency_eta == 0:
        return h
    e = reradiated_field(unit, inc.sources, np.asarray(ue, float)[None], inc.coef, phase, check=False)[:, 0]
    g = sector.gain_linear(inc.dep)
    return (e * np.sqrt(g)) @ sector.steering(inc.dep)


def configure_for(unit: RisUnit, inc: IncidentField, target) -> np.ndarray:
    """Linear phase from the strongest incident path toward ``target``."""
    i = inc.strongest()
    d = np.asarray(target, dtype=float) - unit.center
    return configure_anomalous_phase(unit, inc.arrival_dir(unit, i), d / np.linalg.norm(d))


def combined_gain(h_direct: np.ndarray, h_ris: np.ndarray, w: np.ndarray, cophase: bool = True) -> float:
    """|w^H (h_d + h_r)|^2, optionally with a constant surface phase offset aligning both terms."""
    a = np.vdot(w, h_direct)
    b = np.vdot(w, h_ris)
    if cophase:
        return float((abs(a) + abs(b)) ** 2)
    return float(abs(a + b) ** 2)


def ris_path_gain(unit: RisUnit, inc: IncidentField, sector, w: np.ndarray, ue, h_direct=None,
                  phase=None, clear: bool = True) -> tuple[float, bool]:
    """Tile gain with the surface contribution added to the direct channel.

    Returns ``(gain, reached)``; ``reached`` is False when no incident path
    exists or the surface cannot see the user, in which case the gain is the
    direct-only value.
    """
    if h_direct is None:
        h_direct = np.zeros(sector.size, dtype=complex)
    if len(inc) == 0 or not clear or unit.side(np.asarray(ue, float)[None])[0] <= 0:
        return float(abs(np.vdot(w, h_direct)) ** 2), False
    h_r = ris_channel(unit, inc, sector, ue, phase)
    return combined_gain(h_direct, h_r, w), True
