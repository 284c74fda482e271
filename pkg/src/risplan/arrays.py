"""Base-station sector arrays: element pattern, DFT codebook, channel vectors.

Element ``n = n_h * m_v + n_v`` of an ``m_h x m_v`` planar array sits at
column ``n_h`` (horizontal axis of the sector) and row ``n_v`` (vertical
axis).  Beam ``(i_h, i_v)`` is the Kronecker product of two 1-D DFT vectors
and its linear index in the codebook is ``i_h * m_v + i_v``.

Steering vectors carry a fixed ``exp(-j pi n)`` per-element reference so the
DFT beam ``i`` of an ``M``-element axis peaks exactly at direction cosine
``u = 2 i / M - 1``.  Boresight (``u = 0``) is therefore served by index
``M / 2`` and the all-equal-phase vector points at end-fire.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PEAK_GAIN_DBI = 8.0
SLA_V_DB = 30.0
A_MAX_DB = 30.0


@dataclass(frozen=True)
class SystemConfig:
    name: str
    frequency: float
    bandwidth: float
    m_h: int
    m_v: int
    tx_power_subcarrier_dbm: float
    subcarrier_count: int
    cell_power_dbm: float

    @property
    def codebook_size(self) -> int:
        return self.m_h * self.m_v


SYSTEMS = {
    "4G": SystemConfig("4G", 2.0e9, 20e6, 2, 2, 12.2, 1200, 43.0),
    "5G": SystemConfig("5G", 3.5e9, 100e6, 4, 8, 13.85, 3276, 49.0),
    "6G": SystemConfig("6G", 10.0e9, 200e6, 4, 16, 8.85, 3276, 44.0),
}


def get_system(name: str) -> SystemConfig:
    try:
        return SYSTEMS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None


@dataclass(frozen=True, eq=False)
class SectorArray:
    position: np.ndarray
    bearing_deg: float
    tilt_deg: float
    m_h: int
    m_v: int
    element_spacing: float = 0.5
    hpbw_az_deg: float = 65.0
    hpbw_el_deg: float = 10.0
    bs: int = 0
    sector: int = 0

    def __post_init__(self):
        if self.m_h < 1 or self.m_v < 1:
            raise ValueError("m_h and m_v must be >= 1")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))

    @property
    def size(self) -> int:
        return self.m_h * self.m_v

    def frame(self) -> np.ndarray:
        """Rows: boresight, horizontal array axis, vertical array axis."""
        b, t = np.radians(self.bearing_deg), np.radians(self.tilt_deg)
        bore = [np.cos(t) * np.cos(b), np.cos(t) * np.sin(b), -np.sin(t)]
        horiz = [-np.sin(b), np.cos(b), 0.0]
        vert = [np.sin(t) * np.cos(b), np.sin(t) * np.sin(b), np.cos(t)]
        return np.array([bore, horiz, vert])

    def local(self, dirs) -> np.ndarray:
        """Directions expressed in the sector frame, shape (..., 3)."""
        return np.asarray(dirs, dtype=float) @ self.frame().T

    def local_angles(self, dirs):
        """(elevation, azimuth) in radians relative to boresight."""
        loc = self.local(dirs)
        el = np.arcsin(np.clip(loc[..., 2], -1.0, 1.0))
        az = np.arctan2(loc[..., 1], loc[..., 0])
        return el, az

    def gain_linear(self, dirs) -> np.ndarray:
        el, az = self.local_angles(dirs)
        return 10 ** (element_gain(el, az, self.hpbw_el_deg, self.hpbw_az_deg) / 10)

    def steering(self, dirs) -> np.ndarray:
        return steering_vector(self.local(dirs), self.m_h, self.m_v, self.element_spacing)

    def codebook(self) -> np.ndarray:
        return codebook(self.m_h, self.m_v)


def sectors_from_dict(data: dict, system: SystemConfig) -> list[SectorArray]:
    """Network JSON: ``{"base_stations": [{"position": [x,y,z], "sectors": [{"bearing_deg", "tilt_deg"}]}]}``."""
    out = []
    for b_i, bs in enumerate(data["base_stations"]):
        for s_i, sec in enumerate(bs["sectors"]):
            out.append(SectorArray(np.asarray(bs["position"], dtype=float), float(sec["bearing_deg"]),
                                   float(sec.get("tilt_deg", 0.0)), system.m_h, system.m_v, bs=b_i, sector=s_i))
    if not out:
        raise ValueError("network has no sectors")
    return out


def load_network(path, system: SystemConfig) -> list[SectorArray]:
    return sectors_from_dict(json.loads(Path(path).read_text()), system)


def network_to_dict(network: list[SectorArray]) -> dict:
    sites: dict[int, dict] = {}
    for s in network:
        sites.setdefault(s.bs, {"position": s.position.tolist(), "sectors": []})
        sites[s.bs]["sectors"].append({"bearing_deg": s.bearing_deg, "tilt_deg": s.tilt_deg})
    return {"base_stations": [sites[k] for k in sorted(sites)]}


# ----------------------------------------------------------------------
# element pattern

def element_gain(theta_local, phi_local, hpbw_el_deg: float = 10.0, hpbw_az_deg: float = 65.0):
    """Element gain in dBi; ``theta_local`` is elevation off boresight, both in radians."""
    th = np.degrees(np.asarray(theta_local, dtype=float))
    ph = np.degrees(np.asarray(phi_local, dtype=float))
    ph = (ph + 180.0) % 360.0 - 180.0
    a_v = -np.minimum(12.0 * (th / hpbw_el_deg) ** 2, SLA_V_DB)
    a_h = -np.minimum(12.0 * (ph / hpbw_az_deg) ** 2, A_MAX_DB)
    return PEAK_GAIN_DBI - np.minimum(-(a_v + a_h), A_MAX_DB)


# ----------------------------------------------------------------------
# DFT codebook

def _check_index(i, m, label):
    if not (isinstance(i, (int, np.integer)) and 0 <= i < m):
        raise IndexError(f"{label} index {i} out of range for size {m}")


def dft_vector(idx: int, m: int) -> np.ndarray:
    _check_index(idx, m, "beam")
    return np.exp(-2j * np.pi * np.arange(m) * idx / m) / np.sqrt(m)


def dft_beam(m_h_idx: int, m_v_idx: int, m_h: int, m_v: int) -> np.ndarray:
    _check_index(m_h_idx, m_h, "horizontal")
    _check_index(m_v_idx, m_v, "vertical")
    return np.kron(dft_vector(m_h_idx, m_h), dft_vector(m_v_idx, m_v))


def codebook(m_h: int, m_v: int) -> np.ndarray:
    """All beams as columns, shape (m_h * m_v, m_h * m_v); column ``i_h * m_v + i_v``."""
    return np.kron(np.fft.fft(np.eye(m_h)) / np.sqrt(m_h), np.fft.fft(np.eye(m_v)) / np.sqrt(m_v))


def beam_index(m_h_idx: int, m_v_idx: int, m_v: int) -> int:
    return m_h_idx * m_v + m_v_idx


def beam_pair(index: int, m_v: int) -> tuple[int, int]:
    return divmod(int(index), m_v)


def beam_angles(m_h_idx: int, m_v_idx: int, m_h: int, m_v: int) -> tuple[float, float]:
    """(theta, phi) with sin(theta) = 2 i_v / m_v - 1 and sin(phi) = 2 i_h / m_h - 1."""
    _check_index(m_h_idx, m_h, "horizontal")
    _check_index(m_v_idx, m_v, "vertical")
    return float(np.arcsin(2 * m_v_idx / m_v - 1)), float(np.arcsin(2 * m_h_idx / m_h - 1))


def steering_vector(local_dirs, m_h: int, m_v: int, spacing: float = 0.5) -> np.ndarray:
    """Array response to local-frame directions, shape (..., m_h * m_v)."""
    d = np.asarray(local_dirs, dtype=float)
    u_h, u_v = d[..., 1:2], d[..., 2:3]
    n_h, n_v = np.arange(m_h), np.arange(m_v)
    ph = 2j * np.pi * spacing
    a_h = np.exp(-ph * n_h * (1.0 + u_h))
    a_v = np.exp(-ph * n_v * (1.0 + u_v))
    return (a_h[..., :, None] * a_v[..., None, :]).reshape(*d.shape[:-1], m_h * m_v)


def channel_vector(paths, array: SectorArray, frequency: float | None = None) -> np.ndarray:
    """Sum of path fields weighted by element gain and array response.

    ``paths`` is a list of objects with ``amplitude`` and ``departure_dir``.
    """
    h = np.zeros(array.size, dtype=complex)
    if not paths:
        return h
    amp = np.array([p.amplitude for p in paths], dtype=complex)
    dep = np.array([p.departure_dir for p in paths], dtype=float)
    return channel_from_arrays(amp, dep, array)


def channel_from_arrays(amp, dep, array: SectorArray) -> np.ndarray:
    g = array.gain_linear(dep)
    return (amp * np.sqrt(g)) @ array.steering(dep)


def beam_gains(h: np.ndarray, array: SectorArray | None = None, m_h: int | None = None, m_v: int | None = None):
    """|w^H h|^2 for every codebook beam (last axis of ``h``)."""
    if array is not None:
        m_h, m_v = array.m_h, array.m_v
    W = codebook(m_h, m_v)
    return np.abs(np.asarray(h) @ W.conj()) ** 2
