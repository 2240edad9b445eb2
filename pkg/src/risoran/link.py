"""
Link budget through the RIS: radar-cross-section formulas, per-element
free-space channel synthesis, and the narrowband cascaded RSRP observable.

Powers are in dBm, gains in dBi, distances in metres. Element gains in
``RadioConfig`` are per antenna element; array gain comes from the unit-norm
beamforming/combining vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.constants import speed_of_light

from .phy import Angles, RisAperture

Vector = Tuple[float, float, float]

UP = np.array([0.0, 1.0, 0.0])


class GeometryError(ValueError):
    """Degenerate placement (coincident points, non-unit normal, ...)."""


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise GeometryError("zero-length direction")
    return v / norm


def direction(theta_deg: float, phi_deg: float) -> np.ndarray:
    t, p = np.deg2rad(theta_deg), np.deg2rad(phi_deg)
    return np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)])


def unit_vectors(incident: Angles, reflected: Angles):
    """Propagation directions of the incident and reflected waves plus the aperture normal."""
    return direction(*incident), direction(*reflected), np.array([0.0, 0.0, 1.0])


def monostatic_rcs(area: float, wavelength: float, efficiency: float = 1.0) -> float:
    if area <= 0 or wavelength <= 0 or efficiency <= 0:
        raise ValueError("area, wavelength and efficiency must be positive")
    return 4 * np.pi * efficiency * area ** 2 / wavelength ** 2


def bistatic_rcs(area: float, wavelength: float, efficiency: float,
                 theta_i: float, theta_d: float) -> float:
    """Flat-plate bistatic RCS; angles in degrees from the surface normal."""
    for t in (theta_i, theta_d):
        if not 0 <= t < 90:
            raise ValueError(f"angle {t} outside [0, 90)")
    cos_i, cos_d = np.cos(np.deg2rad(theta_i)), np.cos(np.deg2rad(theta_d))
    return float((cos_i * cos_d) * monostatic_rcs(area, wavelength, efficiency))


def db(x):
    return 10 * np.log10(x)


def undb(x):
    return 10 ** (np.asarray(x, dtype=float) / 10)


@dataclass(frozen=True)
class MultipathRay:
    """Single specular ray modelled as an image of the gNB."""

    image_position: Vector
    gain_db: float = -25.0


@dataclass(frozen=True)
class LinkGeometry:
    gnb_position: Vector
    ris_position: Vector
    ue_position: Vector
    ris_normal: Vector = (0.0, 0.0, 1.0)
    ris_x_axis: Vector = (1.0, 0.0, 0.0)
    direct_path_blocked: bool = True
    # None -> array faces the RIS centre from its current position
    gnb_boresight: Optional[Vector] = None
    ue_boresight: Optional[Vector] = None
    multipath: Optional[MultipathRay] = None

    def __post_init__(self):
        n = np.asarray(self.ris_normal, dtype=float)
        if abs(np.linalg.norm(n) - 1) > 1e-12:
            raise GeometryError("ris_normal must have unit norm")
        if self.r_i <= 0 or self.r_d <= 0:
            raise GeometryError("gNB and UE must be separated from the RIS")

    @property
    def r_i(self) -> float:
        return float(np.linalg.norm(np.subtract(self.gnb_position, self.ris_position)))

    @property
    def r_d(self) -> float:
        return float(np.linalg.norm(np.subtract(self.ue_position, self.ris_position)))

    def with_ue(self, ue_position) -> "LinkGeometry":
        return replace(self, ue_position=tuple(float(c) for c in ue_position))

    @property
    def ris_frame(self) -> np.ndarray:
        """Rows: local x, y and normal axes of the surface, in world coordinates."""
        n = np.asarray(self.ris_normal, dtype=float)
        x = np.asarray(self.ris_x_axis, dtype=float)
        x = _unit(x - np.dot(x, n) * n)
        return np.vstack([x, np.cross(n, x), n])

    def to_ris_local(self, point) -> np.ndarray:
        return self.ris_frame @ (np.asarray(point, dtype=float) - np.asarray(self.ris_position, dtype=float))

    def local_angles(self, point) -> Angles:
        """(theta, phi) of ``point`` seen from the RIS centre, in the RIS frame."""
        v = self.to_ris_local(point)
        r = np.linalg.norm(v)
        if r == 0:
            raise GeometryError("point coincides with the RIS")
        theta = np.rad2deg(np.arccos(np.clip(v[2] / r, -1, 1)))
        phi = np.rad2deg(np.arctan2(v[1], v[0]))
        if phi >= 180:
            phi -= 360
        return float(theta), float(phi)

    def incident_angles(self) -> Angles:
        """Incident direction in the codebook convention (mirror of the gNB direction)."""
        theta, phi = self.local_angles(self.gnb_position)
        if theta == 0:
            return (0.0, 0.0)
        phi = phi + 180.0
        if phi >= 180:
            phi -= 360
        return theta, phi

    def ris_element_positions(self, aperture: RisAperture) -> np.ndarray:
        local = aperture.element_positions
        return np.asarray(self.ris_position, dtype=float) + local @ self.ris_frame


@dataclass(frozen=True)
class RadioConfig:
    tx_power_dbm: float = -20.0
    gnb_gain_dbi: float = 5.0
    ue_gain_dbi: float = 5.0
    wavelength: float = speed_of_light / 27.2e9
    # thermal noise over one 30 kHz subcarrier plus 7 dB noise figure
    noise_power_dbm: float = -122.0
    bandwidth_hz: float = 40e6
    n_subcarriers: int = 1296
    gnb_array: Tuple[int, int] = (4, 4)  # (columns, rows)
    ue_array: Tuple[int, int] = (4, 4)
    rsrp_offset_db: float = 0.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if self.n_subcarriers < 1 or self.gnb_elements < 1 or self.ue_elements < 1:
            raise ValueError("subcarrier and element counts must be positive")

    @property
    def gnb_elements(self) -> int:
        return self.gnb_array[0] * self.gnb_array[1]

    @property
    def ue_elements(self) -> int:
        return self.ue_array[0] * self.ue_array[1]

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    def per_antenna_power_ok(self, beam: np.ndarray) -> bool:
        """Each antenna may draw at most P_t / M_gNB of the unit-norm beam."""
        return bool(np.all(np.abs(beam) ** 2 <= 1.0 / self.gnb_elements + 1e-12))


def received_power(radio: RadioConfig, geometry: LinkGeometry, rcs: float) -> float:
    """Bistatic radar equation, dBm."""
    if rcs <= 0:
        raise ValueError("rcs must be positive")
    r_i, r_d = geometry.r_i, geometry.r_d
    if r_i <= 0 or r_d <= 0:
        raise GeometryError("distances must be positive")
    lin = (undb(radio.tx_power_dbm) * undb(radio.gnb_gain_dbi) * undb(radio.ue_gain_dbi)
           * radio.wavelength ** 2 * rcs / ((4 * np.pi) ** 3 * r_i ** 2 * r_d ** 2))
    return float(db(lin))


def upa_positions(center, boresight, shape: Tuple[int, int], spacing: float) -> np.ndarray:
    """(cols*rows, 3) element positions of a planar array facing ``boresight``."""
    b = _unit(boresight)
    h = np.cross(UP, b)
    if np.linalg.norm(h) < 1e-9:
        h = np.array([1.0, 0.0, 0.0])
    h = _unit(h)
    v = np.cross(b, h)
    cols, rows = shape
    ci = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    rj = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    cc, rr = np.meshgrid(ci, rj, indexing="ij")
    return np.asarray(center, dtype=float) + cc.reshape(-1, 1) * h + rr.reshape(-1, 1) * v


def array_axes(boresight) -> Tuple[np.ndarray, np.ndarray]:
    """Boresight and horizontal axis used by ``upa_positions``."""
    b = _unit(boresight)
    h = np.cross(UP, b)
    if np.linalg.norm(h) < 1e-9:
        h = np.array([1.0, 0.0, 0.0])
    return b, _unit(h)


def steering_vector(positions: np.ndarray, center, toward, wavenumber: float) -> np.ndarray:
    """Unit-norm, equal-magnitude weights coherent for a far source in direction ``toward``."""
    d = _unit(toward)
    phase = wavenumber * (positions - np.asarray(center, dtype=float)) @ d
    return np.exp(1j * phase) / np.sqrt(len(positions))


def _free_space(src: np.ndarray, dst: np.ndarray, wavelength: float) -> Tuple[np.ndarray, np.ndarray]:
    """(len(dst), len(src)) complex free-space gains and distances."""
    diff = dst[:, None, :] - src[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    if np.any(dist <= 0):
        raise GeometryError("coincident antenna positions")
    k = 2 * np.pi / wavelength
    return wavelength / (4 * np.pi * dist) * np.exp(-1j * k * dist), diff


def _ris_hop(ris_pos: np.ndarray, normal: np.ndarray, antennas: np.ndarray,
             element_gain_db: float, cell_gain: float, wavelength: float) -> np.ndarray:
    """(len(antennas), N*N) channel between one array and the RIS cells.

    Each cell radiates like a small aperture of gain ``cell_gain * cos``.
    The same expression serves both hops, so swapping endpoints transposes it.
    """
    h, diff = _free_space(ris_pos, antennas, wavelength)
    dist = np.linalg.norm(diff, axis=-1)
    cos = np.clip(diff @ normal / dist, 0.0, None)
    return h * np.sqrt(undb(element_gain_db) * cell_gain * cos)


@dataclass(frozen=True, eq=False)
class CascadedChannel:
    h_gnb_ris: np.ndarray  # (N*N, M_gNB)
    h_ris_ue: np.ndarray  # (M_UE, N*N)
    psi: np.ndarray  # (N*N,)
    h_gnb_ue: Optional[np.ndarray] = None  # (M_UE, M_gNB); None -> blocked
    gnb_positions: Optional[np.ndarray] = field(default=None, repr=False)
    ue_positions: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n2 = self.h_gnb_ris.shape[0]
        if self.h_ris_ue.shape[1] != n2 or np.shape(self.psi) != (n2,):
            raise ValueError("channel dimensions disagree with the aperture size")
        if not np.allclose(np.abs(self.psi), 1.0, atol=1e-9):
            raise ValueError("psi must be unit-modulus")

    def with_psi(self, psi) -> "CascadedChannel":
        return replace(self, psi=np.asarray(psi, dtype=complex))

    def effective(self, ue_combiner: np.ndarray, gnb_beam: np.ndarray) -> Tuple[np.ndarray, complex]:
        """Per-cell cascade gains ``g`` and the direct term ``d``: the link is ``g @ psi + d``."""
        left = np.conj(ue_combiner) @ self.h_ris_ue
        right = self.h_gnb_ris @ gnb_beam
        direct = 0j
        if self.h_gnb_ue is not None:
            direct = complex(np.conj(ue_combiner) @ self.h_gnb_ue @ gnb_beam)
        return left * right, direct


def synthesize_channels(aperture: RisAperture, geometry: LinkGeometry, radio: RadioConfig) -> CascadedChannel:
    """Per-element line-of-sight channels (near-field exact distances, Friis spreading)."""
    lam = radio.wavelength
    spacing = lam / 2
    ris_pos = geometry.ris_element_positions(aperture)
    normal = np.asarray(geometry.ris_normal, dtype=float)
    ris_c = np.asarray(geometry.ris_position, dtype=float)
    gnb_c = np.asarray(geometry.gnb_position, dtype=float)
    ue_c = np.asarray(geometry.ue_position, dtype=float)
    gnb_bore = geometry.gnb_boresight if geometry.gnb_boresight is not None else ris_c - gnb_c
    ue_bore = geometry.ue_boresight if geometry.ue_boresight is not None else ris_c - ue_c
    gnb_pos = upa_positions(gnb_c, gnb_bore, radio.gnb_array, spacing)
    ue_pos = upa_positions(ue_c, ue_bore, radio.ue_array, spacing)

    cell_gain = 4 * np.pi * aperture.element_spacing ** 2 / lam ** 2
    h_gr = _ris_hop(ris_pos, normal, gnb_pos, radio.gnb_gain_dbi, cell_gain, lam).T
    h_ru = _ris_hop(ris_pos, normal, ue_pos, radio.ue_gain_dbi, cell_gain, lam) * np.sqrt(aperture.efficiency)

    h_gu = _direct_channel(geometry, radio, gnb_pos, ue_pos)
    psi = np.ones(ris_pos.shape[0], dtype=complex)
    return CascadedChannel(h_gr, h_ru, psi, h_gu, gnb_pos, ue_pos)


def _direct_channel(geometry: LinkGeometry, radio: RadioConfig, gnb_pos: np.ndarray,
                    ue_pos: np.ndarray) -> Optional[np.ndarray]:
    """gNB-UE channel without the surface: line of sight if unblocked plus an image-source ray."""
    if geometry.direct_path_blocked and geometry.multipath is None:
        return None
    lam = radio.wavelength
    h_gu = np.zeros((len(ue_pos), len(gnb_pos)), dtype=complex)
    scale = np.sqrt(undb(radio.gnb_gain_dbi) * undb(radio.ue_gain_dbi))
    if not geometry.direct_path_blocked:
        h_gu += _free_space(gnb_pos, ue_pos, lam)[0] * scale
    if geometry.multipath is not None:
        gnb_c = np.asarray(geometry.gnb_position, dtype=float)
        image = gnb_pos - gnb_c + np.asarray(geometry.multipath.image_position, dtype=float)
        h_gu += _free_space(image, ue_pos, lam)[0] * scale * 10 ** (geometry.multipath.gain_db / 20)
    return h_gu


def gnb_beam(channel: CascadedChannel, geometry: LinkGeometry, radio: RadioConfig) -> np.ndarray:
    """Fixed gNB beam toward the RIS centre."""
    gnb_c = np.asarray(geometry.gnb_position, dtype=float)
    toward = np.asarray(geometry.ris_position, dtype=float) - gnb_c
    return steering_vector(channel.gnb_positions, gnb_c, toward, radio.wavenumber)


def ue_codebook(geometry: LinkGeometry, radio: RadioConfig, positions: np.ndarray,
                angles_deg: Sequence[float]) -> np.ndarray:
    """(len(angles), M_UE) combiners steered horizontally, relative to the UE array boresight."""
    ue_c = np.asarray(geometry.ue_position, dtype=float)
    bore = geometry.ue_boresight
    if bore is None:
        bore = np.asarray(geometry.ris_position, dtype=float) - ue_c
    b, h = array_axes(bore)
    out = []
    for a in np.deg2rad(np.asarray(angles_deg, dtype=float)):
        out.append(steering_vector(positions, ue_c, np.cos(a) * b + np.sin(a) * h, radio.wavenumber))
    return np.array(out)


def rsrp(channel: CascadedChannel, ue_combiner: np.ndarray, gnb_beam: np.ndarray,
         radio: RadioConfig) -> float:
    """Narrowband cascaded received power in dBm, floored at the noise power."""
    ue_combiner = np.asarray(ue_combiner)
    gnb_beam = np.asarray(gnb_beam)
    if ue_combiner.shape != (channel.h_ris_ue.shape[0],) or gnb_beam.shape != (channel.h_gnb_ris.shape[1],):
        raise ValueError("combiner / beam dimensions do not match the channel")
    g, d = channel.effective(ue_combiner, gnb_beam)
    return power_dbm(g @ channel.psi + d, radio)


def power_dbm(amplitude, radio: RadioConfig):
    """|amplitude|^2 * P_t in dBm with offset, floored at the noise power."""
    mag2 = np.abs(amplitude) ** 2
    with np.errstate(divide="ignore"):
        p = radio.tx_power_dbm + 10 * np.log10(mag2) + radio.rsrp_offset_db
    return np.maximum(p, radio.noise_power_dbm) if np.ndim(p) else float(max(p, radio.noise_power_dbm))


def throughput_proxy(snr_db: float, bandwidth_hz: float, efficiency_factor: float = 0.65) -> float:
    """Scaled Shannon rate in bit/s."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    if not 0 < efficiency_factor <= 1:
        raise ValueError("efficiency_factor must lie in (0, 1]")
    return float(efficiency_factor * bandwidth_hz * np.log2(1 + 10 ** (snr_db / 10)))


def joint_beam_search(codebook_ris: Sequence, codebook_ue: Sequence,
                      channel_fn: Callable) -> Tuple[int, int, float]:
    """Exhaustive argmax over (UE combiner, RIS codeword) pairs.

    ``channel_fn(w, psi)`` returns the RSRP of one pair. Ties go to the
    lexicographically lowest (ue_index, ris_index).
    """
    if len(codebook_ris) == 0 or len(codebook_ue) == 0:
        raise ValueError("codebooks must be non-empty")
    best = (0, 0, -np.inf)
    for i, w in enumerate(codebook_ue):
        for j, psi in enumerate(codebook_ris):
            p = channel_fn(w, psi)
            if p > best[2]:
                best = (i, j, p)
    return best


class LinkEvaluator:
    """Caches the gNB-side hop so moving the UE only recomputes the RIS-UE hop."""

    def __init__(self, aperture: RisAperture, geometry: LinkGeometry, radio: RadioConfig,
                 ue_beams_deg: Sequence[float]):
        self.aperture = aperture
        self.geometry = geometry
        self.radio = radio
        self.ue_beams_deg = tuple(float(a) for a in ue_beams_deg)
        base = synthesize_channels(aperture, geometry, radio)
        self._beam = gnb_beam(base, geometry, radio)
        self._right = base.h_gnb_ris @ self._beam
        self._gnb_positions = base.gnb_positions
        self._cache_key = None
        self._cache = None

    def _cascade(self, ue_position) -> Tuple[np.ndarray, np.ndarray]:
        """(B, N*N) per-cell gains and (B,) direct terms for every UE beam."""
        key = tuple(np.round(np.asarray(ue_position, dtype=float), 12))
        if key == self._cache_key:
            return self._cache
        geo = self.geometry.with_ue(ue_position)
        lam = self.radio.wavelength
        ue_c = np.asarray(geo.ue_position, dtype=float)
        bore = geo.ue_boresight if geo.ue_boresight is not None else np.asarray(geo.ris_position) - ue_c
        ue_pos = upa_positions(ue_c, bore, self.radio.ue_array, lam / 2)
        cell_gain = 4 * np.pi * self.aperture.element_spacing ** 2 / lam ** 2
        h_ru = _ris_hop(geo.ris_element_positions(self.aperture), np.asarray(geo.ris_normal, dtype=float),
                        ue_pos, self.radio.ue_gain_dbi, cell_gain, lam) * np.sqrt(self.aperture.efficiency)
        w = ue_codebook(geo, self.radio, ue_pos, self.ue_beams_deg)
        left = np.conj(w) @ h_ru
        direct = np.zeros(len(w), dtype=complex)
        h_gu = _direct_channel(geo, self.radio, self._gnb_positions, ue_pos)
        if h_gu is not None:
            direct = np.conj(w) @ h_gu @ self._beam
        self._cache_key, self._cache = key, (left * self._right, direct)
        return self._cache

    def rsrp(self, ue_position, psi, ue_beam: Optional[int] = None):
        """RSRP in dBm for one UE beam, or an array over all beams when ``ue_beam`` is None."""
        g, d = self._cascade(ue_position)
        amp = g @ np.asarray(psi) + d
        return power_dbm(amp if ue_beam is None else amp[ue_beam], self.radio)

    def rsrp_matrix(self, ue_position, psis: np.ndarray) -> np.ndarray:
        """(B, L) RSRP over UE beams and RIS interaction vectors."""
        g, d = self._cascade(ue_position)
        return power_dbm(g @ np.asarray(psis).T + d[:, None], self.radio)
