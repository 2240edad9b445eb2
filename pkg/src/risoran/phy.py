"""
1-bit RIS beam synthesis with random pre-phasing.

The surface is an N x N lattice in the x-y plane (normal +z), centred on the
origin. Codewords are binary state matrices (0 -> 0 deg, 1 -> 180 deg); the
fixed per-element delay-line offsets (``pre_phase``) are subtracted before
rounding so the rounding error loses its periodicity.

Angle conventions
-----------------
Angles are (theta, phi) in degrees. The incident direction is expressed in
the same frame as the reflected one, so ``incident == reflected`` is the
specular case and needs no phase gradient. On the azimuth cut (x-z plane) a
signed scan angle ``s`` maps to ``(|s|, 0)`` for ``s >= 0`` and
``(|s|, -180)`` otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.constants import speed_of_light

logger = logging.getLogger(__name__)

Angles = Tuple[float, float]

DEFAULT_FREQUENCY_HZ = 27.2e9
DEFAULT_SPACING_M = 5.4e-3
DEFAULT_GRID_STEP_DEG = 0.25
DEFAULT_CANDIDATES = 50


class ConfigurationError(ValueError):
    """Inconsistent aperture or codebook configuration."""


class SynthesisError(RuntimeError):
    """A synthesized beam does not point where it was asked to."""


def wrap_deg(phase):
    """Reduce phases (degrees) to the half-open interval (-180, 180]."""
    wrapped = np.mod(np.asarray(phase, dtype=float), 360.0)
    return np.where(wrapped > 180.0, wrapped - 360.0, wrapped)


def scan_to_angles(scan_deg: float) -> Angles:
    """Signed azimuth-cut angle -> (theta, phi)."""
    if scan_deg >= 0:
        return (float(scan_deg), 0.0)
    return (float(-scan_deg), -180.0)


def angles_to_scan(theta: float, phi: float) -> float:
    """(theta, phi) on the azimuth cut -> signed scan angle."""
    phi = float(wrap_deg(phi))
    if abs(phi) < 1e-9 or theta == 0:
        return float(theta)
    if abs(abs(phi) - 180.0) < 1e-9:
        return -float(theta)
    raise ValueError(f"direction ({theta}, {phi}) is not on the azimuth cut")


def _check_direction(angles: Angles, what: str) -> None:
    theta, phi = angles
    if not 0.0 <= theta < 90.0:
        raise ValueError(f"{what} theta={theta} outside [0, 90)")
    if not -180.0 <= phi < 180.0:
        raise ValueError(f"{what} phi={phi} outside [-180, 180)")


@dataclass(frozen=True)
class SteeringPair:
    incident: Angles
    reflected: Angles

    def __post_init__(self):
        _check_direction(self.incident, "incident")
        _check_direction(self.reflected, "reflected")

    @classmethod
    def on_cut(cls, scan_deg: float, incident: Angles = (0.0, 0.0)) -> "SteeringPair":
        return cls(tuple(incident), scan_to_angles(scan_deg))


@dataclass(frozen=True, eq=False)
class RisAperture:
    """Geometry and fixed pre-phase offsets of the surface."""

    n_elements_per_side: int
    element_spacing: float = DEFAULT_SPACING_M
    carrier_frequency: float = DEFAULT_FREQUENCY_HZ
    efficiency: float = 1.0
    pre_phase: Optional[np.ndarray] = None
    # seed that regenerates ``pre_phase``; -1 means all-zero, None means custom
    pre_phase_seed: Optional[int] = -1

    def __post_init__(self):
        n = self.n_elements_per_side
        if int(n) != n or n < 1:
            raise ConfigurationError(f"n_elements_per_side must be a positive integer, got {n}")
        if self.element_spacing <= 0:
            raise ConfigurationError("element_spacing must be positive")
        if self.carrier_frequency <= 0:
            raise ConfigurationError("carrier_frequency must be positive")
        if not 0 < self.efficiency <= 1:
            raise ConfigurationError("efficiency must lie in (0, 1]")
        if self.pre_phase is None:
            pre = np.zeros((n, n))
        else:
            pre = np.array(self.pre_phase, dtype=float)
        if pre.shape != (n, n):
            raise ConfigurationError(f"pre_phase has shape {pre.shape}, aperture needs {(n, n)}")
        if np.any(pre < 0) or np.any(pre >= 180):
            raise ConfigurationError("pre_phase entries must lie in [0, 180) degrees")
        pre.setflags(write=False)
        object.__setattr__(self, "pre_phase", pre)

    @classmethod
    def with_seed(cls, n: int, seed: Optional[int], **kwargs) -> "RisAperture":
        """Aperture whose pre-phase is ``generate_pre_phase(n, seed)`` (zero if seed is None or -1)."""
        if seed is None or seed == -1:
            return cls(n, pre_phase=None, pre_phase_seed=-1, **kwargs)
        return cls(n, pre_phase=generate_pre_phase(n, seed), pre_phase_seed=int(seed), **kwargs)

    @property
    def wavelength(self) -> float:
        return speed_of_light / self.carrier_frequency

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Element coordinates (x_m, y_n) of the centred lattice, metres."""
        n = self.n_elements_per_side
        c = (np.arange(n) - (n - 1) / 2.0) * self.element_spacing
        return c, c.copy()

    @property
    def element_positions(self) -> np.ndarray:
        """(N*N, 3) element positions, row-major over (m, n)."""
        x, y = self.coordinates
        xx, yy = np.meshgrid(x, y, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])

    @property
    def area(self) -> float:
        return (self.n_elements_per_side * self.element_spacing) ** 2


def _progressive_phase(aperture: RisAperture, angles: Angles) -> np.ndarray:
    theta, phi = np.deg2rad(angles[0]), np.deg2rad(angles[1])
    x, y = aperture.coordinates
    kx = aperture.wavenumber * np.sin(theta) * np.cos(phi)
    ky = aperture.wavenumber * np.sin(theta) * np.sin(phi)
    return np.rad2deg(kx * x[:, None] + ky * y[None, :])


def continuous_phase(aperture: RisAperture, steering: SteeringPair) -> np.ndarray:
    """Required element phases (degrees, wrapped to (-180, 180]) before quantization."""
    steer = _progressive_phase(aperture, steering.reflected)
    illum = _progressive_phase(aperture, steering.incident)
    return wrap_deg(steer - illum - aperture.pre_phase)


def quantize(phase) -> np.ndarray:
    """1-bit rounding: phases in [-90, 90) -> state 0, everything else -> state 1."""
    p = wrap_deg(phase)
    return ((p < -90.0) | (p >= 90.0)).astype(np.uint8)


def generate_pre_phase(n: int, seed: int) -> np.ndarray:
    """i.i.d. uniform delays on [0, 180) degrees, reproducible from ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 180.0, size=(n, n))


@dataclass(frozen=True, eq=False)
class Codeword:
    states: np.ndarray
    steering: SteeringPair
    index: int = 0

    def __post_init__(self):
        states = np.asarray(self.states)
        if states.ndim != 2 or states.shape[0] != states.shape[1]:
            raise ConfigurationError("codeword states must be a square matrix")
        if not np.all((states == 0) | (states == 1)):
            raise ConfigurationError("codeword states must be binary")
        states = states.astype(np.uint8)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    def __eq__(self, other):
        if not isinstance(other, Codeword):
            return NotImplemented
        return (self.index == other.index and self.steering == other.steering
                and np.array_equal(self.states, other.states))


def synthesize_codeword(aperture: RisAperture, steering: SteeringPair, index: int = 0) -> Codeword:
    return Codeword(quantize(continuous_phase(aperture, steering)), steering, index)


def interaction_vector(aperture: RisAperture, states: np.ndarray) -> np.ndarray:
    """Unit-modulus reflection coefficients (row-major) for a state matrix, pre-phase included."""
    phase = 180.0 * np.asarray(states, dtype=float) + aperture.pre_phase
    return np.exp(-1j * np.deg2rad(phase)).ravel()


@dataclass(frozen=True, eq=False)
class BeamPattern:
    grid: np.ndarray  # (K, 2) theta, phi in degrees
    magnitude_db: np.ndarray
    peak_linear: float

    def __post_init__(self):
        if len(self.grid) != len(self.magnitude_db):
            raise ValueError("grid and magnitude arrays differ in length")

    @property
    def cut(self) -> np.ndarray:
        """Signed scan angles; only defined when every grid point lies on the azimuth cut."""
        return np.array([angles_to_scan(t, p) for t, p in self.grid])


def azimuth_grid(start: float = -90.0, stop: float = 90.0, step: float = DEFAULT_GRID_STEP_DEG) -> np.ndarray:
    count = int(round((stop - start) / step)) + 1
    scan = start + step * np.arange(count)
    theta = np.abs(scan)
    phi = np.where(scan >= 0, 0.0, -180.0)
    return np.column_stack([theta, phi])


def array_factor_from_phase(aperture: RisAperture, excitation_deg, incident: Angles,
                            grid) -> BeamPattern:
    """Array factor for arbitrary (possibly continuous) element excitation phases."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("angle grid is empty")
    total = (np.asarray(excitation_deg, dtype=float)
             + _progressive_phase(aperture, incident) + aperture.pre_phase)
    weights = np.exp(-1j * np.deg2rad(total))
    theta, phi = np.deg2rad(grid[:, 0]), np.deg2rad(grid[:, 1])
    u = np.sin(theta) * np.cos(phi)
    v = np.sin(theta) * np.sin(phi)
    x, y = aperture.coordinates
    k = aperture.wavenumber
    # observation term carries the opposite sign to the excitation so the
    # beam lands on +theta_d rather than its image
    ex = np.exp(1j * k * np.outer(u, x))
    ey = np.exp(1j * k * np.outer(v, y))
    af = np.einsum("km,mn,kn->k", ex, weights, ey)
    mag = np.abs(af)
    peak = float(mag.max())
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag / peak) if peak > 0 else np.zeros_like(mag)
    db[np.argmax(mag)] = 0.0
    return BeamPattern(grid, db, peak)


def array_factor(aperture: RisAperture, codeword: Codeword, incident: Angles, grid) -> BeamPattern:
    return array_factor_from_phase(aperture, 180.0 * codeword.states, incident, grid)


def ideal_excitation(aperture: RisAperture, steering: SteeringPair) -> np.ndarray:
    """Unquantized compensating phases (the continuous counterpart of a codeword)."""
    return continuous_phase(aperture, steering)


@dataclass(frozen=True)
class BeamMetrics:
    hpbw_deg: float
    peak_angle: float
    sll_db: float
    quantization_lobe_db: float


def _half_power_edge(cut, db, peak_i, direction, level):
    i = peak_i
    while 0 <= i + direction < len(db) and db[i + direction] >= level:
        i += direction
    j = i + direction
    if not 0 <= j < len(db):
        return cut[i]
    # linear interpolation in dB between the last point above and first below
    frac = (db[i] - level) / (db[i] - db[j])
    return cut[i] + frac * (cut[j] - cut[i])


def _lobe_edge(db, peak_i, direction):
    i = peak_i
    while 0 <= i + direction < len(db) and db[i + direction] <= db[i]:
        i += direction
    return i


def beam_metrics(pattern: BeamPattern, main_beam: Angles,
                 specular: Angles = (0.0, 0.0), tolerance_deg: float = 2.0) -> BeamMetrics:
    """Main-lobe width, side-lobe level and mirror-lobe level on an azimuth cut.

    The main lobe is found by climbing from the grid point nearest
    ``main_beam``; 1-bit rounding can pull the peak off nominal by up to about
    a degree, hence the default ``tolerance_deg``.
    """
    cut = pattern.cut
    order = np.argsort(cut, kind="stable")
    cut = cut[order]
    db = pattern.magnitude_db[order]
    res = float(np.min(np.diff(cut))) if len(cut) > 1 else 0.0
    target = angles_to_scan(*main_beam)

    i = int(np.argmin(np.abs(cut - target)))
    while True:
        nxt = i
        if i > 0 and db[i - 1] > db[nxt]:
            nxt = i - 1
        if i < len(db) - 1 and db[i + 1] > db[nxt]:
            nxt = i + 1
        if nxt == i:
            break
        i = nxt
    peak_i = i
    if abs(cut[peak_i] - target) > max(tolerance_deg, 2 * res) + 1e-9 or db[peak_i] < -6.0:
        raise SynthesisError(
            f"main beam requested at {target:.2f} deg, nearest lobe peaks at "
            f"{cut[peak_i]:.2f} deg ({db[peak_i]:.1f} dB)")
    peak_db = db[peak_i]

    level = peak_db - 3.0
    left = _half_power_edge(cut, db, peak_i, -1, level)
    right = _half_power_edge(cut, db, peak_i, +1, level)
    hpbw = float(right - left)

    lo, hi = _lobe_edge(db, peak_i, -1), _lobe_edge(db, peak_i, +1)
    outside = np.concatenate([db[:lo], db[hi + 1:]])
    sll = float(peak_db - outside.max()) if outside.size else np.inf

    u_spec = np.sin(np.deg2rad(angles_to_scan(*specular)))
    u_mirror = 2 * u_spec - np.sin(np.deg2rad(cut[peak_i]))
    if abs(u_mirror) > 1:
        qlobe = np.inf
    else:
        mirror = np.rad2deg(np.arcsin(u_mirror))
        half = max(hpbw / 2.0, res)
        window = np.abs(cut - mirror) <= half + 1e-9
        qlobe = float(peak_db - db[window].max()) if window.any() else np.inf
    return BeamMetrics(hpbw, float(cut[peak_i]), sll, qlobe)


@dataclass(frozen=True)
class PrePhaseSearch:
    seed: int
    pre_phase: np.ndarray
    worst_lobe_db: float  # worst (highest) mirror-lobe level relative to peak, dB (negative is good)
    scores: Tuple[float, ...]


def _worst_lobe(aperture: RisAperture, steering_set: Sequence[SteeringPair], grid) -> float:
    worst = -np.inf
    for steering in steering_set:
        cw = synthesize_codeword(aperture, steering)
        pattern = array_factor(aperture, cw, steering.incident, grid)
        m = beam_metrics(pattern, steering.reflected, specular=steering.incident)
        worst = max(worst, -m.quantization_lobe_db)
    return worst


def search_pre_phase(n: int, candidate_count: int, steering_set: Sequence[SteeringPair], seed: int,
                     element_spacing: float = DEFAULT_SPACING_M,
                     carrier_frequency: float = DEFAULT_FREQUENCY_HZ,
                     grid_step_deg: float = DEFAULT_GRID_STEP_DEG) -> PrePhaseSearch:
    """Random search over seeds ``seed .. seed+candidate_count-1``; lowest worst-case mirror lobe wins."""
    if candidate_count < 1:
        raise ValueError("candidate_count must be >= 1")
    if not steering_set:
        raise ValueError("steering_set is empty")
    grid = azimuth_grid(step=grid_step_deg)
    scores = []
    best = None
    for k in range(candidate_count):
        cand_seed = seed + k
        ap = RisAperture.with_seed(n, cand_seed, element_spacing=element_spacing,
                                   carrier_frequency=carrier_frequency)
        score = _worst_lobe(ap, steering_set, grid)
        scores.append(score)
        if best is None or score < best[1]:
            best = (cand_seed, score, ap.pre_phase)
    logger.debug("pre-phase search: best seed %d, worst lobe %.2f dB", best[0], best[1])
    return PrePhaseSearch(best[0], np.array(best[2]), best[1], tuple(scores))


def optimize_pre_phase(n: int, candidate_count: int, steering_set: Sequence[SteeringPair], seed: int,
                       **kwargs) -> np.ndarray:
    return search_pre_phase(n, candidate_count, steering_set, seed, **kwargs).pre_phase


@dataclass(frozen=True, eq=False)
class Codebook:
    aperture: RisAperture
    incident: Angles
    scan_start_deg: float
    scan_end_deg: float
    step_deg: float
    codewords: Tuple[Codeword, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.codewords)

    def __getitem__(self, index: int) -> Codeword:
        return self.codewords[index]

    def __iter__(self):
        return iter(self.codewords)

    @property
    def angles(self) -> np.ndarray:
        return np.array([angles_to_scan(*cw.steering.reflected) for cw in self.codewords])

    def angle_of(self, index: int) -> float:
        return angles_to_scan(*self.codewords[index].steering.reflected)

    def nearest_index(self, scan_deg: float) -> int:
        return int(np.argmin(np.abs(self.angles - scan_deg)))

    def interaction_vectors(self) -> np.ndarray:
        """(len, N*N) complex reflection coefficients for every codeword."""
        return np.array([interaction_vector(self.aperture, cw.states) for cw in self.codewords])

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return (self.incident == other.incident and self.scan_start_deg == other.scan_start_deg
                and self.scan_end_deg == other.scan_end_deg and self.step_deg == other.step_deg
                and np.array_equal(self.aperture.pre_phase, other.aperture.pre_phase)
                and self.codewords == other.codewords)


def scan_angles(scan_start_deg: float, scan_end_deg: float, step_deg: float) -> np.ndarray:
    if step_deg <= 0:
        raise ValueError("step_deg must be positive")
    if scan_start_deg >= scan_end_deg:
        raise ValueError("scan_start_deg must be below scan_end_deg")
    count = int(np.floor((scan_end_deg - scan_start_deg) / step_deg + 1e-9)) + 1
    return np.round(scan_start_deg + step_deg * np.arange(count), 9)


def build_codebook(aperture: RisAperture, incident: Angles = (0.0, 0.0),
                   scan_start_deg: float = 20.0, scan_end_deg: float = 60.0,
                   step_deg: float = 2.0) -> Codebook:
    """Azimuth-only sweep at fixed elevation; index i steers to start + i*step."""
    incident = (float(incident[0]), float(incident[1]))
    words = tuple(
        synthesize_codeword(aperture, SteeringPair.on_cut(a, incident), i)
        for i, a in enumerate(scan_angles(scan_start_deg, scan_end_deg, step_deg))
    )
    return Codebook(aperture, incident, float(scan_start_deg), float(scan_end_deg), float(step_deg), words)


def default_aperture(pre_phase_seed: Optional[int] = None, n: int = 32) -> RisAperture:
    return RisAperture.with_seed(n, pre_phase_seed)


