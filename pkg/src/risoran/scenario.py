"""World geometry, UE motion and scenario documents (YAML)."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .link import GeometryError, LinkGeometry, MultipathRay, RadioConfig
from .phy import RisAperture

PRESETS = ("indoor", "outdoor")


@dataclass(frozen=True)
class Trajectory:
    waypoints: Tuple[Tuple[str, Tuple[float, float, float]], ...]
    speed: float
    loop: bool = False

    def __post_init__(self):
        if len(self.waypoints) < 1:
            raise ValueError("a trajectory needs at least one waypoint")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        pts = self.points
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
            raise ValueError("consecutive waypoints must be distinct")

    @property
    def labels(self) -> List[str]:
        return [label for label, _ in self.waypoints]

    @property
    def points(self) -> np.ndarray:
        pts = np.array([p for _, p in self.waypoints], dtype=float)
        if self.loop and len(pts) > 1 and not np.array_equal(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[:1]])
        return pts

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    @property
    def duration(self) -> float:
        return self.length / self.speed


def position_at(trajectory: Trajectory, t: float) -> np.ndarray:
    """Constant-speed piecewise-linear position; holds at the end unless looping."""
    if t < 0:
        raise ValueError("t must be non-negative")
    pts = trajectory.points
    if len(pts) == 1:  # stationary UE
        return pts[0].copy()
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    s = trajectory.speed * t
    if trajectory.loop:
        s = s % total
    elif s >= total:
        return pts[-1].copy()
    edges = np.concatenate([[0.0], np.cumsum(seg)])
    i = min(int(np.searchsorted(edges, s, side="right")) - 1, len(seg) - 1)
    frac = (s - edges[i]) / seg[i]
    return pts[i] + frac * (pts[i + 1] - pts[i])


def azimuth_from_ris(geometry: LinkGeometry, ue_position) -> float:
    """Signed UE azimuth in the RIS x-z plane, degrees (0 = boresight, +x positive)."""
    v = geometry.to_ris_local(ue_position)
    if np.linalg.norm(v) == 0:
        raise GeometryError("UE coincides with the RIS")
    return float(np.rad2deg(np.arctan2(v[0], v[2])))


@dataclass(frozen=True)
class MeasurementConfig:
    noise_db: float = 1.0
    t_detach_dbm: float = -100.0
    t_attach_dbm: float = -95.0
    d_detach: int = 5

    def __post_init__(self):
        if self.t_attach_dbm <= self.t_detach_dbm:
            raise ValueError("attach threshold must exceed detach threshold")
        if self.d_detach < 1:
            raise ValueError("d_detach must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: LinkGeometry
    radio: RadioConfig
    aperture: RisAperture
    trajectory: Trajectory
    tick_interval: float = 0.05
    rng_seed: int = 0
    name: str = "custom"
    scan_range_deg: Tuple[float, float] = (20.0, 60.0)
    ue_beams_deg: Tuple[float, ...] = tuple(np.arange(-60.0, 61.0, 10.0))
    ue_initial_beam: Optional[int] = None  # None -> boresight (the beam closest to 0 deg)
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    ris_off_seed: int = 1234
    xapp: Dict = field(default_factory=dict)
    document: Dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.tick_interval <= 0:
            raise ValueError("tick_interval must be positive")

    @property
    def initial_ue_beam(self) -> int:
        if self.ue_initial_beam is not None:
            return self.ue_initial_beam
        return int(np.argmin(np.abs(np.asarray(self.ue_beams_deg))))

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, rng_seed=int(seed))


def _vec(value, label="") -> Tuple[float, float, float]:
    if isinstance(value, dict):
        az = np.deg2rad(float(value["azimuth"]))
        r = float(value["range"])
        h = float(value.get("height", 0.0))
        return (r * np.sin(az), h, r * np.cos(az))
    v = tuple(float(c) for c in value)
    if len(v) != 3:
        raise ValueError(f"{label or 'position'} must have three coordinates")
    return v


def scenario_from_dict(doc: Dict, trajectory: Optional[str] = None) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed scenario document."""
    doc = copy.deepcopy(doc)
    ris = doc.get("ris", {})
    aperture = RisAperture.with_seed(
        int(ris.get("n", 32)), ris.get("pre_phase_seed"),
        element_spacing=float(ris.get("spacing", 5.4e-3)),
        carrier_frequency=float(ris.get("frequency", 27.2e9)),
        efficiency=float(ris.get("efficiency", 1.0)),
    )
    radio_doc = dict(doc.get("radio", {}))
    radio_doc.setdefault("wavelength", aperture.wavelength)
    for key, value in radio_doc.items():
        if key in ("gnb_array", "ue_array"):
            radio_doc[key] = tuple(int(x) for x in value)
        elif key == "n_subcarriers":
            radio_doc[key] = int(value)
        else:
            radio_doc[key] = float(value)  # YAML 1.1 reads 40.0e6 as a string
    radio = RadioConfig(**radio_doc)

    waypoints = {name: _vec(p, name) for name, p in doc["waypoints"].items()}
    routes = doc.get("trajectories", {})
    route_name = trajectory or doc.get("trajectory")
    if route_name is None:
        labels = list(waypoints)
    elif route_name in routes:
        labels = routes[route_name]
    else:
        raise KeyError(f"unknown trajectory {route_name!r}; available: {sorted(routes)}")
    traj = Trajectory(tuple((lab, waypoints[lab]) for lab in labels),
                      float(doc.get("speed", 0.05)), bool(doc.get("loop", False)))

    geo = doc.get("geometry", {})
    mp = geo.get("multipath")
    multipath = None
    if mp:
        multipath = MultipathRay(_vec(mp["image"], "multipath image"), float(mp.get("gain_db", -25.0)))
    ue_doc = doc.get("ue", {})
    ris_pos = _vec(geo.get("ris", [0, 0, 0]))
    start = traj.waypoints[0][1]
    bore = ue_doc.get("boresight", "initial")
    if bore == "initial":
        ue_boresight = tuple(np.subtract(ris_pos, start))
    elif bore in (None, "track"):
        ue_boresight = None
    else:
        ue_boresight = _vec(bore, "ue boresight")
    geometry = LinkGeometry(
        gnb_position=_vec(geo.get("gnb", [0, 0, 6.4])),
        ris_position=ris_pos,
        ue_position=start,
        ris_normal=_vec(geo.get("ris_normal", [0, 0, 1])),
        ris_x_axis=_vec(geo.get("ris_x_axis", [1, 0, 0])),
        direct_path_blocked=bool(geo.get("direct_path_blocked", True)),
        ue_boresight=ue_boresight,
        multipath=multipath,
    )
    meas = MeasurementConfig(**{k: (int(v) if k == "d_detach" else float(v))
                                for k, v in doc.get("measurement", {}).items()})
    beams = ue_doc.get("beams_deg")
    if beams is None:
        beams = list(np.arange(-60.0, 61.0, 10.0))
    scan = doc.get("codebook", {})
    return ScenarioConfig(
        geometry=geometry,
        radio=radio,
        aperture=aperture,
        trajectory=traj,
        tick_interval=float(doc.get("tick_interval", 0.05)),
        rng_seed=int(doc.get("rng_seed", 0)),
        name=str(doc.get("name", "custom")),
        scan_range_deg=(float(scan.get("scan_start", 20.0)), float(scan.get("scan_end", 60.0))),
        ue_beams_deg=tuple(float(b) for b in beams),
        ue_initial_beam=ue_doc.get("initial_beam"),
        measurement=meas,
        ris_off_seed=int(doc.get("ris_off_seed", 1234)),
        xapp=dict(doc.get("xapp", {})),
        document=doc,
    )


def preset_document(name: str) -> Dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("risoran.presets").joinpath(f"{name}.yaml").read_text()
    return yaml.safe_load(text)


def load_scenario(source: Union[str, Path], trajectory: Optional[str] = None) -> ScenarioConfig:
    """Load a preset by name or a scenario YAML file by path."""
    if str(source) in PRESETS:
        doc = preset_document(str(source))
    else:
        doc = yaml.safe_load(Path(source).read_text())
    return scenario_from_dict(doc, trajectory)


def sample_times(trajectory: Trajectory, tick: float, duration: Optional[float] = None) -> np.ndarray:
    """Tick instants covering the whole trajectory (one pass when looping) or ``duration`` seconds."""
    total = trajectory.duration if duration is None else duration
    n = int(np.floor(total / tick + 1e-9)) + 1
    return tick * np.arange(n)


def visit_order(trajectory: Trajectory, times: Sequence[float], radius: float = 1e-6) -> List[str]:
    """Waypoint labels in the order the sampled path touches them."""
    seen: List[str] = []
    for t in times:
        p = position_at(trajectory, t)
        for label, w in trajectory.waypoints:
            if np.linalg.norm(p - np.asarray(w)) <= radius:
                if not seen or seen[-1] != label:
                    seen.append(label)
    return seen
