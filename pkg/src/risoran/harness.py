"""Experiment runners, trace/grid containers and their CSV and JSON forms."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .e2lite import (Connectivity, MemoryTransport, RanEndpoint, RisController, Target, TcpTransport, TraceRow)
from .link import LinkEvaluator, joint_beam_search, throughput_proxy
from .phy import Codebook, build_codebook
from .scenario import ScenarioConfig
from .xapp import XappConfig, XappEndpoint

log = logging.getLogger(__name__)


@lru_cache(maxsize=16)
def _codebook(aperture, incident, start, stop, step) -> Codebook:
    return build_codebook(aperture, incident, start, stop, step)


def scenario_codebook(scenario: ScenarioConfig, step_deg: float = 2.0) -> Codebook:
    """Codebook over the scenario's scan range for the gNB's incidence on the RIS."""
    inc = tuple(round(float(a), 9) for a in scenario.geometry.incident_angles())
    lo, hi = scenario.scan_range_deg
    return _codebook(scenario.aperture, inc, lo, hi, float(step_deg))


def xapp_config_for(scenario: ScenarioConfig, codebook: Codebook, **overrides) -> XappConfig:
    doc = dict(scenario.xapp)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    doc["ris_codebook_len"] = len(codebook)
    doc["ue_codebook_len"] = len(scenario.ue_beams_deg)
    doc.setdefault("t_attach_dbm", scenario.measurement.t_attach_dbm)
    return XappConfig.from_dict(doc)


# ---------------------------------------------------------------- traces

TRACE_COLUMNS = ("timestamp_ms", "ue_x", "ue_y", "ue_z", "true_azimuth_deg", "ris_index", "ris_angle_deg",
                 "ue_index", "rsrp_dbm", "connectivity", "algorithm_event", "tracked_ris_index",
                 "optimal_ris_index")


@dataclass
class ExperimentTrace:
    rows: List[TraceRow]
    commands: List[tuple] = field(default_factory=list)   # (report seq, target, index)
    meta: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        if name in ("ue_x", "ue_y", "ue_z"):
            k = "xyz".index(name[-1])
            return np.array([r.ue_position[k] for r in self.rows])
        if name == "connectivity":
            return np.array([r.connectivity.value for r in self.rows])
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def attached(self) -> np.ndarray:
        return np.array([r.connectivity is Connectivity.ATTACHED for r in self.rows])

    def ris_command_count(self) -> int:
        return sum(1 for c in self.commands if c[1] == Target.RIS.value)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([r.timestamp_ms, *map(repr, r.ue_position), repr(r.true_azimuth_deg), r.ris_index,
                        repr(r.ris_angle_deg), r.ue_index, repr(r.rsrp_dbm), r.connectivity.value,
                        r.algorithm_event, r.tracked_ris_index, r.optimal_ris_index])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExperimentTrace":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        rows = []
        for rec in reader:
            rows.append(TraceRow(int(rec[0]), (float(rec[1]), float(rec[2]), float(rec[3])), float(rec[4]),
                                 int(rec[5]), float(rec[6]), int(rec[7]), float(rec[8]), Connectivity(rec[9]),
                                 rec[10], int(rec[11]), int(rec[12])))
        return cls(rows)


def _mobility_endpoints(scenario: ScenarioConfig, config: XappConfig, codebook: Codebook,
                        times: Optional[Sequence[float]] = None):
    ran = RanEndpoint(scenario, codebook, 0, times)
    ris = RisController(codebook, 0)
    xapp = XappEndpoint(config, 0, scenario.initial_ue_beam)
    return ran, xapp, ris


def run_mobility(scenario: ScenarioConfig, config: Optional[XappConfig] = None, transport: str = "memory",
                 codebook: Optional[Codebook] = None, times: Optional[Sequence[float]] = None) -> ExperimentTrace:
    """Play the trajectory through the RAN, xApp and RIS controller endpoints."""
    if codebook is None:
        step = config.ris_step_deg if config is not None else scenario.xapp.get("ris_step_deg", 2)
        codebook = scenario_codebook(scenario, step)
    if config is None:
        config = xapp_config_for(scenario, codebook)
    if config.ris_codebook_len != len(codebook):
        raise ValueError("xApp config and codebook disagree on the codebook length")
    ran, xapp, ris = _mobility_endpoints(scenario, config, codebook, times)
    runner = {"memory": MemoryTransport, "tcp": TcpTransport}.get(transport)
    if runner is None:
        raise ValueError(f"unknown transport {transport!r}")
    trace = ExperimentTrace(ran.rows)
    trace.meta = dict(scenario=scenario.name, seed=scenario.rng_seed, algorithm=config.algorithm.value,
                      ris_step_deg=config.ris_step_deg, ue_adapt_period=config.ue_adapt_period,
                      transport=transport, codebook_angles=[float(a) for a in codebook.angles])
    try:
        runner(ran, xapp, ris).run()
    finally:
        trace.rows = list(ran.rows)
        trace.commands = [(r, c.target.value, c.beam_index) for r, c in zip(xapp.command_reports, xapp.commands)]
        trace.meta["events"] = len(xapp.tracker.events)
    return trace


# ---------------------------------------------------------------- coverage

@dataclass(frozen=True)
class GridSpec:
    azimuths_deg: tuple = tuple(np.arange(20.0, 60.01, 2.0))
    ranges_m: tuple = (3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    height_m: float = 0.0


@dataclass
class CoverageCell:
    azimuth_deg: float
    range_m: float
    x: float
    y: float
    z: float
    rsrp_with_ris: float
    rsrp_without_ris: float
    gain_db: float
    best_ris_index: int
    best_ue_index: int
    throughput_proxy: float


@dataclass
class CoverageGrid:
    cells: List[CoverageCell]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(c, name) for c in self.cells])

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(CoverageCell)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for c in self.cells:
            w.writerow([repr(getattr(c, n)) for n in names])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CoverageGrid":
        reader = csv.reader(io.StringIO(text))
        names = next(reader)
        types = {f.name: f.type for f in fields(CoverageCell)}
        if names != list(types):
            raise ValueError("unexpected coverage header")
        cells = [CoverageCell(**{n: (int(v) if types[n] in (int, "int") else float(v)) for n, v in zip(names, rec)})
                 for rec in reader]
        return cls(cells)


def ris_off_psi(n_cells: int, seed: int, mode: str = "random") -> np.ndarray:
    """Interaction vector of an unconfigured surface: seeded random phases, or all zero."""
    if mode == "zero":
        return np.zeros(n_cells, dtype=complex)
    if mode != "random":
        raise ValueError("mode must be 'random' or 'zero'")
    rng = np.random.default_rng(seed)
    return np.exp(1j * rng.uniform(0.0, 2 * np.pi, n_cells))


def run_coverage(scenario: ScenarioConfig, grid: GridSpec = GridSpec(), step_deg: float = 2.0,
                 baseline: str = "random") -> CoverageGrid:
    """Joint RIS/UE beam search per cell against an unconfigured-surface baseline."""
    codebook = scenario_codebook(scenario, step_deg)
    psis = codebook.interaction_vectors()
    off = ris_off_psi(psis.shape[1], scenario.ris_off_seed, baseline)
    cells = []
    for r in grid.ranges_m:
        for az in grid.azimuths_deg:
            a = np.deg2rad(az)
            local = np.array([r * np.sin(a), grid.height_m, r * np.cos(a)])
            pos = np.asarray(scenario.geometry.ris_position, dtype=float) + scenario.geometry.ris_frame.T @ local
            # the UE array faces the surface at every cell
            geo = replace(scenario.geometry.with_ue(tuple(pos)), ue_boresight=None)
            ev = LinkEvaluator(scenario.aperture, geo, scenario.radio, scenario.ue_beams_deg)
            mat = ev.rsrp_matrix(pos, psis)
            ue_i, ris_i, best = joint_beam_search(range(mat.shape[1]), range(mat.shape[0]),
                                                  lambda w, p: mat[w, p])
            without = float(np.max(ev.rsrp(pos, off)))
            snr = best - scenario.radio.noise_power_dbm
            cells.append(CoverageCell(float(az), float(r), *map(float, pos), float(best), without,
                                      float(best) - without, int(ris_i), int(ue_i),
                                      throughput_proxy(snr, scenario.radio.bandwidth_hz)))
    return CoverageGrid(cells)


# ---------------------------------------------------------------- summaries

def empirical_cdf(values) -> Dict[str, List[float]]:
    v = np.sort(np.asarray(values, dtype=float))
    return {"x": v.tolist(), "p": (np.arange(1, len(v) + 1) / len(v)).tolist()}


def _stats(values) -> Dict[str, float]:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std()), "p10": float(np.percentile(v, 10)),
            "p50": float(np.percentile(v, 50)), "p90": float(np.percentile(v, 90)),
            "min": float(v.min()), "max": float(v.max())}


def detach_count(trace: ExperimentTrace) -> int:
    att = trace.attached.astype(int)
    return int(np.sum((att[:-1] == 1) & (att[1:] == 0)))


def tracking_lag_deg(trace: ExperimentTrace, angles: Sequence[float]) -> np.ndarray:
    """|true azimuth - tracked codeword angle| on attached rows after the first attach."""
    att = trace.attached
    if not att.any():
        return np.array([])
    first = int(np.argmax(att))
    tracked = np.asarray(angles)[trace.column("tracked_ris_index")]
    lag = np.abs(trace.column("true_azimuth_deg") - tracked)
    return lag[first:][att[first:]]


def summarize(item: Union[ExperimentTrace, CoverageGrid]) -> Dict:
    """Compact statistics document for a trace or a coverage grid."""
    if isinstance(item, CoverageGrid):
        if not item.cells:
            raise ValueError("empty coverage grid")
        gain = item.column("gain_db")
        return {"kind": "coverage", "cells": len(gain), "gain_db": _stats(gain),
                "rsrp_with_ris": _stats(item.column("rsrp_with_ris")),
                "rsrp_without_ris": _stats(item.column("rsrp_without_ris")),
                "fraction_gain_ge_10db": float(np.mean(gain >= 10.0)),
                "gain_cdf": empirical_cdf(gain)}
    if not item.rows:
        raise ValueError("empty trace")
    rsrp = item.column("rsrp_dbm")
    att = item.attached
    out = {"kind": "mobility", "rows": len(item), "meta": {k: v for k, v in item.meta.items()
                                                             if k != "codebook_angles"},
           "rsrp_dbm": _stats(rsrp), "attached_fraction": float(att.mean()),
           "detach_count": detach_count(item), "final_connectivity": item.rows[-1].connectivity.value,
           "commands": {"RIS": item.ris_command_count(),
                        "UE": sum(1 for c in item.commands if c[1] == Target.UE.value)}}
    angles = item.meta.get("codebook_angles")
    if angles:
        lag = tracking_lag_deg(item, angles)
        out["tracking_lag_deg"] = _stats(lag) if len(lag) else None
    opt_gap = np.abs(item.column("tracked_ris_index") - item.column("optimal_ris_index"))[att]
    out["tracked_vs_optimal_steps"] = {"mean": float(opt_gap.mean()) if len(opt_gap) else None,
                                       "max": int(opt_gap.max()) if len(opt_gap) else None}
    return out


def write_outputs(out_dir: Union[str, Path], name: str, item: Union[ExperimentTrace, CoverageGrid]) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{name}.csv", "summary": out / f"{name}.summary.json"}
    paths["csv"].write_text(item.to_csv())
    paths["summary"].write_text(json.dumps(summarize(item), indent=2, sort_keys=True))
    if isinstance(item, ExperimentTrace):
        paths["meta"] = out / f"{name}.meta.json"
        paths["meta"].write_text(json.dumps({**item.meta, "commands": item.commands}, indent=2))
    return paths


def load_output(path: Union[str, Path]) -> Union[ExperimentTrace, CoverageGrid]:
    """Read a trace or grid CSV (with its meta sidecar when present)."""
    path = Path(path)
    text = path.read_text()
    if text.startswith(TRACE_COLUMNS[0]):
        trace = ExperimentTrace.from_csv(text)
        meta = path.with_name(path.name[:-4] + ".meta.json")
        if meta.exists():
            doc = json.loads(meta.read_text())
            trace.commands = [tuple(c) for c in doc.pop("commands", [])]
            trace.meta = doc
        return trace
    return CoverageGrid.from_csv(text)
