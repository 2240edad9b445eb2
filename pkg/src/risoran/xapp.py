"""RSRP-driven beam management: initial sweep, local refinement and mobility tracking."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import norm

from .e2lite import (RAN_LINK, RIS_LINK, BeamAck, BeamCommand, Endpoint, Hello, KpiReport, Message, Outgoing,
                     Target, TickDone)

log = logging.getLogger(__name__)


class Algorithm(str, Enum):
    NEIGHBOR = "neighbor"   # periodic left/centre/right scan
    TREND = "trend"         # scan only when the smoothed RSRP is falling
    NONE = "none"           # acquire once, then leave the beams alone


class Mode(str, Enum):
    SWEEPING = "SWEEPING"
    REFINING = "REFINING"
    TRACKING = "TRACKING"
    PROBING = "PROBING"


class Trend(str, Enum):
    FALLING = "FALLING"
    STABLE = "STABLE"


@dataclass(frozen=True)
class XappConfig:
    algorithm: Algorithm = Algorithm.NEIGHBOR
    ris_codebook_len: int = 21
    ue_codebook_len: int = 13
    probe_dwell_reports: int = 1
    window_size: int = 8
    trend_significance: float = 0.05
    ue_adapt_period: int = 0
    ris_step_deg: int = 2
    t_attach_dbm: float = -95.0
    sweep_start_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.window_size < 3:
            raise ValueError("window_size must be >= 3")
        if self.probe_dwell_reports < 1:
            raise ValueError("probe_dwell_reports must be >= 1")
        if not 0 < self.trend_significance < 1:
            raise ValueError("trend_significance must lie in (0, 1)")
        if self.ue_adapt_period < 0:
            raise ValueError("ue_adapt_period must be >= 0")
        if self.ris_step_deg not in (1, 2):
            raise ValueError("ris_step_deg must be 1 or 2")
        if self.ris_codebook_len < 1 or self.ue_codebook_len < 1:
            raise ValueError("codebooks must be non-empty")
        if not 0 <= self.sweep_start_index < self.ris_codebook_len:
            raise ValueError("sweep_start_index outside the codebook")

    @classmethod
    def from_dict(cls, doc: Dict, **overrides) -> "XappConfig":
        known = set(cls.__dataclass_fields__)
        args = {k: v for k, v in {**doc, **overrides}.items() if k in known and v is not None}
        return cls(**args)


# ---------------------------------------------------------------- trend test

def moving_average(x, length: int = 3) -> np.ndarray:
    """Centred moving average; the edges average over the samples that exist."""
    x = np.asarray(x, dtype=float)
    half = length // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, len(x))
    return (csum[hi] - csum[lo]) / (hi - lo)


def mann_kendall_s(x) -> int:
    """S = sum over i < j of sign(x_j - x_i)."""
    x = np.asarray(x, dtype=float)
    diff = x[None, :] - x[:, None]
    return int(np.sign(diff[np.triu_indices(len(x), 1)]).sum())


def mann_kendall_critical(n: int, significance: float) -> float:
    """One-sided |S| threshold: normal approximation with continuity correction, no ties."""
    var = n * (n - 1) * (2 * n + 5) / 18.0
    return float(norm.ppf(1 - significance) * np.sqrt(var) + 1)


def classify_trend(window, significance: float = 0.05, smoothing: int = 3) -> Tuple[Trend, int]:
    s = mann_kendall_s(moving_average(window, smoothing))
    crit = mann_kendall_critical(len(window), significance)
    return (Trend.FALLING if s <= -crit else Trend.STABLE), s


def pick_best(results: Dict[int, float], incumbent: int) -> int:
    """Argmax with the incumbent winning ties, then the lower index."""
    best = max(results.values())
    if results.get(incumbent) == best:
        return incumbent
    return min(i for i, v in results.items() if v == best)


def neighbors(center: int, length: int) -> List[int]:
    return [i for i in (center - 1, center, center + 1) if 0 <= i < length]


# ---------------------------------------------------------------- tracker

@dataclass
class _Probe:
    target: Target
    center: int
    candidates: List[int]
    pos: int = 0          # candidate currently being measured
    dwell: List[float] = field(default_factory=list)
    results: Dict[int, float] = field(default_factory=dict)
    purpose: str = "probe"

    @property
    def current(self) -> int:
        return self.candidates[self.pos]


@dataclass
class TrackerState:
    mode: Mode
    current_ris_index: int
    current_ue_index: int
    tracked_ris_index: int
    rsrp_window: Deque[Tuple[int, float]]
    probe_results: Dict[int, float] = field(default_factory=dict)


class Tracker:
    """Pure decision logic: one report in, at most one command out."""

    def __init__(self, config: XappConfig, ris_index: int = 0, ue_index: int = 0):
        self.cfg = config
        self.state = TrackerState(Mode.SWEEPING, ris_index, ue_index, config.sweep_start_index,
                                  deque(maxlen=config.window_size))
        self._probe: Optional[_Probe] = None
        self._sweep_next = config.sweep_start_index
        self._sweep_dwell = 0
        self._sweep_best: Optional[Tuple[float, int]] = None
        self._ue_counter = 0
        self._acquired = False
        self.events: List[dict] = []
        self.command_counts = {Target.RIS: 0, Target.UE: 0}

    # -- helpers
    def _log(self, seq: int, kind: str, **info) -> None:
        self.events.append(dict(seq=seq, event=kind, mode=self.state.mode.value, **info))

    def _limit(self, target: Target) -> int:
        return self.cfg.ris_codebook_len if target is Target.RIS else self.cfg.ue_codebook_len

    def _command(self, target: Target, index: int, force: bool = False) -> Optional[Tuple[Target, int]]:
        if not 0 <= index < self._limit(target):
            raise AssertionError(f"{target.value} index {index} outside the codebook")
        active = self.state.current_ris_index if target is Target.RIS else self.state.current_ue_index
        if index == active and not force:
            return None
        self.command_counts[target] += 1
        if target is Target.RIS:
            self.state.current_ris_index = index
        else:
            self.state.current_ue_index = index
        return target, index

    def _start_probe(self, target: Target, center: int, purpose: str) -> Optional[Tuple[Target, int]]:
        self._probe = _Probe(target, center, neighbors(center, self._limit(target)), purpose=purpose)
        self.state.probe_results = self._probe.results
        return self._command(target, self._probe.current)

    def _enter_sweep(self, seq: int, start: int) -> Optional[Tuple[Target, int]]:
        self.state.mode = Mode.SWEEPING
        self._probe = None
        self.state.rsrp_window.clear()
        self._sweep_next, self._sweep_dwell, self._sweep_best = start, 0, None
        self._log(seq, "detach", start=start)
        return self._sweep_step(seq, None)

    def _sweep_step(self, seq: int, report: Optional[KpiReport]) -> Optional[Tuple[Target, int]]:
        if report is not None and report.attached:
            rsrp = report.rsrp_dbm
            if self._sweep_best is None or rsrp > self._sweep_best[0]:
                self._sweep_best = (rsrp, self.state.current_ris_index)
            if rsrp >= self.cfg.t_attach_dbm:
                anchor = self._sweep_best[1]
                self._acquired = True
                self._log(seq, "attach", anchor=anchor)
                if self.cfg.algorithm is Algorithm.NONE:
                    self.state.mode = Mode.TRACKING
                    self.state.tracked_ris_index = self.state.current_ris_index
                    return None
                self.state.mode = Mode.REFINING
                self.state.tracked_ris_index = anchor
                return self._start_probe(Target.RIS, anchor, "refine")
        # command the next codeword once the dwell on the active one is complete
        if self._sweep_dwell > 0 and self._sweep_dwell < self.cfg.probe_dwell_reports:
            self._sweep_dwell += 1
            return None
        index = self._sweep_next
        self._sweep_next = (index + 1) % self.cfg.ris_codebook_len
        self._sweep_dwell = 1
        self.state.tracked_ris_index = index
        cmd = self._command(Target.RIS, index, force=True)
        self._log(seq, "sweep", index=index)
        return cmd

    def _advance_probe(self, seq: int, rsrp: float) -> Tuple[Optional[int], Optional[Tuple[Target, int]]]:
        """Record one measurement. Returns (winner once the cycle is complete, next probe command)."""
        p = self._probe
        p.dwell.append(rsrp)
        if len(p.dwell) < self.cfg.probe_dwell_reports:
            return None, None
        p.results[p.current] = float(np.mean(p.dwell))
        p.dwell = []
        p.pos += 1
        if p.pos < len(p.candidates):
            return None, self._command(p.target, p.current)
        winner = pick_best(p.results, p.center)
        self._log(seq, p.purpose, target=p.target.value, center=p.center, winner=winner,
                  results={str(k): round(v, 3) for k, v in sorted(p.results.items())})
        return winner, None

    # -- main entry
    def step(self, report: KpiReport) -> Tuple[Optional[Tuple[Target, int]], str]:
        """Consume one report; returns (optional (target, index) command, event label)."""
        seq = report.seq
        st = self.state
        if st.mode is Mode.SWEEPING:
            cmd = self._sweep_step(seq, report)
            return cmd, "sweep" if st.mode is Mode.SWEEPING else "attach"

        if not report.attached:
            if self.cfg.algorithm is Algorithm.NONE:
                return None, "idle"
            # abort any probe and restart the sweep from the best-known beam
            return self._enter_sweep(seq, st.tracked_ris_index), "detach"

        if self.cfg.algorithm is Algorithm.NONE:
            return None, "idle"

        self._ue_counter += 1
        if self._probe is not None:
            p = self._probe
            winner, cmd = self._advance_probe(seq, report.rsrp_dbm)
            if winner is None:
                return cmd, p.purpose
            self._probe = None
            if p.target is Target.UE:
                st.mode = Mode.TRACKING
                return self._command(Target.UE, winner), "ue_probe"
            st.tracked_ris_index = winner
            if p.purpose == "refine":
                if winner != p.center:
                    return self._start_probe(Target.RIS, winner, "refine"), "refine"
                st.mode = Mode.TRACKING
                self._log(seq, "tracking", index=winner)
                return self._command(Target.RIS, winner), "refine"
            st.mode = Mode.TRACKING
            if self.cfg.algorithm is Algorithm.TREND:
                st.rsrp_window.clear()
            return self._command(Target.RIS, winner), "probe"

        # TRACKING with no probe in flight: this report was measured on the tracked beam
        if 0 < self.cfg.ue_adapt_period <= self._ue_counter:
            self._ue_counter = 0
            st.mode = Mode.PROBING
            return self._start_probe(Target.UE, st.current_ue_index, "ue_probe"), "ue_probe"

        if self.cfg.algorithm is Algorithm.NEIGHBOR:
            st.mode = Mode.PROBING
            return self._start_probe(Target.RIS, st.tracked_ris_index, "probe"), "probe"

        st.rsrp_window.append((report.timestamp_ms, report.rsrp_dbm))
        if len(st.rsrp_window) < self.cfg.window_size:
            return None, "track"
        trend, s = classify_trend([v for _, v in st.rsrp_window], self.cfg.trend_significance)
        if trend is Trend.STABLE:
            return None, "track"
        self._log(seq, "trigger", s=s)
        st.mode = Mode.PROBING
        return self._start_probe(Target.RIS, st.tracked_ris_index, "probe"), "trigger"


class XappEndpoint(Endpoint):
    """Wraps a Tracker with ack gating and the per-report TickDone handshake."""

    name = "xapp"
    links = (RAN_LINK, RIS_LINK)

    def __init__(self, config: XappConfig, ris_index: int = 0, ue_index: int = 0):
        self.tracker = Tracker(config, ris_index, ue_index)
        self.ris_applied = ris_index
        self._seq = 0
        self._in_flight: Dict[Target, int] = {}
        self._pending_tick: Optional[Tuple[int, str]] = None
        self.commands: List[BeamCommand] = []
        self.command_reports: List[int] = []  # report seq that prompted each command

    def _tick_done(self) -> Outgoing:
        seq, event = self._pending_tick
        self._pending_tick = None
        return [(RAN_LINK, TickDone(seq, self.ris_applied, self.tracker.state.tracked_ris_index, event))]

    def on_message(self, link: str, msg: Message) -> Outgoing:
        if isinstance(msg, Hello):
            return []
        if isinstance(msg, KpiReport):
            if self._pending_tick is not None:
                raise RuntimeError("report arrived before the previous tick completed")
            cmd, event = self.tracker.step(msg)
            self._pending_tick = (msg.seq, event)
            if cmd is None:
                return self._tick_done()
            target, index = cmd
            if target in self._in_flight:
                raise AssertionError(f"second {target.value} command issued before the ack")
            self._seq += 1
            command = BeamCommand(target, index, self._seq)
            self._in_flight[target] = command.seq
            self.commands.append(command)
            self.command_reports.append(msg.seq)
            return [(RIS_LINK if target is Target.RIS else RAN_LINK, command)]
        if isinstance(msg, BeamAck):
            if self._in_flight.get(msg.target) != msg.seq:
                raise AssertionError(f"unexpected ack {msg}")
            del self._in_flight[msg.target]
            if not msg.ok:
                log.warning("command rejected: %s", msg.error)
            if msg.target is Target.RIS:
                self.ris_applied = msg.applied_index
            if self._pending_tick is not None and not self._in_flight:
                return self._tick_done()
            return []
        return []
