"""Length-prefixed control protocol between the RAN emulator, the xApp and the RIS controller.

Frame layout::

    +----------------+-----+---------------------------------------+
    | length (u32 BE)| tag | canonical JSON payload (length bytes) |
    +----------------+-----+---------------------------------------+

Payloads are UTF-8 JSON objects with sorted keys and no whitespace, so a
given message has exactly one encoding.  Optional fields are omitted when
absent.  Tag 0x00 is the version hello whose payload is the raw bytes ``1``.
"""

from __future__ import annotations

import json
import logging
import math
import selectors
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .link import LinkEvaluator
from .phy import Codebook
from .scenario import ScenarioConfig, azimuth_from_ris, position_at, sample_times

log = logging.getLogger(__name__)

PROTOCOL_VERSION = b"1"
MAX_PAYLOAD = 1 << 20
U64_MAX = (1 << 64) - 1
HEADER = struct.Struct(">IB")


class Tag(IntEnum):
    HELLO = 0x00
    KPI_REPORT = 0x01
    BEAM_COMMAND = 0x02
    BEAM_ACK = 0x03
    TICK_DONE = 0x04


class Target(str, Enum):
    RIS = "RIS"
    UE = "UE"
    GNB = "GNB"


class ProtocolError(ValueError):
    """Malformed frame; ``offset`` is the byte position of the problem within the frame."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class IncompleteFrame(Exception):
    """More bytes are needed before a frame can be decoded."""

    def __init__(self, needed: int):
        super().__init__(f"need {needed} more byte(s)")
        self.needed = needed


def _check_u64(name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= U64_MAX:
        raise ValueError(f"{name} must be an unsigned 64-bit integer")


def _check_nonneg(name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer")


@dataclass(frozen=True)
class Hello:
    version: bytes = PROTOCOL_VERSION


@dataclass(frozen=True)
class KpiReport:
    seq: int
    timestamp_ms: int
    rnti: Optional[int] = None
    rsrp_dbm: Optional[float] = None

    def __post_init__(self):
        _check_u64("seq", self.seq)
        _check_nonneg("timestamp_ms", self.timestamp_ms)
        if (self.rnti is None) != (self.rsrp_dbm is None):
            raise ValueError("rnti and rsrp_dbm must be both present or both absent")
        if self.rnti is not None:
            if isinstance(self.rnti, bool) or not isinstance(self.rnti, int) or not 0 <= self.rnti <= 0xFFFF:
                raise ValueError("rnti must be a 16-bit unsigned integer")
            if isinstance(self.rsrp_dbm, bool) or not isinstance(self.rsrp_dbm, (int, float)) \
                    or not math.isfinite(self.rsrp_dbm):
                raise ValueError("rsrp_dbm must be a finite number")
            object.__setattr__(self, "rsrp_dbm", float(self.rsrp_dbm))

    @property
    def attached(self) -> bool:
        return self.rnti is not None


@dataclass(frozen=True)
class BeamCommand:
    target: Target
    beam_index: int
    seq: int

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        _check_nonneg("beam_index", self.beam_index)
        _check_u64("seq", self.seq)


@dataclass(frozen=True)
class BeamAck:
    target: Target
    applied_index: int
    timestamp_ms: int
    seq: int
    error: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        _check_nonneg("applied_index", self.applied_index)
        _check_nonneg("timestamp_ms", self.timestamp_ms)
        _check_u64("seq", self.seq)
        if self.error is not None and not isinstance(self.error, str):
            raise ValueError("error must be a string")

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class TickDone:
    """xApp -> RAN: the report ``seq`` has been fully handled."""

    seq: int
    ris_index: int
    tracked_index: int
    event: str = ""

    def __post_init__(self):
        _check_u64("seq", self.seq)
        _check_nonneg("ris_index", self.ris_index)
        _check_nonneg("tracked_index", self.tracked_index)
        if not isinstance(self.event, str):
            raise ValueError("event must be a string")


Message = Union[Hello, KpiReport, BeamCommand, BeamAck, TickDone]

_TAGS = {KpiReport: Tag.KPI_REPORT, BeamCommand: Tag.BEAM_COMMAND, BeamAck: Tag.BEAM_ACK, TickDone: Tag.TICK_DONE}
_TYPES = {tag: cls for cls, tag in _TAGS.items()}
_REQUIRED = {
    KpiReport: {"seq", "timestamp_ms"},
    BeamCommand: {"target", "beam_index", "seq"},
    BeamAck: {"target", "applied_index", "timestamp_ms", "seq"},
    TickDone: {"seq", "ris_index", "tracked_index", "event"},
}
_OPTIONAL = {KpiReport: {"rnti", "rsrp_dbm"}, BeamAck: {"error"}, BeamCommand: set(), TickDone: set()}


def _payload(msg: Message) -> Dict:
    out = {}
    for key, value in msg.__dict__.items():
        if value is None:
            continue
        out[key] = value.value if isinstance(value, Enum) else value
    return out


def encode(msg: Message) -> bytes:
    """Serialize one message into a complete frame."""
    if isinstance(msg, Hello):
        body, tag = bytes(msg.version), Tag.HELLO
    else:
        tag = _TAGS.get(type(msg))
        if tag is None:
            raise TypeError(f"cannot encode {type(msg).__name__}")
        body = json.dumps(_payload(msg), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=True, allow_nan=False).encode("utf-8")
    if len(body) > MAX_PAYLOAD:
        raise ValueError("payload too large")
    return HEADER.pack(len(body), tag) + body


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def _decode_payload(tag: int, body: bytes) -> Message:
    if tag == Tag.HELLO:
        return Hello(bytes(body))
    cls = _TYPES.get(tag)
    if cls is None:
        raise ProtocolError(f"unknown message tag 0x{tag:02x}", 4)
    try:
        obj = json.loads(body.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        pos = getattr(exc, "pos", None) or getattr(exc, "start", 0) or 0
        raise ProtocolError(f"payload is not valid JSON: {exc}", HEADER.size + pos) from None
    if not isinstance(obj, dict):
        raise ProtocolError("payload must be an object", HEADER.size)
    keys = set(obj)
    missing = _REQUIRED[cls] - keys
    extra = keys - _REQUIRED[cls] - _OPTIONAL[cls]
    if missing or extra:
        raise ProtocolError(f"bad fields for {cls.__name__}: missing {sorted(missing)}, "
                            f"unexpected {sorted(extra)}", HEADER.size)
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"invalid {cls.__name__}: {exc}", HEADER.size) from None


def frame_length(data: bytes) -> int:
    """Total frame size announced by the header; raises IncompleteFrame or ProtocolError."""
    if len(data) < HEADER.size:
        raise IncompleteFrame(HEADER.size - len(data))
    length, _ = HEADER.unpack_from(data)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"announced payload of {length} bytes exceeds limit", 0)
    return HEADER.size + length


def decode(data: bytes) -> Message:
    """Decode exactly one frame. Trailing bytes are a protocol error."""
    data = bytes(data)
    total = frame_length(data)
    if len(data) < total:
        raise IncompleteFrame(total - len(data))
    if len(data) > total:
        raise ProtocolError("trailing bytes after frame", total)
    return _decode_payload(data[4], data[HEADER.size:total])


class FrameDecoder:
    """Incremental decoder for a byte stream; bad frames are skipped and reported."""

    def __init__(self):
        self._buf = bytearray()
        self.errors: List[ProtocolError] = []

    def feed(self, data: bytes) -> List[Message]:
        self._buf.extend(data)
        out: List[Message] = []
        while True:
            try:
                total = frame_length(self._buf)
            except IncompleteFrame:
                break
            except ProtocolError as exc:
                # the length cannot be trusted; nothing after it can be framed
                self.errors.append(exc)
                self._buf.clear()
                break
            if len(self._buf) < total:
                break
            frame = bytes(self._buf[:total])
            del self._buf[:total]
            try:
                out.append(_decode_payload(frame[4], frame[HEADER.size:]))
            except ProtocolError as exc:
                log.warning("dropping malformed frame: %s", exc)
                self.errors.append(exc)
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------- endpoints

Outgoing = List[Tuple[str, Message]]

RAN_LINK = "ran"
RIS_LINK = "ris"


class Endpoint:
    """Reactive endpoint: every input message maps to a list of (link, message) outputs."""

    name = "endpoint"
    links: Tuple[str, ...] = ()

    def start(self) -> Outgoing:
        return []

    def on_message(self, link: str, msg: Message) -> Outgoing:
        raise NotImplementedError

    @property
    def finished(self) -> bool:
        return False


class RisController(Endpoint):
    """Holds the active codeword and applies RIS beam commands."""

    name = "ris"
    links = (RIS_LINK,)

    def __init__(self, codebook: Codebook, initial_index: int = 0):
        if not 0 <= initial_index < len(codebook):
            raise ValueError("initial index outside the codebook")
        self.codebook = codebook
        self.active_index = initial_index
        self.history: List[int] = []

    @property
    def active(self):
        return self.codebook[self.active_index]

    def apply(self, cmd: BeamCommand, timestamp_ms: int = 0) -> BeamAck:
        if cmd.target is not Target.RIS:
            return BeamAck(cmd.target, self.active_index, timestamp_ms, cmd.seq, "wrong target")
        if cmd.beam_index >= len(self.codebook):
            log.warning("RIS index %d out of range (%d codewords)", cmd.beam_index, len(self.codebook))
            return BeamAck(Target.RIS, self.active_index, timestamp_ms, cmd.seq, "index out of range")
        self.active_index = cmd.beam_index
        self.history.append(cmd.beam_index)
        return BeamAck(Target.RIS, self.active_index, timestamp_ms, cmd.seq)

    def on_message(self, link: str, msg: Message) -> Outgoing:
        if isinstance(msg, BeamCommand):
            return [(link, self.apply(msg))]
        if not isinstance(msg, Hello):
            log.debug("RIS controller ignores %s", type(msg).__name__)
        return []


def ris_controller_serve(codebook: Codebook, commands: Sequence[BeamCommand],
                         initial_index: int = 0) -> List[BeamAck]:
    """Apply a command stream in order and return the acks."""
    ctrl = RisController(codebook, initial_index)
    return [ctrl.apply(c) for c in commands]


class Connectivity(str, Enum):
    ATTACHED = "ATTACHED"
    DETACHED = "DETACHED"


class ConnectivityMachine:
    """Hysteretic attach/detach decision on measured RSRP."""

    def __init__(self, t_detach: float, t_attach: float, d_detach: int, attached: bool = False):
        if t_attach <= t_detach:
            raise ValueError("t_attach must exceed t_detach")
        self.t_detach, self.t_attach, self.d_detach = t_detach, t_attach, d_detach
        self.state = Connectivity.ATTACHED if attached else Connectivity.DETACHED
        self._below = 0

    def update(self, rsrp_dbm: float) -> Connectivity:
        if self.state is Connectivity.ATTACHED:
            self._below = self._below + 1 if rsrp_dbm < self.t_detach else 0
            if self._below >= self.d_detach:
                self.state, self._below = Connectivity.DETACHED, 0
        elif rsrp_dbm >= self.t_attach:
            self.state = Connectivity.ATTACHED
        return self.state


@dataclass(frozen=True)
class TraceRow:
    timestamp_ms: int
    ue_position: Tuple[float, float, float]
    true_azimuth_deg: float
    ris_index: int
    ris_angle_deg: float
    ue_index: int
    rsrp_dbm: float
    connectivity: Connectivity
    algorithm_event: str
    tracked_ris_index: int
    optimal_ris_index: int


class RanEndpoint(Endpoint):
    """Scenario-clocked RAN emulator: one KPI report per tick, advancing on TickDone."""

    name = "ran"
    links = (RAN_LINK,)
    RNTI = 0x4601

    def __init__(self, scenario: ScenarioConfig, codebook: Codebook, initial_ris_index: int = 0,
                 times: Optional[Sequence[float]] = None):
        self.scenario = scenario
        self.codebook = codebook
        self.psis = codebook.interaction_vectors()
        self.evaluator = LinkEvaluator(scenario.aperture, scenario.geometry, scenario.radio, scenario.ue_beams_deg)
        self.times = np.asarray(sample_times(scenario.trajectory, scenario.tick_interval)
                                if times is None else times, dtype=float)
        m = scenario.measurement
        self.machine = ConnectivityMachine(m.t_detach_dbm, m.t_attach_dbm, m.d_detach)
        self.noise_db = m.noise_db
        self.rng = np.random.default_rng(scenario.rng_seed)
        self.ris_index = initial_ris_index
        self.ue_index = scenario.initial_ue_beam
        self.rows: List[TraceRow] = []
        self._k = 0
        self._pending: Optional[dict] = None
        self._done = False
        self._ack_seq = 0

    def true_rsrp(self, position, ris_index: Optional[int] = None, ue_index: Optional[int] = None) -> float:
        ris = self.ris_index if ris_index is None else ris_index
        ue = self.ue_index if ue_index is None else ue_index
        return float(self.evaluator.rsrp(position, self.psis[ris], ue))

    def _report(self) -> Outgoing:
        t = float(self.times[self._k])
        pos = position_at(self.scenario.trajectory, t)
        clean = self.true_rsrp(pos)
        measured = clean + (self.rng.normal(0.0, self.noise_db) if self.noise_db > 0 else 0.0)
        state = self.machine.update(measured)
        ts = int(round(t * 1000))
        if state is Connectivity.ATTACHED:
            msg = KpiReport(self._k, ts, self.RNTI, measured)
        else:
            msg = KpiReport(self._k, ts)
        optimal = int(np.argmax(self.evaluator.rsrp_matrix(pos, self.psis)[self.ue_index]))
        self._pending = dict(timestamp_ms=ts, ue_position=tuple(float(c) for c in pos),
                             true_azimuth_deg=azimuth_from_ris(self.scenario.geometry, pos),
                             ris_index=self.ris_index,
                             ris_angle_deg=self.codebook.angle_of(self.ris_index),
                             ue_index=self.ue_index, rsrp_dbm=float(measured), connectivity=state,
                             optimal_ris_index=optimal)
        return [(RAN_LINK, msg)]

    def start(self) -> Outgoing:
        if len(self.times) == 0:
            self._done = True
            return []
        return self._report()

    def on_message(self, link: str, msg: Message) -> Outgoing:
        if isinstance(msg, BeamCommand):
            self._ack_seq = msg.seq
            ts = self._pending["timestamp_ms"] if self._pending else 0
            if msg.target is Target.UE:
                if msg.beam_index >= len(self.scenario.ue_beams_deg):
                    return [(link, BeamAck(Target.UE, self.ue_index, ts, msg.seq, "index out of range"))]
                self.ue_index = msg.beam_index
                return [(link, BeamAck(Target.UE, self.ue_index, ts, msg.seq))]
            if msg.target is Target.GNB and msg.beam_index == 0:
                return [(link, BeamAck(Target.GNB, 0, ts, msg.seq))]
            return [(link, BeamAck(msg.target, 0, ts, msg.seq, "target not handled by the RAN"))]
        if isinstance(msg, TickDone):
            if self._pending is None or msg.seq != self._k:
                raise ProtocolError(f"unexpected TickDone for seq {msg.seq}", 0)
            self.rows.append(TraceRow(algorithm_event=msg.event, tracked_ris_index=msg.tracked_index,
                                      **self._pending))
            if msg.ris_index >= len(self.codebook):
                raise ProtocolError("TickDone carries an out-of-range RIS index", 0)
            self.ris_index = msg.ris_index
            self._pending = None
            self._k += 1
            if self._k >= len(self.times):
                self._done = True
                return []
            return self._report()
        return []

    @property
    def finished(self) -> bool:
        return self._done


# --------------------------------------------------------------- transports

class MemoryTransport:
    """Single-threaded FIFO delivery of encoded frames between co-located endpoints."""

    def __init__(self, ran: Endpoint, xapp: Endpoint, ris: Endpoint):
        self.ends = {"ran": ran, "xapp": xapp, "ris": ris}
        # (link, sender) -> receiver
        self.route = {(RAN_LINK, "ran"): "xapp", (RAN_LINK, "xapp"): "ran",
                      (RIS_LINK, "ris"): "xapp", (RIS_LINK, "xapp"): "ris"}
        self.decoders = {key: FrameDecoder() for key in self.route}
        self.queue: Deque[Tuple[str, str, bytes]] = deque()
        self.frames = 0

    def _post(self, sender: str, out: Outgoing) -> None:
        for link, msg in out:
            self.queue.append((link, sender, encode(msg)))

    def run(self) -> None:
        self._post("xapp", [(RAN_LINK, Hello()), (RIS_LINK, Hello())])
        for name in ("ris", "xapp", "ran"):
            self._post(name, self.ends[name].start())
        while self.queue:
            link, sender, frame = self.queue.popleft()
            self.frames += 1
            receiver = self.route[(link, sender)]
            for msg in self.decoders[(link, sender)].feed(frame):
                self._post(receiver, self.ends[receiver].on_message(link, msg))
        if not self.ends["ran"].finished:
            raise RuntimeError("control loop stalled before the trajectory finished")


class _SocketLoop:
    """Selector loop driving one endpoint over a set of connected sockets."""

    def __init__(self, endpoint: Endpoint, sockets: Dict[str, socket.socket], hello: bool):
        self.endpoint = endpoint
        self.sockets = sockets
        self.decoders = {link: FrameDecoder() for link in sockets}
        self.hello = hello
        self.error: Optional[BaseException] = None

    def _send(self, out: Outgoing) -> None:
        for link, msg in out:
            sock = self.sockets.get(link)
            if sock is not None:
                sock.sendall(encode(msg))

    def run(self) -> None:
        sel = selectors.DefaultSelector()
        try:
            for link, sock in self.sockets.items():
                sock.setblocking(True)
                sel.register(sock, selectors.EVENT_READ, link)
            if self.hello:
                self._send([(link, Hello()) for link in self.sockets])
            self._send(self.endpoint.start())
            # any closed link ends the session; closing ours then cascades to the peers
            while not self.endpoint.finished:
                events = sel.select(timeout=30.0)
                if not events:
                    raise TimeoutError(f"{self.endpoint.name}: no traffic for 30 s")
                closed = False
                for key, _ in events:
                    data = key.fileobj.recv(65536)
                    if not data:
                        closed = True
                        break
                    for msg in self.decoders[key.data].feed(data):
                        self._send(self.endpoint.on_message(key.data, msg))
                if closed:
                    break
        except BaseException as exc:  # surfaced by the harness
            self.error = exc
            log.error("%s endpoint failed: %s", self.endpoint.name, exc)
        finally:
            sel.close()
            for sock in self.sockets.values():
                try:
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                sock.close()


def listen(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    srv = socket.create_server((host, port))
    return srv


def connect(host: str, port: int, timeout: float = 10.0) -> socket.socket:
    """Connect, retrying while the server is not listening yet."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            break
        except ConnectionRefusedError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def serve_endpoint(endpoint: Endpoint, server: socket.socket) -> _SocketLoop:
    """Accept one client on ``server`` and run ``endpoint`` until the peer disconnects."""
    conn, _ = server.accept()
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    server.close()
    loop = _SocketLoop(endpoint, {endpoint.links[0]: conn}, hello=False)
    loop.run()
    return loop


def run_client(endpoint: Endpoint, addresses: Dict[str, Tuple[str, int]]) -> _SocketLoop:
    """Connect ``endpoint`` to each server and run it until all links close."""
    socks = {link: connect(*addr) for link, addr in addresses.items()}
    loop = _SocketLoop(endpoint, socks, hello=True)
    loop.run()
    return loop


class TcpTransport:
    """Loopback stream sockets, one thread per endpoint."""

    def __init__(self, ran: Endpoint, xapp: Endpoint, ris: Endpoint, host: str = "127.0.0.1"):
        self.ran, self.xapp, self.ris = ran, xapp, ris
        self.host = host
        self.loops: List[_SocketLoop] = []

    def run(self) -> None:
        ran_srv, ris_srv = listen(self.host), listen(self.host)
        addrs = {RAN_LINK: ran_srv.getsockname()[:2], RIS_LINK: ris_srv.getsockname()[:2]}
        results: Dict[str, _SocketLoop] = {}

        def server(name, endpoint, srv):
            results[name] = serve_endpoint(endpoint, srv)

        def client():
            results["xapp"] = run_client(self.xapp, addrs)

        threads = [threading.Thread(target=server, args=("ran", self.ran, ran_srv), daemon=True),
                   threading.Thread(target=server, args=("ris", self.ris, ris_srv), daemon=True),
                   threading.Thread(target=client, daemon=True)]
        for th in threads:
            th.start()
        for th in threads:
            th.join(timeout=600)
            if th.is_alive():
                raise RuntimeError("endpoint thread did not drain")
        self.loops = list(results.values())
        for name, loop in results.items():
            if loop.error is not None:
                raise RuntimeError(f"{name} endpoint failed") from loop.error
        if not self.ran.finished:
            raise RuntimeError("control loop stalled before the trajectory finished")
