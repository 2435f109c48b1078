"""Off-path signaling distribution: ST transport and SA logic state machines.

The ST layer delivers a probe hop by hop along the IP path (on-path queries,
intercepted by the next OSP node) and floods it to PeT neighbours inside the
remaining radius (off-path queries).  Responses travel back along the
distribution tree, each forwarder stacking its own status element with depth
0 and raising the depth of everything it relays.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

from . import codec
from .codec import NULL_PID, PeerIdentity, SaKind, SaMessage, SfStatusElement, StKind, StMessage

if TYPE_CHECKING:
    from .simnet import Simulator, Timer

STATUS_ABSENT = 0
STATUS_PRESENT = 1

ERR_REJECTED = 1
ERR_ABORTED = 2
ERR_DUPLICATE_ON_PATH = 3

RESPONSE_COMPLETE = 0
RESPONSE_PARTIAL = 1

MAX_RADIUS = 255


class StState(enum.Enum):
    IDLE = "IDLE"
    ACTIVE = "ACTIVE"
    ON_PATH_FORWARDER = "OnPathForwarder"
    OFF_PATH_FORWARDER = "OffPathForwarder"
    ON_PATH_ACTIVE = "OnPathActive"
    OFF_PATH_ACTIVE = "OffPathActive"


class SaState(enum.Enum):
    IDLE = "IDLE"
    WAIT_NOTIFICATION = "WaitNotification"
    WAIT_RESPONSES = "WaitResponses"


class Role(enum.Enum):
    INITIATOR = "initiator"
    ON_PATH = "on_path_forwarder"
    OFF_PATH = "off_path_forwarder"


S = StState
_ACTIVE_LOOPS = ("response", "data_response", "error", "query_timeout", "query_rejected")

# (from, event, to) triples drawn in the ST and SA state machines.
ST_INITIATOR_TRANSITIONS = frozenset(
    {(S.IDLE, "sa_command", S.ACTIVE), (S.ACTIVE, "complete", S.IDLE), (S.ACTIVE, "timeout", S.IDLE)}
    | {(S.ACTIVE, e, S.ACTIVE) for e in _ACTIVE_LOOPS}
)
ST_FORWARDER_TRANSITIONS = frozenset(
    {
        (S.IDLE, "onpath_query", S.ON_PATH_FORWARDER),
        (S.IDLE, "offpath_query", S.OFF_PATH_FORWARDER),
        (S.ON_PATH_FORWARDER, "data", S.ON_PATH_ACTIVE),
        (S.OFF_PATH_FORWARDER, "data", S.OFF_PATH_ACTIVE),
        (S.ON_PATH_ACTIVE, "complete", S.ON_PATH_FORWARDER),
        (S.OFF_PATH_ACTIVE, "complete", S.OFF_PATH_FORWARDER),
        (S.ON_PATH_ACTIVE, "timeout", S.ON_PATH_FORWARDER),
        (S.OFF_PATH_ACTIVE, "timeout", S.OFF_PATH_FORWARDER),
        (S.ON_PATH_FORWARDER, "session_timeout", S.IDLE),
        (S.OFF_PATH_FORWARDER, "session_timeout", S.IDLE),
        (S.ON_PATH_FORWARDER, "query_rejected", S.ON_PATH_FORWARDER),
        (S.OFF_PATH_FORWARDER, "query_rejected", S.OFF_PATH_FORWARDER),
        (S.OFF_PATH_FORWARDER, "onpath_query", S.ON_PATH_FORWARDER),
        (S.OFF_PATH_ACTIVE, "onpath_query", S.ON_PATH_FORWARDER),
        (S.OFF_PATH_FORWARDER, "offpath_query", S.OFF_PATH_FORWARDER),
        (S.OFF_PATH_ACTIVE, "offpath_query", S.OFF_PATH_FORWARDER),
    }
    | {(a, e, a) for a in (S.ON_PATH_ACTIVE, S.OFF_PATH_ACTIVE) for e in _ACTIVE_LOOPS}
)
SA_TRANSITIONS = frozenset(
    {
        (SaState.IDLE, "trigger", SaState.WAIT_NOTIFICATION),
        (SaState.IDLE, "data", SaState.WAIT_NOTIFICATION),
        (SaState.WAIT_NOTIFICATION, "notify_queries", SaState.WAIT_RESPONSES),
        (SaState.WAIT_NOTIFICATION, "notify_leaf", SaState.IDLE),
        (SaState.WAIT_RESPONSES, "data_response", SaState.WAIT_RESPONSES),
        (SaState.WAIT_RESPONSES, "complete", SaState.IDLE),
        (SaState.WAIT_RESPONSES, "timeout", SaState.IDLE),
        (SaState.WAIT_NOTIFICATION, "abort", SaState.IDLE),
        (SaState.WAIT_RESPONSES, "abort", SaState.IDLE),
    }
)


@dataclass
class DistributionConfig:
    wait_resp_timeout: float = 1.0
    st_session_timeout: float = 2.0
    query_timeout: float = 0.2
    reliable_data_mode: bool = False

    def __post_init__(self):
        if min(self.wait_resp_timeout, self.st_session_timeout, self.query_timeout) <= 0:
            raise ValueError("timeouts must be positive")


class SfRegistry:
    """Mock NFV instance: which service types this node hosts."""

    def __init__(self, services: dict[int, int] | None = None):
        self.services = dict(services or {})

    def status(self, service_type: int) -> int:
        return self.services.get(service_type, STATUS_ABSENT)

    def install(self, service_type: int, status: int = STATUS_PRESENT) -> None:
        self.services[service_type] = status

    def remove(self, service_type: int) -> None:
        self.services.pop(service_type, None)

    def apply(self, message: SaMessage) -> int:
        if message.kind == SaKind.SETUP:
            self.install(message.service_type)
        elif message.kind == SaKind.REMOVE:
            self.remove(message.service_type)
        return self.status(message.service_type)


@dataclass
class Downstream:
    peer: PeerIdentity | None
    metric: int
    on_path: bool
    status: str = "queried"  # queried | peered | responded | rejected
    reason: str = ""
    timer: "Timer | None" = field(default=None, repr=False)


@dataclass
class Session:
    session_id: int
    sa_identifier: int
    role: Role
    radius: int
    destination_ip: int
    upstream: PeerIdentity | None = None
    st_state: StState = StState.IDLE
    sa_state: SaState = SaState.IDLE
    downstream: list[Downstream] = field(default_factory=list)
    resp_counter: int = 0
    error_counter: int = 0
    payload: bytes | None = None
    sa_message: SaMessage | None = None
    stack: list[SfStatusElement] = field(default_factory=list)
    completed: bool = False
    wait_timer: "Timer | None" = field(default=None, repr=False)
    st_timer: "Timer | None" = field(default=None, repr=False)
    on_result: Callable | None = field(default=None, repr=False)
    started_at: float = 0.0

    @property
    def n(self) -> int:
        return len(self.downstream)


@dataclass
class AppResult:
    session_id: int
    elements: list[SfStatusElement]
    raw_stack: list[SfStatusElement]
    complete: bool
    started_at: float
    finished_at: float

    @property
    def duration(self) -> float:
        return self.finished_at - self.started_at


def dedupe_elements(stack: list[SfStatusElement]) -> list[SfStatusElement]:
    best: dict[int, SfStatusElement] = {}
    for el in stack:
        if el.node not in best or el.depth < best[el.node].depth:
            best[el.node] = el
    return sorted(best.values(), key=lambda e: (e.depth, e.node))


class DistributionEngine:
    def __init__(self, node, config: DistributionConfig, registry: SfRegistry | None = None):
        self.node = node
        self.config = config
        self.registry = registry or SfRegistry()
        self.sessions: dict[int, Session] = {}
        self.originated: set[int] = set()
        self.results: dict[int, AppResult] = {}
        self.deliveries: Counter[int] = Counter()
        self.aborts: Counter[int] = Counter()
        self.transitions: list[tuple] = []
        # final (resp_counter, error_counter, n, timed_out) per completed non-leaf session
        self.accounting: list[tuple[int, int, int, int, bool]] = []

    @property
    def sim(self) -> "Simulator":
        return self.node.sim

    @property
    def identity(self) -> PeerIdentity:
        return self.node.identity

    # -- bookkeeping ---------------------------------------------------------

    def _st(self, s: Session, new: StState, event: str) -> None:
        self.transitions.append(("st", s.role.value, s.session_id, s.st_state, event, new))
        self.sim.log(self.node.node_id, "st", s.session_id, s.role.value, detail=f"{s.st_state.value}>{new.value}:{event}")
        s.st_state = new

    def _sa(self, s: Session, new: SaState, event: str) -> None:
        self.transitions.append(("sa", s.role.value, s.session_id, s.sa_state, event, new))
        self.sim.log(self.node.node_id, "sa", s.session_id, s.role.value, detail=f"{s.sa_state.value}>{new.value}:{event}")
        s.sa_state = new

    def _loop(self, s: Session, event: str) -> None:
        self._st(s, s.st_state, event)

    def _send(self, s: Session, to: PeerIdentity, kind: StKind, **fields) -> None:
        msg = StMessage(kind, self.identity.pid, to.pid, self.identity.ip, to.ip, s.session_id,
                        sa_identifier=s.sa_identifier, **fields)
        reliable = self.config.reliable_data_mode and kind in (StKind.DATA, StKind.DATA_RESPONSE)
        self.sim.send(self.node.node_id, to.ip, msg, reliable=reliable, session=s.session_id)

    def _send_error(self, session_id: int, to: PeerIdentity, code: int) -> None:
        msg = StMessage(StKind.ERROR, self.identity.pid, to.pid, self.identity.ip, to.ip, session_id,
                        error_code=code)
        self.sim.send(self.node.node_id, to.ip, msg, session=session_id)

    # -- application interface -----------------------------------------------

    def submit(self, sa_message: SaMessage, destination_ip: int, radius: int, sa_identifier: int = 1,
               on_result: Callable[[AppResult], None] | None = None, session_id: int | None = None) -> int:
        if not 0 <= radius <= MAX_RADIUS:
            raise ValueError(f"radius must lie in [0, {MAX_RADIUS}]")
        if session_id is None:
            session_id = self.sim.rng.getrandbits(64)
        if session_id in self.sessions or session_id in self.originated:
            raise ValueError(f"session {session_id:#x} already exists")
        s = Session(session_id, sa_identifier, Role.INITIATOR, radius, destination_ip,
                    on_result=on_result, started_at=self.sim.now)
        self.sessions[session_id] = s
        self.originated.add(session_id)
        self._sa(s, SaState.WAIT_NOTIFICATION, "trigger")
        self._st(s, StState.ACTIVE, "sa_command")
        s.payload = codec.encode(sa_message)
        self._process_payload(s, upstream_node="")
        self._fan_out(s)
        if s.n == 0:
            self._finish(s, timed_out=False, leaf=True)
        else:
            self._sa(s, SaState.WAIT_RESPONSES, "notify_queries")
            s.wait_timer = self.sim.schedule(self.config.wait_resp_timeout, self._wait_timeout, s)
        return session_id

    def _process_payload(self, s: Session, upstream_node: str) -> None:
        s.sa_message = codec.decode(s.payload)
        if not isinstance(s.sa_message, SaMessage):
            raise codec.DecodeError("ST payload is not an SA message")
        self.registry.apply(s.sa_message)
        self.deliveries[s.session_id] += 1
        self.sim.log(self.node.node_id, "sa_data", s.session_id, s.role.value, detail=upstream_node)

    # -- downstream ----------------------------------------------------------

    def _fan_out(self, s: Session) -> None:
        """Issue the on-path query (if any) first, then off-path queries."""
        me = self.identity
        if s.role is not Role.OFF_PATH and s.destination_ip != me.ip:
            known = self.node.discovery.pet.by_ip(s.destination_ip)
            dest = PeerIdentity(known.peer.pid if known else NULL_PID, s.destination_ip)
            slot = Downstream(None, -1, True)
            s.downstream.append(slot)
            msg = StMessage(StKind.QUERY, me.pid, dest.pid, me.ip, dest.ip, s.session_id,
                            sa_identifier=s.sa_identifier, on_path=True, radius=s.radius)
            self.sim.send(self.node.node_id, dest.ip, msg, interceptable=True, session=s.session_id)
            slot.timer = self.sim.schedule(self.config.query_timeout, self._query_timeout, s, slot)
        upstream = s.upstream.pid if s.upstream else None
        for entry in self.node.discovery.pet.neighbors():
            if entry.peer.pid == upstream or entry.ip_hops > s.radius:
                continue
            slot = Downstream(entry.peer, entry.ip_hops, False)
            s.downstream.append(slot)
            self._send(s, entry.peer, StKind.QUERY, on_path=False, radius=s.radius - entry.ip_hops)
            slot.timer = self.sim.schedule(self.config.query_timeout, self._query_timeout, s, slot)

    def _reply_slot(self, s: Session, pid: bytes) -> Downstream | None:
        # The on-path query always leaves before any off-path query, and
        # per-pair delivery is FIFO, so the interceptor answers it first.
        for slot in s.downstream:
            if slot.peer is None and slot.status == "queried":
                return slot
        for slot in s.downstream:
            if slot.peer is not None and slot.peer.pid == pid and slot.status == "queried":
                return slot
        return None

    def _slot_with(self, s: Session, pid: bytes, status: str) -> Downstream | None:
        for slot in s.downstream:
            if slot.peer is not None and slot.peer.pid == pid and slot.status == status:
                return slot
        return None

    # -- message handlers ----------------------------------------------------

    def receive(self, msg: StMessage, hops: int) -> None:
        handler = {
            StKind.QUERY: self.on_query,
            StKind.RESPONSE: self.on_response,
            StKind.ERROR: self.on_st_error,
            StKind.DATA: self.on_data,
            StKind.DATA_RESPONSE: self.on_data_response,
        }[msg.kind]
        handler(msg)

    def on_query(self, q: StMessage) -> None:
        sender = PeerIdentity(q.source, q.source_ip)
        s = self.sessions.get(q.session_id)
        if s is None:
            if q.session_id in self.originated:
                self._send_error(q.session_id, sender, ERR_REJECTED)
                return
            self._accept(q, sender, StState.IDLE)
            return
        if s.role is Role.INITIATOR:
            self._loop(s, "query_rejected")
            self._send_error(q.session_id, sender, ERR_REJECTED)
            return
        if q.on_path:
            if s.role is Role.ON_PATH:
                self._loop(s, "query_rejected")
                self._send_error(q.session_id, sender, ERR_DUPLICATE_ON_PATH)
            else:
                self._abort_and_replace(s, q, sender)
            return
        if q.radius <= s.radius or s.role is Role.ON_PATH:
            self._loop(s, "query_rejected")
            self._send_error(q.session_id, sender, ERR_REJECTED)
            return
        self._abort_and_replace(s, q, sender)

    def _accept(self, q: StMessage, sender: PeerIdentity, from_state: StState) -> Session:
        role = Role.ON_PATH if q.on_path else Role.OFF_PATH
        dest = q.destination_ip if q.on_path else self.identity.ip
        s = Session(q.session_id, q.sa_identifier, role, q.radius, dest, upstream=sender,
                    st_state=from_state, started_at=self.sim.now)
        self.sessions[q.session_id] = s
        target = StState.ON_PATH_FORWARDER if q.on_path else StState.OFF_PATH_FORWARDER
        self._st(s, target, "onpath_query" if q.on_path else "offpath_query")
        self._send(s, sender, StKind.RESPONSE)
        s.st_timer = self.sim.schedule(self.config.st_session_timeout, self._session_timeout, s)
        return s

    def _abort_and_replace(self, old: Session, q: StMessage, sender: PeerIdentity) -> None:
        self._cancel_timers(old)
        self.aborts[old.session_id] += 1
        self.sim.log(self.node.node_id, "abort", old.session_id, old.role.value,
                     detail=f"r={old.radius}>{q.radius}{' on-path' if q.on_path else ''}")
        if old.sa_state is not SaState.IDLE:
            self._sa(old, SaState.IDLE, "abort")
        if not old.completed and old.upstream is not None and old.upstream.pid != sender.pid:
            self._send_error(old.session_id, old.upstream, ERR_ABORTED)
        self._accept(q, sender, old.st_state)

    def on_response(self, m: StMessage) -> None:
        s = self.sessions.get(m.session_id)
        if s is None or s.completed or s.st_state not in (StState.ACTIVE, StState.ON_PATH_ACTIVE, StState.OFF_PATH_ACTIVE):
            return
        slot = self._reply_slot(s, m.source)
        if slot is None:
            # a Response after an abort notice or timeout supersedes it
            slot = self._slot_with(s, m.source, "rejected")
            if slot is None or slot.reason not in ("aborted", "timeout"):
                return
            s.error_counter -= 1
        if slot.peer is None:
            slot.peer = PeerIdentity(m.source, m.source_ip)
        if slot.timer is not None:
            slot.timer.cancel()
        slot.status = "peered"
        self._loop(s, "response")
        self._send(s, slot.peer, StKind.DATA, sa_payload=s.payload)

    def on_st_error(self, m: StMessage) -> None:
        s = self.sessions.get(m.session_id)
        if s is None or s.completed or s.st_state not in (StState.ACTIVE, StState.ON_PATH_ACTIVE, StState.OFF_PATH_ACTIVE):
            return
        slot = self._reply_slot(s, m.source) or self._slot_with(s, m.source, "peered")
        if slot is None:
            return
        if slot.peer is None:
            slot.peer = PeerIdentity(m.source, m.source_ip)
        if slot.timer is not None:
            slot.timer.cancel()
        slot.status = "rejected"
        slot.reason = "aborted" if m.error_code == ERR_ABORTED else "error"
        s.error_counter += 1
        self._loop(s, "error")
        self._check_complete(s)

    def on_data(self, m: StMessage) -> None:
        s = self.sessions.get(m.session_id)
        if s is None or s.role is Role.INITIATOR or s.payload is not None:
            return
        if s.upstream is None or m.source != s.upstream.pid:
            return
        if s.st_timer is not None:
            s.st_timer.cancel()
        s.payload = m.sa_payload
        self._sa(s, SaState.WAIT_NOTIFICATION, "data")
        upstream_node = self.sim.topology.node_at(m.source_ip) or ""
        self._process_payload(s, upstream_node)
        active = StState.ON_PATH_ACTIVE if s.role is Role.ON_PATH else StState.OFF_PATH_ACTIVE
        self._st(s, active, "data")
        if s.radius >= 1 or s.role is Role.ON_PATH:
            self._fan_out(s)
        if s.n == 0:
            self._finish(s, timed_out=False, leaf=True)
            return
        self._sa(s, SaState.WAIT_RESPONSES, "notify_queries")
        s.wait_timer = self.sim.schedule(self.config.wait_resp_timeout, self._wait_timeout, s)

    def on_data_response(self, m: StMessage) -> None:
        s = self.sessions.get(m.session_id)
        if s is None or s.completed or s.sa_state is not SaState.WAIT_RESPONSES:
            return
        slot = self._slot_with(s, m.source, "peered")
        if slot is None:
            return
        try:
            reply = codec.decode(m.sa_payload)
        except codec.DecodeError:
            return
        if not isinstance(reply, SaMessage) or reply.kind != SaKind.RESPONSE:
            return
        slot.status = "responded"
        s.resp_counter += 1
        self._loop(s, "data_response")
        s.stack.extend(SfStatusElement(e.node, e.status_code, min(e.depth + 1, 255)) for e in reply.status_elements)
        self._sa(s, SaState.WAIT_RESPONSES, "data_response")
        self._check_complete(s)

    # -- timers --------------------------------------------------------------

    def _query_timeout(self, s: Session, slot: Downstream) -> None:
        if s.completed or self.sessions.get(s.session_id) is not s or slot.status != "queried":
            return
        slot.status = "rejected"
        slot.reason = "timeout"
        s.error_counter += 1
        self._loop(s, "query_timeout")
        self._check_complete(s)

    def _wait_timeout(self, s: Session) -> None:
        if s.completed or self.sessions.get(s.session_id) is not s:
            return
        self._finish(s, timed_out=True)

    def _session_timeout(self, s: Session) -> None:
        if self.sessions.get(s.session_id) is not s:
            return
        if s.st_state in (StState.ON_PATH_FORWARDER, StState.OFF_PATH_FORWARDER):
            self._st(s, StState.IDLE, "session_timeout")
            del self.sessions[s.session_id]

    def _cancel_timers(self, s: Session) -> None:
        for t in (s.wait_timer, s.st_timer, *(d.timer for d in s.downstream)):
            if t is not None:
                t.cancel()

    # -- completion ----------------------------------------------------------

    def _check_complete(self, s: Session) -> None:
        if not s.completed and s.resp_counter + s.error_counter == s.n:
            self._finish(s, timed_out=False)

    def _finish(self, s: Session, timed_out: bool, leaf: bool = False) -> None:
        self._cancel_timers(s)
        s.completed = True
        if not leaf:
            self.accounting.append((s.session_id, s.resp_counter, s.error_counter, s.n, timed_out))
        status = self.registry.status(s.sa_message.service_type) if s.sa_message else STATUS_ABSENT
        s.stack.append(SfStatusElement(self.identity.ip, status, 0))
        event = "timeout" if timed_out else "complete"
        if leaf:
            self._sa(s, SaState.IDLE, "notify_leaf")
        else:
            self._sa(s, SaState.IDLE, event)
        if s.role is Role.INITIATOR:
            self._st(s, StState.IDLE, event)
            del self.sessions[s.session_id]
            result = AppResult(s.session_id, dedupe_elements(s.stack), list(s.stack), not timed_out,
                               s.started_at, self.sim.now)
            self.results[s.session_id] = result
            self.sim.log(self.node.node_id, "app_result", s.session_id, detail="complete" if result.complete else "partial")
            if s.on_result is not None:
                s.on_result(result)
            return
        reply = SaMessage(SaKind.RESPONSE, response_code=RESPONSE_PARTIAL if timed_out else RESPONSE_COMPLETE,
                          status_elements=tuple(s.stack))
        self._send(s, s.upstream, StKind.DATA_RESPONSE, sa_payload=codec.encode(reply))
        forwarder = StState.ON_PATH_FORWARDER if s.role is Role.ON_PATH else StState.OFF_PATH_FORWARDER
        self._st(s, forwarder, event)
        s.st_timer = self.sim.schedule(self.config.st_session_timeout, self._session_timeout, s)
