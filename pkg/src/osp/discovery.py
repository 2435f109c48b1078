"""Gossip-based peer discovery: peer tables and the three-way gossip exchange."""

from __future__ import annotations

import enum
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

from .codec import GossipKind, GossipMessage, PeerIdentity

if TYPE_CHECKING:
    from .simnet import Simulator, Timer

NOT_SIGNIFICANT = -1


class PeerClass(enum.Enum):
    NEIGHBOR = "neighbor"
    UNREACHABLE = "unreachable"
    UNKNOWN = "unknown"


@dataclass
class PetEntry:
    peer: PeerIdentity
    timestamp: float
    contacted: bool = False
    ip_hops: int = NOT_SIGNIFICANT
    latency_rtt: float = NOT_SIGNIFICANT

    @property
    def peer_class(self) -> PeerClass:
        if not self.contacted:
            return PeerClass.UNKNOWN
        return PeerClass.NEIGHBOR if self.ip_hops >= 0 else PeerClass.UNREACHABLE

    @property
    def flag(self) -> int:
        return int(self.contacted)


class PeerTable:
    """Soft-state peer table keyed by PID.

    ``unreachable_capacity`` bounds the unreachable list; the least recently
    refreshed unreachable entry is evicted first.
    """

    def __init__(self, owner: PeerIdentity, unreachable_capacity: int | None = None):
        self.owner = owner
        self.unreachable_capacity = unreachable_capacity
        self.entries: OrderedDict[bytes, PetEntry] = OrderedDict()

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, pid: bytes) -> bool:
        return pid in self.entries

    def __iter__(self):
        return iter(self.entries.values())

    def get(self, pid: bytes) -> PetEntry | None:
        return self.entries.get(pid)

    def by_ip(self, ip: int) -> PetEntry | None:
        for entry in self.entries.values():
            if entry.peer.ip == ip:
                return entry
        return None

    def of_class(self, cls: PeerClass) -> list[PetEntry]:
        return [e for e in self.sorted_entries() if e.peer_class is cls]

    def sorted_entries(self) -> list[PetEntry]:
        return [self.entries[k] for k in sorted(self.entries)]

    def neighbors(self) -> list[PetEntry]:
        return self.of_class(PeerClass.NEIGHBOR)

    def add_unknown(self, peer: PeerIdentity, now: float) -> bool:
        if peer.pid == self.owner.pid or peer.pid in self.entries:
            return False
        self.entries[peer.pid] = PetEntry(peer, now)
        return True

    def set_neighbor(self, peer: PeerIdentity, ip_hops: int, rtt: float, now: float) -> None:
        if peer.pid == self.owner.pid:
            return
        self.entries[peer.pid] = PetEntry(peer, now, True, ip_hops, rtt)
        self.entries.move_to_end(peer.pid)

    def set_unreachable(self, peer: PeerIdentity, now: float) -> None:
        if peer.pid == self.owner.pid:
            return
        self.entries[peer.pid] = PetEntry(peer, now, True)
        self.entries.move_to_end(peer.pid)
        self._enforce_capacity()

    def touch(self, pid: bytes, now: float) -> None:
        entry = self.entries.get(pid)
        if entry is not None:
            entry.timestamp = now
            self.entries.move_to_end(pid)

    def _enforce_capacity(self) -> None:
        cap = self.unreachable_capacity
        if cap is None:
            return
        unreachable = [pid for pid, e in self.entries.items() if e.peer_class is PeerClass.UNREACHABLE]
        for pid in unreachable[:max(0, len(unreachable) - cap)]:
            del self.entries[pid]

    def remove(self, pid: bytes) -> None:
        self.entries.pop(pid, None)

    def copy(self) -> "PeerTable":
        other = PeerTable(self.owner, self.unreachable_capacity)
        for pid, e in self.entries.items():
            other.entries[pid] = PetEntry(e.peer, e.timestamp, e.contacted, e.ip_hops, e.latency_rtt)
        return other


@dataclass
class GossipConfig:
    period_T: float = 5.0
    gossip_timer: float | None = None
    pts_size: int = 2
    entry_lifetime_factor: float = 2.0
    unreachable_capacity: int | None = None
    timeout_marks_out_of_scope: bool = False

    def __post_init__(self):
        if self.period_T <= 0:
            raise ValueError("period_T must be positive")
        if self.pts_size < 0:
            raise ValueError("pts_size must be non-negative")
        if self.gossip_timer is None:
            self.gossip_timer = self.period_T


def select_gossip_destination(pet: PeerTable, rng: random.Random) -> PeerIdentity | None:
    if not len(pet):
        return None
    unknown = pet.of_class(PeerClass.UNKNOWN)
    pool = unknown or pet.sorted_entries()
    return rng.choice(pool).peer


def select_pts(pet: PeerTable, counterpart: bytes, pts_size: int, rng: random.Random) -> list[PeerIdentity]:
    eligible = [e.peer for e in pet.sorted_entries() if e.peer.pid != counterpart]
    return rng.sample(eligible, min(pts_size, len(eligible)))


def entry_lifetime(pet: PeerTable, config: GossipConfig) -> float:
    return config.entry_lifetime_factor * len(pet) * config.period_T


def expire_entries(pet: PeerTable, now: float, config: GossipConfig) -> list[PeerIdentity]:
    lifetime = entry_lifetime(pet, config)
    stale = [pid for pid, e in pet.entries.items() if now - e.timestamp > lifetime]
    evicted = [pet.entries[pid].peer for pid in stale]
    for pid in stale:
        pet.remove(pid)
    return evicted


@dataclass
class GossipSession:
    session_id: int
    role: str
    counterpart: PeerIdentity | None
    started_at: float
    original_destination: PeerIdentity | None = None
    timer: "Timer | None" = field(default=None, repr=False)


class DiscoveryEngine:
    """Per-node gossip initiator and responder.

    ``node`` supplies ``identity``, ``node_id`` and ``sim``; all randomness is
    drawn from the simulator's seeded generator.
    """

    def __init__(self, node, config: GossipConfig, tracker: PeerIdentity | None = None):
        self.node = node
        self.config = config
        self.pet = PeerTable(node.identity, config.unreachable_capacity)
        self.initiator: GossipSession | None = None
        self.responder_sessions: dict[int, GossipSession] = {}
        self.cycles = 0
        self.sessions_started = 0
        self.expected_neighbors: set[bytes] | None = None
        self.converged_after: int | None = None
        self.on_converged: Callable[["DiscoveryEngine"], None] | None = None
        if tracker is not None and tracker.pid != node.identity.pid:
            self.pet.add_unknown(tracker, 0.0)

    @property
    def sim(self) -> "Simulator":
        return self.node.sim

    @property
    def identity(self) -> PeerIdentity:
        return self.node.identity

    def _send(self, to_ip: int, msg: GossipMessage, interceptable: bool = False) -> None:
        self.sim.send(self.node.node_id, to_ip, msg, interceptable=interceptable, session=msg.session_id)

    def _new_session_id(self) -> int:
        return self.sim.rng.getrandbits(64)

    # -- initiator -----------------------------------------------------------

    def on_gossip_cycle(self) -> GossipMessage | None:
        now = self.sim.now
        self.cycles += 1
        if self.initiator is not None:
            self._abort_initiator()
        expire_entries(self.pet, now, self.config)
        dest = select_gossip_destination(self.pet, self.sim.rng)
        if dest is None:
            return None
        session = GossipSession(self._new_session_id(), "initiator", dest, now, original_destination=dest)
        msg = GossipMessage(
            GossipKind.REGISTRATION, self.identity.pid, dest.pid, session.session_id,
            source_ip=self.identity.ip, metric_value=-1,
            pts=tuple(select_pts(self.pet, dest.pid, self.config.pts_size, self.sim.rng)),
        )
        session.timer = self.sim.schedule(self.config.gossip_timer, self._initiator_timeout, session.session_id)
        self.initiator = session
        self.sessions_started += 1
        self._send(dest.ip, msg, interceptable=True)
        return msg

    def _initiator_timeout(self, session_id: int) -> None:
        if self.initiator is not None and self.initiator.session_id == session_id:
            self._abort_initiator()

    def _abort_initiator(self) -> None:
        session = self.initiator
        self.initiator = None
        if session.timer is not None:
            session.timer.cancel()
        self.sim.log(self.node.node_id, "gossip_timeout", session.session_id)
        if self.config.timeout_marks_out_of_scope:
            self.pet.set_unreachable(session.original_destination, self.sim.now)

    def on_reg_response(self, msg: GossipMessage) -> GossipMessage | None:
        session = self.initiator
        if session is None or session.session_id != msg.session_id:
            return None
        now = self.sim.now
        self.initiator = None
        session.timer.cancel()
        responder = PeerIdentity(msg.source, msg.source_ip)
        dest = session.original_destination
        self.pet.set_neighbor(responder, msg.metric_value, now - session.started_at, now)
        if responder.pid != dest.pid:
            self.pet.set_unreachable(dest, now)
        for peer in msg.pts:
            self.pet.add_unknown(peer, now)
        ack = GossipMessage(GossipKind.ACK, self.identity.pid, responder.pid, msg.session_id)
        self._send(responder.ip, ack)
        self._check_converged()
        return ack

    def _check_converged(self) -> None:
        if self.converged_after is not None or self.expected_neighbors is None:
            return
        have = {e.peer.pid for e in self.pet.neighbors()}
        if self.expected_neighbors <= have:
            self.converged_after = self.sessions_started
            if self.on_converged is not None:
                self.on_converged(self)

    # -- responder -----------------------------------------------------------

    def on_intercept_registration(self, msg: GossipMessage, hops: int) -> GossipMessage:
        now = self.sim.now
        initiator = PeerIdentity(msg.source, msg.source_ip)
        self.pet.add_unknown(initiator, now)
        for peer in msg.pts:
            self.pet.add_unknown(peer, now)
        pts = select_pts(self.pet, initiator.pid, self.config.pts_size, self.sim.rng)
        reply = GossipMessage(
            GossipKind.REG_RESPONSE, self.identity.pid, initiator.pid, msg.session_id,
            source_ip=self.identity.ip, metric_value=hops, pts=tuple(pts),
        )
        old = self.responder_sessions.pop(msg.session_id, None)
        if old is not None and old.timer is not None:
            old.timer.cancel()
        session = GossipSession(msg.session_id, "responder", initiator, now)
        session.timer = self.sim.schedule(self.config.gossip_timer, self._responder_timeout, msg.session_id)
        self.responder_sessions[msg.session_id] = session
        self._send(initiator.ip, reply)
        return reply

    def _responder_timeout(self, session_id: int) -> None:
        if self.responder_sessions.pop(session_id, None) is not None:
            self.sim.log(self.node.node_id, "gossip_responder_timeout", session_id)

    def on_ack(self, msg: GossipMessage) -> None:
        session = self.responder_sessions.pop(msg.session_id, None)
        if session is None or session.counterpart.pid != msg.source:
            if session is not None:
                self.responder_sessions[msg.session_id] = session
            return
        session.timer.cancel()
        self.pet.touch(msg.source, self.sim.now)

    def receive(self, msg: GossipMessage, hops: int) -> None:
        if msg.kind == GossipKind.REGISTRATION:
            self.on_intercept_registration(msg, hops)
        elif msg.kind == GossipKind.REG_RESPONSE:
            self.on_reg_response(msg)
        else:
            self.on_ack(msg)
