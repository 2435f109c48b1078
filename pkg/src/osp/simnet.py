"""Deterministic discrete-event network carrying encoded OSP messages."""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Protocol

from . import codec
from .topology import NodeId, Topology


@dataclass
class SimConfig:
    per_hop_latency: float = 0.010
    loss_probability: float = 0.0
    rng_seed: int = 0
    sim_time_limit: float = 3600.0
    # IP-layer framing added to every transmission: IPv4 + UDP headers, plus
    # the router alert option carried by interceptable packets.
    ip_udp_header: int = 28
    router_alert_option: int = 4

    def __post_init__(self):
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability must lie in [0, 1]")
        if self.per_hop_latency < 0:
            raise ValueError("per_hop_latency must be non-negative")
        if self.ip_udp_header < 0 or self.router_alert_option < 0:
            raise ValueError("header sizes must be non-negative")


class Handler(Protocol):
    def receive(self, message: codec.Message, hops: int) -> None: ...


class Timer:
    __slots__ = ("fire_at", "cancelled")

    def __init__(self, fire_at: float):
        self.fire_at = fire_at
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class Ledger:
    """Byte-hop accounting of every transmission.

    ``total``/``by_kind``/``by_session`` count IP-layer bytes; the ``codec_``
    counters hold the OSP message bytes alone.
    """

    total: int = 0
    codec_total: int = 0
    by_kind: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    by_session: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    codec_by_session: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    messages: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def account(self, kind: str, session: int | None, size: int, hops: int, framing: int = 0) -> int:
        amount = (size + framing) * hops
        self.total += amount
        self.codec_total += size * hops
        self.by_kind[kind] += amount
        self.messages[kind] += 1
        if session is not None:
            self.by_session[session] += amount
            self.codec_by_session[session] += size * hops
        return amount

    def family_total(self, prefix: str) -> int:
        return sum(v for k, v in self.by_kind.items() if k.startswith(prefix))


TRACE_FIELDS = ("time", "node", "event", "session", "kind", "bytes", "hops", "detail")


@dataclass
class RunResult:
    events: int
    end_time: float
    truncated: bool
    quiescent: bool


class Simulator:
    def __init__(self, topology: Topology, config: SimConfig | None = None, trace: bool = True):
        self.topology = topology
        self.config = config or SimConfig()
        self.rng = random.Random(self.config.rng_seed)
        self.now = 0.0
        self.handlers: dict[NodeId, Handler] = {}
        self.ledger = Ledger()
        self.trace_enabled = trace
        self.trace: list[tuple] = []
        self._queue: list = []
        self._seq = 0
        self._loss_counts: dict[bytes, int] = defaultdict(int)
        self._cycle_timers: dict[NodeId, Timer] = {}

    # -- plumbing ------------------------------------------------------------

    def attach(self, node: NodeId, handler: Handler) -> None:
        if not self.topology.is_member(node):
            raise ValueError(f"{node!r} does not run OSP")
        self.handlers[node] = handler

    def log(self, node: NodeId, event: str, session: int | None = None, kind: str = "",
            size: int = 0, hops: int = 0, detail: str = "") -> None:
        if self.trace_enabled:
            self.trace.append((round(self.now, 9), node, event, session, kind, size, hops, detail))

    def schedule(self, delay: float, callback: Callable, *args) -> Timer:
        timer = Timer(self.now + delay)
        self._push(timer.fire_at, timer, callback, args)
        return timer

    def _push(self, at: float, timer: Timer | None, callback: Callable, args: tuple) -> None:
        heapq.heappush(self._queue, (at, self._seq, timer, callback, args))
        self._seq += 1

    # -- transmission --------------------------------------------------------

    def _lost(self, src: NodeId, dst: NodeId, data: bytes) -> bool:
        p = self.config.loss_probability
        if p <= 0.0:
            return False
        # Fate is keyed on the transmission itself, so two runs that send the
        # same message see the same loss outcome.
        key = hashlib.blake2b(f"{self.config.rng_seed}|{src}|{dst}|".encode() + data, digest_size=16).digest()
        n = self._loss_counts[key]
        self._loss_counts[key] += 1
        draw = hashlib.blake2b(key + n.to_bytes(4, "big"), digest_size=8).digest()
        return int.from_bytes(draw, "big") / 2.0 ** 64 < p

    def send(self, src: NodeId, to_ip: int, message: codec.Message, interceptable: bool = False,
             reliable: bool = False, session: int | None = None) -> NodeId | None:
        """Route ``message`` from ``src`` toward address ``to_ip``.

        Returns the node that will receive it, or None when it is dropped.
        """
        dst = self.topology.node_at(to_ip)
        if dst is None:
            raise ValueError(f"no node owns address {codec.ip_str(to_ip)}")
        data = codec.encode(message)
        kind = codec.kind_name(message)
        path = self.topology.shortest_path(src, dst).hops
        target, hops = None, len(path) - 1
        members = self.topology.osp_members
        if interceptable:
            for i, hop in enumerate(path[1:], 1):
                if hop in members:
                    target, hops = hop, i
                    break
        elif dst in members:
            target = dst
        if hops == 0:
            target = None
        if target is not None and not reliable and self._lost(src, dst, data):
            self.log(src, "drop", session, kind, len(data), 0, "loss")
            return None
        framing = self.config.ip_udp_header + (self.config.router_alert_option if interceptable else 0)
        self.ledger.account(kind, session, len(data), hops, framing)
        self.log(src, "send", session, kind, len(data), hops, str(target if target is not None else dst))
        if target is None:
            self.log(dst, "drop", session, kind, len(data), hops, "no-osp-receiver")
            return None
        at = self.now + hops * self.config.per_hop_latency
        self._push(at, None, self._deliver, (target, data, hops, session))
        return target

    def _deliver(self, node: NodeId, data: bytes, hops: int, session: int | None) -> None:
        message = codec.decode(data)
        self.log(node, "deliver", session, codec.kind_name(message), len(data), hops)
        self.handlers[node].receive(message, hops)

    # -- cycles --------------------------------------------------------------

    def schedule_cycles(self, nodes, period: float, callback: Callable[[NodeId], None],
                        jitter: bool = True) -> dict[NodeId, float]:
        """Fire ``callback(node)`` every ``period`` from an independent random phase."""
        if period <= 0:
            raise ValueError("period must be positive")
        phases = {}
        for node in sorted(nodes):
            phase = self.rng.uniform(0.0, period) if jitter else 0.0
            phases[node] = phase
            timer = Timer(self.now + phase)
            self._cycle_timers[node] = timer
            self._push(timer.fire_at, timer, self._cycle, (node, period, callback))
        return phases

    def _cycle(self, node: NodeId, period: float, callback: Callable[[NodeId], None]) -> None:
        timer = Timer(self.now + period)
        self._cycle_timers[node] = timer
        self._push(timer.fire_at, timer, self._cycle, (node, period, callback))
        self.log(node, "cycle")
        callback(node)

    def stop_cycles(self) -> None:
        for timer in self._cycle_timers.values():
            timer.cancel()
        self._cycle_timers.clear()

    # -- main loop -----------------------------------------------------------

    def run(self, until: float | None = None, stop: Callable[[], bool] | None = None) -> RunResult:
        count = 0
        truncated = False
        while self._queue:
            at, _, timer, callback, args = self._queue[0]
            if timer is not None and timer.cancelled:
                heapq.heappop(self._queue)
                continue
            if until is not None and at > until:
                self.now = max(self.now, until)
                break
            if at > self.config.sim_time_limit:
                truncated = True
                break
            heapq.heappop(self._queue)
            self.now = at
            callback(*args)
            count += 1
            if stop is not None and stop():
                break
        if until is not None and not truncated and self.now < until and not self._queue:
            self.now = until
        return RunResult(count, self.now, truncated, quiescent=not self._pending())

    def _pending(self) -> bool:
        return any(t is None or not t.cancelled for _, _, t, _, _ in self._queue)

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.trace_text())

    def trace_text(self) -> str:
        return "".join(json.dumps(dict(zip(TRACE_FIELDS, rec))) + "\n" for rec in self.trace)
