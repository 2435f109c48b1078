"""Bit-exact wire format for gossip, ST and SA messages.

All integers are big-endian.  Every message starts with a 1-byte type code.

Gossip (Registration 0x01, RegResponse 0x02, Ack 0x03)::

    type:1 src_pid:8 dst_pid:8 src_ip:4 session:8 metric:i16 pts_count:1 pts_entry*   (Registration, RegResponse)
    type:1 src_pid:8 dst_pid:8 session:8                                              (Ack)
    pts_entry = pid:8 ip_type:1 ip:4

ST (Query 0x10, Response 0x11, Error 0x12, Data 0x13, DataResponse 0x14)::

    type:1 src_pid:8 dst_pid:8 src_ip:4 dst_ip:4 session:8 on_path:1 metric_type:1 radius:1 sa_id:2  (Query)
    type:1 src_pid:8 dst_pid:8 src_ip:4 dst_ip:4 session:8 sa_id:2                                    (Response)
    type:1 src_pid:8 dst_pid:8 session:8 src_ip:4 dst_ip:4 error_code:1                               (Error)
    type:1 src_pid:8 dst_pid:8 src_ip:4 dst_ip:4 session:8 sa_id:2 len:4 payload                      (Data, DataResponse)

SA (Setup 0x20, Remove 0x21, Probe 0x22, SaResponse 0x23)::

    type:1 service:2 has_payload:1 [len:2 payload]
    type:1 response_code:1 count:2 (node_ip:4 status:1 depth:1)*
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum


class CodecError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (offset {offset})")


class EncodeError(CodecError):
    pass


class DecodeError(CodecError):
    pass


class GossipKind(IntEnum):
    REGISTRATION = 0x01
    REG_RESPONSE = 0x02
    ACK = 0x03


class StKind(IntEnum):
    QUERY = 0x10
    RESPONSE = 0x11
    ERROR = 0x12
    DATA = 0x13
    DATA_RESPONSE = 0x14


class SaKind(IntEnum):
    SETUP = 0x20
    REMOVE = 0x21
    PROBE = 0x22
    RESPONSE = 0x23


class MetricType(IntEnum):
    HOP_COUNT = 0x01


PID_LEN = 8
IPV4 = 4
PTS_ENTRY_LEN = PID_LEN + 1 + 4
STATUS_ELEMENT_LEN = 6


@dataclass(frozen=True, order=True)
class PeerIdentity:
    pid: bytes
    ip: int

    def __post_init__(self):
        if len(self.pid) != PID_LEN:
            raise ValueError(f"pid must be {PID_LEN} bytes")

    def __repr__(self) -> str:
        return f"PeerIdentity({self.pid.hex()}, {ip_str(self.ip)})"


NULL_PID = bytes(PID_LEN)


def ip_str(address: int) -> str:
    return ".".join(str((address >> s) & 0xFF) for s in (24, 16, 8, 0))


@dataclass(frozen=True)
class GossipMessage:
    kind: GossipKind
    source: bytes
    destination: bytes
    session_id: int
    source_ip: int = 0
    metric_value: int = -1
    pts: tuple[PeerIdentity, ...] = ()


@dataclass(frozen=True)
class StMessage:
    kind: StKind
    source: bytes
    destination: bytes
    source_ip: int
    destination_ip: int
    session_id: int
    sa_identifier: int = 0
    on_path: bool = False
    metric_type: MetricType = MetricType.HOP_COUNT
    radius: int = 0
    error_code: int = 0
    sa_payload: bytes = b""


@dataclass(frozen=True)
class SfStatusElement:
    node: int
    status_code: int
    depth: int


@dataclass(frozen=True)
class SaMessage:
    kind: SaKind
    service_type: int = 0
    sf_payload: bytes | None = None
    response_code: int = 0
    status_elements: tuple[SfStatusElement, ...] = field(default_factory=tuple)


Message = GossipMessage | StMessage | SaMessage


# -- encode ------------------------------------------------------------------


def _pack(fmt: str, *values, what: str) -> bytes:
    try:
        return struct.pack(fmt, *values)
    except struct.error as exc:
        raise EncodeError(f"{what} out of range: {exc}") from exc


def _pid(pid: bytes, what: str) -> bytes:
    if len(pid) != PID_LEN:
        raise EncodeError(f"{what} must be {PID_LEN} bytes, got {len(pid)}")
    return pid


def _encode_gossip(m: GossipMessage) -> bytes:
    head = _pack(">B", m.kind, what="type") + _pid(m.source, "source pid") + _pid(m.destination, "destination pid")
    if m.kind == GossipKind.ACK:
        if m.pts:
            raise EncodeError("Ack carries no PTS")
        return head + _pack(">Q", m.session_id, what="session id")
    if len(m.pts) > 255:
        raise EncodeError("PTS longer than 255 entries")
    body = _pack(">IQhB", m.source_ip, m.session_id, m.metric_value, len(m.pts), what="gossip field")
    for peer in m.pts:
        body += _pid(peer.pid, "shared pid") + _pack(">BI", IPV4, peer.ip, what="shared ip")
    return head + body


def _encode_st(m: StMessage) -> bytes:
    k = m.kind
    pids = _pid(m.source, "source pid") + _pid(m.destination, "destination pid")
    if k == StKind.ERROR:
        return (_pack(">B", k, what="type") + pids
                + _pack(">QIIB", m.session_id, m.source_ip, m.destination_ip, m.error_code, what="error field"))
    head = _pack(">B", k, what="type") + pids + _pack(">IIQ", m.source_ip, m.destination_ip, m.session_id,
                                                       what="header field")
    if k == StKind.QUERY:
        if m.metric_type != MetricType.HOP_COUNT:
            raise EncodeError(f"unsupported metric type {m.metric_type}")
        return head + _pack(">BBBH", int(m.on_path), m.metric_type, m.radius, m.sa_identifier, what="query field")
    if k == StKind.RESPONSE:
        return head + _pack(">H", m.sa_identifier, what="sa identifier")
    return head + _pack(">HI", m.sa_identifier, len(m.sa_payload), what="data field") + bytes(m.sa_payload)


def _encode_sa(m: SaMessage) -> bytes:
    if m.kind == SaKind.RESPONSE:
        out = _pack(">BBH", m.kind, m.response_code, len(m.status_elements), what="response field")
        for el in m.status_elements:
            out += _pack(">IBB", el.node, el.status_code, el.depth, what="status element")
        return out
    if m.status_elements:
        raise EncodeError("only SA responses carry status elements")
    out = _pack(">BH", m.kind, m.service_type, what="service type")
    if m.sf_payload is None:
        return out + b"\x00"
    return out + _pack(">BH", 1, len(m.sf_payload), what="payload length") + bytes(m.sf_payload)


def encode(message: Message) -> bytes:
    if isinstance(message, GossipMessage):
        return _encode_gossip(message)
    if isinstance(message, StMessage):
        return _encode_st(message)
    if isinstance(message, SaMessage):
        return _encode_sa(message)
    raise EncodeError(f"cannot encode {type(message).__name__}")


# -- decode ------------------------------------------------------------------


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = bytes(buf)
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise DecodeError(f"truncated {what}: need {n} bytes, have {len(self.buf) - self.pos}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise DecodeError(f"{len(self.buf) - self.pos} trailing bytes", self.pos)


def _decode_gossip(kind: GossipKind, r: _Reader) -> GossipMessage:
    src = r.take(PID_LEN, "source pid")
    dst = r.take(PID_LEN, "destination pid")
    if kind == GossipKind.ACK:
        (session,) = r.unpack(">Q", "session id")
        return GossipMessage(kind, src, dst, session)
    ip, session, metric, count = r.unpack(">IQhB", "gossip header")
    pts = []
    for _ in range(count):
        pid = r.take(PID_LEN, "shared pid")
        at = r.pos
        ip_type, peer_ip = r.unpack(">BI", "shared ip")
        if ip_type != IPV4:
            raise DecodeError(f"unknown address type {ip_type}", at)
        pts.append(PeerIdentity(pid, peer_ip))
    return GossipMessage(kind, src, dst, session, ip, metric, tuple(pts))


def _decode_st(kind: StKind, r: _Reader) -> StMessage:
    src = r.take(PID_LEN, "source pid")
    dst = r.take(PID_LEN, "destination pid")
    if kind == StKind.ERROR:
        session, sip, dip, code = r.unpack(">QIIB", "error body")
        return StMessage(kind, src, dst, sip, dip, session, error_code=code)
    sip, dip, session = r.unpack(">IIQ", "ST header")
    if kind == StKind.QUERY:
        at = r.pos
        flag, mtype, radius, sa_id = r.unpack(">BBBH", "query body")
        if flag not in (0, 1):
            raise DecodeError(f"bad on-path flag {flag}", at)
        if mtype not in MetricType._value2member_map_:
            raise DecodeError(f"unknown metric type {mtype}", at + 1)
        return StMessage(kind, src, dst, sip, dip, session, sa_id, bool(flag), MetricType(mtype), radius)
    if kind == StKind.RESPONSE:
        (sa_id,) = r.unpack(">H", "sa identifier")
        return StMessage(kind, src, dst, sip, dip, session, sa_id)
    sa_id, length = r.unpack(">HI", "data header")
    payload = r.take(length, "SA payload")
    return StMessage(kind, src, dst, sip, dip, session, sa_id, sa_payload=payload)


def _decode_sa(kind: SaKind, r: _Reader) -> SaMessage:
    if kind == SaKind.RESPONSE:
        code, count = r.unpack(">BH", "response header")
        elements = tuple(SfStatusElement(*r.unpack(">IBB", "status element")) for _ in range(count))
        return SaMessage(kind, response_code=code, status_elements=elements)
    (service,) = r.unpack(">H", "service type")
    at = r.pos
    (has_payload,) = r.unpack(">B", "payload flag")
    if has_payload == 0:
        return SaMessage(kind, service)
    if has_payload != 1:
        raise DecodeError(f"bad payload flag {has_payload}", at)
    (length,) = r.unpack(">H", "payload length")
    return SaMessage(kind, service, r.take(length, "SF payload"))


def decode(buf: bytes) -> Message:
    r = _Reader(buf)
    (code,) = r.unpack(">B", "message type")
    if code in GossipKind._value2member_map_:
        msg = _decode_gossip(GossipKind(code), r)
    elif code in StKind._value2member_map_:
        msg = _decode_st(StKind(code), r)
    elif code in SaKind._value2member_map_:
        msg = _decode_sa(SaKind(code), r)
    else:
        raise DecodeError(f"unknown message type 0x{code:02x}", 0)
    r.finish()
    return msg


# -- sizes -------------------------------------------------------------------

ACK_LEN = 1 + 2 * PID_LEN + 8


@dataclass(frozen=True)
class NominalSizes:
    """Per-message byte counts for the analytic gossip overhead formula."""

    registration: int = 184
    response: int = 184
    ack: int = 112

    @property
    def session_total(self) -> int:
        return self.registration + self.response + self.ack


def nominal_size(kind: GossipKind, sizes: NominalSizes | None = None) -> int:
    sizes = sizes or NominalSizes()
    return {
        GossipKind.REGISTRATION: sizes.registration,
        GossipKind.REG_RESPONSE: sizes.response,
        GossipKind.ACK: sizes.ack,
    }[GossipKind(kind)]


def kind_name(message: Message) -> str:
    family = {GossipMessage: "gossip", StMessage: "st", SaMessage: "sa"}[type(message)]
    return f"{family}.{message.kind.name.lower()}"
