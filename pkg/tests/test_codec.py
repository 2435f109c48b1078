import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osp import codec
from osp.codec import (ACK_LEN, CodecError, DecodeError, EncodeError, GossipKind, GossipMessage, MetricType,
                       NominalSizes, PeerIdentity, SaKind, SaMessage, SfStatusElement, StKind, StMessage, decode,
                       encode, nominal_size)

pids = st.binary(min_size=8, max_size=8)
u8, u16, u32, u64 = (st.integers(0, 2 ** b - 1) for b in (8, 16, 32, 64))
peers = st.builds(PeerIdentity, pids, u32)


@st.composite
def gossip_messages(draw):
    kind = draw(st.sampled_from(list(GossipKind)))
    if kind == GossipKind.ACK:
        return GossipMessage(kind, draw(pids), draw(pids), draw(u64))
    return GossipMessage(kind, draw(pids), draw(pids), draw(u64), draw(u32), draw(st.integers(-32768, 32767)),
                         tuple(draw(st.lists(peers, max_size=12))))


@st.composite
def st_messages(draw):
    kind = draw(st.sampled_from(list(StKind)))
    base = dict(source=draw(pids), destination=draw(pids), source_ip=draw(u32), destination_ip=draw(u32),
                session_id=draw(u64))
    if kind == StKind.QUERY:
        return StMessage(kind, **base, sa_identifier=draw(u16), on_path=draw(st.booleans()), radius=draw(u8))
    if kind == StKind.RESPONSE:
        return StMessage(kind, **base, sa_identifier=draw(u16))
    if kind == StKind.ERROR:
        return StMessage(kind, **base, error_code=draw(u8))
    return StMessage(kind, **base, sa_identifier=draw(u16), sa_payload=draw(st.binary(max_size=300)))


elements = st.builds(SfStatusElement, u32, u8, u8)


@st.composite
def sa_messages(draw):
    kind = draw(st.sampled_from(list(SaKind)))
    if kind == SaKind.RESPONSE:
        return SaMessage(kind, response_code=draw(u8), status_elements=tuple(draw(st.lists(elements, max_size=20))))
    return SaMessage(kind, draw(u16), draw(st.none() | st.binary(max_size=300)))


any_message = gossip_messages() | st_messages() | sa_messages()


@given(any_message)
@settings(max_examples=400)
def test_round_trip(msg):
    data = encode(msg)
    assert decode(data) == msg
    assert encode(decode(data)) == data


@given(any_message)
@settings(max_examples=200)
def test_every_truncation_fails(msg):
    data = encode(msg)
    for cut in range(len(data)):
        with pytest.raises(DecodeError):
            decode(data[:cut])


@given(any_message, st.binary(min_size=1, max_size=4))
def test_trailing_bytes_rejected(msg, extra):
    with pytest.raises(DecodeError, match="trailing"):
        decode(encode(msg) + extra)


@given(st.binary(max_size=200))
@settings(max_examples=1000)
def test_fuzz_never_crashes(data):
    try:
        msg = decode(data)
    except CodecError:
        return
    assert encode(msg) == data


def test_registration_layout():
    msg = GossipMessage(GossipKind.REGISTRATION, b"A" * 8, b"B" * 8, 7, source_ip=0x0A000001, metric_value=-1,
                        pts=(PeerIdentity(b"C" * 8, 0x0A000003),))
    data = encode(msg)
    assert data == (b"\x01" + b"A" * 8 + b"B" * 8 + bytes([10, 0, 0, 1]) + (7).to_bytes(8, "big")
                    + b"\xff\xff" + b"\x01" + b"C" * 8 + b"\x04" + bytes([10, 0, 0, 3]))
    assert len(data) == 32 + codec.PTS_ENTRY_LEN


@pytest.mark.parametrize("k", [0, 1, 2, 8])
def test_gossip_size_rule(k):
    msg = GossipMessage(GossipKind.REG_RESPONSE, bytes(8), bytes(8), 1,
                        pts=tuple(PeerIdentity(bytes([i]) * 8, i) for i in range(k)))
    assert len(encode(msg)) == 32 + 13 * k


def test_ack_size():
    assert len(encode(GossipMessage(GossipKind.ACK, bytes(8), bytes(8), 1))) == ACK_LEN == 25


def test_query_layout():
    msg = StMessage(StKind.QUERY, bytes(8), bytes(8), 1, 2, 3, sa_identifier=9, on_path=True, radius=3)
    data = encode(msg)
    assert len(data) == 1 + 16 + 4 + 4 + 8 + 1 + 1 + 1 + 2
    assert data[-5:] == bytes([1, MetricType.HOP_COUNT, 3, 0, 9])


def test_data_size_tracks_payload():
    payload = encode(SaMessage(SaKind.PROBE, 1, bytes(1024)))
    assert len(payload) == 1024 + 6
    msg = StMessage(StKind.DATA, bytes(8), bytes(8), 1, 2, 3, 1, sa_payload=payload)
    assert len(encode(msg)) == 1 + 16 + 8 + 8 + 2 + 4 + len(payload)


def test_status_element_layout():
    msg = SaMessage(SaKind.RESPONSE, response_code=0, status_elements=(SfStatusElement(0x0A000002, 1, 3),))
    assert encode(msg) == bytes([0x23, 0, 0, 1, 10, 0, 0, 2, 1, 3])


@pytest.mark.parametrize("data,offset", [
    (b"\x7f", 0),
    (b"", 0),
    (bytes([0x10]) + bytes(24) + bytes(8) + bytes([2, 1, 0, 0, 0]), 33),
    (bytes([0x10]) + bytes(24) + bytes(8) + bytes([0, 9, 0, 0, 0]), 34),
])
def test_decode_errors_report_offset(data, offset):
    with pytest.raises(DecodeError) as exc:
        decode(data)
    assert exc.value.offset == offset


def test_unknown_address_type():
    data = bytearray(encode(GossipMessage(GossipKind.REGISTRATION, bytes(8), bytes(8), 1,
                                          pts=(PeerIdentity(bytes(8), 5),))))
    data[32 + 8] = 6
    with pytest.raises(DecodeError, match="address type"):
        decode(bytes(data))


@pytest.mark.parametrize("msg", [
    GossipMessage(GossipKind.REGISTRATION, b"short", bytes(8), 1),
    GossipMessage(GossipKind.REGISTRATION, bytes(8), bytes(8), 2 ** 64),
    GossipMessage(GossipKind.REGISTRATION, bytes(8), bytes(8), 1, metric_value=40000),
    GossipMessage(GossipKind.ACK, bytes(8), bytes(8), 1, pts=(PeerIdentity(bytes(8), 1),)),
    StMessage(StKind.QUERY, bytes(8), bytes(8), 1, 2, 3, radius=256),
    SaMessage(SaKind.PROBE, 1, bytes(70000)),
    SaMessage(SaKind.SETUP, 1, status_elements=(SfStatusElement(1, 1, 1),)),
])
def test_encode_rejects_out_of_range(msg):
    with pytest.raises(EncodeError):
        encode(msg)


def test_encode_rejects_non_message():
    with pytest.raises(EncodeError):
        encode("hello")


def test_nominal_sizes():
    sizes = NominalSizes()
    assert (sizes.registration, sizes.response, sizes.ack) == (184, 184, 112)
    assert sizes.session_total == 480
    assert nominal_size(GossipKind.ACK) == 112
    assert nominal_size(GossipKind.ACK, NominalSizes(ack=184)) == 184


def test_kind_names():
    assert codec.kind_name(GossipMessage(GossipKind.ACK, bytes(8), bytes(8), 1)) == "gossip.ack"
    assert codec.kind_name(StMessage(StKind.DATA_RESPONSE, bytes(8), bytes(8), 1, 2, 3)) == "st.data_response"


def test_session_id_is_big_endian():
    data = encode(GossipMessage(GossipKind.ACK, bytes(8), bytes(8), 0x0102030405060708))
    assert struct.unpack(">Q", data[17:25])[0] == 0x0102030405060708
