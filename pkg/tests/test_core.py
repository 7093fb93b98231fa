import itertools
import json
import threading
import time

import pytest

from flux import AclEntry, Component, Credential, EndpointDescriptor, Filter, State
from flux.control import wait_until
from flux.core import QUEUE_LIMIT
from flux.errors import (
    AuthFailed,
    LocalAclDenied,
    NoMatchingEndpoint,
    NoSharedAccessModule,
    NoSharedTransport,
    PeerClosed,
    RemoteAclDenied,
    SchemaMismatch,
    SchemaViolation,
    WrongEndpointKind,
)
from flux.manifest import Clause
from flux.schema import NUMBER, STRING, Envelope, MessageSchema, StatusCode, decode_envelope, encode_envelope
from flux.transport import FRAME_TAPS, TransportRegistry

from .conftest import KEY, OTHER, TEMP, grant_all, sink, source

# --- the handshake conjunction -----------------------------------------------

PREDICATES = ("shared_transport", "shared_access_module", "identity", "acl", "schema")
# the handshake checks in this order, so the first false predicate names the error
FAILURES = {
    "shared_transport": NoSharedTransport,
    "shared_access_module": NoSharedAccessModule,
    "identity": AuthFailed,
    "acl": RemoteAclDenied,
    "schema": SchemaMismatch,
}


def handshake_case(flags: dict) -> str:
    """Map two fresh components under one truth assignment; returns ``ESTABLISHED`` or the error code."""
    acceptor = Component(
        "B", credentials=[KEY], access_modules=("psk",), listen=["tcp://127.0.0.1:0"],
        acl=[AclEntry("in", "map", "team")] if flags["acl"] else [],
    )
    acceptor.create_endpoint(sink("in", TEMP if flags["schema"] else OTHER))
    initiator = Component(
        "A",
        credentials=[KEY if flags["identity"] else Credential.psk("team"),
                     Credential.for_password("pw", "team", "x")],
        access_modules=("psk",) if flags["shared_access_module"] else ("password",),
        comm_modules=("tcp",) if flags["shared_transport"] else ("udp",),
        acl=[AclEntry("out", "map", "team")],
    )
    initiator.create_endpoint(source("out", TEMP))
    acceptor.start()
    initiator.start()
    try:
        try:
            maps = initiator.map("out", acceptor.manifest)
        except Exception as exc:
            outcome = getattr(exc, "code", type(exc).__name__)
            assert initiator.all_mappings() == []
            time.sleep(0.05)
            assert acceptor.mappings("in") == []
            return outcome
        assert [m.state for m in maps] == [State.ESTABLISHED]
        assert wait_until(lambda: acceptor.fan_out("in") == 1, 5)
        return "ESTABLISHED"
    finally:
        initiator.stop()
        acceptor.stop()


def expected_outcome(flags: dict) -> str:
    for p in PREDICATES:
        if not flags[p]:
            return FAILURES[p].code
    return "ESTABLISHED"


def run_handshake_matrix() -> list[tuple]:
    rows = []
    for bits in itertools.product((True, False), repeat=len(PREDICATES)):
        flags = dict(zip(PREDICATES, bits))
        rows.append((flags, handshake_case(flags), expected_outcome(flags)))
    return rows


def test_failure_codes_are_distinct():
    codes = [e.code for e in FAILURES.values()]
    assert len(set(codes)) == len(codes)


@pytest.mark.parametrize("bits", list(itertools.product((True, False), repeat=5)),
                         ids=lambda b: "".join("1" if x else "0" for x in b))
def test_handshake_matrix(bits):
    flags = dict(zip(PREDICATES, bits))
    assert handshake_case(flags) == expected_outcome(flags)


def test_local_acl_checked_before_map_request(fleet):
    b = fleet("B", endpoints=[sink()])
    a = fleet("A", endpoints=[source()], acl=[])
    seen = []
    FRAME_TAPS.append(lambda mod, body: seen.append(decode_envelope(body).status))
    try:
        with pytest.raises(LocalAclDenied):
            a.map("out", b.url)
    finally:
        FRAME_TAPS.clear()
    assert StatusCode.MAP_REQUEST not in seen
    assert b.mappings("in") == []


# --- data path ---------------------------------------------------------------


@pytest.fixture
def pair(fleet):
    b = fleet("B", endpoints=[sink()])
    a = fleet("A", endpoints=[source()])
    a.map("out", b.url)
    assert wait_until(lambda: b.fan_out("in") == 1, 5)
    return a, b


def test_source_to_sink_in_order(pair):
    a, b = pair
    for i in range(200):
        assert a.send("out", {"sensor": "s", "temperature": i}).sent == 1
    got = [b.recv("in", 5).payload["temperature"] for _ in range(200)]
    assert got == list(range(200))


def test_schema_violations_rejected_at_send(pair):
    a, _ = pair
    with pytest.raises(SchemaViolation):
        a.send("out", {"sensor": "s"})
    with pytest.raises(WrongEndpointKind):
        pair[1].send("in", {"sensor": "s", "temperature": 1})


def test_fan_out_and_unmap(fleet):
    sinks = [fleet(f"S{i}", endpoints=[sink()], metadata={"group": "g" if i % 2 else "h"}) for i in range(4)]
    a = fleet("A", endpoints=[source()])
    for s in sinks:
        a.map("out", s.url)
    assert a.send("out", {"sensor": "x", "temperature": 1}).sent == 4
    assert a.unmap("out", "group:g") == 2
    assert wait_until(lambda: sum(s.fan_out("in") for s in sinks) == 2, 5)
    assert a.send("out", {"sensor": "x", "temperature": 2}).sent == 2
    assert [s.component_id for s in sinks if s.fan_out("in")] == ["S0", "S2"]


def test_peer_sees_unmap(pair):
    a, b = pair
    m = b.mappings("in")[0]
    assert a.unmap("out") == 1
    assert m.closed_event.wait(5)
    assert m.close_reason == "unmapped" and m.state is State.CLOSED


def test_duplicate_msg_ids_dropped(pair):
    a, b = pair
    m = a.mappings("out")[0]
    body = encode_envelope(Envelope("7", StatusCode.DATA, {"sensor": "s", "temperature": 1}))
    m.channel.send(body)
    m.channel.send(body)
    assert b.recv("in", 5).msg_id == 7
    assert wait_until(lambda: b.mappings("in")[0].dropped == 1, 5)
    with pytest.raises(Exception):
        b.recv("in", 0.2)


def test_invalid_payload_on_the_wire_is_rejected(pair):
    a, b = pair
    m = a.mappings("out")[0]
    m.channel.send(encode_envelope(Envelope("50", StatusCode.DATA, {"sensor": 3, "temperature": 1})))
    assert wait_until(lambda: b.endpoint("in").rejected == 1, 5)


def test_inbound_queue_is_bounded(pair):
    a, b = pair
    for i in range(QUEUE_LIMIT + 10):
        a.send("out", {"sensor": "s", "temperature": i})
    assert wait_until(lambda: b.endpoint("in").overflow == 10, 10)
    assert b.recv("in", 1).payload["temperature"] == 10


def test_request_response(fleet):
    q = MessageSchema.of({"x": NUMBER}, required=("x",))
    r = MessageSchema.of({"y": NUMBER}, required=("y",))
    srv = fleet("srv", endpoints=[(EndpointDescriptor("double", "response", q, r),
                                   {"handler": lambda m: {"y": m["x"] * 2}})])
    cli = fleet("cli", endpoints=[EndpointDescriptor("ask", "request", q, r)])
    cli.map("ask", srv.url)
    results = {}

    def ask(i):
        results[i] = cli.request("ask", {"x": i})["y"]

    threads = [threading.Thread(target=ask, args=(i,)) for i in range(20)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == {i: 2 * i for i in range(20)}


def test_response_plus_streams_until_final(fleet):
    q = MessageSchema.of({"n": NUMBER}, required=("n",))
    r = MessageSchema.of({"i": NUMBER}, required=("i",))

    def count(m):
        for i in range(int(m["n"])):
            yield {"i": i}

    srv = fleet("srv", endpoints=[(EndpointDescriptor("count", "response_plus_server", q, r), {"handler": count})])
    cli = fleet("cli", endpoints=[EndpointDescriptor("ask", "response_plus_client", q, r)])
    cli.map("ask", srv.url)
    assert [x["i"] for x in cli.request("ask", {"n": 5})] == [0, 1, 2, 3, 4]
    assert list(cli.request("ask", {"n": 0})) == []


def test_handler_error_reaches_caller(fleet):
    q = MessageSchema.of({"x": NUMBER}, required=("x",))
    srv = fleet("srv", endpoints=[(EndpointDescriptor("bad", "response", q, q), {"handler": lambda m: {"oops": 1}})])
    cli = fleet("cli", endpoints=[EndpointDescriptor("ask", "request", q, q)])
    cli.map("ask", srv.url)
    with pytest.raises(Exception, match="schema-violation"):
        cli.request("ask", {"x": 1})


def test_streams_carry_raw_bytes(fleet):
    got = []
    dst = fleet("dst", endpoints=[(EndpointDescriptor("raw", "stream_sink"), {"on_message": got.append})])
    src = fleet("src", endpoints=[EndpointDescriptor("raw", "stream_source")])
    src.map("raw", dst.url)
    assert wait_until(lambda: dst.fan_out("raw") == 1, 5)
    time.sleep(0.1)
    src.send("raw", b"\x00\x01binary\xff")
    assert wait_until(lambda: b"".join(got) == b"\x00\x01binary\xff", 5)


def test_request_without_mapping():
    c = Component("c")
    q = MessageSchema.of({"x": NUMBER})
    c.create_endpoint(EndpointDescriptor("ask", "request", q, q))
    with pytest.raises(PeerClosed):
        c.request("ask", {"x": 1})


def test_no_pairing_endpoint(fleet):
    b = fleet("B", endpoints=[source("in")])
    a = fleet("A", endpoints=[source()])
    with pytest.raises(NoMatchingEndpoint):
        a.map("out", b.url)


def test_selector_picks_endpoint(fleet):
    b = fleet("B", endpoints=[sink("in"), sink("backup")])
    a = fleet("A", endpoints=[source()])
    maps = a.map("out", b.url, selector=[Clause("ep_name", "eq", "backup")])
    assert [m.peer_ep for m in maps] == ["backup"]
    assert len(a.map("out", b.url)) == 2


# --- UDP and module control --------------------------------------------------


def test_udp_mapping_and_transport_loss(fleet):
    b = fleet("B", endpoints=[sink()], listen=("udp://127.0.0.1:0",))
    a = fleet("A", endpoints=[source()], listen=(), comm_modules=("udp",))
    m = a.map("out", b.manifest)[0]
    assert m.module_id == "udp"
    for i in range(50):
        a.send("out", {"sensor": "u", "temperature": i})
    got = []
    while True:
        try:
            got.append(b.recv("in", 0.5).payload["temperature"])
        except Exception:
            break
    assert got and got == sorted(got) and len(got) <= 50
    a.deactivate_module("udp")
    assert m.state is State.CLOSED and m.close_reason == "transport-lost"
    assert "udp" not in a.manifest.comm_modules


def test_activate_module_adds_address(fleet):
    c = fleet("C")
    before = dict(c.manifest.addresses)
    c.activate_module("udp")
    after = dict(c.manifest.addresses)
    assert "udp" in after and "udp" not in before


# --- access control at runtime -----------------------------------------------


def test_acl_revocation_closes_mapping(fleet):
    b = fleet("B", endpoints=[sink()], acl=[AclEntry("in", "map", "team")])
    a = fleet("A", endpoints=[source()])
    a.map("out", b.url)
    am = a.mappings("out")[0]
    assert b.acl_remove(AclEntry("in", "map", "team"))
    assert am.closed_event.wait(5)
    assert am.close_reason == "revoked"


def test_credential_removal_drops_identity(fleet):
    extra = Credential.psk("extra")
    b = fleet("B", endpoints=[sink()], credentials=[KEY, extra], acl=[AclEntry("in", "map", "extra")])
    a = fleet("A", endpoints=[source()], credentials=[KEY, extra])
    a.map("out", b.url)
    assert b.fan_out("in") == 1
    b.credential_remove("extra")
    assert wait_until(lambda: b.fan_out("in") == 0 and a.fan_out("out") == 0, 5)


def collect_frames():
    frames = []
    FRAME_TAPS.append(lambda mod, body: frames.append(body))
    return frames


def test_secrets_never_cross_the_wire(fleet):
    pw = Credential.for_password("login", "alice", "correct horse battery")
    frames = collect_frames()
    try:
        b = fleet("B", endpoints=[sink()], credentials=[KEY, pw], acl=grant_all("alice") + grant_all())
        a = fleet("A", endpoints=[source()], credentials=[KEY, pw], acl=grant_all("alice"))
        a.map("out", b.url)
        a.send("out", {"sensor": "s", "temperature": 1})
        a.control_call(b.url, "get_manifest")
        a.control_call(b.url, "acl_add", {"acl": {"endpoint": "in", "operation": "map", "principal": "x"}})
    finally:
        FRAME_TAPS.clear()
    blob = b"\n".join(frames)
    assert frames
    for cred in (KEY, pw):
        for frag in cred.secret_fragments():
            assert frag not in blob


def test_replayed_auth_response_is_rejected(fleet):
    b = fleet("B", endpoints=[sink()])
    frames = collect_frames()
    try:
        a = fleet("A", endpoints=[source()])
        a.map("out", b.url)
    finally:
        FRAME_TAPS.clear()
    recorded = [decode_envelope(f) for f in frames]
    challenge = next(e for e in recorded if e.status == StatusCode.AUTH_CHALLENGE)
    response = [e for e in recorded if e.status == StatusCode.AUTH_RESPONSE][-1]
    hello = next(e for e in recorded if e.status == StatusCode.HELLO)

    reg = TransportRegistry()
    ch = reg.activate("tcp").connect(b.url.partition("://")[2])
    try:
        ch.send(encode_envelope(Envelope("1", StatusCode.HELLO, ctrl=hello.ctrl)))
        assert decode_envelope(ch.recv(5)).status == StatusCode.HELLO
        ch.send(encode_envelope(Envelope("2", StatusCode.AUTH_CHALLENGE, ctrl=challenge.ctrl)))
        assert decode_envelope(ch.recv(5)).status == StatusCode.AUTH_RESPONSE
        ch.send(encode_envelope(Envelope("3", StatusCode.AUTH_RESPONSE, ctrl=response.ctrl)))
        result = decode_envelope(ch.recv(5))
        assert result.status == StatusCode.AUTH_RESULT
        assert result.ctrl["ok"] is False and result.ctrl["principals"] == []
        ch.send(encode_envelope(Envelope("4", StatusCode.MAP_REQUEST, ctrl={
            "local_ep": source().to_json(), "remote_ep": "in"})))
        reject = decode_envelope(ch.recv(5))
        assert reject.status == StatusCode.MAP_REJECT and reject.ctrl["reason"] == "auth-required"
    finally:
        ch.close()
    # only the genuine session from A is mapped
    assert [m.peer_component for m in b.mappings("in")] == ["A"]


# --- filters -----------------------------------------------------------------


def test_filter_json_round_trip():
    for f in (Filter.content("recv", Clause("temperature", "gt", 30)), Filter.rate("send", 50)):
        assert Filter.from_json(json.loads(json.dumps(f.to_json()))) == f


def test_send_side_content_filter(pair):
    a, b = pair
    a.set_filter("out", Filter.content("send", Clause("sensor", "eq", "keep")))
    assert a.send("out", {"sensor": "drop", "temperature": 1}).filtered
    assert a.send("out", {"sensor": "keep", "temperature": 2}).sent == 1
    assert b.recv("in", 5).payload["sensor"] == "keep"
    assert a.clear_filter("out") == 1


def test_state_hash_tracks_configuration(fleet):
    c = fleet("C", endpoints=[sink()])
    h = c.state_hash()
    c.manifest_add("room", "1")
    h2 = c.state_hash()
    assert h2 != h
    c.set_filter("in", Filter.rate("recv", 10))
    assert c.state_hash() != h2
    c.clear_filter("in")
    assert c.state_hash() == h2


def test_acceptor_is_established_when_map_returns(fleet):
    b = fleet("B", endpoints=[sink()])
    for i in range(40):
        a = fleet(f"A{i}", endpoints=[source()])
        a.map("out", b.url)
        assert b.fan_out("in") == i + 1
