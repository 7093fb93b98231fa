import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flux.errors import (
    BindFailure,
    ChannelClosed,
    ConnectRefused,
    FrameTooLarge,
    InvalidAddress,
    ModuleInactive,
    TransportError,
    UnknownModule,
)
from flux.transport import (
    HEADER,
    MAX_FRAME,
    TransportRegistry,
    decode_frame,
    encode_frame,
    parse_ipv4_address,
    split_url,
)


@given(st.binary(max_size=4096))
def test_frame_round_trip(body):
    raw = encode_frame(body)
    assert raw[:4] == len(body).to_bytes(4, "big")
    assert decode_frame(raw) == body


def test_frame_limits():
    with pytest.raises(FrameTooLarge):
        encode_frame(b"x" * 11, max_frame=10)
    with pytest.raises(FrameTooLarge):
        decode_frame(HEADER.pack(11) + b"x" * 11, max_frame=10)
    with pytest.raises(TransportError):
        decode_frame(HEADER.pack(5) + b"abc")
    with pytest.raises(TransportError):
        decode_frame(b"\x00\x00")
    assert MAX_FRAME["udp"] == 60 * 1024 and MAX_FRAME["tcp"] == 16 * 1024 * 1024


@pytest.mark.parametrize("addr", ["localhost:80", "1.2.3.4", "1.2.3.4:99999", "300.1.1.1:5", "::1:80"])
def test_bad_addresses(addr):
    with pytest.raises(InvalidAddress):
        parse_ipv4_address(addr)


def test_split_url():
    assert split_url("udp://1.2.3.4:5") == ("udp", "1.2.3.4:5")
    assert split_url("1.2.3.4:5") == ("tcp", "1.2.3.4:5")


def test_registry():
    reg = TransportRegistry()
    assert reg.active_ids() == ()
    with pytest.raises(UnknownModule):
        reg.get("mqtt")
    with pytest.raises(UnknownModule):
        reg.get("carrier-pigeon")
    with pytest.raises(ModuleInactive):
        reg.get("tcp").connect("127.0.0.1:1")
    reg.activate("tcp")
    assert reg.active_ids() == ("tcp",)
    reg.deactivate("tcp")
    assert reg.state()["tcp"] == "inactive"


def pipe(module: str, address: str):
    reg = TransportRegistry()
    mod = reg.activate(module)
    accepted = []
    got = threading.Event()

    def on_accept(ch):
        accepted.append(ch)
        got.set()

    lst = mod.listen(address, on_accept)
    client = mod.connect(lst.address)
    client.send(b"hello")
    assert got.wait(5)
    return reg, lst, client, accepted[0]


@pytest.mark.parametrize("module,address", [("tcp", "127.0.0.1:0"), ("udp", "127.0.0.1:0"), ("loopback", "t:0")])
def test_channels_carry_frames_both_ways(module, address):
    reg, lst, client, server = pipe(module, address)
    try:
        assert server.recv(5) == b"hello"
        for i in range(20):
            server.send(f"m{i}".encode())
        assert [client.recv(5) for _ in range(20)] == [f"m{i}".encode() for i in range(20)]
        with pytest.raises(FrameTooLarge):
            client.send(b"x" * (MAX_FRAME[module] + 1))
        client.close("done")
        with pytest.raises(ChannelClosed):
            client.send(b"late")
    finally:
        lst.close()
        reg.deactivate(module)


def test_tcp_peer_close_is_seen():
    reg, lst, client, server = pipe("tcp", "127.0.0.1:0")
    try:
        server.recv(5)
        client.close()
        with pytest.raises(ChannelClosed):
            server.recv(5)
    finally:
        lst.close()


def test_deactivate_closes_open_channels():
    reg, lst, client, server = pipe("tcp", "127.0.0.1:0")
    lst.close()
    closed = reg.deactivate("tcp")
    assert client in closed
    assert client.closed


def test_bind_and_connect_failures():
    reg = TransportRegistry()
    tcp = reg.activate("tcp")
    lst = tcp.listen("127.0.0.1:0", lambda ch: None)
    try:
        with pytest.raises(BindFailure):
            tcp.listen(lst.address, lambda ch: None)
    finally:
        lst.close()
    with pytest.raises(ConnectRefused):
        tcp.connect(lst.address, timeout=1)
