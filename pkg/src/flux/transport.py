"""Pluggable communication modules: TCP and UDP bridges plus in-process loopback.

Every module moves *frames*: ``[len:u32 big-endian][body]``. Over TCP and
loopback frames are reliable and ordered; UDP carries exactly one frame per
datagram and may lose or reorder them.

Modules are compiled in and switched on and off at runtime through a
per-component :class:`TransportRegistry`.
"""

from __future__ import annotations

import ipaddress
import itertools
import logging
import queue
import select
import socket
import struct
import threading
import time
from typing import Callable

from .errors import (
    BindFailure,
    ChannelClosed,
    ConnectRefused,
    FrameTooLarge,
    InvalidAddress,
    ModuleInactive,
    TransportError,
    UnknownModule,
)

log = logging.getLogger(__name__)

HEADER = struct.Struct(">I")
MIB = 1024 * 1024
MAX_FRAME = {"tcp": 16 * MIB, "loopback": 16 * MIB, "udp": 60 * 1024}
RESERVED_MODULE_IDS = frozenset({"mqtt", "rest"})

# Test hook: callables invoked as tap(module_id, frame_body) on every sent frame.
FRAME_TAPS: list = []


def encode_frame(body: bytes, max_frame: int = MAX_FRAME["tcp"]) -> bytes:
    if len(body) > max_frame:
        raise FrameTooLarge(f"frame body of {len(body)} bytes exceeds {max_frame}")
    return HEADER.pack(len(body)) + body


def decode_frame(data: bytes, max_frame: int = MAX_FRAME["tcp"]) -> bytes:
    if len(data) < HEADER.size:
        raise TransportError("truncated frame header")
    (length,) = HEADER.unpack_from(data)
    if length > max_frame:
        raise FrameTooLarge(f"declared frame length {length} exceeds {max_frame}")
    body = data[HEADER.size:]
    if len(body) != length:
        raise TransportError(f"frame length {length} does not match body of {len(body)} bytes")
    return body


def parse_ipv4_address(address: str) -> tuple[str, int]:
    host, sep, port = str(address).rpartition(":")
    if not sep:
        raise InvalidAddress(f"address must be host:port, got {address!r}")
    try:
        ipaddress.IPv4Address(host)
        port_n = int(port)
    except ValueError:
        raise InvalidAddress(f"address must be IPv4:port, got {address!r}") from None
    if not 0 <= port_n <= 65535:
        raise InvalidAddress(f"port out of range in {address!r}")
    return host, port_n


def split_url(url: str, default_module: str = "tcp") -> tuple[str, str]:
    """``"udp://1.2.3.4:5"`` -> ``("udp", "1.2.3.4:5")``; bare ``host:port`` uses the default."""
    if "://" in url:
        mod, _, addr = url.partition("://")
        return mod, addr
    return default_module, url


def _tap(module_id: str, body: bytes) -> None:
    for tap in list(FRAME_TAPS):
        tap(module_id, body)


class Channel:
    """One bidirectional frame pipe between two components."""

    module_id = "?"
    reliable = True

    def __init__(self, max_frame: int, peer: str):
        self.max_frame = max_frame
        self.peer = peer
        self.close_reason: str | None = None
        self.last_header_ts = 0.0
        self._send_lock = threading.Lock()
        self._closed = threading.Event()
        self._on_close: list[Callable[["Channel"], None]] = []

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def send(self, body: bytes) -> None:
        if self.closed:
            raise ChannelClosed(self.close_reason or "channel closed")
        if len(body) > self.max_frame:
            raise FrameTooLarge(f"frame body of {len(body)} bytes exceeds {self.max_frame}")
        if FRAME_TAPS:
            _tap(self.module_id, body)
        with self._send_lock:
            self._send(body)

    def recv(self, timeout: float | None = None) -> bytes:
        raise NotImplementedError

    def close(self, reason: str = "closed") -> None:
        if self._closed.is_set():
            return
        if self.close_reason is None:
            self.close_reason = reason
        self._closed.set()
        self._close()
        for cb in self._on_close:
            cb(self)

    def _send(self, body: bytes) -> None:
        raise NotImplementedError

    def _close(self) -> None:
        pass


class Listener:
    def __init__(self, address: str, closer: Callable[[], None]):
        self.address = address
        self._closer = closer

    def close(self) -> None:
        self._closer()


class TransportModule:
    module_id = "?"
    reliable = True

    def __init__(self):
        self.active = False
        self.max_frame = MAX_FRAME[self.module_id]
        self._channels: set[Channel] = set()
        self._listeners: list[Listener] = []
        self._lock = threading.Lock()

    @property
    def capabilities(self) -> dict:
        return {"reliable": self.reliable, "max_frame": self.max_frame}

    def _require_active(self) -> None:
        if not self.active:
            raise ModuleInactive(f"module {self.module_id!r} is inactive")

    def _track(self, ch: Channel) -> Channel:
        with self._lock:
            self._channels.add(ch)
        ch._on_close.append(self._untrack)
        return ch

    def _untrack(self, ch: Channel) -> None:
        with self._lock:
            self._channels.discard(ch)

    def listen(self, address: str, on_accept: Callable[[Channel], None]) -> Listener:
        self._require_active()
        listener = self._listen(address, lambda ch: on_accept(self._track(ch)))
        with self._lock:
            self._listeners.append(listener)
        return listener

    def connect(self, address: str, timeout: float = 5.0) -> Channel:
        self._require_active()
        return self._track(self._connect(address, timeout))

    def activate(self) -> None:
        self.active = True

    def deactivate(self) -> list[Channel]:
        self.active = False
        with self._lock:
            channels = list(self._channels)
            listeners = list(self._listeners)
            self._listeners.clear()
        for lst in listeners:
            lst.close()
        for ch in channels:
            ch.close("transport-lost")
        return channels

    def open_channels(self) -> list[Channel]:
        with self._lock:
            return list(self._channels)

    def _listen(self, address, on_accept) -> Listener:
        raise NotImplementedError

    def _connect(self, address, timeout) -> Channel:
        raise NotImplementedError


# --- TCP -------------------------------------------------------------------


class TcpChannel(Channel):
    module_id = "tcp"

    def __init__(self, sock: socket.socket, max_frame: int):
        try:
            peer = "%s:%d" % sock.getpeername()[:2]
        except OSError:
            peer = "?"
        super().__init__(max_frame, peer)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._recv_lock = threading.Lock()

    def _send(self, body: bytes) -> None:
        try:
            self._sock.sendall(HEADER.pack(len(body)) + body)
        except OSError as exc:
            self.close("peer-closed")
            raise ChannelClosed(str(exc)) from None

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(min(n - len(buf), 1 << 20))
            except OSError as exc:
                self.close("peer-closed")
                raise ChannelClosed(str(exc)) from None
            if not chunk:
                self.close("peer-closed")
                raise ChannelClosed(self.close_reason or "peer closed")
            buf += chunk
        return bytes(buf)

    def recv(self, timeout: float | None = None) -> bytes:
        with self._recv_lock:
            if self.closed:
                raise ChannelClosed(self.close_reason or "channel closed")
            if timeout is not None:
                try:
                    ready, _, _ = select.select([self._sock], [], [], timeout)
                except (ValueError, OSError):
                    raise ChannelClosed(self.close_reason or "channel closed") from None
                if not ready:
                    raise TimeoutError("no frame within timeout")
            (length,) = HEADER.unpack(self._read_exact(HEADER.size))
            self.last_header_ts = time.perf_counter()
            if length > self.max_frame:
                self.close("frame-too-large")
                raise FrameTooLarge(f"incoming frame of {length} bytes")
            return self._read_exact(length)

    def _close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class TcpModule(TransportModule):
    module_id = "tcp"
    reliable = True

    def _listen(self, address, on_accept):
        host, port = parse_ipv4_address(address)
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            srv.bind((host, port))
            srv.listen(128)
        except OSError as exc:
            srv.close()
            raise BindFailure(f"cannot bind {address}: {exc}") from None
        stop = threading.Event()

        def loop():
            while not stop.is_set():
                try:
                    conn, _ = srv.accept()
                except OSError:
                    break
                on_accept(TcpChannel(conn, self.max_frame))

        threading.Thread(target=loop, name=f"tcp-accept-{port}", daemon=True).start()

        def closer():
            stop.set()
            try:
                srv.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            srv.close()

        bound = "%s:%d" % srv.getsockname()[:2]
        return Listener(bound, closer)

    def _connect(self, address, timeout):
        host, port = parse_ipv4_address(address)
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectRefused(f"cannot connect to {address}: {exc}") from None
        sock.settimeout(None)
        return TcpChannel(sock, self.max_frame)


# --- UDP -------------------------------------------------------------------


class UdpChannel(Channel):
    module_id = "udp"
    reliable = False

    def __init__(self, sock: socket.socket, peer_addr: tuple, max_frame: int, owner=None):
        super().__init__(max_frame, "%s:%d" % peer_addr)
        self._sock = sock
        self._peer_addr = peer_addr
        self._inbox: queue.Queue = queue.Queue()
        self._owner = owner

    def deliver(self, datagram: bytes) -> None:
        try:
            body = decode_frame(datagram, self.max_frame)
        except TransportError:
            log.debug("dropping malformed datagram from %s", self.peer)
            return
        self._inbox.put(body)

    def _send(self, body: bytes) -> None:
        try:
            self._sock.sendto(HEADER.pack(len(body)) + body, self._peer_addr)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from None

    def recv(self, timeout: float | None = None) -> bytes:
        if self.closed and self._inbox.empty():
            raise ChannelClosed(self.close_reason or "channel closed")
        try:
            body = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no datagram within timeout") from None
        if body is None:
            raise ChannelClosed(self.close_reason or "channel closed")
        self.last_header_ts = time.perf_counter()
        return body

    def _close(self) -> None:
        self._inbox.put(None)
        if self._owner is not None:
            self._owner(self)


class UdpModule(TransportModule):
    module_id = "udp"
    reliable = False

    def _listen(self, address, on_accept):
        host, port = parse_ipv4_address(address)
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind((host, port))
        except OSError as exc:
            sock.close()
            raise BindFailure(f"cannot bind {address}: {exc}") from None
        peers: dict[tuple, UdpChannel] = {}
        lock = threading.Lock()
        stop = threading.Event()

        def forget(ch: UdpChannel):
            with lock:
                if peers.get(ch._peer_addr) is ch:
                    del peers[ch._peer_addr]

        def loop():
            while not stop.is_set():
                try:
                    data, addr = sock.recvfrom(65535)
                except OSError:
                    break
                if addr is None or stop.is_set():
                    # a shut-down socket reads (b"", None)
                    break
                with lock:
                    ch = peers.get(addr)
                    fresh = ch is None
                    if fresh:
                        ch = UdpChannel(sock, addr, self.max_frame, owner=forget)
                        peers[addr] = ch
                ch.deliver(data)
                if fresh:
                    on_accept(ch)
            with lock:
                chans = list(peers.values())
            for ch in chans:
                ch.close("transport-lost")

        threading.Thread(target=loop, name=f"udp-listen-{port}", daemon=True).start()

        def closer():
            stop.set()
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

        bound = "%s:%d" % sock.getsockname()[:2]
        return Listener(bound, closer)

    def _connect(self, address, timeout):
        host, port = parse_ipv4_address(address)
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind(("0.0.0.0", 0))

        def release(_ch):
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

        ch = UdpChannel(sock, (host, port), self.max_frame, owner=release)

        def loop():
            while True:
                try:
                    data, addr = sock.recvfrom(65535)
                except OSError:
                    break
                if addr is None:
                    break
                if addr == (host, port):
                    ch.deliver(data)
            ch.close("transport-lost")

        threading.Thread(target=loop, name=f"udp-conn-{port}", daemon=True).start()
        return ch


# --- loopback --------------------------------------------------------------

_loopback_lock = threading.Lock()
_loopback_listeners: dict[str, Callable] = {}
_loopback_ports = itertools.count(1)


class LoopbackChannel(Channel):
    module_id = "loopback"

    def __init__(self, max_frame: int, peer: str, inbox: queue.Queue, outbox: queue.Queue):
        super().__init__(max_frame, peer)
        self._inbox = inbox
        self._outbox = outbox
        self.twin: LoopbackChannel | None = None

    def _send(self, body: bytes) -> None:
        if self.twin is not None and self.twin.closed:
            self.close("peer-closed")
            raise ChannelClosed("peer closed")
        self._outbox.put(bytes(body))

    def recv(self, timeout: float | None = None) -> bytes:
        if self.closed:
            raise ChannelClosed(self.close_reason or "channel closed")
        try:
            body = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no frame within timeout") from None
        if body is None:
            self.close("peer-closed")
            raise ChannelClosed(self.close_reason or "peer closed")
        self.last_header_ts = time.perf_counter()
        return body

    def _close(self) -> None:
        self._outbox.put(None)
        self._inbox.put(None)


class LoopbackModule(TransportModule):
    module_id = "loopback"
    reliable = True

    def _listen(self, address, on_accept):
        name, sep, port = str(address).rpartition(":")
        if not sep or not name or not port.isdigit():
            raise InvalidAddress(f"loopback address must be name:port, got {address!r}")
        with _loopback_lock:
            if port == "0":
                port = str(next(_loopback_ports) + 40000)
            bound = f"{name}:{port}"
            if bound in _loopback_listeners:
                raise BindFailure(f"loopback address {bound} in use")
            _loopback_listeners[bound] = on_accept

        def closer():
            with _loopback_lock:
                if _loopback_listeners.get(bound) is on_accept:
                    del _loopback_listeners[bound]

        return Listener(bound, closer)

    def _connect(self, address, timeout):
        with _loopback_lock:
            on_accept = _loopback_listeners.get(str(address))
        if on_accept is None:
            raise ConnectRefused(f"no loopback listener at {address}")
        a_to_b: queue.Queue = queue.Queue()
        b_to_a: queue.Queue = queue.Queue()
        client = LoopbackChannel(self.max_frame, str(address), b_to_a, a_to_b)
        server = LoopbackChannel(self.max_frame, f"client-of-{address}", a_to_b, b_to_a)
        client.twin, server.twin = server, client
        on_accept(server)
        return client


# --- registry --------------------------------------------------------------

MODULE_TYPES = {"tcp": TcpModule, "udp": UdpModule, "loopback": LoopbackModule}


class TransportRegistry:
    """The compiled-in set of communication modules for one component."""

    def __init__(self):
        self._modules = {mid: cls() for mid, cls in MODULE_TYPES.items()}

    def get(self, module_id: str) -> TransportModule:
        try:
            return self._modules[module_id]
        except KeyError:
            raise UnknownModule(f"unknown communication module {module_id!r}") from None

    def activate(self, module_id: str) -> TransportModule:
        mod = self.get(module_id)
        mod.activate()
        return mod

    def deactivate(self, module_id: str) -> list[Channel]:
        return self.get(module_id).deactivate()

    def active_ids(self) -> tuple[str, ...]:
        return tuple(mid for mid, m in self._modules.items() if m.active)

    def state(self) -> dict[str, str]:
        return {mid: ("active" if m.active else "inactive") for mid, m in self._modules.items()}
