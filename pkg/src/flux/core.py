"""The middleware core: endpoints, mappings, routing and filters.

A :class:`Component` owns a set of endpoints and the live mappings between
its endpoints and remote ones. Mapping runs a fixed handshake over a fresh
channel::

    initiator                         acceptor
    HELLO {manifest}          ->
                              <-      HELLO {manifest}
    AUTH_CHALLENGE {nonce}    ->                      \\
                              <-      AUTH_RESPONSE   |  one round per shared
    AUTH_RESPONSE {proofs}    ->                      |  access module, until
                              <-      AUTH_RESULT     /  one succeeds
    MAP_REQUEST {descriptor}  ->
                              <-      MAP_ACCEPT | MAP_REJECT {reason}

After MAP_ACCEPT both sides run a reader loop on the channel. Every state
mutation goes through ``Component._lock``, the single mutation queue, so a
mapping is never observable in ESTABLISHED unless all its checks passed.
"""

from __future__ import annotations

import collections
import enum
import hashlib
import itertools
import json
import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

from . import control, rdc
from .access import ACCESS_MODULES, AccessStore, AclEntry, AuditLog, Credential, Identity, new_nonce
from .errors import (
    AuthFailed,
    ChannelClosed,
    DuplicateEndpoint,
    EnvelopeError,
    FluxError,
    FrameTooLarge,
    LocalAclDenied,
    MalformedDescriptor,
    ManifestError,
    MapError,
    NoMatchingEndpoint,
    NoSharedAccessModule,
    NoSharedTransport,
    PeerClosed,
    PeerUnreachable,
    QueryError,
    RemoteAclDenied,
    RequestTimeout,
    SchemaError,
    SchemaMismatch,
    SchemaViolation,
    TransportError,
    UnknownEndpoint,
    UnknownModule,
    WrongEndpointKind,
)
from .manifest import (
    STREAM_TYPES,
    Clause,
    EndpointDescriptor,
    Manifest,
    Query,
    can_pair,
    compare,
    endpoint_matches,
    manifest_add,
    manifest_matches,
    selector_to_query,
)
from .schema import DATA_STATUSES, Envelope, StatusCode, decode_envelope, encode_envelope, validate
from .transport import Channel, Listener, TransportRegistry, split_url

log = logging.getLogger(__name__)

CONTROL_EP = "control"
QUEUE_LIMIT = 1024
UDP_RETRIES = 3
UDP_RETRY_S = 0.5

# MAP_REJECT reasons -> initiator-side exception
REJECT_ERRORS = {
    "acl-denied": RemoteAclDenied,
    "schema-mismatch": SchemaMismatch,
    "no-such-endpoint": NoMatchingEndpoint,
    "type-mismatch": NoMatchingEndpoint,
    "auth-required": AuthFailed,
    "terminated": PeerUnreachable,
    "peer-unreachable": PeerUnreachable,
    "revoked": RemoteAclDenied,
}


class State(enum.Enum):
    HELLO_SENT = "HELLO_SENT"
    AUTHENTICATING = "AUTHENTICATING"
    NEGOTIATING = "NEGOTIATING"
    ESTABLISHED = "ESTABLISHED"
    CLOSED = "CLOSED"


# --- filters ---------------------------------------------------------------


def lookup_path(payload: Any, path: str) -> tuple[bool, Any]:
    cur = payload
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return False, None
        cur = cur[part]
    return True, cur


def content_passes(payload: Any, clauses: Iterable[Clause]) -> bool:
    for c in clauses:
        present, value = lookup_path(payload, c.path)
        if not compare(value, c.op, c.value, present):
            return False
    return True


@dataclass
class Filter:
    kind: str  # "content" | "rate"
    direction: str  # "send" | "recv"
    clauses: tuple = ()
    min_interval_ms: int | None = None

    def __post_init__(self):
        if self.kind not in ("content", "rate"):
            raise QueryError(f"unknown filter kind {self.kind!r}")
        if self.direction not in ("send", "recv"):
            raise QueryError(f"unknown filter direction {self.direction!r}")
        self.clauses = tuple(self.clauses)
        if self.kind == "rate":
            if not isinstance(self.min_interval_ms, int) or isinstance(self.min_interval_ms, bool) \
                    or self.min_interval_ms <= 0:
                raise QueryError("rate filters need a positive integer min_interval_ms")

    @classmethod
    def content(cls, direction: str, *clauses: Clause) -> "Filter":
        return cls("content", direction, clauses)

    @classmethod
    def rate(cls, direction: str, min_interval_ms: int) -> "Filter":
        return cls("rate", direction, (), min_interval_ms)

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "direction": self.direction}
        if self.kind == "content":
            out["clauses"] = [c.to_json() for c in self.clauses]
        else:
            out["min_interval_ms"] = self.min_interval_ms
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Filter":
        try:
            interval = obj.get("min_interval_ms")
            if isinstance(interval, float) and interval.is_integer():
                interval = int(interval)
            return cls(obj["kind"], obj["direction"],
                       tuple(Clause.from_json(c) for c in obj.get("clauses", [])), interval)
        except (KeyError, TypeError) as exc:
            raise QueryError(f"bad filter: {exc}") from None


class _FilterChain:
    def __init__(self, clock):
        self.filters: list[Filter] = []
        self._last_passed: float | None = None
        self._clock = clock

    def passes(self, payload) -> bool:
        if not self.filters:
            return True
        for f in self.filters:
            if f.kind == "content" and not content_passes(payload, f.clauses):
                return False
        now = self._clock()
        rates = [f.min_interval_ms for f in self.filters if f.kind == "rate"]
        if rates and self._last_passed is not None:
            # tolerance for float subtraction (0.15 - 0.1 < 0.05)
            if (now - self._last_passed) * 1000.0 < max(rates) - 1e-6:
                return False
        self._last_passed = now
        return True


# --- endpoints and mappings ------------------------------------------------


@dataclass(frozen=True)
class Message:
    payload: Any
    mapping_id: str
    msg_id: int


@dataclass
class DeliveryReport:
    msg_id: int
    results: dict = field(default_factory=dict)

    @property
    def sent(self) -> int:
        return sum(1 for r in self.results.values() if r == "sent")

    @property
    def filtered(self) -> bool:
        return bool(self.results) and all(r == "filtered" for r in self.results.values())


class Mapping:
    """A live (or closed) connection between a local and a remote endpoint."""

    def __init__(self, local_ep: str, channel: Channel, module_id: str, initiator: bool):
        self.mapping_id = uuid.uuid4().hex[:12]
        self.local_ep = local_ep
        self.module_id = module_id
        self.initiator = initiator
        self.peer_component = ""
        self.peer_ep = ""
        self.peer_address = channel.peer
        self.peer_manifest: Manifest | None = None
        self.peer_identities: frozenset = frozenset()
        self.state = State.HELLO_SENT
        self.close_reason: str | None = None
        self.sent = 0
        self.received = 0
        self.dropped = 0
        self.last_rx_id = 0
        self.channel = channel
        self.pending: dict[str, queue.Queue] = {}
        self.closed_event = threading.Event()
        self._wire: _Wire | None = None

    @property
    def established(self) -> bool:
        return self.state is State.ESTABLISHED

    def snapshot(self) -> dict:
        return {
            "mapping_id": self.mapping_id,
            "local_ep": self.local_ep,
            "peer_component": self.peer_component,
            "peer_ep": self.peer_ep,
            "peer_address": self.peer_address,
            "module": self.module_id,
            "state": self.state.value,
            "close_reason": self.close_reason,
            "identities": sorted([i.module_id, i.principal] for i in self.peer_identities),
            "initiator": self.initiator,
            "sent": self.sent,
            "received": self.received,
            "dropped": self.dropped,
        }

    def __repr__(self):
        return (f"Mapping({self.local_ep}->{self.peer_component}/{self.peer_ep}, "
                f"{self.state.value})")


class Endpoint:
    def __init__(self, component: "Component", descriptor: EndpointDescriptor,
                 handler: Callable | None = None, on_message: Callable | None = None,
                 internal: bool = False):
        self.component = component
        self.descriptor = descriptor
        self.handler = handler
        self.on_message = on_message
        self.internal = internal
        self.mappings: dict[str, Mapping] = {}
        self._established: list[Mapping] | None = None
        self.send_filters = _FilterChain(component.clock)
        self.recv_filters = _FilterChain(component.clock)
        self.send_lock = threading.RLock()
        self.overflow = 0
        self.rejected = 0
        self.last_frame_started = 0.0
        self._counter = itertools.count(1)
        self._inbound: collections.deque = collections.deque(maxlen=QUEUE_LIMIT)
        self._cond = threading.Condition()

    @property
    def name(self) -> str:
        return self.descriptor.name

    @property
    def ep_type(self) -> str:
        return self.descriptor.ep_type

    def next_msg_id(self) -> int:
        return next(self._counter)

    def established(self) -> list[Mapping]:
        cached = self._established
        if cached is None:
            maps = [m for m in list(self.mappings.values()) if m.established]
            cached = sorted(maps, key=lambda m: (m.peer_component, m.peer_ep, m.mapping_id))
            self._established = cached
        return cached

    def _mappings_changed(self) -> None:
        self._established = None

    def _enqueue(self, msg: Message) -> None:
        with self._cond:
            if len(self._inbound) == QUEUE_LIMIT:
                self.overflow += 1
            self._inbound.append(msg)
            self._cond.notify()

    def recv(self, timeout: float | None = None) -> Message:
        with self._cond:
            if not self._cond.wait_for(lambda: self._inbound, timeout):
                raise RequestTimeout(f"nothing received on {self.name!r}")
            return self._inbound.popleft()

    def pending(self) -> int:
        with self._cond:
            return len(self._inbound)

    def send(self, payload) -> DeliveryReport:
        return self.component.send(self.name, payload)

    def request(self, payload, timeout_ms: int = 10_000):
        return self.component.request(self.name, payload, timeout_ms)


class _PeerAbort(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class _Wire:
    """Request/reply framing for handshake steps.

    On unreliable channels the initiator resends a step up to three times,
    500 ms apart, and the acceptor answers duplicates from a one-entry cache.
    """

    def __init__(self, ch: Channel, timeout: float):
        self.ch = ch
        self.timeout = timeout
        self.step = 0
        self.last_req_id: str | None = None
        self.last_reply: bytes | None = None

    def send(self, status: int, ctrl: dict) -> None:
        self.step += 1
        self.ch.send(encode_envelope(Envelope(str(self.step), status, ctrl=ctrl)))

    def exchange(self, status: int, ctrl: dict) -> Envelope:
        self.step += 1
        mid = str(self.step)
        body = encode_envelope(Envelope(mid, status, ctrl=ctrl))
        attempts, wait = (1, self.timeout) if self.ch.reliable else (1 + UDP_RETRIES, UDP_RETRY_S)
        for _ in range(attempts):
            self.ch.send(body)
            deadline = time.monotonic() + wait
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                try:
                    raw = self.ch.recv(remaining)
                except TimeoutError:
                    break
                except ChannelClosed as exc:
                    raise _PeerAbort("peer-closed") from exc
                try:
                    env = decode_envelope(raw)
                except EnvelopeError:
                    continue
                if env.status == StatusCode.UNMAP:
                    raise _PeerAbort(_reason(env))
                if env.msg_id == mid:
                    return env
        raise PeerUnreachable("handshake step timed out")

    def next_request(self) -> Envelope:
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise PeerUnreachable("handshake step timed out")
            try:
                raw = self.ch.recv(remaining)
            except TimeoutError:
                raise PeerUnreachable("handshake step timed out") from None
            try:
                env = decode_envelope(raw)
            except EnvelopeError:
                continue
            if self.resend_if_duplicate(env):
                continue
            return env

    def resend_if_duplicate(self, env: Envelope) -> bool:
        if self.ch.reliable or self.last_req_id is None or env.msg_id != self.last_req_id:
            return False
        if env.status not in range(StatusCode.HELLO, StatusCode.UNMAP):
            return False
        try:
            self.ch.send(self.last_reply)
        except TransportError:
            pass
        return True

    def reply(self, req: Envelope, status: int, ctrl: dict) -> None:
        body = encode_envelope(Envelope(req.msg_id, status, ctrl=ctrl))
        self.last_req_id = req.msg_id
        self.last_reply = body
        self.ch.send(body)


def _reason(env: Envelope) -> str:
    body = env.ctrl if env.ctrl is not None else env.msg_json
    reason = body.get("reason", "unmapped") if isinstance(body, dict) else "unmapped"
    return reason if isinstance(reason, str) else "unmapped"


def select_targets(local: EndpointDescriptor, peer: Manifest, query: Query) -> list[EndpointDescriptor]:
    """Remote endpoints a local endpoint should map to.

    Schema-compatible candidates win; if only kind-compatible ones exist the
    first is returned so the peer can reject it with a precise reason.
    Source/sink kinds fan out to every match, request kinds take the first.
    """
    comp = Query(query.component_clauses())
    if comp.clauses and not manifest_matches(peer, comp):
        return []
    eps = [e for e in sorted(peer.endpoints, key=lambda e: e.name)
           if can_pair(local.ep_type, e.ep_type) and endpoint_matches(e, query.endpoint_clauses())]
    compatible = [e for e in eps if local.compatible_with(e)]
    chosen = compatible or eps[:1]
    if local.ep_type not in ("source", "sink", "stream_source", "stream_sink"):
        chosen = chosen[:1]
    return chosen


def as_query(selector) -> Query:
    if selector is None:
        return Query()
    if isinstance(selector, Query):
        return selector
    if isinstance(selector, str):
        return selector_to_query(selector)
    return Query(tuple(selector))


# --- the component ---------------------------------------------------------


class Component:
    """One middleware instance.

    ``listen`` takes URLs such as ``"tcp://127.0.0.1:0"``; each one activates
    its module and binds a listener. ``rdcs`` is the initial list of
    discovery services the component registers with.
    """

    def __init__(
        self,
        component_id: str,
        *,
        metadata: dict | None = None,
        credentials: Iterable[Credential] = (),
        acl: Iterable[AclEntry] = (),
        comm_modules: Iterable[str] = ("tcp",),
        access_modules: Iterable[str] = ACCESS_MODULES,
        listen: Iterable[str] = (),
        rdcs: Iterable[str] = (),
        rdc_period_s: float = rdc.DEFAULT_PERIOD_S,
        rdc_ttl_s: int = rdc.DEFAULT_TTL_S,
        clock: Callable[[], float] = time.monotonic,
        audit_path=None,
        handshake_timeout: float = 5.0,
    ):
        if not component_id:
            raise ManifestError("component_id must be non-empty")
        self.component_id = component_id
        self.clock = clock
        self.handshake_timeout = handshake_timeout
        self.transports = TransportRegistry()
        self.access = AccessStore(credentials, acl, access_modules, AuditLog(audit_path))
        self.rdcs: list[str] = []
        self.rdc_period_s = rdc_period_s
        self.rdc_ttl_s = rdc_ttl_s
        self.terminated = False
        self._metadata = dict(metadata or {})
        self._endpoints: dict[str, Endpoint] = {}
        self._listeners: dict[str, list[Listener]] = collections.defaultdict(list)
        self._lock = threading.RLock()
        self._stopped = threading.Event()
        self._manifest: Manifest | None = None
        self._manifest_listeners: list[Callable[[Manifest], None]] = []
        self._refresher: rdc.RefreshLoop | None = None
        self._listen_urls = list(listen)
        self._comm_modules = list(comm_modules)
        for url in self._listen_urls:
            mod, _ = split_url(url)
            if mod not in self._comm_modules:
                self._comm_modules.append(mod)
        self._endpoints[CONTROL_EP] = Endpoint(self, control.CONTROL_DESCRIPTOR)
        self.control = control.ControlPlane(self)
        for r in rdcs:
            if r not in self.rdcs:
                self.rdcs.append(r)
        self._rebuild_manifest(notify=False)

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "Component":
        with self._lock:
            for mod in self._comm_modules:
                self.transports.activate(mod)
            for url in self._listen_urls:
                mod, addr = split_url(url)
                self._listen(mod, addr)
            self._rebuild_manifest(notify=False)
        if self.rdcs:
            self._ensure_refresher()
        return self

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _listen(self, module_id: str, address: str) -> Listener:
        mod = self.transports.get(module_id)
        lst = mod.listen(address, self._on_accept)
        self._listeners[module_id].append(lst)
        return lst

    def stop(self) -> None:
        """Close every mapping, listener and module; idempotent."""
        if self._stopped.is_set():
            return
        with self._lock:
            self.terminated = True
            self._stopped.set()
            maps = self.all_mappings()
        if self._refresher is not None:
            self._refresher.stop()
        for m in maps:
            self._close_mapping(m, "terminated", notify=True)
        with self._lock:
            for mod in list(self._listeners):
                for lst in self._listeners.pop(mod):
                    lst.close()
            for mod in self.transports.active_ids():
                self.transports.deactivate(mod)

    terminate = stop

    def wait_terminated(self, timeout: float | None = None) -> bool:
        return self._stopped.wait(timeout)

    @property
    def addresses(self) -> list[str]:
        """Listening addresses as URLs."""
        with self._lock:
            return [f"{mod}://{lst.address}" for mod, lsts in self._listeners.items() for lst in lsts]

    @property
    def url(self) -> str:
        return self.addresses[0]

    # -- manifest -----------------------------------------------------------

    def _rebuild_manifest(self, notify: bool = True) -> Manifest:
        with self._lock:
            active = self.transports.active_ids()
            addrs = tuple((mod, lst.address) for mod, lsts in self._listeners.items()
                          for lst in lsts if mod in active)
            self._manifest = Manifest(
                component_id=self.component_id,
                addresses=addrs,
                comm_modules=active,
                access_modules=tuple(self.access.modules),
                identities=self.access.identities(),
                metadata=dict(self._metadata),
                endpoints=tuple(ep.descriptor for name, ep in sorted(self._endpoints.items())
                                if not ep.internal),
            )
            m = self._manifest
        if notify:
            for cb in list(self._manifest_listeners):
                cb(m)
        return m

    @property
    def manifest(self) -> Manifest:
        return self._manifest

    @property
    def metadata(self) -> dict:
        return dict(self._metadata)

    def manifest_add(self, key: str, value: str) -> Manifest:
        with self._lock:
            updated = manifest_add(self._manifest, key, value)
            self._metadata = dict(updated.metadata)
        return self._rebuild_manifest()

    def on_manifest_change(self, cb: Callable[[Manifest], None]) -> None:
        self._manifest_listeners.append(cb)

    # -- endpoints ----------------------------------------------------------

    def create_endpoint(self, descriptor: EndpointDescriptor, handler: Callable | None = None,
                        on_message: Callable | None = None, internal: bool = False) -> Endpoint:
        """Register an endpoint.

        ``handler`` serves requests on response endpoints: it returns one reply
        payload (``response``) or an iterable of them (``response_plus_server``).
        ``on_message`` is called from the reader thread for each delivered
        sink message instead of queueing it.
        """
        if not isinstance(descriptor, EndpointDescriptor):
            raise MalformedDescriptor("create_endpoint needs an EndpointDescriptor")
        with self._lock:
            if descriptor.name in self._endpoints:
                raise DuplicateEndpoint(f"endpoint {descriptor.name!r} already exists")
            ep = Endpoint(self, descriptor, handler, on_message, internal)
            self._endpoints[descriptor.name] = ep
        if not internal:
            self._rebuild_manifest()
        return ep

    def endpoint(self, name: str) -> Endpoint:
        try:
            return self._endpoints[name]
        except KeyError:
            raise UnknownEndpoint(f"no endpoint named {name!r}") from None

    def _internal_endpoint(self, descriptor: EndpointDescriptor) -> Endpoint:
        with self._lock:
            ep = self._endpoints.get(descriptor.name)
            if ep is None:
                ep = self.create_endpoint(descriptor, internal=True)
            return ep

    @property
    def endpoints(self) -> list[str]:
        return sorted(n for n, ep in self._endpoints.items() if not ep.internal)

    def all_mappings(self) -> list[Mapping]:
        with self._lock:
            return [m for ep in self._endpoints.values() for m in ep.mappings.values()]

    def mappings(self, endpoint: str | None = None) -> list[Mapping]:
        if endpoint is not None:
            return self.endpoint(endpoint).established()
        return sorted((m for m in self.all_mappings() if m.established),
                      key=lambda m: (m.local_ep, m.peer_component, m.peer_ep))

    def fan_out(self, endpoint: str) -> int:
        return len(self.endpoint(endpoint).established())

    # -- mapping: initiator -------------------------------------------------

    def _connect(self, peer) -> tuple[Channel, str]:
        if isinstance(peer, Manifest):
            candidates = list(peer.addresses)
        else:
            candidates = [split_url(str(peer))]
        active = self.transports.active_ids()
        shared = [(m, a) for m, a in candidates if m in active]
        if not shared:
            raise NoSharedTransport(
                f"no shared communication module (local {list(active)}, "
                f"peer {[m for m, _ in candidates]})")
        last: Exception | None = None
        for mod, addr in shared:
            try:
                return self.transports.get(mod).connect(addr, self.handshake_timeout), mod
            except TransportError as exc:
                last = exc
        raise PeerUnreachable(f"cannot reach peer: {last}")

    def map(self, local_ep: str, peer, selector=None, remote_ep: str | None = None) -> list[Mapping]:
        """Map a local endpoint to matching endpoints of ``peer``.

        ``peer`` is a URL (``"tcp://host:port"``) or a :class:`Manifest`.
        Raises a :class:`MapError` subclass naming the first failed check.
        """
        ep = self.endpoint(local_ep)
        query = as_query(selector)
        if remote_ep is not None:
            query = query & Query((Clause("ep_name", "eq", remote_ep),))
        first, peer_manifest, rest = self._handshake(ep, peer, query, None)
        out = [first]
        for name in rest:
            try:
                m, _, _ = self._handshake(ep, peer_manifest, query, name)
                out.append(m)
            except MapError as exc:
                log.warning("fan-out mapping %s -> %s/%s failed: %s",
                            local_ep, peer_manifest.component_id, name, exc)
        return out

    def _handshake(self, ep: Endpoint, peer, query: Query, target: str | None):
        ch, module_id = self._connect(peer)
        wire = _Wire(ch, self.handshake_timeout)
        mapping = Mapping(ep.name, ch, module_id, initiator=True)
        mapping._wire = wire
        try:
            reply = wire.exchange(StatusCode.HELLO, {"manifest": self.manifest.to_json()})
            if reply.status != StatusCode.HELLO:
                raise PeerUnreachable("peer did not answer HELLO")
            peer_manifest = Manifest.from_json(reply.ctrl["manifest"])
            mapping.peer_component = peer_manifest.component_id
            mapping.peer_manifest = peer_manifest
            addr = peer_manifest.address_for(module_id)
            if addr is not None:
                mapping.peer_address = addr
            shared = sorted(set(self.access.modules) & set(peer_manifest.access_modules))
            if not shared:
                raise NoSharedAccessModule(
                    f"no shared access module (local {self.access.modules}, "
                    f"peer {list(peer_manifest.access_modules)})")
            mapping.state = State.AUTHENTICATING
            identities = self._authenticate(wire, shared)
            mapping.peer_identities = identities
            mapping.state = State.NEGOTIATING
            if target is None:
                targets = select_targets(ep.descriptor, peer_manifest, query)
                if not targets:
                    raise NoMatchingEndpoint(
                        f"{peer_manifest.component_id} has no endpoint pairing with {ep.name!r}")
                target, rest = targets[0].name, [t.name for t in targets[1:]]
            else:
                rest = []
            if not ep.internal:
                decision = self.access.check(ep.name, "map", identities)
                if not decision:
                    raise LocalAclDenied(f"local ACL denies map on {ep.name!r}: {decision.reason}")
            reply = wire.exchange(StatusCode.MAP_REQUEST,
                                  {"local_ep": ep.descriptor.to_json(), "remote_ep": target})
            if reply.status == StatusCode.MAP_REJECT:
                reason = reply.ctrl.get("reason", "rejected") if reply.ctrl else "rejected"
                ch.close(f"rejected:{reason}")
                raise REJECT_ERRORS.get(reason, MapError)(f"peer rejected mapping: {reason}")
            if reply.status != StatusCode.MAP_ACCEPT:
                raise PeerUnreachable(f"unexpected handshake status {reply.status}")
            mapping.peer_ep = target
            self._register(ep, mapping)
        except _PeerAbort as exc:
            ch.close(exc.reason)
            raise REJECT_ERRORS.get(exc.reason, PeerUnreachable)(f"peer aborted: {exc.reason}") from None
        except MapError as exc:
            self._abort(ch, exc.code)
            raise
        except (ChannelClosed, FrameTooLarge) as exc:
            ch.close("handshake-failed")
            raise PeerUnreachable(str(exc)) from None
        except (KeyError, TypeError, ManifestError, EnvelopeError) as exc:
            self._abort(ch, "protocol-error")
            raise PeerUnreachable(f"handshake protocol error: {exc}") from None
        threading.Thread(target=self._read_loop, args=(mapping,), daemon=True,
                         name=f"flux-read-{self.component_id}-{mapping.mapping_id}").start()
        return mapping, peer_manifest, rest

    def _abort(self, ch: Channel, reason: str) -> None:
        if not ch.closed:
            try:
                ch.send(encode_envelope(Envelope("0", StatusCode.UNMAP, ctrl={"reason": reason})))
            except TransportError:
                pass
            ch.close(reason)

    def _authenticate(self, wire: _Wire, modules: list[str]) -> frozenset:
        for module in modules:
            nonce_i = new_nonce()
            offers = self.access.principals(module)
            reply = wire.exchange(StatusCode.AUTH_CHALLENGE,
                                  {"module": module, "nonce": nonce_i, "offers": offers})
            if reply.status != StatusCode.AUTH_RESPONSE:
                raise PeerUnreachable("unexpected reply to AUTH_CHALLENGE")
            nonce_a = reply.ctrl["nonce"]
            proofs = reply.ctrl.get("proofs", {})
            verified = sorted(
                p for p, proof in proofs.items()
                if p in offers and self.access.verify(module, p, "acceptor", nonce_i, nonce_a, proof)
            )
            mine = {p: self.access.prove(module, p, "initiator", nonce_i, nonce_a) for p in verified}
            result = wire.exchange(StatusCode.AUTH_RESPONSE, {"module": module, "proofs": mine})
            if result.status != StatusCode.AUTH_RESULT:
                raise PeerUnreachable("unexpected reply to AUTH_RESPONSE")
            if result.ctrl.get("ok") and verified:
                agreed = set(verified) & set(result.ctrl.get("principals", []))
                if agreed:
                    return frozenset(Identity(module, p) for p in agreed)
        raise AuthFailed("no identity could be established on any shared access module")

    def _register(self, ep: Endpoint, mapping: Mapping, announce=None) -> None:
        """Mark ``mapping`` established, then run ``announce`` (the acceptor's MAP_ACCEPT).

        Registering first means a peer that has seen MAP_ACCEPT never observes
        this side without the mapping; holding the send lock keeps data off the
        channel until the announcement is out.
        """
        with ep.send_lock:
            with self._lock:
                if self.terminated:
                    raise PeerUnreachable("component terminated")
                if not (ep.internal or ep.name == CONTROL_EP) and \
                        not self.access.check(ep.name, "map", mapping.peer_identities):
                    raise LocalAclDenied("grant revoked during handshake")
                mapping.state = State.ESTABLISHED
                ep.mappings[mapping.mapping_id] = mapping
                ep._mappings_changed()
            try:
                if announce is not None:
                    announce()
                if ep.ep_type == "stream_source":
                    mapping.channel.send(encode_envelope(Envelope("0", StatusCode.STREAM, {})))
            except Exception:
                self._close_mapping(mapping, "transport-lost", notify=False)
                raise

    # -- mapping: acceptor --------------------------------------------------

    def _on_accept(self, ch: Channel) -> None:
        threading.Thread(target=self._accept, args=(ch,), daemon=True,
                         name=f"flux-accept-{self.component_id}").start()

    def _accept(self, ch: Channel) -> None:
        wire = _Wire(ch, self.handshake_timeout)
        try:
            hello = wire.next_request()
            if hello.status != StatusCode.HELLO:
                ch.close("protocol-error")
                return
            peer_manifest = Manifest.from_json(hello.ctrl["manifest"])
            wire.reply(hello, StatusCode.HELLO, {"manifest": self.manifest.to_json()})
            identities: frozenset = frozenset()
            while True:
                req = wire.next_request()
                if req.status == StatusCode.UNMAP:
                    ch.close(_reason(req))
                    return
                if req.status == StatusCode.AUTH_CHALLENGE:
                    identities = self._auth_round(wire, req) or identities
                elif req.status == StatusCode.MAP_REQUEST:
                    mapping = self._accept_map(wire, req, peer_manifest, identities, ch)
                    if mapping is not None:
                        self._read_loop(mapping)
                    return
                else:
                    ch.close("protocol-error")
                    return
        except (FluxError, KeyError, TypeError, AttributeError) as exc:
            log.debug("%s: inbound handshake failed: %s", self.component_id, exc)
            ch.close("handshake-failed")

    def _auth_round(self, wire: _Wire, challenge: Envelope) -> frozenset:
        ctrl = challenge.ctrl
        module, nonce_i = ctrl["module"], ctrl["nonce"]
        nonce_a = new_nonce()
        proofs = {}
        if module in self.access.modules:
            for p in ctrl.get("offers", []):
                proof = self.access.prove(module, p, "acceptor", nonce_i, nonce_a)
                if proof is not None:
                    proofs[p] = proof
        wire.reply(challenge, StatusCode.AUTH_RESPONSE,
                   {"module": module, "nonce": nonce_a, "proofs": proofs})
        resp = wire.next_request()
        if resp.status != StatusCode.AUTH_RESPONSE:
            raise PeerUnreachable("expected AUTH_RESPONSE")
        theirs = resp.ctrl.get("proofs", {})
        ok = sorted(p for p, proof in theirs.items()
                    if p in proofs and self.access.verify(module, p, "initiator", nonce_i, nonce_a, proof))
        wire.reply(resp, StatusCode.AUTH_RESULT, {"module": module, "ok": bool(ok), "principals": ok})
        return frozenset(Identity(module, p) for p in ok)

    def _accept_map(self, wire: _Wire, req: Envelope, peer_manifest: Manifest,
                    identities: frozenset, ch: Channel) -> Mapping | None:
        def reject(reason: str):
            wire.reply(req, StatusCode.MAP_REJECT, {"reason": reason})
            return None

        if not identities:
            return reject("auth-required")
        try:
            remote = EndpointDescriptor.from_json(req.ctrl["local_ep"])
        except MalformedDescriptor:
            return reject("type-mismatch")
        ep = self._endpoints.get(req.ctrl.get("remote_ep"))
        if ep is None or ep.internal:
            return reject("no-such-endpoint")
        if not can_pair(ep.ep_type, remote.ep_type):
            return reject("type-mismatch")
        # the control endpoint authorizes per command, not per mapping
        if ep.name != CONTROL_EP and not self.access.check(ep.name, "map", identities):
            return reject("acl-denied")
        if not ep.descriptor.compatible_with(remote):
            return reject("schema-mismatch")
        if self.terminated:
            return reject("terminated")
        mapping = Mapping(ep.name, ch, ch.module_id, initiator=False)
        mapping._wire = wire
        mapping.peer_component = peer_manifest.component_id
        mapping.peer_manifest = peer_manifest
        mapping.peer_ep = remote.name
        mapping.peer_identities = identities
        addr = peer_manifest.address_for(ch.module_id)
        if addr is not None:
            mapping.peer_address = addr
        mapping.state = State.NEGOTIATING
        try:
            self._register(ep, mapping, lambda: wire.reply(
                req, StatusCode.MAP_ACCEPT, {"endpoint": ep.descriptor.to_json()}))
        except MapError as exc:
            reject("revoked" if isinstance(exc, LocalAclDenied) else exc.code)
            return None
        return mapping

    # -- closing ------------------------------------------------------------

    def _close_mapping(self, mapping: Mapping, reason: str, notify: bool) -> bool:
        with self._lock:
            if mapping.state is State.CLOSED:
                return False
            mapping.state = State.CLOSED
            mapping.close_reason = reason
            ep = self._endpoints.get(mapping.local_ep)
            if ep is not None:
                ep.mappings.pop(mapping.mapping_id, None)
                ep._mappings_changed()
        for q in list(mapping.pending.values()):
            q.put(("closed", reason))
        ch = mapping.channel
        if notify and not ch.closed and (ep is None or ep.ep_type != "stream_source"):
            try:
                ch.send(encode_envelope(Envelope("0", StatusCode.UNMAP, ctrl={"reason": reason})))
            except TransportError:
                pass
        ch.close(reason)
        mapping.closed_event.set()
        return True

    def unmap(self, local_ep: str, selector=None) -> int:
        """Close every established mapping of ``local_ep`` whose peer matches."""
        ep = self.endpoint(local_ep)
        query = as_query(selector)
        count = 0
        for m in ep.established():
            if query.clauses:
                if m.peer_manifest is None:
                    continue
                comp = Query(query.component_clauses())
                if comp.clauses and not manifest_matches(m.peer_manifest, comp):
                    continue
                pdesc = m.peer_manifest.endpoint(m.peer_ep)
                if query.endpoint_clauses() and (pdesc is None or
                                                 not endpoint_matches(pdesc, query.endpoint_clauses())):
                    continue
            if self._close_mapping(m, "unmapped", notify=True):
                count += 1
        return count

    def reexamine_mappings(self) -> list[str]:
        """Close mappings whose peer is no longer authorized to stay mapped."""
        closed = []
        with self._lock:
            candidates = [m for m in self.all_mappings() if m.established]
        for m in candidates:
            ep = self._endpoints.get(m.local_ep)
            if ep is None or ep.internal or ep.name == CONTROL_EP:
                continue
            with self._lock:
                still = frozenset(i for i in m.peer_identities if self.access.holds(i))
                m.peer_identities = still
                allowed = bool(self.access.check(m.local_ep, "map", still))
            if not allowed and self._close_mapping(m, "revoked", notify=True):
                closed.append(m.mapping_id)
        return closed

    # -- data plane: receive ------------------------------------------------

    def _read_loop(self, mapping: Mapping) -> None:
        ch = mapping.channel
        ep = self._endpoints[mapping.local_ep]
        raw_mode = False
        while True:
            try:
                body = ch.recv()
            except (ChannelClosed, TransportError):
                self._close_mapping(mapping, ch.close_reason or "peer-closed", notify=False)
                return
            if raw_mode:
                self._deliver(ep, mapping, body, 0)
                continue
            try:
                env = decode_envelope(body)
            except EnvelopeError:
                mapping.dropped += 1
                continue
            st = env.status
            if st == StatusCode.UNMAP:
                self._close_mapping(mapping, _reason(env), notify=False)
                return
            if st not in DATA_STATUSES:
                if mapping._wire is not None:
                    mapping._wire.resend_if_duplicate(env)
                continue
            if not mapping.established:
                mapping.dropped += 1
                continue
            if st == StatusCode.STREAM:
                raw_mode = ep.ep_type == "stream_sink"
            elif st == StatusCode.DATA:
                self._on_data(ep, mapping, env, ch.last_header_ts)
            elif st in (StatusCode.REQUEST, StatusCode.CONTROL_REQUEST):
                threading.Thread(target=self._serve_request, args=(ep, mapping, env),
                                 daemon=True).start()
            else:
                self._on_response(mapping, env)

    def _on_data(self, ep: Endpoint, mapping: Mapping, env: Envelope, started: float) -> None:
        if ep.ep_type != "sink":
            mapping.dropped += 1
            return
        msg_id = int(env.msg_id)
        if msg_id <= mapping.last_rx_id:
            mapping.dropped += 1
            return
        mapping.last_rx_id = msg_id
        payload = env.msg_json
        if not validate(payload, ep.descriptor.msg_schema):
            ep.rejected += 1
            return
        if not ep.recv_filters.passes(payload):
            return
        ep.last_frame_started = started
        self._deliver(ep, mapping, payload, msg_id)

    def _deliver(self, ep: Endpoint, mapping: Mapping, payload, msg_id: int) -> None:
        mapping.received += 1
        if ep.on_message is not None:
            ep.on_message(payload)
        else:
            ep._enqueue(Message(payload, mapping.mapping_id, msg_id))

    def recv(self, local_ep: str, timeout: float | None = None) -> Message:
        return self.endpoint(local_ep).recv(timeout)

    # -- data plane: send ---------------------------------------------------

    def send(self, local_ep: str, payload) -> DeliveryReport:
        """Send one message on a source (or raw bytes on a stream source)."""
        ep = self.endpoint(local_ep)
        if ep.ep_type == "stream_source":
            return self._send_stream(ep, payload)
        if ep.ep_type != "source":
            raise WrongEndpointKind(f"cannot send on {ep.ep_type} endpoint {local_ep!r}")
        result = validate(payload, ep.descriptor.msg_schema)
        if not result:
            raise SchemaViolation(result.violations)
        with ep.send_lock:
            msg_id = ep.next_msg_id()
            maps = ep.established()
            report = DeliveryReport(msg_id)
            if not ep.send_filters.passes(payload):
                report.results = {m.mapping_id: "filtered" for m in maps}
                return report
            body = encode_envelope(Envelope(str(msg_id), StatusCode.DATA, payload))
            for m in maps:
                try:
                    m.channel.send(body)
                    m.sent += 1
                    report.results[m.mapping_id] = "sent"
                except (TransportError, OSError) as exc:
                    report.results[m.mapping_id] = f"dropped:{getattr(exc, 'code', 'error')}"
        return report

    def _send_stream(self, ep: Endpoint, data: bytes) -> DeliveryReport:
        if not isinstance(data, (bytes, bytearray)):
            raise SchemaViolation(["not-bytes"])
        with ep.send_lock:
            report = DeliveryReport(ep.next_msg_id())
            for m in ep.established():
                try:
                    m.channel.send(bytes(data))
                    m.sent += 1
                    report.results[m.mapping_id] = "sent"
                except (TransportError, OSError) as exc:
                    report.results[m.mapping_id] = f"dropped:{getattr(exc, 'code', 'error')}"
        return report

    # -- request / response -------------------------------------------------

    def request(self, local_ep: str, payload, timeout_ms: int = 10_000):
        """Issue a request on the first established mapping.

        Returns the reply payload for ``request`` endpoints, and an iterator
        over replies for ``response_plus_client`` endpoints.
        """
        ep = self.endpoint(local_ep)
        if ep.ep_type not in ("request", "response_plus_client"):
            raise WrongEndpointKind(f"cannot request on {ep.ep_type} endpoint {local_ep!r}")
        maps = ep.established()
        if not maps:
            raise PeerClosed(f"endpoint {local_ep!r} has no established mapping")
        return self.request_on(maps[0], payload, timeout_ms)

    def request_on(self, mapping: Mapping, payload, timeout_ms: int = 10_000):
        ep = self.endpoint(mapping.local_ep)
        result = validate(payload, ep.descriptor.msg_schema)
        if not result:
            raise SchemaViolation(result.violations)
        if not mapping.established:
            raise PeerClosed("mapping is not established")
        status = StatusCode.CONTROL_REQUEST if mapping.peer_ep == CONTROL_EP else StatusCode.REQUEST
        q: queue.Queue = queue.Queue()
        with ep.send_lock:
            msg_id = str(ep.next_msg_id())
            mapping.pending[msg_id] = q
            try:
                mapping.channel.send(encode_envelope(Envelope(msg_id, status, payload)))
                mapping.sent += 1
            except TransportError as exc:
                mapping.pending.pop(msg_id, None)
                raise PeerClosed(str(exc)) from None
        timeout = timeout_ms / 1000.0
        if ep.ep_type == "request":
            try:
                return self._next_reply(ep, mapping, msg_id, q, timeout)
            finally:
                mapping.pending.pop(msg_id, None)
        return self._reply_stream(ep, mapping, msg_id, q, timeout)

    def _next_reply(self, ep, mapping, msg_id, q, timeout):
        try:
            kind, value = q.get(timeout=timeout)
        except queue.Empty:
            raise RequestTimeout(f"no reply to request {msg_id} within {timeout}s") from None
        if kind == "closed":
            raise PeerClosed(f"mapping closed: {value}")
        if kind == "error":
            raise FluxError(f"remote error: {value}")
        if kind == "final":
            return _FINAL
        result = validate(value, ep.descriptor.reply_schema)
        if not result:
            raise SchemaViolation(result.violations)
        return value

    def _reply_stream(self, ep, mapping, msg_id, q, timeout) -> Iterator:
        try:
            while True:
                item = self._next_reply(ep, mapping, msg_id, q, timeout)
                if item is _FINAL:
                    return
                yield item
        finally:
            mapping.pending.pop(msg_id, None)

    def _on_response(self, mapping: Mapping, env: Envelope) -> None:
        body = env.msg_json
        re = body.get("re") if isinstance(body, dict) else None
        q = mapping.pending.get(re)
        if q is None:
            mapping.dropped += 1
            return
        mapping.received += 1
        if "error" in body:
            q.put(("error", body["error"]))
        elif env.status == StatusCode.RESPONSE_FINAL:
            q.put(("final", None))
        else:
            q.put(("msg", body.get("msg")))

    def _reply(self, ep: Endpoint, mapping: Mapping, status: int, body: dict) -> None:
        with ep.send_lock:
            env = Envelope(str(ep.next_msg_id()), status, body)
            mapping.channel.send(encode_envelope(env))
            mapping.sent += 1

    def _serve_request(self, ep: Endpoint, mapping: Mapping, env: Envelope) -> None:
        re = env.msg_id
        mapping.received += 1
        try:
            if ep.name == CONTROL_EP:
                resp = self.control.handle(env.msg_json, mapping.peer_identities)
                self._reply(ep, mapping, StatusCode.CONTROL_RESPONSE, {"re": re, "msg": resp})
                return
            if ep.ep_type not in ("response", "response_plus_server"):
                raise WrongEndpointKind("not a response endpoint")
            result = validate(env.msg_json, ep.descriptor.msg_schema)
            if not result:
                raise SchemaViolation(result.violations)
            if ep.handler is None:
                raise FluxError("no handler registered")
            if ep.ep_type == "response":
                out = ep.handler(env.msg_json)
                self._check_reply(ep, out)
                self._reply(ep, mapping, StatusCode.RESPONSE, {"re": re, "msg": out})
            else:
                for out in ep.handler(env.msg_json):
                    self._check_reply(ep, out)
                    self._reply(ep, mapping, StatusCode.RESPONSE, {"re": re, "msg": out})
                self._reply(ep, mapping, StatusCode.RESPONSE_FINAL, {"re": re})
        except TransportError:
            pass
        except Exception as exc:  # handler failures go back to the caller
            log.debug("%s: request on %s failed: %s", self.component_id, ep.name, exc)
            try:
                self._reply(ep, mapping, StatusCode.RESPONSE_FINAL,
                            {"re": re, "error": f"{getattr(exc, 'code', 'error')}: {exc}"})
            except TransportError:
                pass

    @staticmethod
    def _check_reply(ep: Endpoint, out) -> None:
        result = validate(out, ep.descriptor.reply_schema)
        if not result:
            raise SchemaViolation(result.violations)

    # -- filters ------------------------------------------------------------

    def set_filter(self, local_ep: str, f: Filter) -> None:
        ep = self.endpoint(local_ep)
        with self._lock:
            chain = ep.send_filters if f.direction == "send" else ep.recv_filters
            chain.filters.append(f)

    def clear_filter(self, local_ep: str, direction: str | None = None) -> int:
        ep = self.endpoint(local_ep)
        n = 0
        with self._lock:
            for d, chain in (("send", ep.send_filters), ("recv", ep.recv_filters)):
                if direction in (None, d):
                    n += len(chain.filters)
                    chain.filters.clear()
                    chain._last_passed = None
        return n

    def filters(self, local_ep: str) -> list[Filter]:
        ep = self.endpoint(local_ep)
        return list(ep.send_filters.filters) + list(ep.recv_filters.filters)

    # -- access control -----------------------------------------------------

    def credential_add(self, c: Credential, actor: str = "local") -> None:
        with self._lock:
            self.access.credential_add(c, actor)
        self._rebuild_manifest()

    def credential_remove(self, name: str, actor: str = "local") -> list[str]:
        with self._lock:
            self.access.credential_remove(name, actor)
        self._rebuild_manifest()
        return self.reexamine_mappings()

    def acl_add(self, e: AclEntry, actor: str = "local") -> None:
        with self._lock:
            self.access.acl_add(e, actor)

    def acl_remove(self, e: AclEntry, actor: str = "local") -> list[str]:
        with self._lock:
            self.access.acl_remove(e, actor)
        return self.reexamine_mappings()

    def acl_check(self, endpoint: str, operation: str, identities):
        return self.access.check(endpoint, operation, identities)

    # -- modules ------------------------------------------------------------

    def activate_module(self, module_id: str, address: str | None = None) -> dict:
        with self._lock:
            mod = self.transports.activate(module_id)
            if address is None and not self._listeners.get(module_id):
                address = self._default_address(module_id)
            if address is not None:
                self._listen(module_id, address)
            del mod
        self._rebuild_manifest()
        return self.transports.state()

    def _default_address(self, module_id: str) -> str | None:
        if module_id == "loopback":
            return f"{self.component_id}:0"
        for mod in ("tcp", "udp"):
            for lst in self._listeners.get(mod, ()):
                return lst.address.rpartition(":")[0] + ":0"
        return None

    def deactivate_module(self, module_id: str) -> dict:
        self.transports.get(module_id)
        lost = [m for m in self.all_mappings() if m.module_id == module_id]
        for m in lost:
            self._close_mapping(m, "transport-lost", notify=False)
        with self._lock:
            for lst in self._listeners.pop(module_id, []):
                lst.close()
            self.transports.deactivate(module_id)
        self._rebuild_manifest()
        return self.transports.state()

    def load_access_module(self, module_id: str) -> None:
        with self._lock:
            self.access.load_module(module_id)
        self._rebuild_manifest()

    # -- discovery ----------------------------------------------------------

    def _ensure_refresher(self) -> None:
        with self._lock:
            if self._refresher is None and not self.terminated:
                self._refresher = rdc.RefreshLoop(self, self.rdc_period_s)
                self._refresher.start()

    def add_rdc(self, address: str) -> list[str]:
        with self._lock:
            if address not in self.rdcs:
                self.rdcs.append(address)
        self._ensure_refresher()
        self._refresher.poke()
        return list(self.rdcs)

    def register_rdc(self) -> dict:
        return rdc.register_everywhere(self)

    def lookup(self, query=None) -> list[Manifest]:
        return rdc.lookup_everywhere(self, as_query(query))

    def map_lookup(self, query, endpoint: str | None = None, then_map: bool = False) -> dict:
        return control.map_lookup(self, as_query(query), endpoint, then_map)

    # -- reconfiguration helpers --------------------------------------------

    def resolve(self, target) -> list:
        return control.resolve_targets(self, target)

    def map_to(self, local_ep: str, target, selector=None) -> list[Mapping]:
        out = []
        for peer in self.resolve(target):
            if isinstance(peer, Manifest) and peer.component_id == self.component_id:
                continue
            out.extend(self.map(local_ep, peer, selector))
        return out

    def remap(self, local_ep: str, target, selector: str | None = None) -> list[dict]:
        return control.remap(self, local_ep, target, selector)

    def divert(self, local_ep: str, target, selector: str = "*") -> list[dict]:
        return control.divert(self, local_ep, target, selector)

    def control_call(self, peer, verb: str, args: dict | None = None, timeout_ms: int = 30_000) -> dict:
        return control.control_call(self, peer, verb, args or {}, timeout_ms)

    # -- introspection ------------------------------------------------------

    def state_snapshot(self) -> dict:
        with self._lock:
            manifest = self._manifest.to_json()
            manifest.pop("addresses")
            eps = {}
            for name, ep in sorted(self._endpoints.items()):
                if ep.internal:
                    continue
                # control sessions are transient and not part of the configuration
                eps[name] = {
                    "mappings": [] if name == CONTROL_EP else sorted(
                        [m.peer_component, m.peer_ep, m.state.value] for m in ep.established()),
                    "filters": [f.to_json() for f in ep.send_filters.filters + ep.recv_filters.filters],
                }
            return {
                "manifest": manifest,
                "endpoints": eps,
                "acl": sorted(e.to_json()["endpoint"] + "|" + e.operation + "|" + e.principal
                              for e in self.access.acl),
                "credentials": sorted(f"{c.module_id}|{c.name}" for c in self.access.credentials.values()),
                "rdcs": sorted(self.rdcs),
                "modules": self.transports.state(),
                "terminated": self.terminated,
            }

    def state_hash(self) -> str:
        blob = json.dumps(self.state_snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class _Final:
    pass


_FINAL = _Final()
