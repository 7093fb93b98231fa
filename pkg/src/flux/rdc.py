"""Resource discovery: a TTL catalog of manifests served over the normal protocol.

The service is itself a component with three ``response`` endpoints:

``rdc_register``   ``{manifest_json, ttl_s}`` -> ``{ok, reason?}`` (upsert)
``rdc_lookup``     ``{clauses}``              -> ``{ok, manifests, reason?}``
``rdc_deregister`` ``{component_id}``         -> ``{ok, reason?}``

Clients re-register with every known RDC each period and right after any
manifest change. An unreachable RDC is retried on the next period.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import threading
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

from .errors import (
    FluxError,
    ManifestError,
    NoRdc,
    QueryError,
    RdcError,
    RdcUnreachable,
    UnknownComponent,
)
from .manifest import EndpointDescriptor, Manifest, Query, manifest_matches
from .schema import BOOLEAN, NUMBER, STRING, ArrayOf, MessageSchema

if TYPE_CHECKING:  # pragma: no cover
    from .core import Component

log = logging.getLogger(__name__)

DEFAULT_TTL_S = 30
DEFAULT_PERIOD_S = 10.0
MAX_TTL_S = 86400

_CLAUSE = MessageSchema.of({"path": STRING, "op": STRING, "value_json": STRING}, required=("path", "op"))
_ACK = MessageSchema.of({"ok": BOOLEAN, "reason": STRING}, required=("ok",))

REGISTER = EndpointDescriptor(
    "rdc_register", "response",
    MessageSchema.of({"manifest_json": STRING, "ttl_s": NUMBER}, required=("manifest_json", "ttl_s")),
    _ACK,
)
LOOKUP = EndpointDescriptor(
    "rdc_lookup", "response",
    MessageSchema.of({"clauses": ArrayOf(_CLAUSE)}, required=("clauses",)),
    MessageSchema.of({"ok": BOOLEAN, "manifests": ArrayOf(STRING), "reason": STRING}, required=("ok",)),
)
DEREGISTER = EndpointDescriptor(
    "rdc_deregister", "response",
    MessageSchema.of({"component_id": STRING}, required=("component_id",)),
    _ACK,
)
SERVICE_ENDPOINTS = (REGISTER, LOOKUP, DEREGISTER)
# the client side: same schemas, request kind, hidden from the manifest
CLIENT_ENDPOINTS = {
    d.name: EndpointDescriptor("_" + d.name, "request", d.msg_schema, d.reply_schema)
    for d in SERVICE_ENDPOINTS
}


@dataclass
class RdcRecord:
    manifest: Manifest
    registered_at: float
    refreshed_at: float
    ttl_s: int

    def live(self, now: float) -> bool:
        return now - self.refreshed_at <= self.ttl_s


class RdcCatalog:
    """Manifests keyed by component id; a record is live for ``ttl_s`` after its last refresh."""

    def __init__(self, clock: Callable[[], float] = time.time):
        self.clock = clock
        self._records: dict[str, RdcRecord] = {}
        self._lock = threading.Lock()

    def register(self, manifest: Manifest, ttl_s) -> RdcRecord:
        if isinstance(ttl_s, bool) or not isinstance(ttl_s, (int, float)) or \
                not float(ttl_s).is_integer() or not 1 <= ttl_s <= MAX_TTL_S:
            raise RdcError(f"ttl_s must be an integer in [1, {MAX_TTL_S}]")
        now = self.clock()
        with self._lock:
            old = self._records.get(manifest.component_id)
            first = old.registered_at if old is not None and old.live(now) else now
            rec = RdcRecord(manifest, first, now, int(ttl_s))
            self._records[manifest.component_id] = rec
        return rec

    def deregister(self, component_id: str) -> None:
        with self._lock:
            if self._records.pop(component_id, None) is None:
                raise UnknownComponent(f"no record for {component_id!r}")

    def live(self) -> list[Manifest]:
        now = self.clock()
        with self._lock:
            recs = list(self._records.values())
        return sorted((r.manifest for r in recs if r.live(now)), key=lambda m: m.component_id)

    def lookup(self, query: Query) -> list[Manifest]:
        return [m for m in self.live() if manifest_matches(m, query)]

    def purge(self) -> int:
        now = self.clock()
        with self._lock:
            dead = [k for k, r in self._records.items() if not r.live(now)]
            for k in dead:
                del self._records[k]
        return len(dead)

    def __len__(self):
        return len(self.live())

    # -- snapshot -----------------------------------------------------------

    def dump(self) -> list[dict]:
        with self._lock:
            recs = list(self._records.values())
        return [{"manifest": r.manifest.to_json(), "registered_at": r.registered_at,
                 "refreshed_at": r.refreshed_at, "ttl_s": r.ttl_s} for r in recs]

    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.dump(), fh, sort_keys=True)
        os.replace(tmp, path)

    def load(self, path) -> int:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        with self._lock:
            for rec in data:
                m = Manifest.from_json(rec["manifest"])
                self._records[m.component_id] = RdcRecord(
                    m, rec["registered_at"], rec["refreshed_at"], rec["ttl_s"])
        return len(data)


class RdcService:
    """A catalog exposed through a component's response endpoints."""

    def __init__(self, component: "Component", catalog: RdcCatalog | None = None,
                 snapshot: str | None = None):
        self.component = component
        self.catalog = catalog or RdcCatalog()
        self.snapshot = snapshot
        if snapshot and os.path.exists(snapshot):
            self.catalog.load(snapshot)
        component.create_endpoint(REGISTER, handler=self._register)
        component.create_endpoint(LOOKUP, handler=self._lookup)
        component.create_endpoint(DEREGISTER, handler=self._deregister)

    @classmethod
    def create(cls, listen: str = "tcp://127.0.0.1:0", component_id: str = "rdc",
               credentials=(), acl=None, snapshot: str | None = None,
               catalog: RdcCatalog | None = None) -> "RdcService":
        from .access import AclEntry
        from .core import Component

        acl = acl if acl is not None else [AclEntry("*", "map", "*")]
        comp = Component(component_id, credentials=credentials, acl=acl, listen=[listen],
                         comm_modules=())
        svc = cls(comp, catalog, snapshot)
        comp.start()
        return svc

    @property
    def url(self) -> str:
        return self.component.url

    def stop(self) -> None:
        if self.snapshot:
            self.catalog.save(self.snapshot)
        self.component.stop()

    def _register(self, req: dict) -> dict:
        try:
            self.catalog.register(Manifest.loads(req["manifest_json"]), req["ttl_s"])
        except (ManifestError, RdcError) as exc:
            return {"ok": False, "reason": f"{exc.code}: {exc}"}
        return {"ok": True}

    def _lookup(self, req: dict) -> dict:
        try:
            found = self.catalog.lookup(Query.from_json(req["clauses"]))
        except QueryError as exc:
            return {"ok": False, "manifests": [], "reason": f"{exc.code}: {exc}"}
        return {"ok": True, "manifests": [m.dumps() for m in found]}

    def _deregister(self, req: dict) -> dict:
        try:
            self.catalog.deregister(req["component_id"])
        except UnknownComponent as exc:
            return {"ok": False, "reason": f"{exc.code}: {exc}"}
        return {"ok": True}


# --- client side -----------------------------------------------------------


def rdc_call(c: "Component", rdc_url: str, which: str, payload: dict, timeout_ms: int = 5000) -> dict:
    ep = c._internal_endpoint(CLIENT_ENDPOINTS[which])
    m = c.map(ep.name, rdc_url, remote_ep=which)[0]
    try:
        return c.request_on(m, payload, timeout_ms)
    finally:
        c._close_mapping(m, "unmapped", notify=True)


def register_with(c: "Component", rdc_url: str) -> None:
    resp = rdc_call(c, rdc_url, "rdc_register",
                    {"manifest_json": c.manifest.dumps(), "ttl_s": c.rdc_ttl_s})
    if not resp["ok"]:
        raise RdcError(resp.get("reason", "registration refused"))


def register_everywhere(c: "Component") -> dict:
    out = {}
    for url in list(c.rdcs):
        try:
            register_with(c, url)
            out[url] = "ok"
        except FluxError as exc:
            out[url] = f"{exc.code}: {exc}"
    return out


def lookup_everywhere(c: "Component", query: Query) -> list[Manifest]:
    """Union of every known RDC's answer, one manifest per component id."""
    if not c.rdcs:
        raise NoRdc("no RDC configured")
    found: dict[str, Manifest] = {}
    failures = []
    for url in list(c.rdcs):
        try:
            resp = rdc_call(c, url, "rdc_lookup", {"clauses": query.to_json()})
        except FluxError as exc:
            failures.append(f"{url}: {exc.code}")
            continue
        if not resp["ok"]:
            raise QueryError(resp.get("reason", "lookup refused"))
        for text in resp["manifests"]:
            m = Manifest.loads(text)
            found.setdefault(m.component_id, m)
    if failures and len(failures) == len(c.rdcs):
        raise RdcUnreachable("; ".join(failures))
    return [found[k] for k in sorted(found)]


class RefreshLoop:
    """Background re-registration: every ``period_s`` and on manifest change."""

    def __init__(self, c: "Component", period_s: float):
        self.c = c
        self.period_s = period_s
        self.rounds = 0
        self.last_result: dict = {}
        self._dirty = threading.Event()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"rdc-refresh-{c.component_id}")
        c.on_manifest_change(lambda _m: self.poke())

    def start(self) -> None:
        self._thread.start()

    def poke(self) -> None:
        self._dirty.set()

    def stop(self) -> None:
        self._stop.set()
        self._dirty.set()

    def _run(self) -> None:
        while not self._stop.is_set():
            self._dirty.clear()
            self.last_result = register_everywhere(self.c)
            self.rounds += 1
            self._dirty.wait(self.period_s)


# --- rdcd ------------------------------------------------------------------


def main(argv=None) -> int:
    from .access import load_credentials
    from .transport import split_url

    ap = argparse.ArgumentParser(prog="rdcd", description="Run a resource discovery service.")
    ap.add_argument("--listen", required=True, help="host:port (or tcp://host:port)")
    ap.add_argument("--snapshot", help="JSON file for the catalog, loaded at start, written on exit")
    ap.add_argument("--cred", help="credential bootstrap file (JSON list)")
    ap.add_argument("--id", default="rdc", help="component id of the service")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")

    creds = load_credentials(args.cred) if args.cred else []
    mod, addr = split_url(args.listen)
    svc = RdcService.create(f"{mod}://{addr}", args.id, creds, snapshot=args.snapshot)
    print(f"READY {json.dumps({'component_id': args.id, 'url': svc.url})}", flush=True)

    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    svc.stop()
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
