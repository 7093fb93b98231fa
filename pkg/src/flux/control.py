"""The built-in ``control`` endpoint and the reconfiguration verbs.

Every component exposes one ``response`` endpoint named ``control``. A
command is ``{"verb": ..., "args": {...}}``; each verb is gated by exactly
one ACL operation, evaluated against the caller's authenticated identities
on the endpoint the command touches (``"*"`` for component-wide verbs).

Free-form values (manifests, results, clause literals) travel as JSON text
in ``*_json`` string fields because the schema grammar has no open maps.
"""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Any

from .access import AclEntry, Credential
from .errors import (
    AccessError,
    AuthFailed,
    BadArgs,
    ControlError,
    FluxError,
    LocalAclDenied,
    NoMatchingEndpoint,
    RemoteAclDenied,
    SchemaMismatch,
    UnknownComponent,
    UnknownVerb,
)
from .manifest import Clause, EndpointDescriptor, Manifest, Query, manifest_matches, selector_to_query
from .schema import BOOLEAN, NUMBER, STRING, ArrayOf, MessageSchema

if TYPE_CHECKING:  # pragma: no cover
    from .core import Component

log = logging.getLogger(__name__)

CLAUSE_SCHEMA = MessageSchema.of(
    {"path": STRING, "op": STRING, "value_json": STRING}, required=("path", "op")
)
CREDENTIAL_SCHEMA = MessageSchema.of(
    {"module_id": STRING, "name": STRING, "username": STRING, "password": STRING, "key_hex": STRING},
    required=("name",),
)
ACL_SCHEMA = MessageSchema.of(
    {"endpoint": STRING, "operation": STRING, "principal": STRING},
    required=("endpoint", "operation", "principal"),
)
FILTER_SCHEMA = MessageSchema.of(
    {"kind": STRING, "direction": STRING, "clauses": ArrayOf(CLAUSE_SCHEMA), "min_interval_ms": NUMBER},
    required=("kind", "direction"),
)
ARGS_SCHEMA = MessageSchema.of(
    {
        "endpoint": STRING,
        "target": STRING,
        "selector": STRING,
        "target_manifest": STRING,
        "key": STRING,
        "value": STRING,
        "name": STRING,
        "credential": CREDENTIAL_SCHEMA,
        "acl": ACL_SCHEMA,
        "filter": FILTER_SCHEMA,
        "direction": STRING,
        "module": STRING,
        "address": STRING,
        "query": ArrayOf(CLAUSE_SCHEMA),
        "then_map": BOOLEAN,
    }
)
COMMAND_SCHEMA = MessageSchema.of({"verb": STRING, "args": ARGS_SCHEMA}, required=("verb",))
RESPONSE_SCHEMA = MessageSchema.of(
    {"status": STRING, "ok": BOOLEAN, "reason": STRING, "result_json": STRING},
    required=("status", "ok"),
)

CONTROL_DESCRIPTOR = EndpointDescriptor("control", "response", COMMAND_SCHEMA, RESPONSE_SCHEMA)
CLIENT_DESCRIPTOR = EndpointDescriptor("_ctl", "request", COMMAND_SCHEMA, RESPONSE_SCHEMA)

VERB_OPS = {
    "map_to": "map",
    "map_lookup": "map",
    "unmap": "unmap",
    "remap": "remap",
    "divert": "remap",
    "get_manifest": "read_manifest",
    "get_mappings": "read_manifest",
    "manifest_add": "module_control",
    "credential_add": "credential_modify",
    "credential_remove": "credential_modify",
    "acl_add": "acl_modify",
    "acl_remove": "acl_modify",
    "set_filter": "set_filter",
    "clear_filter": "set_filter",
    "load_com_module": "module_control",
    "unload_com_module": "module_control",
    "load_access_module": "module_control",
    "add_rdc": "module_control",
    "register_rdc": "module_control",
    "terminate": "terminate",
}
VERBS = tuple(VERB_OPS)

DIVERT_WAIT_S = 2.0
_IPV4_PORT = re.compile(r"^\d{1,3}(\.\d{1,3}){3}:\d+$")


def ok(result: Any = None) -> dict:
    out = {"status": "ok", "ok": True}
    if result is not None:
        out["result_json"] = json.dumps(result, sort_keys=True)
    return out


def deny(reason: str = "unauthorized") -> dict:
    return {"status": "deny", "ok": False, "reason": reason}


def error(reason: str) -> dict:
    return {"status": "error", "ok": False, "reason": reason}


def result_of(resp: dict) -> Any:
    text = resp.get("result_json")
    return json.loads(text) if text else None


def gate_endpoint(verb: str, args: dict) -> str:
    """The endpoint a command's ACL check is evaluated on."""
    if verb in ("acl_add", "acl_remove"):
        return args.get("acl", {}).get("endpoint", "*")
    return args.get("endpoint", "*")


def _need(args: dict, *names: str) -> None:
    missing = [n for n in names if n not in args]
    if missing:
        raise BadArgs(f"missing argument(s): {', '.join(missing)}")


def _filter_from_args(spec: dict):
    from .core import Filter

    return Filter.from_json(spec)


class ControlPlane:
    """Executes control commands on behalf of authenticated callers."""

    def __init__(self, component: "Component"):
        self.c = component

    def handle(self, cmd: dict, identities) -> dict:
        verb = cmd.get("verb")
        args = cmd.get("args", {})
        op = VERB_OPS.get(verb)
        if op is None:
            return error(f"unknown-verb: {verb}")
        if not self.c.access.check(gate_endpoint(verb, args), op, identities):
            return deny()
        actor = ",".join(sorted(i.principal for i in identities))
        try:
            return ok(getattr(self, "_" + verb)(args, actor))
        except ControlError as exc:
            return error(f"{exc.code}: {exc}")
        except FluxError as exc:
            return error(f"{exc.code}: {exc}")

    # -- verbs --------------------------------------------------------------

    def _map_to(self, args, actor):
        _need(args, "endpoint", "target")
        maps = self.c.map_to(args["endpoint"], args["target"], args.get("selector"))
        return [m.snapshot() for m in maps]

    def _map_lookup(self, args, actor):
        query = Query.from_json(args.get("query", []))
        return self.c.map_lookup(query, args.get("endpoint"), args.get("then_map", False))

    def _unmap(self, args, actor):
        _need(args, "endpoint")
        return {"closed": self.c.unmap(args["endpoint"], args.get("selector"))}

    def _remap(self, args, actor):
        _need(args, "endpoint")
        if "target_manifest" in args:
            target = Manifest.loads(args["target_manifest"])
        else:
            _need(args, "target")
            target = args["target"]
        return self.c.remap(args["endpoint"], target, args.get("selector"))

    def _divert(self, args, actor):
        _need(args, "endpoint", "target")
        return self.c.divert(args["endpoint"], args["target"], args.get("selector", "*"))

    def _get_manifest(self, args, actor):
        return self.c.manifest.to_json()

    def _get_mappings(self, args, actor):
        ep = args.get("endpoint")
        # control sessions (including this one) are only listed when asked for
        return [m.snapshot() for m in self.c.mappings(ep) if ep is not None or m.local_ep != "control"]

    def _manifest_add(self, args, actor):
        _need(args, "key", "value")
        return self.c.manifest_add(args["key"], args["value"]).to_json()["metadata"]

    def _credential_add(self, args, actor):
        _need(args, "credential")
        try:
            cred = Credential.from_json(args["credential"])
        except AccessError as exc:
            raise BadArgs(str(exc)) from None
        self.c.credential_add(cred, actor)
        return {"name": cred.name}

    def _credential_remove(self, args, actor):
        name = args.get("name") or args.get("credential", {}).get("name")
        if not name:
            raise BadArgs("missing argument: name")
        return {"closed": self.c.credential_remove(name, actor)}

    def _acl_entry(self, args) -> AclEntry:
        _need(args, "acl")
        try:
            return AclEntry.from_json(args["acl"])
        except AccessError as exc:
            raise BadArgs(str(exc)) from None

    def _acl_add(self, args, actor):
        self.c.acl_add(self._acl_entry(args), actor)
        return None

    def _acl_remove(self, args, actor):
        return {"closed": self.c.acl_remove(self._acl_entry(args), actor)}

    def _set_filter(self, args, actor):
        _need(args, "endpoint", "filter")
        f = _filter_from_args(args["filter"])
        self.c.set_filter(args["endpoint"], f)
        return f.to_json()

    def _clear_filter(self, args, actor):
        _need(args, "endpoint")
        return {"cleared": self.c.clear_filter(args["endpoint"], args.get("direction"))}

    def _load_com_module(self, args, actor):
        _need(args, "module")
        return self.c.activate_module(args["module"], args.get("address"))

    def _unload_com_module(self, args, actor):
        _need(args, "module")
        return self.c.deactivate_module(args["module"])

    def _load_access_module(self, args, actor):
        _need(args, "module")
        self.c.load_access_module(args["module"])
        return list(self.c.access.modules)

    def _add_rdc(self, args, actor):
        _need(args, "address")
        return self.c.add_rdc(args["address"])

    def _register_rdc(self, args, actor):
        return self.c.register_rdc()

    def _terminate(self, args, actor):
        import threading

        # answer first, then shut down
        threading.Timer(0.1, self.c.stop).start()
        return None


# --- issuer-side helpers ---------------------------------------------------


def control_call(c: "Component", peer, verb: str, args: dict, timeout_ms: int = 30_000) -> dict:
    """Map a private request endpoint to ``peer``'s control endpoint and run one command."""
    if verb not in VERB_OPS:
        raise UnknownVerb(f"unknown verb {verb!r}")
    ep = c._internal_endpoint(CLIENT_DESCRIPTOR)
    maps = c.map(ep.name, peer, remote_ep="control")
    m = maps[0]
    try:
        return c.request_on(m, {"verb": verb, "args": args}, timeout_ms)
    finally:
        c._close_mapping(m, "unmapped", notify=True)


def resolve_targets(c: "Component", target) -> list:
    """Turn a target designation into peers (manifests or URLs)."""
    if isinstance(target, Manifest):
        return [target]
    if not isinstance(target, str) or not target:
        raise BadArgs(f"bad target {target!r}")
    if "://" in target:
        return [target]
    if _IPV4_PORT.match(target):
        return ["tcp://" + target]
    query = selector_to_query(target) if ":" in target or target == "*" else \
        Query((Clause("component_id", "eq", target),))
    return [m for m in c.lookup(query)]


def _resolve_one(c: "Component", target):
    peers = resolve_targets(c, target)
    if not peers:
        raise UnknownComponent(f"cannot resolve target {target!r}")
    return peers


def _entry(component: str, status: str, reason: str | None = None, **extra) -> dict:
    out = {"component": component, "status": status}
    if reason:
        out["reason"] = reason
    out.update(extra)
    return out


def _status_for(exc: Exception) -> str:
    if isinstance(exc, (AuthFailed, LocalAclDenied, RemoteAclDenied)):
        return "deny"
    return "error"


def remap_self(c: "Component", local_ep: str, target) -> list[dict]:
    """Unmap ``local_ep`` from every peer, then map it to ``target``.

    The new target is resolved and checked for a compatible endpoint first,
    so a hopeless remap leaves the current mappings in place.
    """
    from .core import select_targets

    ep = c.endpoint(local_ep)
    peers = _resolve_one(c, target)
    for p in peers:
        if isinstance(p, Manifest):
            cands = select_targets(ep.descriptor, p, Query())
            if not cands:
                raise NoMatchingEndpoint(f"{p.component_id} has no endpoint pairing with {local_ep!r}")
            if not ep.descriptor.compatible_with(cands[0]):
                raise SchemaMismatch(f"{p.component_id}/{cands[0].name} has an incompatible schema")
    c.unmap(local_ep)
    out = []
    for p in peers:
        maps = c.map(local_ep, p)
        name = p.component_id if isinstance(p, Manifest) else maps[0].peer_component
        out.append(_entry(name, "ok", mappings=len(maps)))
    return out


def remap(c: "Component", local_ep: str, target, selector: str | None = None) -> list[dict]:
    """Remap ``local_ep``: on this component, or on every component ``selector`` resolves to."""
    if selector is None:
        return remap_self(c, local_ep, target)
    targets = resolve_targets(c, selector)
    args = {"endpoint": local_ep}
    if isinstance(target, Manifest):
        args["target_manifest"] = target.dumps()
    else:
        resolved = resolve_targets(c, target)
        if len(resolved) == 1 and isinstance(resolved[0], Manifest):
            args["target_manifest"] = resolved[0].dumps()
        else:
            args["target"] = target

    def one(peer) -> dict:
        name = peer.component_id if isinstance(peer, Manifest) else str(peer)
        try:
            if isinstance(peer, Manifest) and peer.component_id == c.component_id:
                tgt = Manifest.loads(args["target_manifest"]) if "target_manifest" in args else target
                remap_self(c, local_ep, tgt)
                return _entry(name, "ok")
            resp = control_call(c, peer, "remap", args)
        except FluxError as exc:
            return _entry(name, _status_for(exc), exc.code)
        return _entry(name, resp["status"], resp.get("reason"))

    return _fan(one, targets)


def _fan(fn, items) -> list:
    items = list(items)
    if not items:
        return []
    with ThreadPoolExecutor(max_workers=min(16, len(items))) as pool:
        return list(pool.map(fn, items))


def divert(c: "Component", local_ep: str, target, selector: str = "*") -> list[dict]:
    """Ask every peer mapped to ``local_ep`` to remap itself to ``target``."""
    ep = c.endpoint(local_ep)
    query = selector_to_query(selector)
    peers = _resolve_one(c, target)
    tgt = peers[0]
    maps = [m for m in ep.established()
            if m.peer_manifest is not None and manifest_matches(m.peer_manifest, query)]

    def one(m) -> dict:
        args = {"endpoint": m.peer_ep}
        if isinstance(tgt, Manifest):
            args["target_manifest"] = tgt.dumps()
        else:
            args["target"] = tgt
        try:
            resp = control_call(c, m.peer_manifest, "remap", args)
        except FluxError as exc:
            return _entry(m.peer_component, _status_for(exc), exc.code, endpoint=m.peer_ep)
        if resp["ok"] and not m.closed_event.wait(DIVERT_WAIT_S):
            c._close_mapping(m, "unmapped", notify=True)
        return _entry(m.peer_component, resp["status"], resp.get("reason"), endpoint=m.peer_ep)

    return _fan(one, maps)


def map_lookup(c: "Component", query: Query, endpoint: str | None, then_map: bool) -> dict:
    found = c.lookup(query)
    out: dict[str, Any] = {"manifests": [m.to_json() for m in found]}
    if then_map:
        if endpoint is None:
            raise BadArgs("then_map needs an endpoint")
        report = []
        for m in found:
            if m.component_id == c.component_id:
                continue
            try:
                maps = c.map(endpoint, m)
                report.append(_entry(m.component_id, "ok", mappings=len(maps)))
            except FluxError as exc:
                report.append(_entry(m.component_id, _status_for(exc), exc.code))
        out["mappings"] = report
    return out


def wait_until(pred, timeout: float = 10.0, interval: float = 0.02) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(interval)
    return bool(pred())
