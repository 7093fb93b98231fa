"""Component manifests, endpoint descriptors and the manifest query language."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from .errors import ManifestError, MalformedDescriptor, QueryError, SchemaError, SelectorError
from .schema import MessageSchema

EP_TYPES = (
    "source",
    "sink",
    "request",
    "response",
    "response_plus_server",
    "response_plus_client",
    "stream_source",
    "stream_sink",
)
STREAM_TYPES = frozenset({"stream_source", "stream_sink"})
TWO_SCHEMA_TYPES = frozenset(
    {"request", "response", "response_plus_server", "response_plus_client"}
)

# which endpoint kind may be mapped to which
PAIRS = {
    "source": "sink",
    "sink": "source",
    "request": "response",
    "response": "request",
    "response_plus_client": "response_plus_server",
    "response_plus_server": "response_plus_client",
    "stream_source": "stream_sink",
    "stream_sink": "stream_source",
}


def can_pair(a: str, b: str) -> bool:
    return PAIRS.get(a) == b


@dataclass(frozen=True)
class EndpointDescriptor:
    name: str
    ep_type: str
    msg_schema: MessageSchema | None = None
    reply_schema: MessageSchema | None = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise MalformedDescriptor("endpoint name must be a non-empty string")
        if self.ep_type not in EP_TYPES:
            raise MalformedDescriptor(f"unknown endpoint type {self.ep_type!r}")
        if self.ep_type in STREAM_TYPES:
            if self.msg_schema is not None or self.reply_schema is not None:
                raise MalformedDescriptor("stream endpoints carry no schema")
        elif self.msg_schema is None:
            raise MalformedDescriptor(f"{self.ep_type} endpoint {self.name!r} needs msg_schema")
        if self.ep_type in TWO_SCHEMA_TYPES and self.reply_schema is None:
            raise MalformedDescriptor(f"{self.ep_type} endpoint {self.name!r} needs reply_schema")
        if self.ep_type in ("source", "sink") and self.reply_schema is not None:
            raise MalformedDescriptor("source/sink endpoints carry one schema")

    def to_json(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "ep_type": self.ep_type}
        if self.msg_schema is not None:
            out["msg_schema"] = self.msg_schema.to_json()
        if self.reply_schema is not None:
            out["reply_schema"] = self.reply_schema.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "EndpointDescriptor":
        try:
            ms = obj.get("msg_schema")
            rs = obj.get("reply_schema")
            return cls(
                obj["name"],
                obj["ep_type"],
                MessageSchema.from_json(ms) if ms is not None else None,
                MessageSchema.from_json(rs) if rs is not None else None,
            )
        except (KeyError, TypeError, AttributeError, SchemaError) as exc:
            raise MalformedDescriptor(f"bad endpoint descriptor: {exc}") from None

    def schema_hash(self) -> str:
        parts = [s.digest() if s is not None else "-" for s in (self.msg_schema, self.reply_schema)]
        return parts[0] if self.reply_schema is None else ":".join(parts)

    def compatible_with(self, other: "EndpointDescriptor") -> bool:
        from .schema import schemas_compatible

        if not can_pair(self.ep_type, other.ep_type):
            return False
        if self.ep_type in STREAM_TYPES:
            return True
        if not schemas_compatible(self.msg_schema, other.msg_schema):
            return False
        if self.reply_schema is not None:
            return schemas_compatible(self.reply_schema, other.reply_schema)
        return True


@dataclass(frozen=True)
class Manifest:
    component_id: str
    addresses: tuple = ()  # (module_id, "host:port")
    comm_modules: tuple = ()
    access_modules: tuple = ()
    identities: tuple = ()  # (module_id, principal)
    metadata: dict = field(default_factory=dict)
    endpoints: tuple = ()

    def __post_init__(self):
        if not isinstance(self.component_id, str) or not self.component_id:
            raise ManifestError("component_id must be a non-empty string")
        object.__setattr__(self, "addresses", tuple(tuple(a) for a in self.addresses))
        object.__setattr__(self, "comm_modules", tuple(self.comm_modules))
        object.__setattr__(self, "access_modules", tuple(self.access_modules))
        object.__setattr__(self, "identities", tuple(tuple(i) for i in self.identities))
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        object.__setattr__(self, "metadata", dict(self.metadata))
        for addr in self.addresses:
            if len(addr) != 2:
                raise ManifestError(f"bad address entry {addr!r}")
            if addr[0] not in self.comm_modules:
                raise ManifestError(f"address {addr!r} uses unlisted module {addr[0]!r}")
        for k, v in self.metadata.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ManifestError("metadata keys and values must be strings")
        names = [ep.name for ep in self.endpoints]
        if len(set(names)) != len(names):
            raise ManifestError("duplicate endpoint names")

    def endpoint(self, name: str) -> EndpointDescriptor | None:
        for ep in self.endpoints:
            if ep.name == name:
                return ep
        return None

    def address_for(self, module_id: str) -> str | None:
        for mod, addr in self.addresses:
            if mod == module_id:
                return addr
        return None

    def to_json(self) -> dict:
        return {
            "component_id": self.component_id,
            "addresses": [{"module": m, "address": a} for m, a in self.addresses],
            "comm_modules": list(self.comm_modules),
            "access_modules": list(self.access_modules),
            "identities": [{"module": m, "principal": p} for m, p in self.identities],
            "metadata": dict(sorted(self.metadata.items())),
            "endpoints": [ep.to_json() for ep in self.endpoints],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, obj: Any) -> "Manifest":
        if not isinstance(obj, dict):
            raise ManifestError("manifest must be a JSON object")
        try:
            return cls(
                component_id=obj["component_id"],
                addresses=tuple((a["module"], a["address"]) for a in obj.get("addresses", [])),
                comm_modules=tuple(obj.get("comm_modules", [])),
                access_modules=tuple(obj.get("access_modules", [])),
                identities=tuple(
                    (i["module"], i["principal"]) for i in obj.get("identities", [])
                ),
                metadata=obj.get("metadata", {}),
                endpoints=tuple(EndpointDescriptor.from_json(e) for e in obj.get("endpoints", [])),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from None
        except MalformedDescriptor as exc:
            raise ManifestError(str(exc)) from None

    @classmethod
    def loads(cls, text: str) -> "Manifest":
        try:
            return cls.from_json(json.loads(text))
        except ValueError as exc:
            raise ManifestError(f"manifest is not JSON: {exc}") from None


def manifest_add(m: Manifest, key: str, value: str) -> Manifest:
    if not key:
        raise ManifestError("metadata key must be non-empty")
    meta = dict(m.metadata)
    meta[key] = value
    return replace(m, metadata=meta)


def load_manifest_file(path) -> Manifest:
    with open(path, encoding="utf-8") as fh:
        return Manifest.from_json(json.load(fh))


# --- queries ---------------------------------------------------------------

OPS = ("eq", "exists", "gt", "lt")
ENDPOINT_PATHS = ("ep_name", "ep_type", "schema_hash")


@dataclass(frozen=True)
class Clause:
    path: str
    op: str
    value: Any = None

    def __post_init__(self):
        if self.op not in OPS:
            raise QueryError(f"unknown operator {self.op!r}")
        if not isinstance(self.path, str) or not self.path:
            raise QueryError("clause path must be a non-empty string")

    def to_json(self) -> dict:
        return {"path": self.path, "op": self.op, "value_json": json.dumps(self.value)}

    @classmethod
    def from_json(cls, obj: dict) -> "Clause":
        try:
            value = json.loads(obj["value_json"]) if "value_json" in obj else obj.get("value")
            return cls(obj["path"], obj["op"], value)
        except (KeyError, TypeError, ValueError) as exc:
            raise QueryError(f"bad clause {obj!r}: {exc}") from None


@dataclass(frozen=True)
class Query:
    clauses: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))

    def __and__(self, other: "Query") -> "Query":
        return Query(self.clauses + other.clauses)

    def to_json(self) -> list:
        return [c.to_json() for c in self.clauses]

    @classmethod
    def from_json(cls, obj: Any) -> "Query":
        if not isinstance(obj, list):
            raise QueryError("query must be a list of clauses")
        return cls(tuple(Clause.from_json(c) for c in obj))

    def endpoint_clauses(self) -> tuple:
        return tuple(c for c in self.clauses if c.path in ENDPOINT_PATHS)

    def component_clauses(self) -> tuple:
        return tuple(c for c in self.clauses if c.path not in ENDPOINT_PATHS)


def compare(field_value: Any, op: str, value: Any, present: bool = True) -> bool:
    """Evaluate one operator. Missing fields only satisfy nothing."""
    if op == "exists":
        return present
    if not present:
        return False
    if op == "eq":
        return field_value == value
    a, b = _as_number(field_value), _as_number(value)
    if a is None or b is None:
        return False
    return a > b if op == "gt" else a < b


def _as_number(v):
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return None
    return None


def _text(v) -> Any:
    # manifest fields are strings; compare query literals textually
    if isinstance(v, str) or v is None:
        return v
    return json.dumps(v)


def _check_path(path: str) -> None:
    if path in ("component_id",) + ENDPOINT_PATHS:
        return
    if path.startswith("metadata.") and len(path) > len("metadata."):
        return
    raise QueryError(f"unknown query path {path!r}")


def endpoint_matches(ep: EndpointDescriptor, clauses: Iterable[Clause]) -> bool:
    for c in clauses:
        _check_path(c.path)
        if c.path == "ep_name":
            fv = ep.name
        elif c.path == "ep_type":
            fv = ep.ep_type
        elif c.path == "schema_hash":
            fv = ep.schema_hash()
        else:
            continue
        val = c.value if c.op in ("gt", "lt") else _text(c.value)
        if not compare(fv, c.op, val):
            return False
    return True


def _clause_holds(m: Manifest, c: Clause) -> bool:
    if c.path == "component_id":
        val = c.value if c.op in ("gt", "lt") else _text(c.value)
        return compare(m.component_id, c.op, val)
    if c.path.startswith("metadata."):
        key = c.path[len("metadata."):]
        val = c.value if c.op in ("gt", "lt") else _text(c.value)
        return compare(m.metadata.get(key), c.op, val, key in m.metadata)
    return any(endpoint_matches(ep, (c,)) for ep in m.endpoints)


def manifest_matches(m: Manifest, q: Query) -> bool:
    """Conjunction of clauses; each endpoint clause holds if any endpoint satisfies it."""
    for c in q.clauses:
        _check_path(c.path)
    return all(_clause_holds(m, c) for c in q.clauses)


def selector_to_query(selector: str) -> Query:
    """``"*"`` matches all, ``"component:<id>"`` one component, ``"key:value"`` metadata."""
    if selector == "*":
        return Query()
    if not isinstance(selector, str) or ":" not in selector:
        raise SelectorError(f"malformed selector {selector!r}")
    kind, _, value = selector.partition(":")
    if not kind or not value:
        raise SelectorError(f"malformed selector {selector!r}")
    if kind == "component":
        return Query((Clause("component_id", "eq", value),))
    return Query((Clause(f"metadata.{kind}", "eq", value),))
