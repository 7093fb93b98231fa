"""Message schemas, payload validation and the JSON wire envelope.

A schema is a closed structural type: an ordered set of named properties
plus the subset that is required. Field types are ``string``, ``number``,
``boolean``, nested objects (another :class:`MessageSchema`) and arrays of
any field type. Schemas serialize to the on-disk form::

    {"properties": {"date": {"type": "string"}}, "required": ["date"]}
"""

from __future__ import annotations

import enum
import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Union

from .errors import (
    InvalidUtf8,
    MalformedEnvelope,
    MissingKey,
    NotJson,
    SchemaError,
    UnknownStatus,
)

MAX_DEPTH = 32
MAX_PROPERTIES = 256

SCALAR_KINDS = ("string", "number", "boolean")


@dataclass(frozen=True)
class Scalar:
    kind: str

    def __post_init__(self):
        if self.kind not in SCALAR_KINDS:
            raise SchemaError(f"unknown scalar type {self.kind!r}")


@dataclass(frozen=True)
class ArrayOf:
    items: "FieldType"


STRING = Scalar("string")
NUMBER = Scalar("number")
BOOLEAN = Scalar("boolean")


@dataclass(frozen=True, eq=False)
class MessageSchema:
    """Structural description of an endpoint payload.

    Equality and hashing go through the canonical serialization, so two
    schemas that list the same properties in a different order compare
    equal.
    """

    properties: tuple = ()
    required: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        props = self.properties
        if isinstance(props, Mapping):
            props = tuple(props.items())
        object.__setattr__(self, "properties", tuple(props))
        object.__setattr__(self, "required", frozenset(self.required))
        check_well_formed(self)

    @classmethod
    def of(cls, properties: Mapping[str, "FieldType"], required: Iterable[str] = ()):
        return cls(tuple(properties.items()), frozenset(required))

    @functools.cached_property
    def fields(self) -> dict:
        return dict(self.properties)

    def to_json(self) -> dict:
        return {
            "properties": {name: _field_to_json(ft) for name, ft in self.properties},
            "required": sorted(self.required),
        }

    @classmethod
    def from_json(cls, obj: Any) -> "MessageSchema":
        return _schema_from_json(obj, depth=1)

    def canonical(self) -> bytes:
        return canonical_bytes(self)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, MessageSchema):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self):
        return hash(self.canonical())


FieldType = Union[Scalar, ArrayOf, MessageSchema]


def _field_to_json(ft: FieldType) -> dict:
    if isinstance(ft, Scalar):
        return {"type": ft.kind}
    if isinstance(ft, ArrayOf):
        return {"type": "array", "items": _field_to_json(ft.items)}
    if isinstance(ft, MessageSchema):
        out = {"type": "object"}
        out.update(ft.to_json())
        return out
    raise SchemaError(f"not a field type: {ft!r}")


def _field_from_json(obj: Any, depth: int) -> FieldType:
    if depth > MAX_DEPTH:
        raise SchemaError("schema nesting too deep")
    if not isinstance(obj, dict) or "type" not in obj:
        raise SchemaError(f"field type must be an object with a 'type': {obj!r}")
    kind = obj["type"]
    if kind in SCALAR_KINDS:
        return Scalar(kind)
    if kind == "array":
        if "items" not in obj:
            raise SchemaError("array type needs 'items'")
        return ArrayOf(_field_from_json(obj["items"], depth + 1))
    if kind == "object":
        return _schema_from_json(obj, depth)
    raise SchemaError(f"unknown field type {kind!r}")


def _schema_from_json(obj: Any, depth: int) -> MessageSchema:
    if not isinstance(obj, dict):
        raise SchemaError("schema must be a JSON object")
    props = obj.get("properties", {})
    required = obj.get("required", [])
    if not isinstance(props, dict):
        raise SchemaError("'properties' must be an object")
    if not isinstance(required, list) or not all(isinstance(r, str) for r in required):
        raise SchemaError("'required' must be a list of names")
    if len(props) > MAX_PROPERTIES:
        raise SchemaError("too many properties")
    fields = tuple((name, _field_from_json(ft, depth + 1)) for name, ft in props.items())
    return MessageSchema(fields, frozenset(required))


def check_well_formed(schema: MessageSchema, depth: int = 1) -> None:
    if depth > MAX_DEPTH:
        raise SchemaError("schema nesting too deep")
    if len(schema.properties) > MAX_PROPERTIES:
        raise SchemaError("too many properties")
    names = [name for name, _ in schema.properties]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate property name")
    for name in names:
        if not isinstance(name, str) or not name:
            raise SchemaError(f"bad property name {name!r}")
    missing = schema.required - set(names)
    if missing:
        raise SchemaError(f"required names not in properties: {sorted(missing)}")
    for _, ft in schema.properties:
        _check_field(ft, depth + 1)


def _check_field(ft: FieldType, depth: int) -> None:
    if depth > MAX_DEPTH:
        raise SchemaError("schema nesting too deep")
    if isinstance(ft, ArrayOf):
        _check_field(ft.items, depth + 1)
    elif isinstance(ft, MessageSchema):
        # nested schemas validated themselves on construction; only depth matters here
        check_well_formed(ft, depth)
    elif not isinstance(ft, Scalar):
        raise SchemaError(f"not a field type: {ft!r}")


def canonical_bytes(schema: MessageSchema) -> bytes:
    return json.dumps(schema.to_json(), sort_keys=True, separators=(",", ":")).encode()


def schemas_compatible(a: MessageSchema, b: MessageSchema) -> bool:
    """Structural equality of canonical forms (no subtyping)."""
    return canonical_bytes(a) == canonical_bytes(b)


# --- validation ------------------------------------------------------------


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


_VALID = ValidationResult()


def _is_number(v) -> bool:
    if isinstance(v, bool):
        return False
    if isinstance(v, int):
        return True
    return isinstance(v, float) and math.isfinite(v)


def _check_value(value, ft: FieldType, path: str, out: list) -> None:
    if isinstance(ft, Scalar):
        ok = (
            (ft.kind == "string" and isinstance(value, str))
            or (ft.kind == "number" and _is_number(value))
            or (ft.kind == "boolean" and isinstance(value, bool))
        )
        if not ok:
            out.append(f"type:{path}")
    elif isinstance(ft, ArrayOf):
        if not isinstance(value, list):
            out.append(f"type:{path}")
            return
        for i, item in enumerate(value):
            _check_value(item, ft.items, f"{path}[{i}]", out)
    else:
        if not isinstance(value, dict):
            out.append(f"type:{path}")
            return
        _check_object(value, ft, path + ".", out)


def _check_object(obj: dict, schema: MessageSchema, prefix: str, out: list) -> None:
    fields = schema.fields
    if len(obj) < len(schema.required) or not schema.required.issubset(obj):
        for name in schema.required:
            if name not in obj:
                out.append(f"missing:{prefix}{name}")
    for name, value in obj.items():
        ft = fields.get(name)
        if ft is None:
            out.append(f"unknown:{prefix}{name}")
        else:
            _check_value(value, ft, prefix + name, out)


def validate(message: Any, schema: MessageSchema) -> ValidationResult:
    """Check a payload against a schema; unknown fields are violations."""
    if not isinstance(message, dict):
        return ValidationResult(("not-an-object",))
    out: list[str] = []
    _check_object(message, schema, "", out)
    return ValidationResult(tuple(sorted(out))) if out else _VALID


def load_schema_file(path) -> MessageSchema:
    with open(path, encoding="utf-8") as fh:
        return MessageSchema.from_json(json.load(fh))


# --- envelope --------------------------------------------------------------


class StatusCode(enum.IntEnum):
    HELLO = 1
    AUTH_CHALLENGE = 2
    AUTH_RESPONSE = 3
    AUTH_RESULT = 4
    MAP_REQUEST = 5
    MAP_ACCEPT = 6
    MAP_REJECT = 7
    UNMAP = 8
    DATA = 9
    REQUEST = 10
    RESPONSE = 11
    RESPONSE_FINAL = 12
    CONTROL_REQUEST = 13
    CONTROL_RESPONSE = 14
    STREAM = 15


HANDSHAKE_STATUSES = frozenset(range(StatusCode.HELLO, StatusCode.UNMAP + 1))
DATA_STATUSES = frozenset(
    {
        StatusCode.DATA,
        StatusCode.REQUEST,
        StatusCode.RESPONSE,
        StatusCode.RESPONSE_FINAL,
        StatusCode.CONTROL_REQUEST,
        StatusCode.CONTROL_RESPONSE,
        StatusCode.STREAM,
    }
)


@dataclass(frozen=True)
class Envelope:
    """Wire record ``{"msg_id", "status", "msg_JSON"}``.

    Handshake frames (statuses 1-8) may carry a ``ctrl`` object in place
    of ``msg_JSON``.
    """

    msg_id: str
    status: int
    msg_json: dict | None = None
    ctrl: dict | None = None

    def __post_init__(self):
        if not isinstance(self.msg_id, str) or not self.msg_id.isdigit():
            raise MalformedEnvelope(f"msg_id must be a decimal string, got {self.msg_id!r}")
        if self.status not in StatusCode._value2member_map_:
            raise UnknownStatus(self.status)
        if (self.msg_json is None) == (self.ctrl is None):
            raise MalformedEnvelope("exactly one of msg_JSON / ctrl is required")
        if self.ctrl is not None and self.status not in HANDSHAKE_STATUSES:
            raise MalformedEnvelope("ctrl is only allowed on handshake statuses")
        body = self.msg_json if self.msg_json is not None else self.ctrl
        if not isinstance(body, dict):
            raise MalformedEnvelope("envelope body must be an object")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"msg_id": self.msg_id, "status": int(self.status)}
        if self.msg_json is not None:
            out["msg_JSON"] = self.msg_json
        else:
            out["ctrl"] = self.ctrl
        return out


_ENCODER = json.JSONEncoder(ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def encode_envelope(e: Envelope) -> bytes:
    return _ENCODER.encode(e.to_dict()).encode("utf-8")


def decode_envelope(data: bytes) -> Envelope:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidUtf8(str(exc)) from None
    try:
        obj = json.loads(text)
    except ValueError as exc:
        raise NotJson(str(exc)) from None
    if not isinstance(obj, dict):
        raise MalformedEnvelope("envelope must be a JSON object")
    for key in ("msg_id", "status"):
        if key not in obj:
            raise MissingKey(key)
    status = obj["status"]
    if isinstance(status, bool) or not isinstance(status, int):
        raise UnknownStatus(status)
    if status not in StatusCode._value2member_map_:
        raise UnknownStatus(status)
    if "msg_JSON" not in obj and not ("ctrl" in obj and status in HANDSHAKE_STATUSES):
        raise MissingKey("msg_JSON")
    extra = set(obj) - {"msg_id", "status", "msg_JSON", "ctrl"}
    if extra or ("msg_JSON" in obj and "ctrl" in obj):
        raise MalformedEnvelope(f"unexpected keys {sorted(extra) or ['ctrl']}")
    return Envelope(obj["msg_id"], status, obj.get("msg_JSON"), obj.get("ctrl"))
