"""Credentials, challenge-response authentication and per-endpoint ACLs.

Two access modules are available:

``psk``
    32-byte pre-shared key; the principal is the credential name.
``password``
    username/password; the principal is the username. The password itself
    never crosses the wire, peers prove knowledge of it with an HMAC over
    fresh nonces, exactly like ``psk``.

ACLs are default-deny. An entry ``(endpoint, operation, principal)`` grants
``operation`` on ``endpoint`` (or ``"*"`` for every endpoint) to any peer
holding ``principal`` (or ``"*"`` for any authenticated peer).
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable

from .errors import AccessError, DuplicateCredential, UnknownAccessModule, UnknownEntry

ACCESS_MODULES = ("password", "psk")
OPERATIONS = (
    "map",
    "remap",
    "unmap",
    "read_manifest",
    "set_filter",
    "acl_modify",
    "credential_modify",
    "module_control",
    "terminate",
)
PSK_BYTES = 32


@dataclass(frozen=True)
class Credential:
    module_id: str
    name: str
    username: str | None = None
    password: str | None = field(default=None, repr=False)
    key: bytes | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.module_id not in ACCESS_MODULES:
            raise UnknownAccessModule(f"unknown access module {self.module_id!r}")
        if not self.name:
            raise AccessError("credential name must be non-empty")
        if self.module_id == "psk":
            if not isinstance(self.key, bytes) or len(self.key) != PSK_BYTES:
                raise AccessError("psk credentials need a 32-byte key")
        elif not self.username or self.password is None:
            raise AccessError("password credentials need username and password")

    @classmethod
    def psk(cls, name: str, key: bytes | None = None) -> "Credential":
        return cls("psk", name, key=key if key is not None else secrets.token_bytes(PSK_BYTES))

    @classmethod
    def for_password(cls, name: str, username: str, password: str) -> "Credential":
        return cls("password", name, username=username, password=password)

    @property
    def principal(self) -> str:
        return self.name if self.module_id == "psk" else self.username

    def proof_key(self) -> bytes:
        if self.module_id == "psk":
            return self.key
        return hashlib.sha256(f"flux-password\x00{self.username}\x00{self.password}".encode()).digest()

    def secret_fragments(self) -> list[bytes]:
        """Byte strings that must never appear on the wire (used by tests)."""
        if self.module_id == "psk":
            return [self.key, self.key.hex().encode()]
        return [self.password.encode()]

    def to_json(self) -> dict:
        out = {"module_id": self.module_id, "name": self.name}
        if self.module_id == "psk":
            out["key_hex"] = self.key.hex()
        else:
            out["username"] = self.username
            out["password"] = self.password
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Credential":
        try:
            if obj["module_id"] == "psk":
                return cls("psk", obj["name"], key=bytes.fromhex(obj["key_hex"]))
            return cls(obj["module_id"], obj["name"], username=obj.get("username"),
                       password=obj.get("password"))
        except (KeyError, ValueError, TypeError) as exc:
            raise AccessError(f"bad credential record: {exc}") from None


def load_credentials(path) -> list[Credential]:
    """Read a credential bootstrap file: a JSON list of records (or one record)."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    return [Credential.from_json(c) for c in data]


@dataclass(frozen=True, order=True)
class Identity:
    module_id: str
    principal: str


@dataclass(frozen=True, order=True)
class AclEntry:
    endpoint: str
    operation: str
    principal: str

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise AccessError(f"unknown ACL operation {self.operation!r}")
        if not self.endpoint or not self.principal:
            raise AccessError("ACL entries need an endpoint and a principal")

    def to_json(self) -> dict:
        return {"endpoint": self.endpoint, "operation": self.operation, "principal": self.principal}

    @classmethod
    def from_json(cls, obj) -> "AclEntry":
        if isinstance(obj, (list, tuple)):
            return cls(*obj)
        try:
            return cls(obj["endpoint"], obj["operation"], obj["principal"])
        except (KeyError, TypeError) as exc:
            raise AccessError(f"bad ACL entry: {exc}") from None


@dataclass(frozen=True)
class AclDecision:
    allowed: bool
    reason: str = ""

    def __bool__(self):
        return self.allowed


def acl_check(entries: Iterable[AclEntry], endpoint: str, operation: str,
              identities: Iterable[Identity]) -> AclDecision:
    principals = {i.principal for i in identities}
    if not principals:
        return AclDecision(False, "unauthenticated")
    for e in entries:
        if e.operation != operation:
            continue
        if e.endpoint != "*" and e.endpoint != endpoint:
            continue
        if e.principal == "*" or e.principal in principals:
            return AclDecision(True, "granted")
    return AclDecision(False, "default-deny")


def mac(key: bytes, role: str, nonce_i: str, nonce_a: str, principal: str) -> str:
    msg = "\x00".join(("flux-auth", role, nonce_i, nonce_a, principal)).encode()
    return hmac.new(key, msg, hashlib.sha256).hexdigest()


def new_nonce() -> str:
    return secrets.token_hex(16)


class AuditLog:
    """Append-only log of access-control mutations, newline-delimited JSON."""

    def __init__(self, path=None, clock=time.time):
        self.path = path
        self.records: list[dict] = []
        self._clock = clock
        self._lock = threading.Lock()

    def append(self, actor: str, action: str, detail) -> dict:
        rec = {"ts": self._clock(), "actor": actor, "action": action, "detail": detail}
        with self._lock:
            self.records.append(rec)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec


class AccessStore:
    """Credential and ACL store for one component.

    Mutations are expected to run under the owning component's mutation lock.
    """

    def __init__(self, credentials=(), acl=(), modules=ACCESS_MODULES, audit: AuditLog | None = None):
        self.credentials: dict[str, Credential] = {}
        self.acl: list[AclEntry] = []
        self.modules: list[str] = []
        self.audit = audit or AuditLog()
        for m in modules:
            self.load_module(m)
        for c in credentials:
            self._add_credential(c)
        for e in acl:
            e = e if isinstance(e, AclEntry) else AclEntry.from_json(e)
            if e not in self.acl:
                self.acl.append(e)

    # -- modules ------------------------------------------------------------

    def load_module(self, module_id: str) -> None:
        if module_id not in ACCESS_MODULES:
            raise UnknownAccessModule(f"unknown access module {module_id!r}")
        if module_id not in self.modules:
            self.modules.append(module_id)

    # -- credentials --------------------------------------------------------

    def _add_credential(self, c: Credential) -> None:
        if c.name in self.credentials:
            raise DuplicateCredential(f"credential {c.name!r} already present")
        self.credentials[c.name] = c

    def credential_add(self, c: Credential, actor: str = "local") -> None:
        self._add_credential(c)
        self.audit.append(actor, "credential_add", {"module_id": c.module_id, "name": c.name})

    def credential_remove(self, name: str, actor: str = "local") -> Credential:
        if isinstance(name, Credential):
            name = name.name
        try:
            c = self.credentials.pop(name)
        except KeyError:
            raise UnknownEntry(f"no credential named {name!r}") from None
        self.audit.append(actor, "credential_remove", {"module_id": c.module_id, "name": name})
        return c

    def identities(self) -> tuple:
        return tuple(sorted({(c.module_id, c.principal) for c in self.credentials.values()}))

    def principals(self, module_id: str) -> list[str]:
        return sorted({c.principal for c in self.credentials.values() if c.module_id == module_id})

    def _credential_for(self, module_id: str, principal: str) -> Credential | None:
        for c in self.credentials.values():
            if c.module_id == module_id and c.principal == principal:
                return c
        return None

    def holds(self, identity: Identity) -> bool:
        return self._credential_for(identity.module_id, identity.principal) is not None

    def prove(self, module_id, principal, role, nonce_i, nonce_a) -> str | None:
        c = self._credential_for(module_id, principal)
        if c is None:
            return None
        return mac(c.proof_key(), role, nonce_i, nonce_a, principal)

    def verify(self, module_id, principal, role, nonce_i, nonce_a, proof) -> bool:
        expected = self.prove(module_id, principal, role, nonce_i, nonce_a)
        if expected is None or not isinstance(proof, str):
            return False
        return hmac.compare_digest(expected, proof)

    # -- ACL ----------------------------------------------------------------

    def acl_add(self, e: AclEntry, actor: str = "local") -> None:
        if e not in self.acl:
            self.acl.append(e)
        self.audit.append(actor, "acl_add", e.to_json())

    def acl_remove(self, e: AclEntry, actor: str = "local") -> None:
        try:
            self.acl.remove(e)
        except ValueError:
            raise UnknownEntry(f"no ACL entry {e}") from None
        self.audit.append(actor, "acl_remove", e.to_json())

    def check(self, endpoint: str, operation: str, identities) -> AclDecision:
        return acl_check(self.acl, endpoint, operation, identities)
