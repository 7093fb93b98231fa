import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flux.access import (
    OPERATIONS,
    AccessStore,
    AclEntry,
    AuditLog,
    Credential,
    Identity,
    acl_check,
    mac,
)
from flux.errors import AccessError, DuplicateCredential, UnknownAccessModule, UnknownEntry

EPS = ("a", "b", "*")
PRINCIPALS = ("p", "q", "*")

entries = st.lists(st.builds(AclEntry, st.sampled_from(EPS), st.sampled_from(OPERATIONS[:3]),
                             st.sampled_from(PRINCIPALS)), max_size=6)
ids = st.frozensets(st.builds(Identity, st.just("psk"), st.sampled_from(("p", "q", "r"))), max_size=3)


def brute_force(acl, endpoint, op, identities):
    return bool(identities) and any(
        e.operation == op and e.endpoint in ("*", endpoint) and (e.principal == "*" or e.principal == i.principal)
        for e, i in itertools.product(acl, identities))


@given(entries, st.sampled_from(("a", "b")), st.sampled_from(OPERATIONS[:3]), ids)
def test_acl_check_oracle(acl, endpoint, op, identities):
    assert bool(acl_check(acl, endpoint, op, identities)) == brute_force(acl, endpoint, op, identities)


def test_default_deny_and_unauthenticated():
    assert acl_check([], "a", "map", {Identity("psk", "p")}).reason == "default-deny"
    assert acl_check([AclEntry("*", "map", "*")], "a", "map", set()).reason == "unauthenticated"


def test_mac_is_bound_to_every_field():
    key = b"k" * 32
    base = mac(key, "initiator", "n1", "n2", "p")
    for args in [("acceptor", "n1", "n2", "p"), ("initiator", "n2", "n1", "p"), ("initiator", "n1", "n2", "q")]:
        assert mac(key, *args) != base
    assert mac(b"j" * 32, "initiator", "n1", "n2", "p") != base


def test_credential_records():
    c = Credential.psk("team")
    assert Credential.from_json(json.loads(json.dumps(c.to_json()))) == c
    p = Credential.for_password("login", "alice", "hunter2")
    assert p.principal == "alice" and Credential.from_json(p.to_json()) == p
    assert "hunter2" not in repr(p) and c.key.hex() not in repr(c)
    with pytest.raises(AccessError):
        Credential("psk", "short", key=b"x")
    with pytest.raises(UnknownAccessModule):
        Credential("kerberos", "x")
    with pytest.raises(AccessError):
        AclEntry("a", "fly", "p")


def test_store_mutations_are_audited(tmp_path):
    log = tmp_path / "audit.jsonl"
    store = AccessStore(audit=AuditLog(log))
    c = Credential.psk("team")
    store.credential_add(c, actor="owner")
    with pytest.raises(DuplicateCredential):
        store.credential_add(c)
    e = AclEntry("a", "map", "team")
    store.acl_add(e, actor="owner")
    store.acl_remove(e, actor="owner")
    with pytest.raises(UnknownEntry):
        store.acl_remove(e)
    store.credential_remove("team", actor="owner")
    lines = [json.loads(x) for x in log.read_text().splitlines()]
    assert [r["action"] for r in lines] == ["credential_add", "acl_add", "acl_remove", "credential_remove"]
    assert all(r["actor"] == "owner" for r in lines)
    assert c.key.hex() not in log.read_text()


def test_prove_and_verify():
    c = Credential.psk("team")
    a, b = AccessStore([c]), AccessStore([c])
    proof = a.prove("psk", "team", "initiator", "x", "y")
    assert b.verify("psk", "team", "initiator", "x", "y", proof)
    assert not b.verify("psk", "team", "acceptor", "x", "y", proof)
    assert not AccessStore([Credential.psk("team")]).verify("psk", "team", "initiator", "x", "y", proof)
    assert a.prove("psk", "nobody", "initiator", "x", "y") is None
