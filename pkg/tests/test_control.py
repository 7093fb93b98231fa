import pytest

from flux import AclEntry, Component, Credential, Filter, Query
from flux.access import Identity, acl_check
from flux.control import CLIENT_DESCRIPTOR, VERB_OPS, VERBS, gate_endpoint, wait_until
from flux.manifest import Clause
from flux.rdc import RdcService

from .conftest import KEY, grant_all, sink, source

ADMIN = Credential.psk("admin")
GUEST = Credential.psk("guest")
EXTRA = Credential.psk("extra")
NEW = Credential.psk("new")
DJ = Credential.psk("dj")
NOWHERE = "tcp://127.0.0.1:9"
FIND_P = [Clause("component_id", "eq", "P").to_json()]


class World:
    """An RDC and a peer ``P`` shared by the two copies of ``T`` being compared."""

    def __init__(self):
        self.rdc = RdcService.create(credentials=[KEY])
        self.peer = Component("P", credentials=[KEY], acl=grant_all(), listen=["tcp://127.0.0.1:0"])
        self.peer.create_endpoint(source())
        self.peer.start()
        self.rdc.catalog.register(self.peer.manifest, 3600)
        self.operator = Component("operator", credentials=[ADMIN])
        self.operator.transports.activate("tcp")
        self.guest = Component("guest", credentials=[GUEST])
        self.guest.transports.activate("tcp")
        self.made: list[Component] = []

    def target(self) -> Component:
        t = Component("T", credentials=[KEY, ADMIN, GUEST, EXTRA], access_modules=("psk",),
                      acl=grant_all() + grant_all("admin"), metadata={"room": "1"},
                      listen=["tcp://127.0.0.1:0"], rdcs=[self.rdc.url], rdc_period_s=3600)
        t.create_endpoint(sink())
        t.start()
        self.made.append(t)
        return t

    def close(self):
        for c in self.made + [self.peer, self.operator, self.guest]:
            c.stop()
        self.rdc.stop()


def _premap(t):
    t.map_to("in", "P")


def _prefilter(t):
    t.set_filter("in", Filter.rate("recv", 10))


def _preudp(t):
    t.activate_module("udp")


# verb -> (setup, args, local call)
CASES = {
    "map_to": (None, {"endpoint": "in", "target": "P"}, lambda t: t.map_to("in", "P")),
    "map_lookup": (None, {"query": FIND_P, "endpoint": "in", "then_map": True},
                   lambda t: t.map_lookup(Query.from_json(FIND_P), "in", True)),
    "unmap": (_premap, {"endpoint": "in"}, lambda t: t.unmap("in")),
    "remap": (None, {"endpoint": "in", "target": "P"}, lambda t: t.remap("in", "P")),
    "divert": (None, {"endpoint": "in", "target": "P"}, lambda t: t.divert("in", "P")),
    "get_manifest": (None, {}, lambda t: t.manifest),
    "get_mappings": (_premap, {}, lambda t: t.mappings()),
    "manifest_add": (None, {"key": "group", "value": "g"}, lambda t: t.manifest_add("group", "g")),
    "credential_add": (None, {"credential": NEW.to_json()}, lambda t: t.credential_add(NEW)),
    "credential_remove": (None, {"name": "extra"}, lambda t: t.credential_remove("extra")),
    "acl_add": (None, {"acl": {"endpoint": "in", "operation": "map", "principal": "x"}},
                lambda t: t.acl_add(AclEntry("in", "map", "x"))),
    "acl_remove": (None, {"acl": {"endpoint": "*", "operation": "map", "principal": "team"}},
                   lambda t: t.acl_remove(AclEntry("*", "map", "team"))),
    "set_filter": (None, {"endpoint": "in", "filter": {"kind": "rate", "direction": "recv", "min_interval_ms": 10}},
                   lambda t: t.set_filter("in", Filter.rate("recv", 10))),
    "clear_filter": (_prefilter, {"endpoint": "in"}, lambda t: t.clear_filter("in")),
    "load_com_module": (None, {"module": "udp"}, lambda t: t.activate_module("udp")),
    "unload_com_module": (_preudp, {"module": "udp"}, lambda t: t.deactivate_module("udp")),
    "load_access_module": (None, {"module": "password"}, lambda t: t.load_access_module("password")),
    "add_rdc": (None, {"address": NOWHERE}, lambda t: t.add_rdc(NOWHERE)),
    "register_rdc": (None, {}, lambda t: t.register_rdc()),
    "terminate": (None, {}, lambda t: t.stop()),
}


def equivalence_case(world: World, verb: str) -> tuple[str, str, dict]:
    setup, args, local = CASES[verb]
    t_local, t_remote = world.target(), world.target()
    for t in (t_local, t_remote):
        if setup:
            setup(t)
    local(t_local)
    resp = world.operator.control_call(t_remote.url, verb, args)
    if verb == "terminate":
        t_remote.wait_terminated(5)
    return t_local.state_hash(), t_remote.state_hash(), resp


def deny_case(world: World, verb: str) -> tuple[str, str, dict]:
    setup, args, _ = CASES[verb]
    t = world.target()
    if setup:
        setup(t)
    before = t.state_hash()
    resp = world.guest.control_call(t.url, verb, args)
    return before, t.state_hash(), resp


def run_control_equivalence() -> dict:
    """verb -> (equivalent, deny leaves state unchanged)."""
    world = World()
    try:
        out = {}
        for verb in VERBS:
            a, b, resp = equivalence_case(world, verb)
            before, after, deny = deny_case(world, verb)
            out[verb] = (a == b and resp["status"] == "ok", before == after and deny["status"] == "deny")
        return out
    finally:
        world.close()


@pytest.fixture(scope="module")
def world():
    w = World()
    yield w
    w.close()


def test_cases_cover_every_verb():
    assert set(CASES) == set(VERBS) == set(VERB_OPS)


@pytest.mark.parametrize("verb", VERBS)
def test_remote_equals_local(world, verb):
    local, remote, resp = equivalence_case(world, verb)
    assert resp["status"] == "ok", resp
    assert local == remote


READ_ONLY = {"get_manifest", "get_mappings", "divert", "register_rdc"}


@pytest.mark.parametrize("verb", sorted(set(VERBS) - READ_ONLY))
def test_mutating_verbs_change_state(world, verb):
    setup, args, _ = CASES[verb]
    t = world.target()
    if setup:
        setup(t)
    before = t.state_hash()
    assert world.operator.control_call(t.url, verb, args)["status"] == "ok"
    if verb == "terminate":
        t.wait_terminated(5)
    assert t.state_hash() != before


@pytest.mark.parametrize("verb", VERBS)
def test_deny_leaves_state(world, verb):
    before, after, resp = deny_case(world, verb)
    assert resp == {"status": "deny", "ok": False, "reason": "unauthorized"}
    assert before == after


def test_deny_reason_does_not_name_principals(world):
    _, _, resp = deny_case(world, "get_manifest")
    assert "guest" not in str(resp) and "admin" not in str(resp)


def test_gate_endpoint():
    assert gate_endpoint("remap", {"endpoint": "music"}) == "music"
    assert gate_endpoint("acl_add", {"acl": {"endpoint": "music"}}) == "music"
    assert gate_endpoint("terminate", {}) == "*"


def test_per_endpoint_grant(world):
    t = world.target()
    t.acl_add(AclEntry("in", "set_filter", "guest"))
    ok = world.guest.control_call(t.url, "set_filter", {"endpoint": "in", "filter": {
        "kind": "rate", "direction": "recv", "min_interval_ms": 5}})
    assert ok["status"] == "ok"
    other = world.guest.control_call(t.url, "set_filter", {"endpoint": "control", "filter": {
        "kind": "rate", "direction": "recv", "min_interval_ms": 5}})
    assert other["status"] == "deny"


def test_bad_args_and_unknown_verb(world):
    t = world.target()
    resp = world.operator.control_call(t.url, "unmap", {})
    assert resp["status"] == "error" and "bad-args" in resp["reason"]
    # bypass the client-side verb check
    op = world.operator
    ep = op._internal_endpoint(CLIENT_DESCRIPTOR)
    m = op.map(ep.name, t.url, remote_ep="control")[0]
    try:
        resp = op.request_on(m, {"verb": "fly", "args": {}})
    finally:
        op._close_mapping(m, "unmapped", notify=True)
    assert resp["status"] == "error" and "unknown-verb" in resp["reason"]


def test_control_sessions_close_after_each_command(world):
    t = world.target()
    world.operator.control_call(t.url, "get_manifest")
    assert wait_until(lambda: t.mappings("control") == [], 5)
    assert world.operator.all_mappings() == []


# --- divert ----------------------------------------------------------------


def divert_case(n: int, lacking: int = 0) -> tuple[int, int, int]:
    """``n`` listeners on DJ2, ``lacking`` of them without the remap grant.

    Returns (fan-out of DJ1, fan-out of DJ2, movers predicted by acl_check).
    """
    comps = []

    def mk(cid, **kw):
        c = Component(cid, listen=["tcp://127.0.0.1:0"], **kw)
        comps.append(c)
        return c

    try:
        dj1 = mk("DJ1", credentials=[KEY, DJ], acl=[AclEntry("out", "map", "team")])
        dj2 = mk("DJ2", credentials=[KEY, DJ], acl=[AclEntry("out", "map", "team")])
        for d in (dj1, dj2):
            d.create_endpoint(source())
            d.start()
        listeners = []
        for i in range(n):
            acl = [AclEntry("in", "map", "team")]
            if i >= lacking:
                acl.append(AclEntry("in", "remap", "dj"))
            lst = mk(f"L{i:02d}", credentials=[KEY, DJ], acl=acl)
            lst.create_endpoint(sink())
            lst.start()
            lst.map("in", dj2.manifest)
            listeners.append(lst)
        assert wait_until(lambda: dj2.fan_out("out") == n, 10)
        predicted = sum(bool(acl_check(x.access.acl, "in", "remap", {Identity("psk", "dj")})) for x in listeners)
        report = dj2.divert("out", dj1.manifest)
        assert len(report) == n
        assert sum(r["status"] == "ok" for r in report) == predicted
        wait_until(lambda: dj1.fan_out("out") == predicted and dj2.fan_out("out") == n - predicted, 10)
        return dj1.fan_out("out"), dj2.fan_out("out"), predicted
    finally:
        for c in comps:
            c.stop()


def test_divert_moves_every_listener():
    assert divert_case(6) == (6, 0, 6)


def test_divert_skips_listener_without_grant():
    assert divert_case(6, lacking=1) == (5, 1, 5)


def test_remap_selector_fans_out(fleet):
    rdc = RdcService.create(credentials=[KEY])
    try:
        a = fleet("A", endpoints=[source()], rdcs=[rdc.url], rdc_period_s=0.2)
        b = fleet("B", endpoints=[source()], rdcs=[rdc.url], rdc_period_s=0.2)
        sinks = [fleet(f"S{i}", endpoints=[sink()], metadata={"group": "g"}, rdcs=[rdc.url], rdc_period_s=0.2)
                 for i in range(3)]
        assert wait_until(lambda: len(rdc.catalog) == 5, 5)
        for s in sinks:
            s.map("in", a.url)
        issuer = fleet("issuer", rdcs=[rdc.url], listen=())
        report = issuer.remap("in", "B", "group:g")
        assert sorted(r["component"] for r in report) == ["S0", "S1", "S2"]
        assert all(r["status"] == "ok" for r in report)
        assert wait_until(lambda: b.fan_out("out") == 3 and a.fan_out("out") == 0, 5)
    finally:
        rdc.stop()


def test_remap_to_incompatible_target_keeps_mapping(fleet):
    from flux.errors import NoMatchingEndpoint

    a = fleet("A", endpoints=[source()])
    nothing = fleet("N", endpoints=[sink("in")])
    s = fleet("S", endpoints=[sink()])
    s.map("in", a.url)
    with pytest.raises(NoMatchingEndpoint):
        s.remap("in", nothing.manifest)
    assert [m.peer_component for m in s.mappings("in")] == ["A"]
