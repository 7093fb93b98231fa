import random
import time

from hypothesis import given
from hypothesis import strategies as st

from flux import Component, Filter
from flux.control import wait_until
from flux.core import content_passes, lookup_path
from flux.manifest import Clause

from .conftest import KEY, grant_all, sink, source

THRESHOLD = 30


def _pair():
    b = Component("B", credentials=[KEY], acl=grant_all(), listen=["tcp://127.0.0.1:0"])
    got = []
    b.create_endpoint(sink(), on_message=got.append)
    a = Component("A", credentials=[KEY], acl=grant_all())
    a.create_endpoint(source())
    b.start()
    a.start()
    a.map("out", b.url)
    assert wait_until(lambda: b.fan_out("in") == 1, 5)
    return a, b, got


def check_content_filter(n=1000, seed=3) -> tuple[int, int]:
    """Returns (delivered, expected) for a gt(temperature, 30) receive filter."""
    rng = random.Random(seed)
    a, b, got = _pair()
    try:
        b.set_filter("in", Filter.content("recv", Clause("temperature", "gt", THRESHOLD)))
        sent = [{"sensor": f"s{i}", "temperature": rng.choice([rng.uniform(-10, 70), rng.randint(25, 35)])}
                for i in range(n)]
        for p in sent:
            a.send("out", p)
        expected = [p for p in sent if p["temperature"] > THRESHOLD]
        wait_until(lambda: len(got) >= len(expected), 10)
        time.sleep(0.2)
        assert got == expected
        return len(got), len(expected)
    finally:
        a.stop()
        b.stop()


def check_rate_filter(period_ms=50, burst_s=2.0) -> int:
    """Messages delivered through a ``period_ms`` rate filter during a ``burst_s`` burst."""
    a, b, got = _pair()
    try:
        b.set_filter("in", Filter.rate("recv", period_ms))
        end = time.monotonic() + burst_s
        i = 0
        while time.monotonic() < end:
            a.send("out", {"sensor": "burst", "temperature": i})
            i += 1
            time.sleep(0.001)
        time.sleep(0.2)
        return len(got)
    finally:
        a.stop()
        b.stop()


def test_content_filter_matches_threshold_oracle():
    delivered, expected = check_content_filter()
    assert delivered == expected > 0


def test_rate_filter_bound():
    n = check_rate_filter()
    assert 20 <= n <= 41


leaf = st.one_of(st.integers(-50, 50), st.text("ab", max_size=2), st.booleans(), st.none())
payloads = st.dictionaries(st.sampled_from("xyz"), st.one_of(leaf, st.dictionaries(st.sampled_from("xyz"), leaf,
                                                                                   max_size=2)), max_size=3)
clauses = st.builds(Clause, st.sampled_from(["x", "y", "x.y", "z.x"]), st.sampled_from(["eq", "gt", "lt", "exists"]),
                    st.one_of(st.integers(-50, 50), st.text("ab", max_size=2)))


def reference(payload, cs):
    for c in cs:
        cur, present = payload, True
        for part in c.path.split("."):
            if isinstance(cur, dict) and part in cur:
                cur = cur[part]
            else:
                present = False
                break
        if c.op == "exists":
            ok = present
        elif not present:
            ok = False
        elif c.op == "eq":
            ok = cur == c.value
        else:
            def num(v):
                if isinstance(v, bool) or v is None or isinstance(v, dict):
                    return None
                try:
                    return float(v)
                except (TypeError, ValueError):
                    return None
            x, y = num(cur), num(c.value)
            ok = x is not None and y is not None and (x > y if c.op == "gt" else x < y)
        if not ok:
            return False
    return True


@given(payloads, st.lists(clauses, max_size=3))
def test_content_passes_matches_reference(payload, cs):
    assert content_passes(payload, cs) == reference(payload, cs)


def test_lookup_path():
    assert lookup_path({"a": {"b": 1}}, "a.b") == (True, 1)
    assert lookup_path({"a": 1}, "a.b") == (False, None)


def test_rate_filter_with_injected_clock():
    from flux.core import _FilterChain

    now = [0.0]
    chain = _FilterChain(lambda: now[0])
    chain.filters.append(Filter.rate("recv", 50))
    passed = []
    for ms in range(0, 1001):
        now[0] = ms / 1000.0
        if chain.passes({}):
            passed.append(ms)
    assert passed == list(range(0, 1001, 50))
