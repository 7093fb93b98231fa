"""fluxscenario: multi-process group-coordination scenarios.

Every component is its own ``python -m flux.node`` process and every
reconfiguration and assertion goes through ``swiss-knife --json``, so the
applications themselves only send and count data.

    fluxscenario silent-disco --listeners 4 --json
    fluxscenario light-show --group-size 2
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field

from .access import OPERATIONS, Credential
from .control import wait_until
from .manifest import EndpointDescriptor
from .schema import NUMBER, STRING, MessageSchema

MUSIC = MessageSchema.of({"track": STRING, "seq": NUMBER}, required=("track", "seq"))
NAMES = ("Anne", "Bob", "Carl", "Dana", "Emil", "Fay", "Gus", "Hana", "Ivan", "Jo")
REFRESH_S = 1.0
TTL_S = 5


@dataclass
class Step:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    scenario: str
    steps: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.steps) and all(s.ok for s in self.steps)

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.steps.append(Step(name, bool(ok), detail))
        return ok

    def failing(self) -> list[str]:
        return [s.name for s in self.steps if not s.ok]

    def to_json(self) -> dict:
        return {"scenario": self.scenario, "ok": self.ok, "steps": [asdict(s) for s in self.steps]}


class Cluster:
    """Child processes plus the credential files an operator would hold."""

    def __init__(self, root: str):
        self.root = root
        self.procs: dict[str, subprocess.Popen] = {}
        self.urls: dict[str, str] = {}
        self.creds: dict[str, Credential] = {}
        self.rdc_url = ""

    def cred(self, name: str) -> Credential:
        if name not in self.creds:
            self.creds[name] = Credential.psk(name)
        return self.creds[name]

    def cred_file(self, *names: str) -> str:
        path = os.path.join(self.root, "cred-" + "-".join(names) + ".json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([self.cred(n).to_json() for n in names], fh)
        return path

    def _spawn(self, name: str, cmd: list[str], timeout: float = 20.0) -> dict:
        log = open(os.path.join(self.root, f"{name}.log"), "w")
        proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=log, text=True)
        self.procs[name] = proc
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            line = proc.stdout.readline()
            if not line:
                break
            if line.startswith("READY "):
                info = json.loads(line[6:])
                self.urls[name] = info["url"]
                return info
        raise RuntimeError(f"{name} did not start (see {name}.log)")

    def start_rdc(self, port: int = 0) -> str:
        cmd = [sys.executable, "-m", "flux.rdc", "--listen", f"127.0.0.1:{port}",
               "--cred", self.cred_file("venue")]
        self.rdc_url = self._spawn("rdc", cmd)["url"]
        return self.rdc_url

    def kill(self, name: str) -> None:
        proc = self.procs.pop(name)
        proc.send_signal(signal.SIGKILL)
        proc.wait()

    def start_node(self, component_id: str, *, creds=(), acl=(), metadata=None, endpoints=(),
                   emit=(), maps=()) -> str:
        cfg = {
            "component_id": component_id,
            "credentials": [self.cred(c).to_json() for c in creds],
            "acl": [list(e) for e in acl],
            "metadata": metadata or {},
            "endpoints": [d.to_json() for d in endpoints],
            "rdcs": [self.rdc_url],
            "rdc_period_s": REFRESH_S,
            "rdc_ttl_s": TTL_S,
            "emit": list(emit),
            "maps": list(maps),
        }
        path = os.path.join(self.root, f"{component_id}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(cfg, fh)
        return self._spawn(component_id, [sys.executable, "-m", "flux.node", path])["url"]

    def knife(self, *argv: str, cred: str | None = None, target: str | None = None) -> tuple[int, dict]:
        cmd = [sys.executable, "-m", "flux.cli", "--json", "--rdc", self.rdc_url]
        if target is not None:
            cmd += ["--target", self.urls.get(target, target)]
        if cred is not None:
            cmd += ["--cred", cred]
        res = subprocess.run(cmd + list(argv), capture_output=True, text=True, timeout=60)
        try:
            body = json.loads(res.stdout) if res.stdout.strip() else {}
        except ValueError:
            body = {"raw": res.stdout}
        return res.returncode, body

    def shutdown(self) -> None:
        for name in list(self.procs):
            proc = self.procs.pop(name)
            if proc.poll() is None:
                proc.terminate()
                try:
                    proc.wait(5)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    proc.wait()


def owner_acl(name: str) -> list[tuple]:
    return [("*", op, f"owner-{name}") for op in OPERATIONS]


class Operator:
    """Read-only queries with the owners' credentials."""

    def __init__(self, cluster: Cluster, owners: list[str]):
        self.c = cluster
        self.cred = cluster.cred_file(*[f"owner-{n}" for n in owners])

    def mappings(self, node: str, endpoint: str) -> list[dict]:
        code, resp = self.c.knife("get-mappings", "--endpoint", endpoint, cred=self.cred, target=node)
        if code != 0:
            return []
        return json.loads(resp["result_json"])

    def peers(self, node: str, endpoint: str) -> set[str]:
        return {m["peer_component"] for m in self.mappings(node, endpoint)}

    def fan_out(self, node: str, endpoint: str) -> int:
        return len(self.mappings(node, endpoint))

    def manifest(self, node: str) -> dict:
        code, resp = self.c.knife("get-manifest", cred=self.cred, target=node)
        return json.loads(resp["result_json"]) if code == 0 else {}

    def lookup(self, *clause: str) -> list[dict]:
        args = ["rdc-lookup"] + (["--clause", *clause] if clause else [])
        code, resp = self.c.knife(*args, cred=self.c.cred_file("venue"))
        return json.loads(resp["result_json"]) if code == 0 else None

    def received(self, node: str, endpoint: str) -> int:
        return sum(m["received"] for m in self.mappings(node, endpoint))


# --- silent disco ------------------------------------------------------------


def silent_disco(listeners: int = 4, rdc_outage: bool = True, root: str | None = None) -> ScenarioReport:
    """Two DJs, ``listeners`` headphones, one RDC; the four reconfiguration rows."""
    if not 2 <= listeners <= len(NAMES):
        raise ValueError(f"listeners must be in [2, {len(NAMES)}]")
    report = ScenarioReport("silent-disco")
    names = list(NAMES[:listeners])
    birthday = ["Anne", "Bob"]
    with tempfile.TemporaryDirectory(dir=root) as tmp:
        c = Cluster(tmp)
        try:
            c.start_rdc()
            out = EndpointDescriptor("music_output", "source", MUSIC)
            inp = EndpointDescriptor("music_input", "sink", MUSIC)
            for dj in ("DJ1", "DJ2"):
                c.start_node(
                    dj, creds=["venue", "dj", f"owner-{dj}"],
                    acl=[("music_output", "map", "venue"), ("music_output", "remap", "dj")] + owner_acl(dj),
                    metadata={"role": "dj"}, endpoints=[out],
                    emit=[{"endpoint": "music_output", "interval_ms": 50}],
                )
            for n in names:
                creds = ["venue", "dj", f"owner-{n}"] + (["birthday"] if n == "Bob" else [])
                acl = [("music_input", "map", "venue"), ("music_input", "remap", "dj")] + owner_acl(n)
                meta = {"person": n}
                if n == "Bob":
                    acl.append(("music_input", "remap", "birthday"))
                    meta["group"] = "birthday"
                c.start_node(n, creds=creds, acl=acl, metadata=meta, endpoints=[inp],
                             maps=[{"endpoint": "music_input", "target": "DJ2"}])
            op = Operator(c, names + ["DJ1", "DJ2"])
            report.check("setup: listeners start on DJ2",
                         wait_until(lambda: op.fan_out("DJ2", "music_output") == listeners, 15))

            # row 1: Anne joins the birthday group and lets its members remap her
            anne = c.cred_file("owner-Anne")
            steps = [
                c.knife("manifest-add", "group", "birthday", cred=anne, target="Anne"),
                c.knife("credential-add", json.dumps(c.cred("birthday").to_json()), cred=anne, target="Anne"),
                c.knife("acl-add", "music_input", "remap", "birthday", cred=anne, target="Anne"),
            ]
            ok1 = all(code == 0 for code, _ in steps)
            ok1 &= op.manifest("Anne").get("metadata", {}).get("group") == "birthday"
            ok1 &= wait_until(lambda: "Anne" in {m["component_id"] for m in
                                                 (op.lookup("metadata.group", "eq", "birthday") or [])},
                              3 * REFRESH_S + 5)
            report.check("row 1: Anne tagged group=birthday in manifest and RDC", ok1)

            # negation: a stranger without the birthday credential
            before = op.peers("Anne", "music_input")
            code, resp = c.knife("remap", "music_input", "--to", "DJ1",
                                 cred=c.cred_file("venue"), target="Anne")
            report.check("stranger remap denied, topology unchanged",
                         code == 2 and op.peers("Anne", "music_input") == before == {"DJ2"},
                         f"exit {code}")

            # row 2: Bob (holding birthday) remaps Anne to DJ1
            code, resp = c.knife("remap", "music_input", "--to", "DJ1",
                                 cred=c.cred_file("birthday"), target="Anne")
            report.check("row 2: Anne mapped to DJ1 only",
                         code == 0 and wait_until(lambda: op.peers("Anne", "music_input") == {"DJ1"}, 5),
                         f"exit {code} {resp.get('reason', '')}")

            # row 3: Bob sends the remap to every birthday member
            code, resp = c.knife("remap", "music_input", "--to", "DJ2", "--selector", "group:birthday",
                                 cred=c.cred_file("birthday"), target="Bob")
            entries = json.loads(resp.get("result_json", "[]")) if code == 0 else []
            ok3 = code == 0 and sorted(e["component"] for e in entries) == birthday
            ok3 &= all(e["status"] == "ok" for e in entries)
            ok3 &= wait_until(lambda: all(op.peers(n, "music_input") == {"DJ2"} for n in birthday), 5)
            report.check("row 3: all birthday members mapped to DJ2 only", ok3, json.dumps(entries))

            # row 4: DJ2 diverts everyone to DJ1
            code, resp = c.knife("divert", "music_output", "--to", "DJ1",
                                 cred=c.cred_file("dj"), target="DJ2")
            ok4 = code == 0 and wait_until(
                lambda: op.fan_out("DJ2", "music_output") == 0
                and op.fan_out("DJ1", "music_output") == listeners, 10)
            report.check("row 4: DJ2 fan-out 0, DJ1 fan-out all listeners", ok4,
                         f"exit {code} {resp.get('reason', '')}")

            if rdc_outage:
                _rdc_outage(c, op, names, report)
        finally:
            c.shutdown()
    return report


def _rdc_outage(c: Cluster, op: Operator, names: list[str], report: ScenarioReport) -> None:
    def snapshot():
        found = op.lookup()
        return None if found is None else sorted(json.dumps(m, sort_keys=True) for m in found)

    before = snapshot()
    port = int(c.rdc_url.rpartition(":")[2])
    c.kill("rdc")
    counts = {n: op.received(n, "music_input") for n in names}
    flowing = wait_until(lambda: all(op.received(n, "music_input") > counts[n] for n in names), 5)
    intact = all(op.peers(n, "music_input") == {"DJ1"} for n in names)
    report.check("RDC down: established flows keep delivering", flowing and intact)
    c.start_rdc(port)
    restored = wait_until(lambda: snapshot() == before, REFRESH_S * 3 + 2, interval=0.25)
    report.check("RDC restarted: lookup results restored", before is not None and restored)


# --- light show --------------------------------------------------------------


def light_show(group_size: int = 2, root: str | None = None) -> ScenarioReport:
    """Two pattern sources, two light groups, and a coordinator issuing group remaps."""
    report = ScenarioReport("light-show")
    groups = {"stage": [f"stage{i}" for i in range(group_size)],
              "floor": [f"floor{i}" for i in range(group_size)]}
    lights = groups["stage"] + groups["floor"]
    with tempfile.TemporaryDirectory(dir=root) as tmp:
        c = Cluster(tmp)
        try:
            c.start_rdc()
            pattern = EndpointDescriptor("pattern", "source", MUSIC)
            pin = EndpointDescriptor("pattern_in", "sink", MUSIC)
            for src in ("PatternA", "PatternB"):
                c.start_node(src, creds=["venue", f"owner-{src}"],
                             acl=[("pattern", "map", "venue")] + owner_acl(src),
                             metadata={"kind": "pattern"}, endpoints=[pattern],
                             emit=[{"endpoint": "pattern", "interval_ms": 100}])
            for g, members in groups.items():
                for n in members:
                    c.start_node(n, creds=["venue", "show", f"owner-{n}"],
                                 acl=[("pattern_in", "map", "venue"), ("pattern_in", "remap", "show")]
                                 + owner_acl(n),
                                 metadata={"kind": "light", "group": g}, endpoints=[pin])
            c.start_node("Coordinator", creds=["venue", "show", "owner-Coordinator"],
                         acl=[("pattern_in", "remap", "show")] + owner_acl("Coordinator"),
                         metadata={"kind": "environment"})
            op = Operator(c, lights + ["PatternA", "PatternB", "Coordinator"])
            want = len(lights) + 3
            report.check("setup: all components registered",
                         wait_until(lambda: len(op.lookup() or []) == want, 3 * REFRESH_S + 5))
            show = c.cred_file("show")

            def remap(selector: str, to: str):
                code, resp = c.knife("remap", "pattern_in", "--to", to, "--selector", selector,
                                     cred=show, target="Coordinator")
                return code, (json.loads(resp["result_json"]) if code == 0 else [])

            def topology_is(expect: dict) -> bool:
                return all(op.peers(n, "pattern_in") == expect.get(n, set()) for n in lights) and \
                    op.fan_out("PatternA", "pattern") == sum(1 for v in expect.values() if "PatternA" in v) \
                    and op.fan_out("PatternB", "pattern") == sum(1 for v in expect.values() if "PatternB" in v)

            plan = [
                ("stage follows PatternA", "group:stage", "PatternA",
                 {n: {"PatternA"} for n in groups["stage"]}),
                ("floor follows PatternB", "group:floor", "PatternB",
                 {**{n: {"PatternA"} for n in groups["stage"]}, **{n: {"PatternB"} for n in groups["floor"]}}),
                ("stage switches to PatternB", "group:stage", "PatternB",
                 {n: {"PatternB"} for n in lights}),
                ("every light follows PatternA", "kind:light", "PatternA",
                 {n: {"PatternA"} for n in lights}),
            ]
            for name, selector, to, expect in plan:
                code, entries = remap(selector, to)
                matched = groups.get(selector.partition(":")[2], lights)
                ok = code == 0 and sorted(e["component"] for e in entries) == sorted(matched)
                ok &= all(e["status"] == "ok" for e in entries)
                ok &= wait_until(lambda: topology_is(expect), 10)
                report.check(name, ok, json.dumps(entries))
        finally:
            c.shutdown()
    return report


SCENARIOS = {"silent-disco": silent_disco, "light-show": light_show}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fluxscenario", description="Run a multi-process scenario.")
    ap.add_argument("name", choices=sorted(SCENARIOS))
    ap.add_argument("--listeners", type=int, default=4, help="silent-disco listener count")
    ap.add_argument("--group-size", type=int, default=2, help="light-show lights per group")
    ap.add_argument("--no-rdc-outage", action="store_true", help="skip the RDC kill/restart step")
    ap.add_argument("--json", action="store_true", help="one JSON line per step, then a summary")
    a = ap.parse_args(argv)
    if a.name == "silent-disco":
        report = silent_disco(a.listeners, rdc_outage=not a.no_rdc_outage)
    else:
        report = light_show(a.group_size)
    for s in report.steps:
        if a.json:
            print(json.dumps(asdict(s)))
        else:
            print(f"{'PASS' if s.ok else 'FAIL'}  {s.name}" + (f"  ({s.detail})" if s.detail and not s.ok else ""))
    if a.json:
        print(json.dumps({"scenario": report.scenario, "ok": report.ok}))
    else:
        print(f"{report.scenario}: {'ok' if report.ok else 'FAILED: ' + ', '.join(report.failing())}")
    return 0 if report.ok else 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
