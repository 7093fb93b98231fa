"""fluxbench: source-to-sink throughput with and without the middleware.

A run spawns a sink process and a source process. The source sends one
start message, then ``n`` payloads ``interval_ms`` apart. Active time is
the sum of per-message processing spans on both sides, so the sleeps
between sends are excluded:

* sender span: the ``send`` call (validation, envelope, framing, socket write)
* receiver span: from reading the frame header to the end of the
  application callback

``raw`` mode uses the same length-prefixed framing with plain JSON bodies
and no envelope, schema check or handshake.

    fluxbench --n 1000 --size 3500 --transport tcp --mode pair --json
"""

from __future__ import annotations

import argparse
import base64
import json
import os
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field

import psutil

from .access import AclEntry, Credential
from .core import Component
from .manifest import EndpointDescriptor
from .schema import NUMBER, STRING, MessageSchema
from .transport import TransportRegistry, split_url

SIZES = (100, 3500, 1048576)
COUNTS = (500, 1000, 10000, 50000)
GPS = {"position": "41.24'12.2\"N 2.10'26.5\"E", "date": "2012-04-23T18:25:43.511Z"}
RSS_EARLY_AT = 100
IDLE_TIMEOUT_S = 5.0


def payload_schema(size: int) -> MessageSchema:
    if size == 100:
        return MessageSchema.of({"position": STRING, "date": STRING, "seq": NUMBER},
                                required=("position", "date", "seq"))
    key = "text" if size == 3500 else "blob"
    return MessageSchema.of({key: STRING, "seq": NUMBER}, required=(key, "seq"))


def make_payload(size: int, seq: int) -> dict:
    """The benchmark record for a size class; the encoded body is close to ``size`` bytes."""
    if size == 100:
        return dict(GPS, seq=seq)
    if size == 3500:
        base = "All work and no play makes a message a dull message. "
        text = (base * (size // len(base) + 1))[: size - 24]
        return {"text": text, "seq": seq}
    raw = bytes((i * 31 + 7) % 256 for i in range(size * 3 // 4 - 24))
    return {"blob": base64.b64encode(raw).decode(), "seq": seq}


@dataclass
class BenchConfig:
    n: int = 1000
    size: int = 3500
    interval_ms: float = 10.0
    transport: str = "tcp"
    mode: str = "middleware"  # middleware | raw

    def __post_init__(self):
        if self.size not in SIZES:
            raise ValueError(f"size must be one of {SIZES}")
        if self.mode not in ("middleware", "raw"):
            raise ValueError("mode must be middleware or raw")
        if self.transport not in ("tcp", "udp"):
            raise ValueError("transport must be tcp or udp")
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass
class BenchResult:
    config: dict
    delivered: int
    in_order: bool
    send_active_ms: float
    recv_active_ms: float
    total_active_ms: float
    mean_per_msg_ms: float
    wall_s: float
    payload_bytes: int
    loss_rate: float
    rss: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def rss_growth_pct(early: int, late: int) -> float:
    return (late - early) / early * 100.0


def overhead_pct(mw_ms: float, raw_ms: float) -> float:
    return (mw_ms - raw_ms) / raw_ms * 100.0


# --- sink / source processes -----------------------------------------------


class _SinkState:
    def __init__(self, n: int):
        self.n = n
        self.started = False
        self.count = 0
        self.last_seq = 0
        self.in_order = True
        self.active = 0.0
        self.rss_early = 0
        self.rss_late = 0
        self.last_rx = time.monotonic()
        self.done = threading.Event()
        self._proc = psutil.Process()

    def on_payload(self, payload: dict, header_ts: float) -> None:
        seq = payload["seq"]
        self.last_rx = time.monotonic()
        if not self.started:
            if seq == 0:
                self.started = True
            return
        if seq != self.last_seq + 1:
            self.in_order = False
        self.last_seq = seq
        self.count += 1
        if self.count == RSS_EARLY_AT:
            self.rss_early = self._proc.memory_info().rss
        if self.count == self.n:
            self.rss_late = self._proc.memory_info().rss
            self.done.set()
        self.active += time.perf_counter() - header_ts


def _key_file(tmpdir: str) -> str:
    path = os.path.join(tmpdir, "bench.cred.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([Credential.psk("bench").to_json()], fh)
    return path


def _load_key(path: str) -> list[Credential]:
    with open(path, encoding="utf-8") as fh:
        return [Credential.from_json(r) for r in json.load(fh)]


def run_sink(cfg: BenchConfig, cred_path: str) -> dict:
    state = _SinkState(cfg.n)
    url = f"{cfg.transport}://127.0.0.1:0"
    if cfg.mode == "middleware":
        comp = Component("bench-sink", credentials=_load_key(cred_path),
                         acl=[AclEntry("*", "map", "*")], listen=[url])
        ep = comp.create_endpoint(EndpointDescriptor("in", "sink", payload_schema(cfg.size)),
                                  on_message=lambda p: state.on_payload(p, ep.last_frame_started))
        comp.start()
        ready_url = comp.url
        stop = comp.stop
    else:
        reg = TransportRegistry()
        mod = reg.activate(cfg.transport)

        def serve(ch):
            def loop():
                while True:
                    try:
                        body = ch.recv()
                    except Exception:
                        return
                    state.on_payload(json.loads(body), ch.last_header_ts)
            threading.Thread(target=loop, daemon=True).start()

        lst = mod.listen(split_url(url)[1], serve)
        ready_url = f"{cfg.transport}://{lst.address}"
        stop = lambda: reg.deactivate(cfg.transport)  # noqa: E731
    print("READY " + json.dumps({"url": ready_url}), flush=True)
    while not state.done.wait(0.2):
        if state.started and time.monotonic() - state.last_rx > IDLE_TIMEOUT_S:
            break
    if not state.rss_late:
        state.rss_late = psutil.Process().memory_info().rss
    stop()
    return {"delivered": state.count, "in_order": state.in_order and state.count == cfg.n,
            "recv_active_ms": state.active * 1000.0, "rss_early": state.rss_early,
            "rss_late": state.rss_late}


def run_source(cfg: BenchConfig, url: str, cred_path: str) -> dict:
    proc = psutil.Process()
    payloads = [make_payload(cfg.size, 0)]
    body_bytes = len(json.dumps(make_payload(cfg.size, 1)).encode())
    if cfg.mode == "middleware":
        comp = Component("bench-source", credentials=_load_key(cred_path),
                         acl=[AclEntry("*", "map", "*")], comm_modules=(cfg.transport,)).start()
        comp.create_endpoint(EndpointDescriptor("out", "source", payload_schema(cfg.size)))
        comp.map("out", url)

        def send(p):
            comp.send("out", p)

        close = comp.stop
    else:
        reg = TransportRegistry()
        ch = reg.activate(cfg.transport).connect(split_url(url)[1])

        def send(p):
            ch.send(json.dumps(p).encode())

        close = lambda: ch.close("done")  # noqa: E731
    send(payloads[0])
    time.sleep(cfg.interval_ms / 1000.0)
    active = 0.0
    rss_early = rss_late = 0
    t0 = time.perf_counter()
    for seq in range(1, cfg.n + 1):
        p = make_payload(cfg.size, seq) if cfg.size != 1048576 else _reuse(payloads, seq)
        s = time.perf_counter()
        send(p)
        active += time.perf_counter() - s
        if seq == RSS_EARLY_AT:
            rss_early = proc.memory_info().rss
        time.sleep(cfg.interval_ms / 1000.0)
    rss_late = proc.memory_info().rss
    wall = time.perf_counter() - t0
    time.sleep(0.2)
    close()
    return {"send_active_ms": active * 1000.0, "wall_s": wall, "payload_bytes": body_bytes,
            "rss_early": rss_early, "rss_late": rss_late}


def _reuse(payloads: list, seq: int) -> dict:
    # building a fresh 1 MiB blob per message would dominate the sender span
    p = dict(payloads[0])
    p["seq"] = seq
    return p


# --- orchestration ---------------------------------------------------------


def _child(role: str, cfg: BenchConfig, *extra: str) -> subprocess.Popen:
    cmd = [sys.executable, "-m", "flux.bench", "--role", role, "--n", str(cfg.n),
           "--size", str(cfg.size), "--interval-ms", str(cfg.interval_ms),
           "--transport", cfg.transport, "--mode", cfg.mode, *extra]
    return subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True)


def _tagged(proc: subprocess.Popen, tag: str) -> dict:
    for line in proc.stdout:
        if line.startswith(tag + " "):
            return json.loads(line[len(tag) + 1:])
    raise RuntimeError(f"child exited without {tag} (code {proc.wait()})")


def run_bench(cfg: BenchConfig) -> BenchResult:
    with tempfile.TemporaryDirectory() as tmp:
        cred = _key_file(tmp)
        sink = _child("sink", cfg, "--cred", cred)
        try:
            url = _tagged(sink, "READY")["url"]
            src = _child("source", cfg, "--cred", cred, "--url", url)
            s = _tagged(src, "RESULT")
            src.wait()
            r = _tagged(sink, "RESULT")
            sink.wait()
        finally:
            for p in (sink,):
                if p.poll() is None:
                    p.kill()
    total = s["send_active_ms"] + r["recv_active_ms"]
    delivered = r["delivered"]
    return BenchResult(
        config=asdict(cfg),
        delivered=delivered,
        in_order=r["in_order"],
        send_active_ms=s["send_active_ms"],
        recv_active_ms=r["recv_active_ms"],
        total_active_ms=total,
        mean_per_msg_ms=total / max(delivered, 1),
        wall_s=s["wall_s"],
        payload_bytes=s["payload_bytes"],
        loss_rate=1.0 - delivered / cfg.n,
        rss={"sink_early": r["rss_early"], "sink_late": r["rss_late"],
             "source_early": s["rss_early"], "source_late": s["rss_late"]},
    )


def run_pair(cfg: BenchConfig) -> dict:
    """Raw baseline then middleware with the same n/size/transport."""
    raw = run_bench(BenchConfig(cfg.n, cfg.size, cfg.interval_ms, cfg.transport, "raw"))
    mw = run_bench(BenchConfig(cfg.n, cfg.size, cfg.interval_ms, cfg.transport, "middleware"))
    return {"raw": raw.to_json(), "middleware": mw.to_json(),
            "overhead_pct": overhead_pct(mw.total_active_ms, raw.total_active_ms)}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fluxbench", description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--size", type=int, default=3500, choices=SIZES)
    ap.add_argument("--interval-ms", type=float, default=10.0)
    ap.add_argument("--transport", default="tcp", choices=("tcp", "udp"))
    ap.add_argument("--mode", default="pair", choices=("middleware", "raw", "pair"))
    ap.add_argument("--json", action="store_true", help="print one JSON line")
    ap.add_argument("--role", choices=("sink", "source"), help=argparse.SUPPRESS)
    ap.add_argument("--cred", help=argparse.SUPPRESS)
    ap.add_argument("--url", help=argparse.SUPPRESS)
    a = ap.parse_args(argv)
    mode = "middleware" if a.mode == "pair" else a.mode
    cfg = BenchConfig(a.n, a.size, a.interval_ms, a.transport, mode)

    if a.role == "sink":
        print("RESULT " + json.dumps(run_sink(cfg, a.cred)), flush=True)
        return 0
    if a.role == "source":
        print("RESULT " + json.dumps(run_source(cfg, a.url, a.cred)), flush=True)
        return 0

    out = run_pair(cfg) if a.mode == "pair" else run_bench(cfg).to_json()
    if a.json:
        print(json.dumps(out, sort_keys=True))
    else:
        runs = [("raw", out["raw"]), ("middleware", out["middleware"])] if a.mode == "pair" \
            else [(a.mode, out)]
        for name, r in runs:
            print(f"{name:>10}: delivered {r['delivered']}/{cfg.n} in_order={r['in_order']} "
                  f"active {r['total_active_ms']:.1f} ms ({r['mean_per_msg_ms'] * 1000:.1f} us/msg)")
        if a.mode == "pair":
            print(f"  overhead: {out['overhead_pct']:.1f}%")
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
