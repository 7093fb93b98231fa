"""Run one component as a standalone process from a JSON config.

    python -m flux.node config.json

Prints ``READY {"component_id": ..., "url": ...}`` once listening and runs
until terminated through its control endpoint or by SIGTERM/SIGINT.
Application behavior is deliberately dumb: sources emit a counter at a fixed
cadence and sinks count what arrives. Everything else is done from outside.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
import time
from dataclasses import dataclass, field

from .access import AclEntry, Credential
from .core import Component
from .errors import FluxError
from .manifest import EndpointDescriptor

log = logging.getLogger(__name__)


@dataclass
class NodeConfig:
    component_id: str
    listen: list = field(default_factory=lambda: ["tcp://127.0.0.1:0"])
    credentials: list = field(default_factory=list)
    acl: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    endpoints: list = field(default_factory=list)
    rdcs: list = field(default_factory=list)
    rdc_period_s: float = 10.0
    rdc_ttl_s: int = 30
    # [{"endpoint": ..., "interval_ms": ...}]: sources that emit on their own
    emit: list = field(default_factory=list)
    # [{"endpoint": ..., "target": ...}]: mappings to make at start-up
    maps: list = field(default_factory=list)
    map_timeout_s: float = 20.0
    audit_path: str | None = None

    @classmethod
    def from_json(cls, obj: dict) -> "NodeConfig":
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "NodeConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


class Node:
    def __init__(self, cfg: NodeConfig):
        self.cfg = cfg
        self.received = 0
        self.component = Component(
            cfg.component_id,
            metadata=cfg.metadata,
            credentials=[Credential.from_json(c) for c in cfg.credentials],
            acl=[AclEntry.from_json(e) for e in cfg.acl],
            listen=cfg.listen,
            rdcs=cfg.rdcs,
            rdc_period_s=cfg.rdc_period_s,
            rdc_ttl_s=cfg.rdc_ttl_s,
            audit_path=cfg.audit_path,
        )
        for d in cfg.endpoints:
            desc = EndpointDescriptor.from_json(d)
            on_message = self._count if desc.ep_type == "sink" else None
            self.component.create_endpoint(desc, on_message=on_message)

    def _count(self, _payload) -> None:
        self.received += 1

    def start(self) -> None:
        self.component.start()
        for e in self.cfg.emit:
            threading.Thread(target=self._emit, args=(e["endpoint"], e.get("interval_ms", 50)),
                             daemon=True).start()
        for m in self.cfg.maps:
            self._initial_map(m["endpoint"], m["target"])

    def _initial_map(self, endpoint: str, target: str) -> None:
        # the target may not have registered with the RDC yet
        deadline = time.monotonic() + self.cfg.map_timeout_s
        while True:
            try:
                if self.component.map_to(endpoint, target):
                    return
            except FluxError as exc:
                if time.monotonic() > deadline:
                    raise
                log.debug("initial map %s -> %s: %s", endpoint, target, exc)
            if time.monotonic() > deadline:
                raise FluxError(f"initial map {endpoint} -> {target} found no peer")
            time.sleep(0.2)

    def _emit(self, endpoint: str, interval_ms: float) -> None:
        seq = 0
        while not self.component.terminated:
            seq += 1
            try:
                self.component.send(endpoint, {"track": self.cfg.component_id, "seq": seq})
            except FluxError:
                pass
            time.sleep(interval_ms / 1000.0)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="flux-node", description="Run one component from a config file.")
    ap.add_argument("config")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    node = Node(NodeConfig.load(args.config))
    node.start()
    info = {"component_id": node.component.component_id, "url": node.component.url}
    print("READY " + json.dumps(info), flush=True)

    signal.signal(signal.SIGTERM, lambda *_: node.component.stop())
    signal.signal(signal.SIGINT, lambda *_: node.component.stop())
    while not node.component.wait_terminated(0.5):
        pass
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
