"""swiss-knife: issue one control command to a running component.

    swiss-knife --target 127.0.0.1:7001 --cred owner.json get-manifest
    swiss-knife --target Anne --cred birthday.json remap music_input --to DJ1
    swiss-knife --rdc 127.0.0.1:7000 rdc-lookup --clause metadata.group eq birthday

``--target`` is an address or a component id resolved through the RDCs
given with ``--rdc`` (or the comma-separated ``FLUX_RDC`` variable).
Without ``--target``, ``remap --selector`` and ``map-lookup`` run with the
CLI itself as the issuer.

Exit codes: 0 ok, 1 execution error, 2 denied, 3 transport or handshake
failure, 4 bad usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import uuid

from . import control
from .access import Credential, load_credentials
from .control import resolve_targets
from .core import Component
from .errors import (
    AccessError,
    AuthFailed,
    FluxError,
    LocalAclDenied,
    MapError,
    RdcError,
    RemoteAclDenied,
    TransportError,
)
from .manifest import Clause, Query

EXIT_OK, EXIT_ERROR, EXIT_DENY, EXIT_TRANSPORT, EXIT_USAGE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _literal(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _clauses(raw) -> list[dict]:
    return [Clause(p, op, _literal(v)).to_json() for p, op, v in (raw or [])]


def _add_clause_flag(p, name="--clause", help_="PATH OP VALUE (repeatable; VALUE parsed as JSON if it can be)"):
    p.add_argument(name, nargs=3, action="append", metavar=("PATH", "OP", "VALUE"), help=help_)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="swiss-knife", description="Send one control command to a component.")
    ap.add_argument("--target", help="host:port, scheme://host:port, or a component id")
    ap.add_argument("--cred", action="append", default=[],
                    help="credential file or inline JSON (repeatable)")
    ap.add_argument("--rdc", action="append", default=[], help="RDC address (repeatable)")
    ap.add_argument("--json", action="store_true", help="print the raw response JSON")
    ap.add_argument("--timeout", type=float, default=30.0, help="seconds to wait for the reply")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("map-to")
    p.add_argument("endpoint")
    p.add_argument("to")
    p.add_argument("--selector")
    p = sub.add_parser("map-lookup")
    _add_clause_flag(p)
    p.add_argument("--endpoint")
    p.add_argument("--then-map", action="store_true")
    p = sub.add_parser("unmap")
    p.add_argument("endpoint")
    p.add_argument("--selector")
    for verb in ("remap", "divert"):
        p = sub.add_parser(verb)
        p.add_argument("endpoint")
        p.add_argument("--to", required=True, help="new target (component id, selector or address)")
        p.add_argument("--selector")
    sub.add_parser("get-manifest")
    p = sub.add_parser("get-mappings")
    p.add_argument("--endpoint")
    p = sub.add_parser("manifest-add")
    p.add_argument("key")
    p.add_argument("value")
    p = sub.add_parser("credential-add")
    p.add_argument("credential", help="credential file or inline JSON record")
    p = sub.add_parser("credential-remove")
    p.add_argument("name")
    for verb in ("acl-add", "acl-remove"):
        p = sub.add_parser(verb)
        p.add_argument("endpoint")
        p.add_argument("operation")
        p.add_argument("principal")
    p = sub.add_parser("set-filter")
    p.add_argument("endpoint")
    p.add_argument("--direction", choices=("send", "recv"), default="recv")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rate", type=int, metavar="MIN_INTERVAL_MS")
    g.add_argument("--content", nargs=3, action="append", metavar=("PATH", "OP", "VALUE"))
    p = sub.add_parser("clear-filter")
    p.add_argument("endpoint")
    p.add_argument("--direction", choices=("send", "recv"))
    p = sub.add_parser("load-com-module")
    p.add_argument("module")
    p.add_argument("--address")
    p = sub.add_parser("unload-com-module")
    p.add_argument("module")
    p = sub.add_parser("load-access-module")
    p.add_argument("module")
    p = sub.add_parser("add-rdc")
    p.add_argument("address")
    sub.add_parser("register-rdc")
    sub.add_parser("terminate")
    p = sub.add_parser("rdc-lookup", help="query the RDCs directly (no target)")
    _add_clause_flag(p)
    return ap


def _read_record(text: str):
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            return json.load(fh)
    try:
        return json.loads(text)
    except ValueError:
        raise UsageError(f"{text!r} is neither a file nor inline JSON") from None


def load_creds(sources) -> list[Credential]:
    out = []
    for s in sources:
        rec = _read_record(s)
        try:
            out.extend(Credential.from_json(r) for r in (rec if isinstance(rec, list) else [rec]))
        except AccessError as exc:
            raise UsageError(f"bad credential: {exc}") from None
    return out


def command_args(ns) -> dict:
    """argparse namespace -> ControlCommand args."""
    verb = ns.verb
    a: dict = {}
    if verb in ("map-to", "unmap", "remap", "divert", "set-filter", "clear-filter"):
        a["endpoint"] = ns.endpoint
    if verb == "get-mappings" and ns.endpoint:
        a["endpoint"] = ns.endpoint
    if verb in ("map-to", "remap", "divert"):
        a["target"] = ns.to
    if getattr(ns, "selector", None):
        a["selector"] = ns.selector
    if verb == "map-lookup":
        a["query"] = _clauses(ns.clause)
        if ns.endpoint:
            a["endpoint"] = ns.endpoint
        if ns.then_map:
            a["then_map"] = True
    elif verb == "manifest-add":
        a.update(key=ns.key, value=ns.value)
    elif verb == "credential-add":
        a["credential"] = _read_record(ns.credential)
    elif verb == "credential-remove":
        a["name"] = ns.name
    elif verb in ("acl-add", "acl-remove"):
        a["acl"] = {"endpoint": ns.endpoint, "operation": ns.operation, "principal": ns.principal}
    elif verb == "set-filter":
        if ns.rate is not None:
            a["filter"] = {"kind": "rate", "direction": ns.direction, "min_interval_ms": ns.rate}
        else:
            a["filter"] = {"kind": "content", "direction": ns.direction, "clauses": _clauses(ns.content)}
    elif verb == "clear-filter" and ns.direction:
        a["direction"] = ns.direction
    elif verb in ("load-com-module", "unload-com-module", "load-access-module"):
        a["module"] = ns.module
        if getattr(ns, "address", None):
            a["address"] = ns.address
    elif verb == "add-rdc":
        a["address"] = ns.address
    return a


def _exit_for(resp: dict) -> int:
    return {"ok": EXIT_OK, "deny": EXIT_DENY}.get(resp.get("status"), EXIT_ERROR)


def _print(resp: dict, as_json: bool, out) -> None:
    if as_json:
        print(json.dumps(resp, sort_keys=True), file=out)
        return
    line = resp["status"]
    if resp.get("reason"):
        line += f": {resp['reason']}"
    print(line, file=out)
    result = control.result_of(resp)
    if result is not None:
        print(json.dumps(result, indent=2, sort_keys=True), file=out)


def run(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        ns = build_parser().parse_args(argv)
        creds = load_creds(ns.cred)
        args = command_args(ns)
    except UsageError as exc:
        print(f"swiss-knife: {exc}", file=sys.stderr)
        return EXIT_USAGE

    rdcs = list(ns.rdc) or [r for r in os.environ.get("FLUX_RDC", "").split(",") if r]
    rdcs = [r if "://" in r else "tcp://" + r for r in rdcs]
    verb = ns.verb.replace("-", "_")
    me = Component(f"swiss-knife-{uuid.uuid4().hex[:8]}", credentials=creds,
                   comm_modules=("tcp", "udp", "loopback"), rdcs=rdcs,
                   handshake_timeout=min(ns.timeout, 10.0))
    # no listeners and no refresh loop: the CLI never registers itself
    me.transports.activate("tcp")
    me.transports.activate("udp")
    me._rebuild_manifest(notify=False)
    try:
        if verb == "rdc_lookup":
            found = me.lookup(Query.from_json(_clauses(ns.clause)))
            resp = control.ok([m.to_json() for m in found])
        elif ns.target is None:
            if verb == "remap" and "selector" in args:
                resp = control.ok(me.remap(args["endpoint"], args["target"], args["selector"]))
            elif verb == "map_lookup":
                resp = control.ok(me.map_lookup(Query.from_json(args["query"])))
            else:
                print("swiss-knife: --target is required for this verb", file=sys.stderr)
                return EXIT_USAGE
        else:
            peers = resolve_targets(me, ns.target)
            if not peers:
                print(f"swiss-knife: cannot resolve target {ns.target!r}", file=sys.stderr)
                return EXIT_TRANSPORT
            resp = me.control_call(peers[0], verb, args, int(ns.timeout * 1000))
    except (AuthFailed, LocalAclDenied, RemoteAclDenied) as exc:
        resp = control.deny("handshake denied" if not isinstance(exc, AuthFailed) else "auth-failed")
        _print(resp, ns.json, out)
        return EXIT_DENY
    except (MapError, TransportError, RdcError) as exc:
        print(f"swiss-knife: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except FluxError as exc:
        resp = control.error(f"{exc.code}: {exc}")
        _print(resp, ns.json, out)
        return EXIT_ERROR
    finally:
        me.stop()
    _print(resp, ns.json, out)
    return _exit_for(resp)


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
