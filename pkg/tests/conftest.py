from __future__ import annotations

import pytest

from flux import AclEntry, Component, Credential, EndpointDescriptor
from flux.schema import NUMBER, STRING, MessageSchema

TEMP = MessageSchema.of({"sensor": STRING, "temperature": NUMBER}, required=("sensor", "temperature"))
OTHER = MessageSchema.of({"label": STRING}, required=("label",))

KEY = Credential.psk("team")


def grant_all(principal: str = "team") -> list[AclEntry]:
    from flux.access import OPERATIONS

    return [AclEntry("*", op, principal) for op in OPERATIONS]


class Fleet:
    """Components started for one test and stopped afterwards."""

    def __init__(self):
        self.items: list[Component] = []

    def __call__(self, cid: str, *, endpoints=(), listen=("tcp://127.0.0.1:0",), credentials=(KEY,),
                 acl=None, **kw) -> Component:
        c = Component(cid, credentials=credentials, acl=grant_all() if acl is None else acl,
                      listen=listen, **kw)
        for d in endpoints:
            if isinstance(d, tuple):
                c.create_endpoint(d[0], **d[1])
            else:
                c.create_endpoint(d)
        c.start()
        self.items.append(c)
        return c

    def stop(self):
        for c in self.items:
            c.stop()


@pytest.fixture
def fleet():
    f = Fleet()
    yield f
    f.stop()


def source(name: str = "out", schema: MessageSchema = TEMP) -> EndpointDescriptor:
    return EndpointDescriptor(name, "source", schema)


def sink(name: str = "in", schema: MessageSchema = TEMP) -> EndpointDescriptor:
    return EndpointDescriptor(name, "sink", schema)
