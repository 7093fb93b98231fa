"""flux: typed, externally reconfigurable messaging between components."""

from .access import AclEntry, Credential, Identity
from .core import Component, DeliveryReport, Filter, Mapping, Message, State
from .errors import FluxError
from .manifest import Clause, EndpointDescriptor, Manifest, Query, selector_to_query
from .rdc import RdcCatalog, RdcService
from .schema import BOOLEAN, NUMBER, STRING, ArrayOf, Envelope, MessageSchema, StatusCode, validate

__all__ = [
    "AclEntry", "ArrayOf", "BOOLEAN", "Clause", "Component", "Credential", "DeliveryReport",
    "EndpointDescriptor", "Envelope", "Filter", "FluxError", "Identity", "Manifest", "Mapping",
    "Message", "MessageSchema", "NUMBER", "Query", "RdcCatalog", "RdcService", "STRING", "State",
    "StatusCode", "selector_to_query", "validate",
]
