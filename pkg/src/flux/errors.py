"""Exception hierarchy shared by every flux module."""

from __future__ import annotations


class FluxError(Exception):
    """Base class for all middleware errors."""

    code = "error"


# --- schemas and envelopes -------------------------------------------------


class SchemaError(FluxError):
    code = "malformed-schema"


class SchemaViolation(FluxError):
    code = "schema-violation"

    def __init__(self, violations):
        self.violations = tuple(violations)
        super().__init__(", ".join(self.violations))


class EnvelopeError(FluxError):
    code = "bad-envelope"


class InvalidUtf8(EnvelopeError):
    code = "invalid-utf8"


class NotJson(EnvelopeError):
    code = "not-json"


class MissingKey(EnvelopeError):
    code = "missing-key"

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"missing-key({key})")


class UnknownStatus(EnvelopeError):
    code = "unknown-status"

    def __init__(self, status):
        self.status = status
        super().__init__(f"unknown status {status!r}")


class MalformedEnvelope(EnvelopeError):
    code = "malformed-envelope"


# --- manifests and queries -------------------------------------------------


class ManifestError(FluxError):
    code = "malformed-manifest"


class QueryError(FluxError):
    code = "invalid-query"


class SelectorError(QueryError):
    code = "malformed-selector"


# --- transports ------------------------------------------------------------


class TransportError(FluxError):
    code = "transport-error"


class UnknownModule(TransportError):
    code = "unknown-module"


class ModuleInactive(TransportError):
    code = "module-inactive"


class InvalidAddress(TransportError):
    code = "invalid-address"


class BindFailure(TransportError):
    code = "bind-failure"


class ConnectRefused(TransportError):
    code = "connect-refused"


class FrameTooLarge(TransportError):
    code = "frame-too-large"


class ChannelClosed(TransportError):
    code = "channel-closed"


# --- mapping handshake -----------------------------------------------------


class MapError(FluxError):
    """A mapping attempt ended without reaching ESTABLISHED."""

    code = "map-failed"


class NoSharedTransport(MapError):
    code = "no-shared-transport"


class NoSharedAccessModule(MapError):
    code = "no-shared-access-module"


class AuthFailed(MapError):
    code = "auth-failed"


class LocalAclDenied(MapError):
    code = "acl-denied-local"


class RemoteAclDenied(MapError):
    code = "acl-denied-remote"


class SchemaMismatch(MapError):
    code = "schema-mismatch"


class PeerUnreachable(MapError):
    code = "peer-unreachable"


class NoMatchingEndpoint(MapError):
    code = "no-matching-endpoint"


# --- endpoints and data flow ----------------------------------------------


class EndpointError(FluxError):
    code = "endpoint-error"


class DuplicateEndpoint(EndpointError):
    code = "duplicate-name"


class UnknownEndpoint(EndpointError):
    code = "unknown-endpoint"


class MalformedDescriptor(EndpointError):
    code = "malformed"


class WrongEndpointKind(EndpointError):
    code = "wrong-endpoint-kind"


class RequestTimeout(FluxError):
    code = "timeout"


class PeerClosed(FluxError):
    code = "peer-closed"


# --- access control --------------------------------------------------------


class AccessError(FluxError):
    code = "access-error"


class DuplicateCredential(AccessError):
    code = "duplicate-credential"


class UnknownEntry(AccessError):
    code = "unknown-entry"


class UnknownAccessModule(AccessError):
    code = "unknown-access-module"


# --- discovery and control -------------------------------------------------


class RdcError(FluxError):
    code = "rdc-error"


class NoRdc(RdcError):
    code = "no-rdc"


class RdcUnreachable(RdcError):
    code = "rdc-unreachable"


class UnknownComponent(RdcError):
    code = "unknown-component"


class ControlError(FluxError):
    code = "control-error"


class Denied(ControlError):
    code = "deny"


class UnknownVerb(ControlError):
    code = "unknown-verb"


class BadArgs(ControlError):
    code = "bad-args"
