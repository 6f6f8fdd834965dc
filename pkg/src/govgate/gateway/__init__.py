"""Gateway service: embedded engine, HTTP transport and client."""

from govgate.gateway.service import (
    ActionSubmission,
    DomainSettings,
    EnforcementResponse,
    FileSink,
    Gateway,
    GatewayError,
    MemorySink,
    Unavailable,
    UnknownDomain,
    ValidationFailed,
)

__all__ = [
    "ActionSubmission",
    "DomainSettings",
    "EnforcementResponse",
    "FileSink",
    "Gateway",
    "GatewayError",
    "MemorySink",
    "Unavailable",
    "UnknownDomain",
    "ValidationFailed",
]
