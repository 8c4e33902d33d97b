"""Decoy cloud-storage bucket framework: naming, lures, rotation, simulation,
and multi-address actor attribution over access logs."""

from .model import (
    AccessEvent,
    ActorCluster,
    BucketSpec,
    Certainty,
    CollusionCase,
    CollusionEdge,
    CompanyAttributes,
    EventStore,
    Identity,
    LeakChannel,
    LureToken,
    OperationKind,
    Outcome,
    PermissionPolicy,
    PILOT_POLICY,
    REFINED_POLICY,
    SshAttempt,
    Strategy,
    StrategyKind,
    TokenKind,
    UNAUTHENTICATED,
    validate_bucket_name,
)

__version__ = "0.1.0"

__all__ = [
    "AccessEvent",
    "ActorCluster",
    "BucketSpec",
    "Certainty",
    "CollusionCase",
    "CollusionEdge",
    "CompanyAttributes",
    "EventStore",
    "Identity",
    "LeakChannel",
    "LureToken",
    "OperationKind",
    "Outcome",
    "PermissionPolicy",
    "PILOT_POLICY",
    "REFINED_POLICY",
    "SshAttempt",
    "Strategy",
    "StrategyKind",
    "TokenKind",
    "UNAUTHENTICATED",
    "validate_bucket_name",
    "__version__",
]
