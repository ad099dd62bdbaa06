"""Role- and clearance-enforcing gateway for retrieval-augmented and mixture-of-experts inference."""

from cleargate.orchestrator import Engine, InferenceRequest, InferenceResponse, Mode
from cleargate.policy import (
    AccessDecision,
    ClearanceLevel,
    DocumentMeta,
    PolicySnapshot,
    Reason,
    Role,
    User,
    can_access_document,
    can_consult_expert,
    dominates,
    effective_roles,
    validate_policy,
)

__version__ = "0.1.0"

__all__ = [
    "AccessDecision",
    "ClearanceLevel",
    "DocumentMeta",
    "Engine",
    "InferenceRequest",
    "InferenceResponse",
    "Mode",
    "PolicySnapshot",
    "Reason",
    "Role",
    "User",
    "can_access_document",
    "can_consult_expert",
    "dominates",
    "effective_roles",
    "validate_policy",
]
