from .messages import Kind, Message, Role, Transcript, TranscriptRecord
from .ldp import LdpConfig, ldp_perturb
from .federation import Federation, FederationConfig, RoundResult, build_federation
from .audit import AuditPolicy, Violation, ViolationKind, audit_transcript, fairness_comm_cost

__all__ = [
    "Kind", "Message", "Role", "Transcript", "TranscriptRecord",
    "LdpConfig", "ldp_perturb",
    "Federation", "FederationConfig", "RoundResult", "build_federation",
    "AuditPolicy", "Violation", "ViolationKind", "audit_transcript", "fairness_comm_cost",
]
