"""Privacy-boundary auditor and communication accounting over transcripts.

Violations are data, not exceptions: the auditor classifies each suspicious
record into exactly one violation kind (first matching rule wins):

  raw-feature-leak       anything leaving a data platform that is not a
                         rep-width LocalRepUpload (or ids shaped wrongly)
  local-rep-misroute     a local rep delivered anywhere but the server
  unperturbed-unified    unified rep reaching the task platform without the
                         required LDP perturbation (live transcripts only;
                         exported records do not carry the send-site flag)
  unified-to-sensitive   a rep-width payload reaching a sensitive platform
  sensitive-label-leak   a sensitive platform emitting anything other than
                         its two gradient returns
  illegal-edge           any other (kind, sender role, receiver role) outside
                         the protocol table
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .messages import (
    FAIRNESS_KINDS,
    Kind,
    LEGAL_EDGES,
    Role,
    Transcript,
    TranscriptRecord,
)


class ViolationKind(str, Enum):
    RAW_FEATURE_LEAK = "raw-feature-leak"
    LOCAL_REP_MISROUTE = "local-rep-misroute"
    UNPERTURBED_UNIFIED = "unperturbed-unified"
    UNIFIED_TO_SENSITIVE = "unified-to-sensitive"
    SENSITIVE_LABEL_LEAK = "sensitive-label-leak"
    ILLEGAL_EDGE = "illegal-edge"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    record: TranscriptRecord
    detail: str


@dataclass
class AuditPolicy:
    roles: dict[str, Role]  # platform name -> role
    rep_width: int
    protected_widths: dict[str, int]  # sensitive platform name -> H_i
    require_ldp_serving: bool = False
    require_ldp_training: bool = False

    @classmethod
    def from_federation(cls, fed) -> "AuditPolicy":
        ldp = fed.config.ldp
        return cls(
            roles=fed.roles(),
            rep_width=fed.bundle.widths.rep,
            protected_widths={
                p.name: fed.bundle.widths.protected[f]
                for f, p in fed.sensitive.items()
            },
            require_ldp_serving=ldp.enabled,
            require_ldp_training=ldp.enabled and ldp.perturb_training,
        )

    def role(self, name: str) -> Role | None:
        return self.roles.get(name)


_SENSITIVE_OUT = {Kind.BIAS_DISC_GRAD_DOWN.value, Kind.ADV_GRAD_DOWN.value}


def _width(rec: TranscriptRecord) -> int | None:
    return rec.shape[-1] if len(rec.shape) == 2 else None


def _classify(rec: TranscriptRecord, policy: AuditPolicy) -> Violation | None:
    role_s = policy.role(rec.sender)
    role_r = policy.role(rec.receiver)
    if role_s is None or role_r is None:
        return Violation(ViolationKind.ILLEGAL_EDGE, rec,
                         f"unknown platform on edge {rec.sender} -> {rec.receiver}")

    # (e) nothing but the two gradient returns may leave a sensitive platform
    if role_s is Role.SENSITIVE and rec.kind not in _SENSITIVE_OUT:
        return Violation(ViolationKind.SENSITIVE_LABEL_LEAK, rec,
                         f"{rec.sender} emitted {rec.kind}")

    # (d) unified-width payloads must never reach a sensitive platform
    if role_r is Role.SENSITIVE:
        if rec.kind == Kind.UNIFIED_REP_TO_TASK.value or (
                rec.kind == Kind.PROTECTED_REP_UPLOAD.value
                and _width(rec) == policy.rep_width
                and policy.protected_widths.get(rec.receiver) != policy.rep_width):
            return Violation(ViolationKind.UNIFIED_TO_SENSITIVE, rec,
                             f"rep-width payload ({rec.shape}) sent to {rec.receiver}")
        if rec.kind == Kind.PROTECTED_REP_UPLOAD.value:
            expected = policy.protected_widths.get(rec.receiver)
            if expected is not None and _width(rec) != expected:
                return Violation(ViolationKind.UNIFIED_TO_SENSITIVE, rec,
                                 f"payload width {_width(rec)} != declared {expected}")

    # (b) local reps go to the server and nowhere else
    if rec.kind == Kind.LOCAL_REP_UPLOAD.value and role_r is not Role.SERVER:
        return Violation(ViolationKind.LOCAL_REP_MISROUTE, rec,
                         f"local rep delivered to {rec.receiver}")

    # (a) the only thing leaving a data platform is a rep-width local rep
    if role_s is Role.INSENSITIVE:
        if rec.kind != Kind.LOCAL_REP_UPLOAD.value:
            return Violation(ViolationKind.RAW_FEATURE_LEAK, rec,
                             f"{rec.sender} emitted {rec.kind}")
        if _width(rec) != policy.rep_width:
            return Violation(ViolationKind.RAW_FEATURE_LEAK, rec,
                             f"upload width {_width(rec)} != rep width {policy.rep_width}")

    # (c) perturbation required on the unified upload (live transcripts only)
    if rec.kind == Kind.UNIFIED_REP_TO_TASK.value and rec.ldp_applied is not None:
        required = (policy.require_ldp_serving if rec.phase == "serve"
                    else policy.require_ldp_training)
        if required and rec.ldp_applied is False:
            return Violation(ViolationKind.UNPERTURBED_UNIFIED, rec,
                             "LDP required but upload was not perturbed")

    # edge legality table
    try:
        kind = Kind(rec.kind)
    except ValueError:
        return Violation(ViolationKind.RAW_FEATURE_LEAK, rec,
                         f"unknown payload kind {rec.kind!r}")
    if (role_s, role_r) not in LEGAL_EDGES[kind]:
        return Violation(ViolationKind.ILLEGAL_EDGE, rec,
                         f"{rec.kind}: {role_s.value} -> {role_r.value} not permitted")
    return None


def audit_transcript(transcript: Transcript | list[TranscriptRecord],
                     policy: AuditPolicy) -> list[Violation]:
    records = transcript.records if isinstance(transcript, Transcript) else transcript
    out = []
    for rec in records:
        v = _classify(rec, policy)
        if v is not None:
            out.append(v)
    return out


def fairness_comm_cost(transcript: Transcript | list[TranscriptRecord]) -> int:
    """Total float count of fairness-machinery traffic (protected-rep uploads
    and their two gradient returns)."""
    records = transcript.records if isinstance(transcript, Transcript) else transcript
    kinds = {k.value for k in FAIRNESS_KINDS}
    return sum(r.float_count for r in records if r.kind in kinds)


def per_round_fairness_cost(transcript: Transcript | list[TranscriptRecord]
                            ) -> dict[int, dict[str, int]]:
    """Per round: actual fairness traffic, the 4*E*sum(H_i) prediction from the
    observed batch size, and the batch size itself."""
    records = transcript.records if isinstance(transcript, Transcript) else transcript
    kinds = {k.value for k in FAIRNESS_KINDS}
    rounds: dict[int, dict[str, int]] = {}
    widths: dict[int, dict[str, int]] = {}
    for rec in records:
        if rec.kind not in kinds:
            continue
        slot = rounds.setdefault(rec.round_id, {"actual": 0, "batch": 0})
        slot["actual"] += rec.float_count
        if rec.kind == Kind.PROTECTED_REP_UPLOAD.value and len(rec.shape) == 2:
            slot["batch"] = rec.shape[0]
            widths.setdefault(rec.round_id, {})[rec.receiver] = rec.shape[1]
    for rid, slot in rounds.items():
        h_sum = sum(widths.get(rid, {}).values())
        slot["expected"] = 4 * slot["batch"] * h_sum
    return rounds
