"""Message vocabulary, policies and canonical serialisation."""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from ..geometry import Polygon


class Kind(str, enum.Enum):
    MeasurementReport = "MeasurementReport"
    HoRequest = "HoRequest"
    HoResponse = "HoResponse"
    AttestationRequest = "AttestationRequest"
    NonceTransfer = "NonceTransfer"
    HoExecute = "HoExecute"
    HoAck = "HoAck"
    AttestationSubmit = "AttestationSubmit"
    AttestationAck = "AttestationAck"
    Register = "Register"
    RegisterAck = "RegisterAck"
    PolicyDownload = "PolicyDownload"
    AgpsRegister = "AgpsRegister"
    AgpsAssist = "AgpsAssist"
    AuthzRequest = "AuthzRequest"
    AuthzResponse = "AuthzResponse"
    Deregister = "Deregister"
    DeregisterAck = "DeregisterAck"
    NodeConfigure = "NodeConfigure"


ATTESTATION_KINDS = frozenset({
    Kind.AttestationRequest, Kind.NonceTransfer, Kind.AttestationSubmit, Kind.AttestationAck,
})

# minimal payload schema per kind
PAYLOAD_FIELDS: dict[Kind, tuple[str, ...]] = {
    Kind.MeasurementReport: ("mt", "source_cell", "target_cell"),
    Kind.HoRequest: ("txn", "mt", "source_cell", "target_cell"),
    Kind.HoResponse: ("txn", "attestation_required"),
    Kind.AttestationRequest: ("txn", "nonce"),
    Kind.NonceTransfer: ("txn", "nonce"),
    Kind.HoExecute: ("txn",),
    Kind.HoAck: ("txn",),
    Kind.AttestationSubmit: ("txn", "package"),
    Kind.AttestationAck: ("txn", "activate_lte"),
    Kind.Register: ("txn", "mt", "nonce", "verdict"),
    Kind.RegisterAck: ("mt", "policy_version"),
    Kind.PolicyDownload: ("p_sp", "p_pz", "pz", "op", "policy_version"),
    Kind.AgpsRegister: ("mt", "action"),
    Kind.AgpsAssist: ("mt",),
    Kind.AuthzRequest: ("request_id", "mt", "service", "in_pz"),
    Kind.AuthzResponse: ("request_id", "grant", "reason"),
    Kind.Deregister: ("mt",),
    Kind.DeregisterAck: ("mt", "ok"),
    Kind.NodeConfigure: ("cells",),
}


class Rule(str, enum.Enum):
    Enable = "Enable"
    Disable = "Disable"


@dataclass(frozen=True)
class Policy:
    id: str
    function_rules: Mapping[str, Rule]
    access_grants: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.id not in ("P_sp", "P_pz"):
            raise ValueError(f"policy id must be P_sp or P_pz, got {self.id!r}")
        object.__setattr__(self, "function_rules",
                           {k: Rule(v) for k, v in sorted(dict(self.function_rules).items())})
        object.__setattr__(self, "access_grants", frozenset(self.access_grants))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "functions": {k: v.value for k, v in self.function_rules.items()},
            "grants": sorted(self.access_grants),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Policy:
        return cls(d["id"], {k: Rule(v) for k, v in d["functions"].items()}, frozenset(d["grants"]))


def policies_differ(p_sp: Policy, p_pz: Policy) -> bool:
    return dict(p_sp.function_rules) != dict(p_pz.function_rules) or p_sp.access_grants != p_pz.access_grants


@dataclass(frozen=True)
class ServiceRequest:
    tltsr_id: str
    pz: Polygon
    p_sp: Policy
    p_pz: Policy
    op_scale: float = 1.3
    n_outer_layers: int = 1
    op_mode: str = "scaled"

    def __post_init__(self) -> None:
        if self.p_sp.id != "P_sp" or self.p_pz.id != "P_pz":
            raise ValueError("service request needs a P_sp and a P_pz policy")
        if set(self.p_sp.function_rules) != set(self.p_pz.function_rules):
            raise ValueError("P_sp and P_pz must name the same device functions")
        if self.op_mode not in ("scaled", "sp"):
            raise ValueError(f"op_mode must be 'scaled' or 'sp', got {self.op_mode!r}")


def jsonable(value: Any) -> Any:
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted(jsonable(v) for v in value)
    if hasattr(value, "to_dict"):
        return value.to_dict()
    return value


def canonical_bytes(obj: Any) -> bytes:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass
class Message:
    kind: Kind
    src: str
    dst: str
    payload: dict = field(default_factory=dict)
    sent_at: float = 0.0
    id: int = 0

    def __post_init__(self) -> None:
        self.kind = Kind(self.kind)
        if self.src == self.dst:
            raise ValueError(f"{self.kind.value}: src and dst must differ ({self.src})")
        missing = [f for f in PAYLOAD_FIELDS[self.kind] if f not in self.payload]
        if missing:
            raise ValueError(f"{self.kind.value} payload missing fields: {', '.join(missing)}")

    @property
    def txn(self) -> str | None:
        return self.payload.get("txn")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "src": self.src,
            "dst": self.dst,
            "sent_at": round(self.sent_at, 9),
            "payload": jsonable(self.payload),
        }

    def encode(self) -> bytes:
        return canonical_bytes(self.to_dict())

    @classmethod
    def decode(cls, data: bytes) -> Message:
        d = json.loads(data.decode("utf-8"))
        return cls(Kind(d["kind"]), d["src"], d["dst"], d["payload"], d["sent_at"], d["id"])

    def summary(self) -> dict:
        """Short payload view for event-log lines."""
        out = {}
        for k, v in self.payload.items():
            if k in ("package", "pz", "op", "p_sp", "p_pz", "cells"):
                out[k] = hashlib.sha256(canonical_bytes(v)).hexdigest()[:16]
            else:
                out[k] = jsonable(v)
        return out
