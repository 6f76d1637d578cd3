"""TLTA centre: service configuration, registry, policy download and authorisation."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import NotRegistered, RegistrationDenied
from ..geometry import HexGrid, ZoneMap, collapse_op_onto_sp, compile_zones
from ..sim.engine import Entity
from .messages import Kind, Message, Policy, ServiceRequest, policies_differ

import logging

log = logging.getLogger(__name__)


def enb_id(cell) -> str:
    return f"enb({cell.q},{cell.r})"


@dataclass(frozen=True)
class AttestationRecord:
    mt_id: str
    txn: str
    nonce: str
    verdict: str
    enb0: str = ""
    enb1: str = ""


@dataclass
class Registration:
    registered_at: float
    nonce: str
    txn: str
    policy_version: int


@dataclass
class Registry:
    registered: dict[str, Registration] = field(default_factory=dict)
    history: list[tuple[str, str, float]] = field(default_factory=list)


@dataclass(frozen=True)
class Decision:
    grant: bool
    reason: str | None = None

    def __str__(self) -> str:
        return "Grant" if self.grant else f"Deny({self.reason})"


GRANT = Decision(True)


def node_configuration(zone: ZoneMap, tltac: str = "tltac") -> list[dict]:
    """One configuration record per eNB serving a c1 or c0 cell."""
    cover = sorted(c.as_pair() for c in zone.cover)
    configs = []
    for role, cells in (("c1", zone.c1), ("c0", zone.c0)):
        for cell in sorted(cells):
            configs.append({"enb": enb_id(cell), "cell": cell.as_pair(), "role": role,
                            "cover": cover, "tltac": tltac})
    return configs


def configure_service(req: ServiceRequest, grid: HexGrid, agw: str = "agw",
                      tltac: str = "tltac") -> tuple[ZoneMap, list[Message]]:
    """Compile the zone and build the AGW fan-out arming every c1/c0 eNB."""
    if not policies_differ(req.p_sp, req.p_pz):
        log.warning("P_sp and P_pz are identical; the protected zone enforces nothing extra")
    zone = compile_zones(req.pz, grid, req.op_scale, req.n_outer_layers)
    if req.op_mode == "sp":
        zone = collapse_op_onto_sp(zone)
    msgs = [Message(Kind.NodeConfigure, agw, cfg["enb"], {"cells": cfg}) for cfg in node_configuration(zone, tltac)]
    return zone, msgs


class Tltac(Entity):
    def __init__(self, req: ServiceRequest, zone: ZoneMap, entity_id: str = "tltac", agw: str = "agw",
                 agps: str = "agps", notify_tltsr: bool = False, agps_initiator: str = "tltac",
                 t_expire: float = 3600.0):
        super().__init__(entity_id)
        self.req = req
        self.zone = zone
        self.agw = agw
        self.agps = agps
        self.notify_tltsr = notify_tltsr
        self.agps_initiator = agps_initiator
        self.t_expire = t_expire
        self.registry = Registry()
        self.policy_version = 1
        self.new_registrations: dict[str, int] = {}
        self.deregistrations: dict[str, int] = {}

    @property
    def policies(self) -> tuple[Policy, Policy]:
        return self.req.p_sp, self.req.p_pz

    def now(self) -> float:
        return self.engine.now if self.engine else 0.0

    # -- setup ------------------------------------------------------------
    def start(self) -> None:
        self.send(self.agw, Kind.NodeConfigure, cells=node_configuration(self.zone, self.id))

    # -- registry operations ----------------------------------------------
    def register_mt(self, mt_id: str, record: AttestationRecord) -> Message:
        if record.verdict != "Accept":
            raise RegistrationDenied(f"{mt_id}: attestation verdict {record.verdict}")
        t = self.now()
        event = "refresh" if mt_id in self.registry.registered else "register"
        self.registry.registered[mt_id] = Registration(t, record.nonce, record.txn, self.policy_version)
        self.registry.history.append((mt_id, event, t))
        if event == "register":
            self.new_registrations[mt_id] = self.new_registrations.get(mt_id, 0) + 1
        return Message(Kind.RegisterAck, self.id, mt_id, {"mt": mt_id, "policy_version": self.policy_version}, t)

    def download_policy(self, mt_id: str, txn: str | None = None) -> Message:
        if mt_id not in self.registry.registered:
            raise NotRegistered(f"{mt_id} is not registered")
        p_sp, p_pz = self.policies
        payload = {
            "p_sp": p_sp.to_dict(),
            "p_pz": p_pz.to_dict(),
            "pz": self.zone.pz.as_lists(),
            "op": self.zone.op.as_lists(),
            "policy_version": self.policy_version,
        }
        if txn is not None:
            payload["txn"] = txn
        return Message(Kind.PolicyDownload, self.id, mt_id, payload, self.now())

    def authorize(self, mt_id: str, service: str, in_pz: bool) -> Decision:
        if mt_id not in self.registry.registered:
            return Decision(False, "NotRegistered")
        if not in_pz:
            return Decision(False, "OutsidePz")
        if service not in self.req.p_pz.access_grants:
            return Decision(False, "NotGranted")
        return GRANT

    def deregister_mt(self, mt_id: str) -> list[Message]:
        if mt_id not in self.registry.registered:
            raise NotRegistered(f"{mt_id} is not registered")
        t = self.now()
        del self.registry.registered[mt_id]
        self.registry.history.append((mt_id, "deregister", t))
        self.deregistrations[mt_id] = self.deregistrations.get(mt_id, 0) + 1
        out = [Message(Kind.DeregisterAck, self.id, mt_id, {"mt": mt_id, "ok": True}, t),
               Message(Kind.AgpsRegister, self.id, self.agps, {"mt": mt_id, "action": "remove"}, t)]
        if self.notify_tltsr:
            out.append(Message(Kind.Deregister, self.id, self.req.tltsr_id, {"mt": mt_id}, t))
        return out

    # -- message handlers ---------------------------------------------------
    def _emit(self, msg: Message) -> None:
        self.send(msg.dst, msg.kind, **msg.payload)

    def on_Register(self, msg: Message) -> None:
        p = msg.payload
        record = AttestationRecord(p["mt"], p["txn"], p["nonce"], p["verdict"], p.get("enb0", ""), msg.src)
        try:
            self.register_mt(record.mt_id, record)
        except RegistrationDenied as exc:
            self.record("tltac.denied", mt=record.mt_id, txn=record.txn, reason=str(exc))
            return
        reg = self.registry.registered[record.mt_id]
        event = self.registry.history[-1][1]
        self.record("tltac.register", mt=record.mt_id, txn=record.txn, nonce=record.nonce,
                    enb0=record.enb0, enb1=record.enb1, event=event, version=reg.policy_version)
        self._emit(self.download_policy(record.mt_id, record.txn))
        if self.agps_initiator == "tltac":
            self.send(self.agps, Kind.AgpsRegister, mt=record.mt_id, action="add", txn=record.txn)
        self.set_timer(self.t_expire, "expire", mt=record.mt_id, stamp=reg.registered_at)

    def on_Deregister(self, msg: Message) -> None:
        mt_id = msg.payload["mt"]
        try:
            out = self.deregister_mt(mt_id)
        except NotRegistered:
            self.record("tltac.deregister", mt=mt_id, ok=False, reason="NotRegistered")
            self.send(msg.src, Kind.DeregisterAck, mt=mt_id, ok=False)
            return
        self.record("tltac.deregister", mt=mt_id, ok=True)
        for m in out:
            self._emit(m)

    def on_AuthzRequest(self, msg: Message) -> None:
        p = msg.payload
        d = self.authorize(p["mt"], p["service"], bool(p["in_pz"]))
        self.record("tltac.authz", mt=p["mt"], service=p["service"], in_pz=p["in_pz"], decision=str(d))
        self.send(msg.src, Kind.AuthzResponse, request_id=p["request_id"], grant=d.grant, reason=d.reason)

    def on_timer(self, name: str, data: dict) -> None:
        if name != "expire":
            super().on_timer(name, data)
        mt_id = data["mt"]
        reg = self.registry.registered.get(mt_id)
        if reg is not None and reg.registered_at == data["stamp"]:
            del self.registry.registered[mt_id]
            self.registry.history.append((mt_id, "expire", self.now()))
            self.deregistrations[mt_id] = self.deregistrations.get(mt_id, 0) + 1
            self.record("tltac.expire", mt=mt_id)
            self.send(self.agps, Kind.AgpsRegister, mt=mt_id, action="remove")


# module-level spellings of the registry operations


def register_mt(tltac: Tltac, mt_id: str, record: AttestationRecord) -> Message:
    return tltac.register_mt(mt_id, record)


def download_policy(tltac: Tltac, mt_id: str) -> Message:
    return tltac.download_policy(mt_id)


def authorize(tltac: Tltac, mt_id: str, service: str, in_pz: bool) -> Decision:
    return tltac.authorize(mt_id, service, in_pz)


def deregister_mt(tltac: Tltac, mt_id: str) -> list[Message]:
    return tltac.deregister_mt(mt_id)
