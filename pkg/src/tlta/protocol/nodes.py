"""Network-side entities: eNBs, the access gateway, A-GPS and the service requester."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable

from ..errors import DuplicateTransaction
from ..geometry import CellId
from ..sim.engine import Entity
from ..trust import (AttestationPackage, CredentialRegistry, NONCE_SIZE, Reason, RimCert, Verdict,
                     verify_attestation)
from .messages import Kind, Message
from .tltac import enb_id


@dataclass(frozen=True)
class Nonce:
    bytes: bytes
    issued_by: str
    issued_at: float
    transaction: str


class NonceBook:
    """Nonces per handover transaction; each is single-use."""

    def __init__(self) -> None:
        self._issued: dict[str, Nonce] = {}
        self._consumed: set[str] = set()

    def __contains__(self, txn: str) -> bool:
        return txn in self._issued

    def add(self, nonce: Nonce) -> None:
        if nonce.transaction in self._issued:
            raise DuplicateTransaction(f"transaction {nonce.transaction!r} already carries a nonce")
        self._issued[nonce.transaction] = nonce

    def live(self, txn: str) -> bytes | None:
        if txn in self._consumed or txn not in self._issued:
            return None
        return self._issued[txn].bytes

    def consume(self, txn: str) -> None:
        self._consumed.add(txn)

    def all(self) -> list[Nonce]:
        return list(self._issued.values())


def generate_nonce(enb0: str, transaction: str, rng: random.Random, book: NonceBook | None = None,
                   now: float = 0.0) -> Nonce:
    if book is not None and transaction in book:
        raise DuplicateTransaction(f"transaction {transaction!r} already carries a nonce")
    nonce = Nonce(rng.getrandbits(8 * NONCE_SIZE).to_bytes(NONCE_SIZE, "big"), enb0, now, transaction)
    if book is not None:
        book.add(nonce)
    return nonce


@dataclass
class _Txn:
    mt: str
    peer: str
    role: str  # "source" or "target"
    attestation: bool = False
    nonce: str | None = None
    pending: list[Message] = field(default_factory=list)


class ENodeB(Entity):
    """Base station for one cell.

    As source (eNB0) of a perimeter handover it only generates and distributes
    the nonce; as target (eNB1) it verifies the attestation and registers the MT.
    """

    def __init__(self, cell: CellId, rims: Iterable[RimCert], registry: CredentialRegistry,
                 tltac: str = "tltac"):
        super().__init__(enb_id(cell))
        self.cell = cell
        self.rims = tuple(rims)
        self.registry = registry
        self.tltac = tltac
        self.role: str | None = None
        self.cover: frozenset[CellId] = frozenset()
        self.nonces = NonceBook()
        self.txns: dict[str, _Txn] = {}
        self.verifications = 0

    @property
    def armed(self) -> bool:
        return self.role == "c1"

    def on_NodeConfigure(self, msg: Message) -> None:
        cfg = msg.payload["cells"]
        self.role = cfg["role"]
        self.cover = frozenset(CellId(q, r) for q, r in cfg["cover"])
        self.tltac = cfg.get("tltac", self.tltac)
        self.record("enb.configured", role=self.role)

    # -- source side --------------------------------------------------------
    def on_MeasurementReport(self, msg: Message) -> None:
        p = msg.payload
        target = CellId(*p["target_cell"])
        txn = p["txn"]
        self.txns[txn] = _Txn(p["mt"], enb_id(target), "source")
        self.send(enb_id(target), Kind.HoRequest, txn=txn, mt=p["mt"], source_cell=p["source_cell"],
                  target_cell=p["target_cell"])

    def on_HoResponse(self, msg: Message) -> None:
        txn = msg.payload["txn"]
        t = self.txns.get(txn)
        if t is None:
            return
        if msg.payload["attestation_required"]:
            nonce = generate_nonce(self.id, txn, self.engine.streams("nonce"), self.nonces, self.engine.now)
            self.record("nonce", txn=txn, nonce=nonce.bytes.hex(), mt=t.mt, enb1=t.peer)
            self.send(t.mt, Kind.AttestationRequest, txn=txn, nonce=nonce.bytes.hex())
            self.send(t.peer, Kind.NonceTransfer, txn=txn, nonce=nonce.bytes.hex())
        self.engine.radio_command(self.id, t.mt, txn, t.peer)
        del self.txns[txn]

    # -- target side --------------------------------------------------------
    def on_HoRequest(self, msg: Message) -> None:
        p = msg.payload
        source = CellId(*p["source_cell"])
        required = self.armed and source not in self.cover and self.cell in self.cover
        self.txns[p["txn"]] = _Txn(p["mt"], msg.src, "target", attestation=required)
        self.send(msg.src, Kind.HoResponse, txn=p["txn"], attestation_required=required)

    def on_NonceTransfer(self, msg: Message) -> None:
        txn = msg.payload["txn"]
        t = self.txns.get(txn)
        if t is None or t.role != "target":
            self.record("enb.stray_nonce", txn=txn)
            return
        t.nonce = msg.payload["nonce"]
        pending, t.pending = t.pending, []
        for sub in pending:
            self._verify(sub)

    def on_HoExecute(self, msg: Message) -> None:
        txn = msg.payload["txn"]
        self.send(msg.src, Kind.HoAck, txn=txn)
        t = self.txns.get(txn)
        if t is not None and not t.attestation:
            del self.txns[txn]

    def on_AttestationSubmit(self, msg: Message) -> None:
        t = self.txns.get(msg.payload["txn"])
        if t is not None and t.role == "target" and t.nonce is None and t.attestation:
            # package overtook the nonce from eNB0
            t.pending.append(msg)
            return
        self._verify(msg)

    def _verify(self, msg: Message) -> None:
        txn = msg.payload["txn"]
        t = self.txns.get(txn)
        # the transaction is dropped after one verification, so its nonce is single-use
        expected = bytes.fromhex(t.nonce) if t is not None and t.nonce is not None else None
        try:
            pkg = AttestationPackage.from_bytes(bytes.fromhex(msg.payload["package"]))
        except ValueError:
            verdict = Verdict(False, Reason.FORGED)
            pkg = None
        else:
            verdict = verify_attestation(pkg, expected, self.rims, self.registry)
        self.verifications += 1
        mt = pkg.credential.mt_id if pkg else msg.src
        self.record("attest.verify", txn=txn, mt=mt, src=msg.src, verdict=str(verdict),
                    nonce=pkg.nonce.hex() if pkg else "", enb0=t.peer if t else "")
        self.send(msg.src, Kind.AttestationAck, txn=txn, activate_lte=verdict.accepted)
        if verdict.accepted:
            self.send(self.tltac, Kind.Register, txn=txn, mt=mt, nonce=pkg.nonce.hex(), verdict="Accept",
                      enb0=t.peer)
        if t is not None:
            del self.txns[txn]


class Agw(Entity):
    """Pure relay of node configuration from the TLTAC to the eNBs."""

    def __init__(self, entity_id: str = "agw"):
        super().__init__(entity_id)

    def on_NodeConfigure(self, msg: Message) -> None:
        for cfg in msg.payload["cells"]:
            self.send(cfg["enb"], Kind.NodeConfigure, cells=cfg)


class AgpsService(Entity):
    def __init__(self, entity_id: str = "agps"):
        super().__init__(entity_id)
        self.registered: set[str] = set()

    def on_AgpsRegister(self, msg: Message) -> None:
        mt, action = msg.payload["mt"], msg.payload["action"]
        if action == "add":
            self.registered.add(mt)
        else:
            self.registered.discard(mt)
        self.record("agps." + action, mt=mt)


class Tltsr(Entity):
    """Service requester; only observes exit notifications."""

    def on_Deregister(self, msg: Message) -> None:
        self.record("tltsr.exit", mt=msg.payload["mt"])
