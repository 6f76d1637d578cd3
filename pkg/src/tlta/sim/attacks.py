"""Attack injectors: radio shielding, handover suppression, LTE tampering, nonce replay, GPS spoofing."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from ..errors import ConfigError
from ..protocol.messages import Kind, Message
from .engine import Entity, EventKind

if TYPE_CHECKING:
    from .world import World


class AttackKind(str, enum.Enum):
    ShieldedCrossing = "ShieldedCrossing"
    HandoverSuppression = "HandoverSuppression"
    TamperedLte = "TamperedLte"
    NonceReplay = "NonceReplay"
    GpsSpoof = "GpsSpoof"


REQUIRED_PARAMS: dict[AttackKind, tuple[str, ...]] = {
    AttackKind.ShieldedCrossing: ("start", "end"),
    AttackKind.HandoverSuppression: ("start", "end"),
    AttackKind.TamperedLte: (),
    AttackKind.NonceReplay: (),
    AttackKind.GpsSpoof: ("offset",),
}


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    target: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        missing = [p for p in REQUIRED_PARAMS[self.kind] if p not in self.params]
        if missing:
            raise ConfigError(f"{self.kind.value} attack on {self.target}: missing parameters {', '.join(missing)}")


class Adversary(Entity):
    """Drives timed attack actions and plays the replaying eavesdropper."""

    def __init__(self, entity_id: str = "adversary"):
        super().__init__(entity_id)
        self.captured: dict[str, Message] = {}
        self.replay_plan: dict[str, dict] = {}
        self.replay_results: list[str] = []

    def on_AttackAction(self, payload: dict) -> None:
        world: World = payload["world"]
        action, mt_id = payload["action"], payload["mt"]
        mt = world.mts[mt_id]
        if action == "shield":
            self.engine.muted.add(mt_id)
        elif action == "unshield":
            self.engine.muted.discard(mt_id)
        elif action == "suppress":
            mt.suppress_inbound = True
        elif action == "unsuppress":
            mt.suppress_inbound = False
        elif action == "spoof":
            mt.spoof = tuple(payload["offset"])
        elif action == "unspoof":
            mt.spoof = (0.0, 0.0)
        elif action == "replay":
            self._replay(mt_id, payload["remaining"], payload["interval"])
            return
        self.record("attack." + action, mt=mt_id)

    def tap(self, msg: Message) -> None:
        plan = self.replay_plan.get(msg.src)
        if plan is None or msg.kind is not Kind.AttestationSubmit or msg.src in self.captured:
            return
        self.captured[msg.src] = msg
        self.record("attack.capture", mt=msg.src, txn=msg.payload["txn"], dst=msg.dst)
        self.engine.schedule(self.engine.now + plan["delay"], EventKind.AttackAction, self.id,
                             {"world": plan["world"], "action": "replay", "mt": msg.src,
                              "remaining": plan["count"], "interval": plan["interval"]})

    def _replay(self, mt_id: str, remaining: int, interval: float) -> None:
        if remaining <= 0:
            return
        msg = self.captured[mt_id]
        self.send(msg.dst, Kind.AttestationSubmit, **msg.payload)
        if remaining > 1:
            plan = self.replay_plan[mt_id]
            self.engine.schedule(self.engine.now + interval, EventKind.AttackAction, self.id,
                                 {"world": plan["world"], "action": "replay", "mt": mt_id,
                                  "remaining": remaining - 1, "interval": interval})

    def on_AttestationAck(self, msg: Message) -> None:
        self.replay_results.append("accepted" if msg.payload["activate_lte"] else "rejected")


def inject_attack(attack: AttackSpec, world: World) -> list:
    """Arm one attack against ``world``; returns the scheduled actions."""
    if attack.target not in world.mts:
        raise ConfigError(f"attack {attack.kind.value}: unknown target {attack.target!r}")
    adv = world.adversary()
    engine = world.engine
    p = attack.params
    scheduled = []

    def at(t: float, action: str, **extra):
        scheduled.append(engine.schedule(float(t), EventKind.AttackAction, adv.id,
                                         {"world": world, "action": action, "mt": attack.target, **extra}))

    if attack.kind is AttackKind.ShieldedCrossing:
        at(p["start"], "shield")
        at(p["end"], "unshield")
    elif attack.kind is AttackKind.HandoverSuppression:
        at(p["start"], "suppress")
        at(p["end"], "unsuppress")
    elif attack.kind is AttackKind.GpsSpoof:
        at(p.get("start", 0.0), "spoof", offset=[float(v) for v in p["offset"]])
        if "end" in p:
            at(p["end"], "unspoof")
    elif attack.kind is AttackKind.TamperedLte:
        world.tamper_lte(attack.target, p.get("digest"))
    elif attack.kind is AttackKind.NonceReplay:
        adv.replay_plan[attack.target] = {"world": world, "count": int(p.get("count", 100)),
                                          "delay": float(p.get("delay", 5.0)),
                                          "interval": float(p.get("interval", 0.1))}
        if adv.tap not in engine.taps:
            engine.taps.append(adv.tap)
    return scheduled
