"""Deterministic discrete-event core: clock, event queue, transport and event log."""
from __future__ import annotations

import enum
import hashlib
import heapq
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import InvariantBreach
from ..protocol.messages import Kind, Message, jsonable

log = logging.getLogger(__name__)


class EventKind(str, enum.Enum):
    MessageDelivery = "MessageDelivery"
    LocationPoll = "LocationPoll"
    TimerFire = "TimerFire"
    TraceWaypoint = "TraceWaypoint"
    AttackAction = "AttackAction"


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    target: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class Streams:
    """Named RNG substreams derived from one seed.

    Each consumer gets its own generator, so adding a consumer never shifts
    the numbers another one sees.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, random.Random] = {}

    def __call__(self, name: str) -> random.Random:
        if name not in self._streams:
            h = hashlib.sha256(f"{self.seed}/{name}".encode()).digest()
            self._streams[name] = random.Random(int.from_bytes(h[:8], "big"))
        return self._streams[name]


@dataclass(frozen=True)
class LatencyModel:
    low: float = 0.010
    high: float = 0.050

    def __post_init__(self) -> None:
        if self.low < 0 or self.high < self.low:
            raise ValueError(f"bad latency range [{self.low}, {self.high}]")

    def sample(self, rng: random.Random) -> float:
        if self.high == 0.0:
            return 0.0
        return rng.uniform(self.low, self.high)


@dataclass(frozen=True)
class DropModel:
    p: float = 0.0
    by_kind: dict[str, float] = field(default_factory=dict)

    def probability(self, kind: Kind) -> float:
        return self.by_kind.get(kind.value, self.p)

    def should_drop(self, kind: Kind, rng: random.Random) -> bool:
        p = self.probability(kind)
        if p <= 0.0:
            return False
        return p >= 1.0 or rng.random() < p


class EventLog:
    """Line-delimited structured records with stable field order."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def write(self, t: float, kind: str, entity: str, **detail: Any) -> dict:
        rec = {"seq": len(self.records), "t": round(t, 6), "kind": kind, "entity": entity,
               "detail": jsonable(detail)}
        self.records.append(rec)
        return rec

    def lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":"), ensure_ascii=False) for r in self.records]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]


class Entity:
    """A single-threaded state machine reachable only through messages and timers."""

    def __init__(self, entity_id: str):
        self.id = entity_id
        self.engine: Engine | None = None

    def send(self, dst: str, kind: Kind, **payload: Any) -> Message:
        return self.engine.send(self.id, dst, kind, payload)

    def set_timer(self, delay: float, name: str, **data: Any) -> SimEvent:
        return self.engine.schedule(self.engine.now + delay, EventKind.TimerFire, self.id,
                                    {"name": name, **data})

    def receive(self, msg: Message) -> None:
        handler = getattr(self, f"on_{msg.kind.value}", None)
        if handler is None:
            self.engine.log.write(self.engine.now, "msg.ignored", self.id, id=msg.id, kind=msg.kind.value)
            return
        handler(msg)

    def on_timer(self, name: str, data: dict) -> None:
        raise NotImplementedError(f"{self.id} has no timer {name!r}")

    def record(self, kind: str, **detail: Any) -> None:
        self.engine.log.write(self.engine.now, kind, self.id, **detail)


class Engine:
    def __init__(self, seed: int = 0, latency: LatencyModel | None = None, drop: DropModel | None = None):
        self.seed = seed
        self.streams = Streams(seed)
        self.latency = latency or LatencyModel()
        self.drop = drop or DropModel()
        self.log = EventLog()
        self.now = 0.0
        self.entities: dict[str, Entity] = {}
        self.muted: set[str] = set()
        self.taps: list[Callable[[Message], None]] = []
        self._queue: list[SimEvent] = []
        self._seq = 0
        self._msg_id = 0
        self.sent: Counter = Counter()       # (entity, kind)
        self.received: Counter = Counter()   # (entity, kind)
        self.delivered: Counter = Counter()  # (entity, kind) keyed by sender
        self.dropped: Counter = Counter()    # (entity, kind) keyed by sender
        self.drop_log: list[tuple[int, str, str]] = []
        self.executed = 0

    def add(self, entity: Entity) -> Entity:
        if entity.id in self.entities:
            raise ValueError(f"duplicate entity id {entity.id!r}")
        entity.engine = self
        self.entities[entity.id] = entity
        return entity

    def schedule(self, time: float, kind: EventKind, target: str, payload: Any = None) -> SimEvent:
        if time < self.now:
            raise InvariantBreach(f"event scheduled in the past: {time} < {self.now}")
        ev = SimEvent(time, self._seq, kind, target, payload)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def send(self, src: str, dst: str, kind: Kind, payload: dict) -> Message:
        self._msg_id += 1
        msg = Message(kind, src, dst, dict(payload), self.now, self._msg_id)
        self.sent[(src, kind)] += 1
        self.log.write(self.now, "msg.send", src, id=msg.id, msg=kind.value, dst=dst, payload=msg.summary())
        for tap in self.taps:
            tap(msg)
        reason = None
        if src in self.muted or dst in self.muted:
            reason = "shielded"
        elif dst not in self.entities:
            reason = "unknown-destination"
        elif self.drop.should_drop(kind, self.streams("drop")):
            reason = "random"
        if reason is not None:
            self.dropped[(src, kind)] += 1
            self.drop_log.append((msg.id, kind.value, reason))
            self.log.write(self.now, "msg.drop", src, id=msg.id, msg=kind.value, reason=reason)
            return msg
        delay = self.latency.sample(self.streams("latency"))
        self.schedule(self.now + delay, EventKind.MessageDelivery, dst, msg)
        return msg

    def radio_command(self, src: str, mt: str, txn: str, target: str) -> None:
        """Air-interface handover command; lower-layer signalling outside the message vocabulary."""
        self.log.write(self.now, "radio.ho_command", src, mt=mt, txn=txn, target=target)
        delay = self.latency.sample(self.streams("latency"))
        self.schedule(self.now + delay, EventKind.TimerFire, mt, {"name": "ho_command", "txn": txn, "target": target})

    def pending(self) -> int:
        return len(self._queue)

    def in_flight(self) -> list[int]:
        """Ids of messages sent but not yet delivered."""
        return sorted(ev.payload.id for ev in self._queue if ev.kind is EventKind.MessageDelivery)

    def step(self) -> SimEvent:
        ev = heapq.heappop(self._queue)
        if ev.time < self.now:
            raise InvariantBreach(f"causality violated: event at {ev.time} after clock {self.now}")
        self.now = ev.time
        self.executed += 1
        if ev.kind is EventKind.MessageDelivery:
            msg: Message = ev.payload
            if msg.dst in self.muted:
                # shield raised while the message was in flight
                self.dropped[(msg.src, msg.kind)] += 1
                self.drop_log.append((msg.id, msg.kind.value, "shielded"))
                self.log.write(self.now, "msg.drop", msg.src, id=msg.id, msg=msg.kind.value, reason="shielded")
            else:
                self.received[(msg.dst, msg.kind)] += 1
                self.delivered[(msg.src, msg.kind)] += 1
                self.log.write(self.now, "msg.deliver", msg.dst, id=msg.id, msg=msg.kind.value, src=msg.src)
                self.entities[msg.dst].receive(msg)
        elif ev.kind is EventKind.TimerFire:
            self.entities[ev.target].on_timer(ev.payload["name"], ev.payload)
        else:
            handler = getattr(self.entities[ev.target], "on_" + ev.kind.value)
            handler(ev.payload)
        return ev

    def run(self, until: float | None = None) -> float:
        while self._queue:
            if until is not None and self._queue[0].time > until:
                break
            self.step()
        return self.now
