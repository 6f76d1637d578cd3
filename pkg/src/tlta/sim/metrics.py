"""Ground-truth violation detector and the aggregated run report."""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

from ..geometry import Polygon, boundary_distance, point_in_polygon
from ..protocol.messages import ATTESTATION_KINDS, Policy, Rule
from .mobility import MobilityTrace

if TYPE_CHECKING:
    from ..device import MobileTerminal
    from .engine import EventLog
    from .world import World


@dataclass(frozen=True)
class Violation:
    time: float
    mt_id: str
    kind: str  # FunctionalEnforcement or AccessControl
    detail: str

    def to_dict(self) -> dict:
        return {"time": round(self.time, 6), "mt": self.mt_id, "kind": self.kind, "detail": self.detail}


def protected_services(p_sp: Policy, p_pz: Policy) -> frozenset[str]:
    """Services whose credentials only the zone policy releases."""
    return frozenset(p_pz.access_grants - p_sp.access_grants)


class ViolationDetector:
    """Omniscient observer sampled at every MT poll.

    A condition counts as a violation once it has persisted longer than
    ``grace`` (the worst legitimate reaction time: k polls plus one message
    latency); each continuous episode is reported once.  Positions within
    ``margin`` of the pz boundary are ambiguous to any GPS-driven enforcer
    and are judged neither inside nor outside.
    """

    def __init__(self, pz: Polygon, p_sp: Policy, p_pz: Policy, registered, grace: float,
                 margin: float = 0.0):
        self.pz = pz
        self.margin = margin
        self.disabled_in_pz = sorted(f for f, r in p_pz.function_rules.items() if r is Rule.Disable)
        self.protected = sorted(protected_services(p_sp, p_pz))
        self.registered = registered  # callable mt_id -> bool
        self.grace = grace
        self.violations: list[Violation] = []
        self._since: dict[tuple[str, str], float] = {}
        self._reported: set[tuple[str, str]] = set()

    def _track(self, mt_id: str, kind: str, active: bool, now: float, detail: str) -> None:
        key = (mt_id, kind)
        if not active:
            self._since.pop(key, None)
            self._reported.discard(key)
            return
        start = self._since.setdefault(key, now)
        if now - start > self.grace and key not in self._reported:
            self._reported.add(key)
            self.violations.append(Violation(now, mt_id, kind, detail))

    def classify(self, pos) -> bool | None:
        """True inside pz, False outside, None within ``margin`` of its boundary."""
        if self.margin > 0 and not self.pz.far_from(pos, self.margin) \
                and boundary_distance(pos, self.pz) < self.margin:
            return None
        return point_in_polygon(pos, self.pz)

    def __call__(self, mt: MobileTerminal, now: float, pos) -> None:
        where = self.classify(pos)
        inside = where is True
        outside_pz = where is False
        fs = mt.lte.fs
        enabled = [f for f in self.disabled_in_pz if fs.functions.get(f) and fs.functions[f].value == "Enabled"]
        self._track(mt.id, "FunctionalEnforcement", inside and bool(enabled), now,
                    f"inside pz with {', '.join(enabled)} enabled")
        unlocked = [s for s in self.protected if fs.credential_vault.get(s) and fs.credential_vault[s].value == "Unlocked"]
        outside = outside_pz or not self.registered(mt.id)
        self._track(mt.id, "AccessControl", bool(unlocked) and outside, now,
                    f"{', '.join(unlocked)} unlocked outside pz or unregistered")


def last_inside(trace: MobilityTrace, pz: Polygon, t: float, step: float = 0.01) -> float | None:
    """Latest time <= t at which the true position was inside pz (to ~1 us), or None."""
    if point_in_polygon(trace.position_at(t), pz):
        return t
    hi = t
    lo = t - step
    while lo >= trace.start - step:
        if point_in_polygon(trace.position_at(lo), pz):
            for _ in range(20):
                mid = (lo + hi) / 2
                if point_in_polygon(trace.position_at(mid), pz):
                    lo = mid
                else:
                    hi = mid
            return lo
        hi, lo = lo, lo - step
    return None


def enforcement_overhang(trace: MobilityTrace, pz: Polygon, transitions: Iterable[tuple[float, str, str]],
                         end: float) -> float:
    """Longest time P_pz stayed enforced after the true position last left pz.

    ``transitions`` are (time, from, to) phase changes; an enforcement still
    running at ``end`` is measured up to ``end``.
    """
    releases = []
    enforcing = False
    for t, frm, to in transitions:
        if to == "EnforcingPz":
            enforcing = True
        elif frm == "EnforcingPz":
            releases.append(t)
            enforcing = False
    if enforcing:
        releases.append(end)
    worst = 0.0
    for release in releases:
        seen = last_inside(trace, pz, release)
        worst = max(worst, float("inf") if seen is None else release - seen)
    return worst


@dataclass
class MetricsReport:
    messages: dict[str, dict[str, dict[str, int]]] = field(default_factory=dict)
    registrations: int = 0
    refreshes: int = 0
    deregistrations: int = 0
    attestation: dict = field(default_factory=lambda: {"accepted": 0, "rejected": {}})
    judder_count: dict[str, int] = field(default_factory=dict)
    violations: list[Violation] = field(default_factory=list)
    fixes: dict[str, int] = field(default_factory=lambda: {"issued": 0, "dropped": 0})
    attestation_pairs: dict[str, int] = field(default_factory=dict)
    handovers: dict[str, int] = field(default_factory=dict)
    phases: dict[str, list[str]] = field(default_factory=dict)
    in_flight: int = 0
    zone: dict[str, int] = field(default_factory=dict)
    op_scale: float = 0.0

    def violation_count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v.kind == kind)

    def to_dict(self) -> dict:
        return {
            "messages": self.messages,
            "registrations": self.registrations,
            "refreshes": self.refreshes,
            "deregistrations": self.deregistrations,
            "attestation": self.attestation,
            "judder_count": self.judder_count,
            "violations": [v.to_dict() for v in self.violations],
            "violation_counts": {k: self.violation_count(k) for k in ("FunctionalEnforcement", "AccessControl")},
            "fixes": self.fixes,
            "attestation_pairs": self.attestation_pairs,
            "handovers": self.handovers,
            "phases": self.phases,
            "in_flight": self.in_flight,
            "zone": self.zone,
            "op_scale": self.op_scale,
        }


def phase_sequence(log: EventLog, mt_id: str) -> list[str]:
    """Phases visited by one MT, starting from Normal; refresh records are skipped."""
    seq = ["Normal"]
    for r in log.records:
        if r["kind"] == "phase" and r["entity"] == mt_id and r["detail"]["from"] != r["detail"]["to"]:
            seq.append(r["detail"]["to"])
    return seq


def attestation_pairs(log: EventLog) -> dict[str, int]:
    """Attestation-stage messages per (eNB0, eNB1) pair, keyed ``"enb0->enb1"``."""
    pair_of = {}
    for r in log.of_kind("nonce"):
        pair_of[r["detail"]["txn"]] = f"{r['entity']}->{r['detail']['enb1']}"
    kinds = {k.value for k in ATTESTATION_KINDS}
    counts: Counter = Counter()
    for r in log.of_kind("msg.send"):
        d = r["detail"]
        if d["msg"] in kinds and r["entity"] != "adversary":
            pair = pair_of.get(d["payload"].get("txn"))
            if pair is not None:
                counts[pair] += 1
    return dict(sorted(counts.items()))


def build_report(world: World) -> MetricsReport:
    engine = world.engine
    log = engine.log
    msgs: dict = defaultdict(lambda: defaultdict(lambda: {"sent": 0, "received": 0, "delivered": 0, "dropped": 0}))
    for (ent, kind), n in engine.sent.items():
        msgs[ent][kind.value]["sent"] = n
    for (ent, kind), n in engine.received.items():
        msgs[ent][kind.value]["received"] = n
    for (ent, kind), n in engine.delivered.items():
        msgs[ent][kind.value]["delivered"] = n
    for (ent, kind), n in engine.dropped.items():
        msgs[ent][kind.value]["dropped"] = n
    messages = {e: {k: dict(v) for k, v in sorted(kinds.items())} for e, kinds in sorted(msgs.items())}

    rejected: Counter = Counter()
    accepted = 0
    for r in log.of_kind("attest.verify"):
        v = r["detail"]["verdict"]
        if v == "Accept":
            accepted += 1
        else:
            rejected[v[len("Reject("):-1]] += 1

    handovers = Counter(r["detail"]["msg"] == "HoResponse" and r["detail"]["payload"]["attestation_required"]
                        for r in log.of_kind("msg.send") if r["detail"]["msg"] == "HoResponse")
    history = world.tltac.registry.history
    mts = sorted(world.mts)
    return MetricsReport(
        messages=messages,
        registrations=sum(1 for _, ev, _ in history if ev == "register"),
        refreshes=sum(1 for _, ev, _ in history if ev == "refresh"),
        deregistrations=sum(1 for _, ev, _ in history if ev in ("deregister", "expire")),
        attestation={"accepted": accepted, "rejected": dict(sorted(rejected.items()))},
        judder_count={m: world.tltac.new_registrations.get(m, 0) for m in mts},
        violations=list(world.detector.violations),
        fixes={"issued": sum(world.mts[m].fixes_issued for m in mts),
               "dropped": sum(world.mts[m].fixes_dropped for m in mts)},
        attestation_pairs=attestation_pairs(log),
        handovers={"attested": handovers.get(True, 0), "plain": handovers.get(False, 0),
                   "suppressed": len(log.of_kind("ho.suppressed"))},
        phases={m: phase_sequence(log, m) for m in mts},
        in_flight=len(world.in_flight),
        zone=world.zone.counts(),
        op_scale=world.zone.op_scale,
    )
