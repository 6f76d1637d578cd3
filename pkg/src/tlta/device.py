"""Mobile terminal and its Location Trigger Enforcer (LTE).

:class:`LocationTriggerEnforcer` is the pure device-side state machine;
:class:`MobileTerminal` wires it to the simulation (radio, timers, GPS).
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import InvalidTransition, UnknownFunction
from .geometry import CellId, HexGrid, Polygon, point_in_polygon
from .protocol.messages import Kind, Message, Policy, Rule
from .protocol.tltac import Decision, GRANT, enb_id
from .sim.engine import Entity, EventKind
from .sim.mobility import MobilityTrace, gps_fix
from .trust import AiCredential, CredentialRegistry, PlatformState, build_attestation_package


class Phase(str, enum.Enum):
    Normal = "Normal"
    AwaitingAttestation = "AwaitingAttestation"
    LteActiveSp = "LteActiveSp"
    EnforcingPz = "EnforcingPz"
    Deregistering = "Deregistering"


LEGAL = {
    Phase.Normal: {Phase.AwaitingAttestation},
    Phase.AwaitingAttestation: {Phase.LteActiveSp, Phase.Normal},
    Phase.LteActiveSp: {Phase.EnforcingPz, Phase.Deregistering},
    Phase.EnforcingPz: {Phase.LteActiveSp},
    Phase.Deregistering: {Phase.Normal},
}


class FnState(str, enum.Enum):
    Enabled = "Enabled"
    Disabled = "Disabled"


class Vault(str, enum.Enum):
    Locked = "Locked"
    Unlocked = "Unlocked"


@dataclass(frozen=True)
class FunctionState:
    functions: dict[str, FnState]
    credential_vault: dict[str, Vault]

    @classmethod
    def normal(cls, functions: Iterable[str], services: Iterable[str] = ()) -> FunctionState:
        return cls({f: FnState.Enabled for f in sorted(functions)},
                   {s: Vault.Locked for s in sorted(services)})

    def to_dict(self) -> dict:
        return {"functions": {k: v.value for k, v in self.functions.items()},
                "vault": {k: v.value for k, v in self.credential_vault.items()}}


def apply_policy(fs: FunctionState, p: Policy) -> FunctionState:
    unknown = sorted(set(p.function_rules) - set(fs.functions))
    if unknown:
        raise UnknownFunction(f"{p.id} references unknown device functions: {', '.join(unknown)}")
    functions = dict(fs.functions)
    for name, rule in p.function_rules.items():
        functions[name] = FnState.Enabled if rule is Rule.Enable else FnState.Disabled
    vault = {s: Vault.Unlocked if s in p.access_grants else Vault.Locked for s in fs.credential_vault}
    for s in p.access_grants:
        vault.setdefault(s, Vault.Unlocked)
    return FunctionState(functions, dict(sorted(vault.items())))


@dataclass(frozen=True)
class PolicyBundle:
    """Contents of a policy download."""

    p_sp: Policy
    p_pz: Policy
    pz: Polygon
    op: Polygon
    version: int = 1

    @classmethod
    def from_payload(cls, payload: dict) -> PolicyBundle:
        return cls(Policy.from_dict(payload["p_sp"]), Policy.from_dict(payload["p_pz"]),
                   Polygon.of(payload["pz"]), Polygon.of(payload["op"]), int(payload["policy_version"]))


@dataclass
class LteState:
    active: bool = False
    policies: tuple[Policy, Policy] | None = None
    zones: tuple[Polygon, Polygon] | None = None
    current_policy: str | None = None
    debounce_count: int = 2
    last_fixes: deque = field(default_factory=lambda: deque(maxlen=8))
    in_streak: int = 0
    out_streak: int = 0
    op_out_streak: int = 0
    version: int = 0


class LocationTriggerEnforcer:
    """Phase machine of the device: attestation, policy switching and release at ``op``."""

    def __init__(self, functions: Iterable[str], services: Iterable[str] = (), debounce: int = 2):
        if debounce < 1:
            raise ValueError("debounce must be >= 1")
        self.function_names = sorted(functions)
        self.services = sorted(services)
        self.phase = Phase.Normal
        self.state = LteState(debounce_count=debounce)
        self.fs = FunctionState.normal(self.function_names, self.services)
        self.transitions: list[tuple[float, Phase, Phase]] = []
        self.ack_received = False
        self.pending_download: PolicyBundle | None = None

    # -- helpers -------------------------------------------------------------
    def _enforce(self) -> None:
        if self.phase in (Phase.LteActiveSp, Phase.Deregistering):
            self.fs = apply_policy(FunctionState.normal(self.function_names, self.services), self.state.policies[0])
            self.state.current_policy = "P_sp"
        elif self.phase is Phase.EnforcingPz:
            self.fs = apply_policy(FunctionState.normal(self.function_names, self.services), self.state.policies[1])
            self.state.current_policy = "P_pz"
        else:
            self.fs = FunctionState.normal(self.function_names, self.services)
            self.state.current_policy = None

    def _move(self, to: Phase, t: float) -> tuple[Phase, Phase]:
        if to not in LEGAL[self.phase]:
            raise InvalidTransition(f"{self.phase.value} -> {to.value}")
        frm = self.phase
        self.phase = to
        self._enforce()
        self.transitions.append((t, frm, to))
        return frm, to

    def _install(self, bundle: PolicyBundle) -> None:
        for p in (bundle.p_sp, bundle.p_pz):
            unknown = sorted(set(p.function_rules) - set(self.function_names))
            if unknown:
                raise UnknownFunction(f"{p.id} references unknown device functions: {', '.join(unknown)}")
        s = self.state
        s.active = True
        s.policies = (bundle.p_sp, bundle.p_pz)
        s.zones = (bundle.pz, bundle.op)
        s.version = bundle.version
        s.in_streak = s.out_streak = s.op_out_streak = 0

    # -- attestation ---------------------------------------------------------
    def begin_attestation(self, t: float) -> tuple[Phase, Phase]:
        self.ack_received = False
        self.pending_download = None
        return self._move(Phase.AwaitingAttestation, t)

    def on_attestation_ack(self, activate: bool, download: PolicyBundle | None, t: float) -> Phase:
        if self.phase is not Phase.AwaitingAttestation:
            raise InvalidTransition(f"attestation ack in phase {self.phase.value}")
        if not activate:
            self._move(Phase.Normal, t)
            return self.phase
        self.ack_received = True
        download = download or self.pending_download
        if download is not None:
            self._install(download)
            self._move(Phase.LteActiveSp, t)
        return self.phase

    def on_policy_download(self, bundle: PolicyBundle, t: float) -> Phase:
        if self.phase is Phase.AwaitingAttestation:
            if self.ack_received:
                self._install(bundle)
                self._move(Phase.LteActiveSp, t)
            else:
                self.pending_download = bundle
        elif self.state.active:
            self._install(bundle)
            self._enforce()
        return self.phase

    def on_policy_timeout(self, t: float) -> bool:
        """Give up waiting for the policy download; True if this changed the phase."""
        if self.phase is Phase.AwaitingAttestation:
            self._move(Phase.Normal, t)
            return True
        return False

    # -- location trigger ----------------------------------------------------
    def on_location_fix(self, fix: Sequence[float], t: float) -> list[tuple[Phase, Phase]]:
        s = self.state
        if not s.active or self.phase not in (Phase.LteActiveSp, Phase.EnforcingPz):
            return []
        pz, op = s.zones
        in_pz = point_in_polygon(fix, pz)
        in_op = point_in_polygon(fix, op)
        s.last_fixes.append((t, (fix[0], fix[1]), in_pz))
        if in_pz:
            s.in_streak += 1
            s.out_streak = 0
        else:
            s.out_streak += 1
            s.in_streak = 0
        s.op_out_streak = 0 if in_op else s.op_out_streak + 1

        k = s.debounce_count
        out = []
        if self.phase is Phase.LteActiveSp and s.in_streak >= k:
            out.append(self._move(Phase.EnforcingPz, t))
        elif self.phase is Phase.EnforcingPz and s.out_streak >= k:
            out.append(self._move(Phase.LteActiveSp, t))
        if self.phase is Phase.LteActiveSp and s.op_out_streak >= k:
            out.append(self._move(Phase.Deregistering, t))
        return out

    def authorize_local(self, service: str) -> Decision:
        if not self.state.active:
            return Decision(False, "LteInactive")
        if self.phase is not Phase.EnforcingPz:
            return Decision(False, "OutsidePz")
        if service not in self.state.policies[1].access_grants:
            return Decision(False, "NotGranted")
        return GRANT

    @property
    def in_pz(self) -> bool:
        return self.phase is Phase.EnforcingPz

    def on_cross_op_outbound(self, t: float) -> Phase:
        """Release after deregistration was acknowledged or timed out."""
        if self.phase is not Phase.Deregistering:
            raise InvalidTransition(f"op release in phase {self.phase.value}")
        s = self.state
        s.active = False
        s.policies = None
        s.zones = None
        s.in_streak = s.out_streak = s.op_out_streak = 0
        s.last_fixes.clear()
        self._move(Phase.Normal, t)
        return self.phase


def authorize_local(lte: LocationTriggerEnforcer, service: str) -> Decision:
    return lte.authorize_local(service)


@dataclass
class _Handover:
    txn: str
    target: CellId
    started: float
    executed: bool = False
    acked: bool = False


class MobileTerminal(Entity):
    """Simulated MT: moves along a trace, hands over between cells and hosts the LTE."""

    def __init__(self, mt_id: str, trace: MobilityTrace, grid: HexGrid, platform: PlatformState,
                 credential: AiCredential | None, registry: CredentialRegistry, functions: Iterable[str],
                 services: Iterable[str] = (), *, debounce: int = 2, poll_period: float = 1.0,
                 poll_offset: float = 0.0, gps_sigma: float = 5.0, t_pol: float = 10.0,
                 t_dereg: float = 10.0, t_ho: float = 2.0, tltac: str = "tltac", agps: str = "agps",
                 agps_initiator: str = "tltac", authz_mode: str = "local"):
        super().__init__(mt_id)
        self.trace = trace
        self.grid = grid
        self.platform = platform
        self.credential = credential
        self.registry = registry
        self.lte = LocationTriggerEnforcer(functions, services, debounce)
        self.poll_period = poll_period
        self.poll_offset = poll_offset
        self.gps_sigma = gps_sigma
        self.t_pol = t_pol
        self.t_dereg = t_dereg
        self.t_ho = t_ho
        self.tltac = tltac
        self.agps = agps
        self.agps_initiator = agps_initiator
        self.authz_mode = authz_mode
        self.serving: CellId | None = None
        self.ho: _Handover | None = None
        self.nonces: dict[str, str] = {}
        self.attesting_txn: str | None = None
        self.ho_count = 0
        self.spoof: tuple[float, float] = (0.0, 0.0)
        self.suppress_inbound = False
        self.fixes_issued = 0
        self.fixes_dropped = 0
        self.dereg_retries = 0
        self._dereg_token = 0
        self._authz_seq = 0
        # filled by the world so handover detection can classify crossings
        self.zone_cover: frozenset[CellId] = frozenset()
        self.observers: list = []

    # -- lifecycle -----------------------------------------------------------
    def start(self) -> None:
        t0 = self.trace.start
        self.serving = self.grid.nearest_cell(self.trace.position_at(t0))
        self.engine.schedule(t0, EventKind.TraceWaypoint, self.id, {"index": 0})
        self.engine.schedule(t0 + self.poll_offset, EventKind.LocationPoll, self.id, None)
        self.record("mt.start", cell=self.serving.as_pair(), boot=self.platform.state.value,
                    phase=self.lte.phase.value, **self.lte.fs.to_dict())

    def on_TraceWaypoint(self, payload: dict) -> None:
        i = payload["index"]
        t, (x, y) = self.trace.waypoints[i]
        self.record("waypoint", index=i, x=round(x, 6), y=round(y, 6))
        if i + 1 < len(self.trace.waypoints):
            self.engine.schedule(self.trace.waypoints[i + 1][0], EventKind.TraceWaypoint, self.id,
                                 {"index": i + 1})

    def true_position(self) -> tuple[float, float]:
        return self.trace.position_at(self.engine.now)

    def on_LocationPoll(self, _payload) -> None:
        now = self.engine.now
        pos = self.true_position()
        from .sim.world import detect_handover
        trigger = detect_handover(self, pos)
        if trigger is not None:
            self.start_handover(trigger)
        if self.lte.state.active and self.lte.phase in (Phase.LteActiveSp, Phase.EnforcingPz):
            self._take_fix(pos, now)
        for obs in self.observers:
            obs(self, now, pos)
        nxt = now + self.poll_period
        if nxt <= self.trace.end:
            self.engine.schedule(nxt, EventKind.LocationPoll, self.id, None)

    def _take_fix(self, pos: tuple[float, float], now: float) -> None:
        sx, sy = self.spoof
        fix = gps_fix((pos[0] + sx, pos[1] + sy), self.gps_sigma, self.engine.streams(f"noise/{self.id}"))
        self.fixes_issued += 1
        if not self.grid.contains(self.grid.nearest_cell(fix)):
            self.fixes_dropped += 1
            self.record("fix.dropped", x=round(fix[0], 3), y=round(fix[1], 3))
            return
        moves = self.lte.on_location_fix(fix, now)
        for frm, to in moves:
            self._log_phase(frm, to, "fix")
            if to is Phase.Deregistering:
                self._start_deregistration()

    # -- handover ------------------------------------------------------------
    def start_handover(self, target: CellId) -> None:
        self.ho_count += 1
        txn = f"{self.id}#ho{self.ho_count}"
        self.ho = _Handover(txn, target, self.engine.now)
        self.record("ho.trigger", txn=txn, source=self.serving.as_pair(), target=target.as_pair(),
                    inbound=self.serving not in self.zone_cover and target in self.zone_cover)
        self.send(enb_id(self.serving), Kind.MeasurementReport, txn=txn, mt=self.id,
                  source_cell=self.serving.as_pair(), target_cell=target.as_pair())

    def handover_stale(self) -> bool:
        return self.ho is not None and self.engine.now - self.ho.started > self.t_ho

    def on_timer(self, name: str, data: dict) -> None:
        getattr(self, "_timer_" + name)(data)

    def _timer_ho_command(self, data: dict) -> None:
        if self.id in self.engine.muted:
            self.record("radio.lost", txn=data["txn"])
            return
        if self.ho is None or self.ho.txn != data["txn"]:
            return
        self.ho.executed = True
        self.send(data["target"], Kind.HoExecute, txn=data["txn"])

    def on_HoAck(self, msg: Message) -> None:
        txn = msg.payload["txn"]
        if self.ho is None or self.ho.txn != txn:
            return
        self.serving = self.ho.target
        self.ho.acked = True
        self.record("ho.complete", txn=txn, cell=self.serving.as_pair())
        if txn in self.nonces:
            self._submit(txn, msg.src)
        self.ho = None

    # -- attestation ---------------------------------------------------------
    def on_AttestationRequest(self, msg: Message) -> None:
        txn = msg.payload["txn"]
        self.nonces[txn] = msg.payload["nonce"]
        if self.lte.phase is Phase.Normal:
            frm, to = self.lte.begin_attestation(self.engine.now)
            self._log_phase(frm, to, "attestation-request")
            self.attesting_txn = txn
            self.set_timer(self.t_pol, "attestation_timeout", txn=txn)
        elif self.lte.phase is Phase.Deregistering:
            self.nonces.pop(txn)
            return
        # HoAck may already be in: attestation follows the completed handover
        if self.ho is None and self.serving is not None:
            self._submit(txn, enb_id(self.serving))

    def _submit(self, txn: str, enb1: str) -> None:
        nonce = bytes.fromhex(self.nonces.pop(txn))
        if self.credential is None:
            self.record("attest.skipped", txn=txn, reason="no attestation identity")
            return
        pkg = build_attestation_package(self.platform, self.credential, nonce, self.registry)
        self.send(enb1, Kind.AttestationSubmit, txn=txn, package=pkg.to_bytes().hex())

    def on_AttestationAck(self, msg: Message) -> None:
        if self.lte.phase is not Phase.AwaitingAttestation or msg.payload["txn"] != self.attesting_txn:
            self.record("mt.ack_ignored", txn=msg.payload["txn"], activate=msg.payload["activate_lte"])
            return
        before = self.lte.phase
        after = self.lte.on_attestation_ack(bool(msg.payload["activate_lte"]), None, self.engine.now)
        if after is not before:
            self._log_phase(before, after, "attestation-ack")
            self._after_activation(after)

    def on_PolicyDownload(self, msg: Message) -> None:
        bundle = PolicyBundle.from_payload(msg.payload)
        before = self.lte.phase
        after = self.lte.on_policy_download(bundle, self.engine.now)
        self.record("policy.download", version=bundle.version, phase=after.value)
        if after is not before:
            self._log_phase(before, after, "policy-download")
            self._after_activation(after)
        elif self.lte.state.active:
            self._log_phase(after, after, "policy-refresh")

    def _after_activation(self, phase: Phase) -> None:
        if phase is Phase.LteActiveSp and self.agps_initiator == "device":
            self.send(self.agps, Kind.AgpsRegister, mt=self.id, action="add")

    def _timer_attestation_timeout(self, data: dict) -> None:
        if self.attesting_txn == data["txn"] and self.lte.phase is Phase.AwaitingAttestation:
            self.record("mt.warning", reason="attestation/policy timeout", txn=data["txn"])
            self.lte.on_policy_timeout(self.engine.now)
            self._log_phase(Phase.AwaitingAttestation, Phase.Normal, "timeout")

    # -- release at op -------------------------------------------------------
    def _start_deregistration(self) -> None:
        self._dereg_token += 1
        self.dereg_retries = 0
        self.send(self.tltac, Kind.Deregister, mt=self.id)
        self.set_timer(self.t_dereg, "dereg_timeout", token=self._dereg_token)

    def on_DeregisterAck(self, msg: Message) -> None:
        if self.lte.phase is Phase.Deregistering:
            self._release("ack")

    def _timer_dereg_timeout(self, data: dict) -> None:
        if data["token"] != self._dereg_token or self.lte.phase is not Phase.Deregistering:
            return
        # one retry, then give up locally; the TLTAC expires stale registrations
        self.dereg_retries += 1
        self.send(self.tltac, Kind.Deregister, mt=self.id, retry=self.dereg_retries)
        self.record("mt.warning", reason="deregistration ack timeout", retries=self.dereg_retries)
        self._release("timeout")

    def _release(self, how: str) -> None:
        self.lte.on_cross_op_outbound(self.engine.now)
        self._dereg_token += 1
        self._log_phase(Phase.Deregistering, Phase.Normal, how)

    # -- authorisation -------------------------------------------------------
    def _timer_service_request(self, data: dict) -> None:
        service = data["service"]
        mode = data.get("mode", self.authz_mode)
        if mode == "collaborative" and self.lte.state.active:
            self._authz_seq += 1
            self.send(self.tltac, Kind.AuthzRequest, request_id=f"{self.id}#authz{self._authz_seq}",
                      mt=self.id, service=service, in_pz=self.lte.in_pz)
            return
        d = self.lte.authorize_local(service)
        self.record("authz.local", service=service, decision=str(d))

    def on_AuthzResponse(self, msg: Message) -> None:
        p = msg.payload
        d = Decision(bool(p["grant"]), p["reason"])
        self.record("authz.collaborative", request_id=p["request_id"], decision=str(d))

    # -- logging -------------------------------------------------------------
    def _log_phase(self, frm: Phase, to: Phase, cause: str) -> None:
        self.record("phase", **{"from": frm.value, "to": to.value, "cause": cause,
                                "policy": self.lte.state.current_policy, **self.lte.fs.to_dict()})
