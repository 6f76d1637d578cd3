"""Scenario assembly and execution."""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import TYPE_CHECKING

from ..errors import ConfigError
from ..geometry import CellId, HexGrid
from ..protocol.messages import Message
from ..protocol.nodes import AgpsService, Agw, ENodeB, Tltsr
from ..protocol.tltac import Tltac, configure_service
from ..trust import (LTE_COMPONENT, CredentialRegistry, PlatformState, hash_bytes, measured_boot,
                     pristine_boot, secure_boot)
from .attacks import Adversary, AttackSpec, inject_attack
from .engine import DropModel, Engine, EventKind, EventLog, LatencyModel
from .metrics import MetricsReport, ViolationDetector, build_report
from .mobility import MobilityTrace

if TYPE_CHECKING:
    from ..config import MtConfig, ScenarioConfig
    from ..device import MobileTerminal

log = logging.getLogger(__name__)


def handover_target(grid: HexGrid, serving: CellId, pos) -> CellId | None:
    """Cell to hand over to when ``pos`` has left the serving cell, else None."""
    cell = grid.nearest_cell(pos)
    if cell == serving or not grid.contains(cell):
        return None
    return cell


def detect_handover(mt: MobileTerminal, pos) -> CellId | None:
    """Network-side cell-granularity trigger for one MT at its true position."""
    if mt.ho is not None:
        if not mt.handover_stale():
            return None
        mt.record("ho.abandoned", txn=mt.ho.txn)
        mt.ho = None
    target = handover_target(mt.grid, mt.serving, pos)
    if target is None:
        return None
    if mt.suppress_inbound and mt.serving not in mt.zone_cover and target in mt.zone_cover:
        if getattr(mt, "_suppressed_target", None) != target:
            mt._suppressed_target = target
            mt.record("ho.suppressed", source=mt.serving.as_pair(), target=target.as_pair())
        return None
    mt._suppressed_target = None
    return target


class World:
    """Every simulated entity of one scenario run, wired to a single engine."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None):
        from ..device import MobileTerminal

        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        e = cfg.engine
        self.engine = Engine(self.seed, LatencyModel(*e.latency), DropModel(e.drop.p, dict(e.drop.by_kind)))
        g = cfg.grid
        self.grid = HexGrid(g.cell_radius, g.extent, tuple(g.origin))
        self.req = cfg.service_request()
        self.zone, _ = configure_service(self.req, self.grid)
        self.rims = cfg.rim_certs()
        self.registry = CredentialRegistry(cfg.trust.trust_root, self.engine.streams("keys"), cfg.trust.digest)
        self._adversary: Adversary | None = None

        s = cfg.service
        self.tltac = Tltac(self.req, self.zone, agps_initiator=s.agps_initiator, notify_tltsr=s.notify_tltsr,
                           t_expire=e.t_expire)
        for ent in (self.tltac, Agw(), AgpsService(), Tltsr(self.req.tltsr_id)):
            self.engine.add(ent)
        self.enbs: dict[CellId, ENodeB] = {}
        for cell in self.grid.cells():
            self.enbs[cell] = self.engine.add(ENodeB(cell, self.rims, self.registry))

        self.detector = ViolationDetector(self.zone.pz, self.req.p_sp, self.req.p_pz,
                                          lambda m: m in self.tltac.registry.registered,
                                          grace=e.debounce * e.poll_period + e.latency[1],
                                          margin=3.0 * e.gps_sigma)
        self.mts: dict[str, MobileTerminal] = {}
        self.manifests: dict[str, list] = {}
        self.trace_warnings: list[str] = []
        poll_rng = self.engine.streams("poll")
        for m in cfg.all_mts():
            trace, warnings = MobilityTrace.of(m.trace).clipped(self.grid)
            self.trace_warnings.extend(f"{m.id}: {w}" for w in warnings)
            self.manifests[m.id] = cfg.manifest(m)
            cred = self.registry.issue(m.id) if m.attestation_identity else None
            mt = MobileTerminal(
                m.id, trace, self.grid, self._boot(m, self.manifests[m.id]), cred, self.registry,
                cfg.functions, cfg.services, debounce=e.debounce, poll_period=e.poll_period,
                poll_offset=poll_rng.uniform(0.0, e.poll_period), gps_sigma=e.gps_sigma, t_pol=e.t_pol,
                t_dereg=e.t_dereg, t_ho=e.t_ho, agps_initiator=s.agps_initiator, authz_mode=e.authz_mode)
            mt.zone_cover = self.zone.cover
            mt.observers.append(self.detector)
            self.mts[m.id] = self.engine.add(mt)
            for r in m.requests:
                self.engine.schedule(r.t, EventKind.TimerFire, m.id,
                                     {"name": "service_request", "service": r.service, "mode": r.mode or e.authz_mode})

        for a in cfg.attacks:
            inject_attack(AttackSpec(a.kind, a.target, dict(a.params)), self)

        self.horizon = max(mt.trace.end for mt in self.mts.values()) + e.settle
        self.in_flight: list[int] = []
        self.finished = False

    def _boot(self, m: MtConfig, manifest) -> PlatformState:
        algo = self.cfg.trust.digest
        if m.boot == "pristine":
            return pristine_boot()
        if m.boot == "measured":
            return measured_boot(manifest, algo)
        return secure_boot(manifest, self.rims, self.cfg.trust.trust_root, algo)

    def adversary(self) -> Adversary:
        if self._adversary is None:
            self._adversary = self.engine.add(Adversary())
        return self._adversary

    def tamper_lte(self, mt_id: str, digest_hex: str | None = None) -> None:
        """Swap the LTE image of one MT for a modified one and reboot it."""
        manifest = self.manifests[mt_id]
        if not any(c.name == LTE_COMPONENT for c in manifest):
            raise ConfigError(f"TamperedLte: {mt_id} has no {LTE_COMPONENT!r} component")
        bad = bytes.fromhex(digest_hex) if digest_hex else hash_bytes(b"tampered LTE image", self.cfg.trust.digest)
        manifest = [replace(c, digest=bad) if c.name == LTE_COMPONENT else c for c in manifest]
        self.manifests[mt_id] = manifest
        mt_cfg = next(m for m in self.cfg.all_mts() if m.id == mt_id)
        self.mts[mt_id].platform = self._boot(mt_cfg, manifest)

    # -- running -------------------------------------------------------------
    def header(self) -> None:
        self.engine.log.write(0.0, "run.header", "world", scenario=self.cfg.name, seed=self.seed,
                              p_sp=self.req.p_sp.to_dict(), p_pz=self.req.p_pz.to_dict(),
                              functions=sorted(self.cfg.functions), services=sorted(self.cfg.services),
                              zone=self.zone.counts(), op_scale=self.zone.op_scale,
                              debounce=self.cfg.engine.debounce, poll_period=self.cfg.engine.poll_period)
        for w in self.trace_warnings:
            self.engine.log.write(0.0, "trace.clipped", "world", warning=w)

    def run(self) -> World:
        if self.finished:
            raise RuntimeError("world already ran")
        self.header()
        self.tltac.start()
        for mt_id in sorted(self.mts):
            self.mts[mt_id].start()
        self.engine.run(until=self.horizon)
        self.in_flight = self.engine.in_flight()
        self.engine.log.write(self.engine.now, "run.end", "world", horizon=self.horizon,
                              events=self.engine.executed, in_flight=self.in_flight)
        self.finished = True
        return self

    def report(self) -> MetricsReport:
        return build_report(self)


def simulate(cfg: ScenarioConfig, seed: int | None = None) -> World:
    return World(cfg, seed).run()


def run_scenario(cfg: ScenarioConfig, seed: int | None = None) -> tuple[EventLog, MetricsReport]:
    world = simulate(cfg, seed)
    return world.engine.log, world.report()


def run_inbound_handover(world: World, mt_id: str, target: CellId, window: float = 10.0) -> list[Message]:
    """Force one handover of ``mt_id`` to ``target`` and return its message trace.

    The world must already be started; the MT should be attached to a c0
    cell and ``target`` should be the neighbouring c1 cell.
    """
    mt = world.mts[mt_id]
    if target not in world.enbs:
        raise ConfigError(f"no eNB for cell {target}")
    captured: list[Message] = []
    world.engine.taps.append(captured.append)
    mt.start_handover(target)
    txn = mt.ho.txn
    world.engine.run(until=world.engine.now + window)
    world.engine.taps.remove(captured.append)
    return [m for m in captured if m.payload.get("txn") == txn]

