"""Scenario configuration: schema, validation and YAML (de)serialisation."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, TltaError
from .geometry import Polygon
from .protocol.messages import Policy, Rule, ServiceRequest
from .sim.attacks import REQUIRED_PARAMS, AttackKind
from .trust import DEFAULT_TRUST_ROOT, NUM_PCRS, Component, RimCert, digest_from_hex

SCHEMA_VERSION = 1
SCENARIO_SUFFIX = ".scenario"
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_hex(v: str) -> str:
    try:
        digest_from_hex(v)
    except (ValueError, TltaError) as exc:
        raise ValueError(str(exc)) from None
    return v.lower()


class GridConfig(_Model):
    cell_radius: float = Field(gt=0)
    extent: int = Field(ge=1)
    origin: tuple[float, float] = (0.0, 0.0)


class TrustConfig(_Model):
    digest: Literal["sha256", "sha3_256", "blake2s"] = "sha256"
    trust_root: str = DEFAULT_TRUST_ROOT


class PolicyConfig(_Model):
    functions: dict[str, Literal["Enable", "Disable"]]
    grants: list[str] = []


class PoliciesConfig(_Model):
    P_sp: PolicyConfig
    P_pz: PolicyConfig


class ServiceConfig(_Model):
    tltsr_id: str = "tltsr"
    pz: list[tuple[float, float]]
    op_scale: float = Field(1.3, ge=1.0)
    op_mode: Literal["scaled", "sp"] = "scaled"
    n_outer_layers: int = Field(1, ge=1)
    notify_tltsr: bool = False
    agps_initiator: Literal["tltac", "device"] = "tltac"
    policies: PoliciesConfig

    @field_validator("pz")
    @classmethod
    def _valid_polygon(cls, v):
        try:
            Polygon.of(v)
        except TltaError as exc:
            raise ValueError(str(exc)) from None
        return v


class ComponentConfig(_Model):
    name: str
    digest: str
    pcr: int = Field(0, ge=0, lt=NUM_PCRS)

    @field_validator("digest")
    @classmethod
    def _hex(cls, v: str) -> str:
        return _check_hex(v)


class RimConfig(_Model):
    component: str
    digest: str
    issuer: Optional[str] = None

    @field_validator("digest")
    @classmethod
    def _hex(cls, v: str) -> str:
        return _check_hex(v)


class RequestConfig(_Model):
    t: float = Field(ge=0)
    service: str
    mode: Optional[Literal["local", "collaborative"]] = None


class MtConfig(_Model):
    id: str
    boot: Literal["secure", "measured", "pristine"] = "secure"
    manifest: Optional[list[ComponentConfig]] = None
    attestation_identity: bool = True
    trace: list[tuple[float, float, float]] = Field(min_length=1)
    requests: list[RequestConfig] = []

    @field_validator("trace")
    @classmethod
    def _increasing(cls, v):
        for a, b in zip(v, v[1:]):
            if not b[0] > a[0]:
                raise ValueError(f"waypoint times must be strictly increasing ({a[0]} then {b[0]})")
        return v


class FleetConfig(_Model):
    """A group of MTs sharing one trace, staggered in time and rotated about ``center``."""

    prefix: str
    count: int = Field(ge=1)
    trace: list[tuple[float, float, float]] = Field(min_length=1)
    start_interval: float = Field(2.0, ge=0)
    rotations: int = Field(1, ge=1, le=6)
    center: tuple[float, float] = (0.0, 0.0)
    boot: Literal["secure", "measured", "pristine"] = "secure"

    def members(self) -> list[MtConfig]:
        out = []
        for i in range(self.count):
            angle = math.radians(60.0 * (i % self.rotations))
            c, s = math.cos(angle), math.sin(angle)
            cx, cy = self.center
            dt = i * self.start_interval
            trace = [(t + dt, cx + c * (x - cx) - s * (y - cy), cy + s * (x - cx) + c * (y - cy))
                     for t, x, y in self.trace]
            out.append(MtConfig(id=f"{self.prefix}{i + 1:03d}", boot=self.boot, trace=trace))
        return out


class DropConfig(_Model):
    p: float = Field(0.0, ge=0.0, le=1.0)
    by_kind: dict[str, float] = {}


class EngineConfig(_Model):
    poll_period: float = Field(1.0, gt=0)
    debounce: int = Field(2, ge=1)
    gps_sigma: float = Field(5.0, ge=0)
    latency: tuple[float, float] = (0.010, 0.050)
    drop: DropConfig = DropConfig()
    settle: float = Field(30.0, ge=0)
    t_pol: float = Field(10.0, gt=0)
    t_dereg: float = Field(10.0, gt=0)
    t_expire: float = Field(3600.0, gt=0)
    t_ho: float = Field(2.0, gt=0)
    authz_mode: Literal["local", "collaborative"] = "local"

    @field_validator("latency")
    @classmethod
    def _range(cls, v):
        if v[0] < 0 or v[1] < v[0]:
            raise ValueError(f"latency range must satisfy 0 <= low <= high, got {list(v)}")
        return v


class AttackConfig(_Model):
    kind: AttackKind
    target: str
    params: dict[str, Any] = {}

    @model_validator(mode="after")
    def _complete(self):
        missing = [p for p in REQUIRED_PARAMS[self.kind] if p not in self.params]
        if missing:
            raise ValueError(f"{self.kind.value} needs parameters: {', '.join(missing)}")
        return self


class ScenarioConfig(_Model):
    schema_version: Literal[1]
    name: str
    description: str = ""
    seed: int = 0
    grid: GridConfig
    trust: TrustConfig = TrustConfig()
    service: ServiceConfig
    functions: list[str] = Field(min_length=1)
    services: list[str] = []
    components: list[ComponentConfig] = Field(min_length=1)
    rims: Optional[list[RimConfig]] = None
    mts: list[MtConfig] = []
    fleets: list[FleetConfig] = []
    engine: EngineConfig = EngineConfig()
    attacks: list[AttackConfig] = []

    @model_validator(mode="after")
    def _cross_refs(self):
        fnames = set(self.functions)
        for pid in ("P_sp", "P_pz"):
            pol: PolicyConfig = getattr(self.service.policies, pid)
            unknown = sorted(set(pol.functions) - fnames)
            if unknown:
                raise ValueError(f"service.policies.{pid}: unknown functions {unknown}")
            absent = sorted(fnames - set(pol.functions))
            if absent:
                raise ValueError(f"service.policies.{pid}: no rule for functions {absent}")
            bad = sorted(set(pol.grants) - set(self.services))
            if bad:
                raise ValueError(f"service.policies.{pid}.grants: unknown services {bad}")
        ids = [m.id for m in self.all_mts()]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValueError(f"mts: duplicate ids {dupes}")
        if not ids:
            raise ValueError("mts: scenario needs at least one MT")
        for m in self.mts:
            for r in m.requests:
                if r.service not in self.services:
                    raise ValueError(f"mts[{m.id}].requests: unknown service {r.service!r}")
        for a in self.attacks:
            if a.target not in ids:
                raise ValueError(f"attacks: unknown target {a.target!r}")
        return self

    # -- derived views ---------------------------------------------------------
    def all_mts(self) -> list[MtConfig]:
        out = list(self.mts)
        for f in self.fleets:
            out.extend(f.members())
        return out

    def pz_polygon(self) -> Polygon:
        return Polygon.of(self.service.pz)

    def policy(self, pid: str) -> Policy:
        p: PolicyConfig = getattr(self.service.policies, pid)
        return Policy(pid, {k: Rule(v) for k, v in p.functions.items()}, frozenset(p.grants))

    def service_request(self) -> ServiceRequest:
        s = self.service
        return ServiceRequest(s.tltsr_id, self.pz_polygon(), self.policy("P_sp"), self.policy("P_pz"),
                              s.op_scale, s.n_outer_layers, s.op_mode)

    def manifest(self, mt: MtConfig) -> list[Component]:
        rows = mt.manifest if mt.manifest is not None else self.components
        return [Component(c.name, digest_from_hex(c.digest), c.pcr) for c in rows]

    def rim_certs(self) -> list[RimCert]:
        if self.rims is None:
            return [RimCert(c.name, digest_from_hex(c.digest), self.trust.trust_root) for c in self.components]
        return [RimCert(r.component, digest_from_hex(r.digest), r.issuer or self.trust.trust_root)
                for r in self.rims]


def _format_error(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_scenario(data: Any, source: str = "<scenario>") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: expected a mapping at top level")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_error(exc)}") from None


def resolve_scenario_path(name_or_path: str | Path) -> Path:
    """Accept a file path or the name of a shipped scenario."""
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = SCENARIO_DIR / f"{name_or_path}{SCENARIO_SUFFIX}"
    if shipped.exists():
        return shipped
    raise ConfigError(f"scenario file not found: {name_or_path}")


def load_scenario(name_or_path: str | Path) -> ScenarioConfig:
    path = resolve_scenario_path(name_or_path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_scenario(data, str(path))


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json", exclude_defaults=False), sort_keys=False)


def shipped_scenarios() -> list[str]:
    return sorted(p.name[: -len(SCENARIO_SUFFIX)] for p in SCENARIO_DIR.glob(f"*{SCENARIO_SUFFIX}"))

