"""Model-level trusted platform: measured/secure boot, PCRs and remote attestation.

Signatures are replaced by keyed digests whose secrets live in a
:class:`CredentialRegistry` acting as the static trust root (a stub Privacy
CA).  Within the simulation a tag cannot be produced without the secret, which
is all the threat model needs.
"""
from __future__ import annotations

import enum
import hashlib
import random
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import AlreadyIssued, InvalidManifest

DIGEST_SIZE = 32
NONCE_SIZE = 16
NUM_PCRS = 8
DEFAULT_DIGEST = "sha256"
DEFAULT_TRUST_ROOT = "tlta-root-ca"
LTE_COMPONENT = "LTE"

_ALGORITHMS = ("sha256", "sha3_256", "blake2s")


def hash_bytes(data: bytes, algorithm: str = DEFAULT_DIGEST) -> bytes:
    if algorithm not in _ALGORITHMS:
        raise ValueError(f"unsupported digest algorithm {algorithm!r}; choose one of {_ALGORITHMS}")
    return hashlib.new(algorithm, data).digest()


def digest_from_hex(text: str) -> bytes:
    value = bytes.fromhex(text)
    if len(value) != DIGEST_SIZE:
        raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
    return value


ZERO = bytes(DIGEST_SIZE)


class BootState(enum.Enum):
    POWERED_OFF = "PoweredOff"
    BOOTED = "Booted"
    FAILED = "Failed"
    PRISTINE = "Pristine"


@dataclass(frozen=True)
class Pcr:
    index: int
    value: bytes = ZERO


def extend_pcr(pcr: Pcr, d: bytes, algorithm: str = DEFAULT_DIGEST) -> Pcr:
    return Pcr(pcr.index, hash_bytes(pcr.value + d, algorithm))


@dataclass(frozen=True)
class LogEntry:
    component: str
    digest: bytes
    pcr_index: int = 0


MeasurementLog = tuple[LogEntry, ...]


def zero_bank() -> tuple[Pcr, ...]:
    return tuple(Pcr(i) for i in range(NUM_PCRS))


def replay_log(log: Iterable[LogEntry], algorithm: str = DEFAULT_DIGEST) -> tuple[Pcr, ...]:
    bank = list(zero_bank())
    for entry in log:
        bank[entry.pcr_index] = extend_pcr(bank[entry.pcr_index], entry.digest, algorithm)
    return tuple(bank)


@dataclass(frozen=True)
class RimCert:
    component_name: str
    expected_digest: bytes
    issuer: str = DEFAULT_TRUST_ROOT


@dataclass(frozen=True)
class Component:
    """One entry of a boot manifest, in execution order."""

    name: str
    digest: bytes
    pcr_index: int = 0


@dataclass(frozen=True)
class PlatformState:
    state: BootState
    log: MeasurementLog = ()
    pcrs: tuple[Pcr, ...] = field(default_factory=zero_bank)


def _rim_index(rims: Iterable[RimCert], trust_root: str) -> dict[str, set[bytes]]:
    idx: dict[str, set[bytes]] = {}
    for rim in rims:
        if rim.issuer == trust_root:
            idx.setdefault(rim.component_name, set()).add(rim.expected_digest)
    return idx


def secure_boot(components: Sequence[Component], rims: Iterable[RimCert],
                trust_root: str = DEFAULT_TRUST_ROOT, algorithm: str = DEFAULT_DIGEST) -> PlatformState:
    """Measure components in order and verify each against its RIM certificate.

    A component is measured (logged and extended) before it is checked, so on
    failure the log ends with the offending measurement and boot halts there.
    """
    if not components:
        raise InvalidManifest("boot manifest is empty")
    names = [c.name for c in components]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise InvalidManifest(f"duplicate component names in manifest: {', '.join(dupes)}")
    for c in components:
        if not 0 <= c.pcr_index < NUM_PCRS:
            raise InvalidManifest(f"component {c.name!r}: pcr index {c.pcr_index} out of range")

    expected = _rim_index(rims, trust_root)
    bank = list(zero_bank())
    log: list[LogEntry] = []
    for c in components:
        bank[c.pcr_index] = extend_pcr(bank[c.pcr_index], c.digest, algorithm)
        log.append(LogEntry(c.name, c.digest, c.pcr_index))
        if c.digest not in expected.get(c.name, ()):
            return PlatformState(BootState.FAILED, tuple(log), tuple(bank))
    return PlatformState(BootState.BOOTED, tuple(log), tuple(bank))


def measured_boot(components: Sequence[Component], algorithm: str = DEFAULT_DIGEST) -> PlatformState:
    """Boot without RIM enforcement, as a compromised loader would.

    Measurements are still taken by the trusted module, so the log tells the truth.
    """
    log = tuple(LogEntry(c.name, c.digest, c.pcr_index) for c in components)
    return PlatformState(BootState.BOOTED, log, replay_log(log, algorithm))


def pristine_boot() -> PlatformState:
    return PlatformState(BootState.PRISTINE, (), zero_bank())


@dataclass(frozen=True)
class AiCredential:
    mt_id: str
    key_id: str
    issuer: str = DEFAULT_TRUST_ROOT


class CredentialRegistry:
    """Static trust root holding attestation-identity secrets.

    The single-threaded engine serialises every access, so no locking.
    """

    def __init__(self, trust_root: str = DEFAULT_TRUST_ROOT, rng: random.Random | None = None,
                 algorithm: str = DEFAULT_DIGEST):
        self.trust_root = trust_root
        self.algorithm = algorithm
        self._rng = rng or random.Random(0)
        self._by_mt: dict[str, AiCredential] = {}
        self._secrets: dict[str, tuple[AiCredential, bytes]] = {}

    def issue(self, mt_id: str) -> AiCredential:
        if mt_id in self._by_mt:
            raise AlreadyIssued(f"attestation identity already issued for {mt_id!r}")
        key_id = f"aik-{len(self._secrets) + 1:05d}-{self._rng.getrandbits(32):08x}"
        cred = AiCredential(mt_id, key_id, self.trust_root)
        self._by_mt[mt_id] = cred
        self._secrets[key_id] = (cred, self._rng.getrandbits(8 * DIGEST_SIZE).to_bytes(DIGEST_SIZE, "big"))
        return cred

    def credential_for(self, mt_id: str) -> AiCredential | None:
        return self._by_mt.get(mt_id)

    def lookup(self, key_id: str) -> tuple[AiCredential, bytes] | None:
        return self._secrets.get(key_id)

    def secret(self, key_id: str) -> bytes:
        return self._secrets[key_id][1]


def issue_ai_credential(registry: CredentialRegistry, mt_id: str) -> AiCredential:
    return registry.issue(mt_id)


# ---------------------------------------------------------------------------
# attestation packages


def _serialize_pcrs(pcrs: Sequence[Pcr]) -> bytes:
    out = bytearray([len(pcrs)])
    for p in pcrs:
        out.append(p.index)
        out += p.value
    return bytes(out)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 255:
        raise ValueError(f"string field too long: {s[:20]!r}...")
    return bytes([len(b)]) + b


def _serialize_log(log: Sequence[LogEntry]) -> bytes:
    out = bytearray(struct.pack(">H", len(log)))
    for e in log:
        out.append(e.pcr_index)
        out += _pack_str(e.component)
        out += e.digest
    return bytes(out)


def compute_tag(secret: bytes, nonce: bytes, pcrs: Sequence[Pcr], log: Sequence[LogEntry],
                algorithm: str = DEFAULT_DIGEST) -> bytes:
    return hash_bytes(secret + nonce + _serialize_pcrs(pcrs) + _serialize_log(log), algorithm)


@dataclass(frozen=True)
class AttestationPackage:
    nonce: bytes
    pcr_values: tuple[Pcr, ...]
    log: MeasurementLog
    credential: AiCredential
    tag: bytes

    def to_bytes(self) -> bytes:
        """Canonical binary encoding; every byte belongs to exactly one field."""
        c = self.credential
        return (self.nonce + _serialize_pcrs(self.pcr_values) + _serialize_log(self.log)
                + _pack_str(c.mt_id) + _pack_str(c.key_id) + _pack_str(c.issuer) + self.tag)

    @classmethod
    def from_bytes(cls, data: bytes) -> AttestationPackage:
        view = memoryview(data)
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(view):
                raise ValueError("truncated attestation package")
            chunk = bytes(view[pos:pos + n])
            pos += n
            return chunk

        def take_str() -> str:
            return take(take(1)[0]).decode("utf-8")

        nonce = take(NONCE_SIZE)
        pcrs = []
        for _ in range(take(1)[0]):
            idx = take(1)[0]
            pcrs.append(Pcr(idx, take(DIGEST_SIZE)))
        (n_log,) = struct.unpack(">H", take(2))
        log = []
        for _ in range(n_log):
            idx = take(1)[0]
            name = take_str()
            log.append(LogEntry(name, take(DIGEST_SIZE), idx))
        cred = AiCredential(take_str(), take_str(), take_str())
        tag = take(DIGEST_SIZE)
        if pos != len(view):
            raise ValueError("trailing bytes after attestation package")
        return cls(nonce, tuple(pcrs), tuple(log), cred, tag)

    def to_dict(self) -> dict:
        return {
            "nonce": self.nonce.hex(),
            "pcrs": [[p.index, p.value.hex()] for p in self.pcr_values],
            "log": [[e.component, e.digest.hex(), e.pcr_index] for e in self.log],
            "credential": [self.credential.mt_id, self.credential.key_id, self.credential.issuer],
            "tag": self.tag.hex(),
        }


def build_attestation_package(platform: PlatformState, cred: AiCredential, nonce: bytes,
                              registry: CredentialRegistry) -> AttestationPackage:
    """Package the platform's actual PCRs and log.

    Any boot state is accepted: a cheating device may try to attest from a
    failed or pristine state, and it is the verifier that must catch it.
    """
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    secret = registry.secret(cred.key_id)
    tag = compute_tag(secret, nonce, platform.pcrs, platform.log, registry.algorithm)
    return AttestationPackage(nonce, tuple(platform.pcrs), tuple(platform.log), cred, tag)


class Reason(str, enum.Enum):
    REPLAY = "Replay"
    FORGED = "Forged"
    LOG_MISMATCH = "LogMismatch"
    UNTRUSTED = "Untrusted"
    NO_LTE = "NoLte"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Reason | None = None

    def __str__(self) -> str:
        return "Accept" if self.accepted else f"Reject({self.reason.value})"


ACCEPT = Verdict(True)


def verify_attestation(pkg: AttestationPackage, expected_nonce: bytes | None, rims: Iterable[RimCert],
                       registry: CredentialRegistry) -> Verdict:
    """Check nonce, tag, log/PCR consistency, RIM coverage and LTE presence, in that order.

    ``expected_nonce=None`` means no live nonce exists for the transaction
    (never issued or already consumed), which is a replay.
    """
    if expected_nonce is None or pkg.nonce != expected_nonce:
        return Verdict(False, Reason.REPLAY)
    entry = registry.lookup(pkg.credential.key_id)
    if entry is None:
        return Verdict(False, Reason.FORGED)
    cred, secret = entry
    if cred != pkg.credential:
        return Verdict(False, Reason.FORGED)
    if compute_tag(secret, pkg.nonce, pkg.pcr_values, pkg.log, registry.algorithm) != pkg.tag:
        return Verdict(False, Reason.FORGED)
    if any(not 0 <= e.pcr_index < NUM_PCRS for e in pkg.log):
        return Verdict(False, Reason.LOG_MISMATCH)
    replayed = replay_log(pkg.log, registry.algorithm)
    reported = {p.index: p.value for p in pkg.pcr_values}
    if len(reported) != len(pkg.pcr_values) or reported != {p.index: p.value for p in replayed}:
        return Verdict(False, Reason.LOG_MISMATCH)
    # an empty log testifies to nothing about the platform
    expected = _rim_index(rims, registry.trust_root)
    if not pkg.log or any(e.digest not in expected.get(e.component, ()) for e in pkg.log):
        return Verdict(False, Reason.UNTRUSTED)
    if not any(e.component == LTE_COMPONENT for e in pkg.log):
        return Verdict(False, Reason.NO_LTE)
    return ACCEPT

