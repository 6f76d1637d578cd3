"""Offline checks over a written event log."""
from __future__ import annotations

import json
from collections import Counter
from typing import Iterable

from ..device import LEGAL, FunctionState, Phase, apply_policy
from ..protocol.messages import Policy


class TruncatedLog(Exception):
    """The log cannot be parsed or lacks its end record."""


def parse_log(text: str) -> list[dict]:
    records = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TruncatedLog(f"line {n}: not a JSON record ({exc.msg})") from None
        if not isinstance(rec, dict) or not {"seq", "t", "kind", "entity", "detail"} <= rec.keys():
            raise TruncatedLog(f"line {n}: record lacks seq/t/kind/entity/detail")
        records.append(rec)
    if not records or records[-1]["kind"] != "run.end":
        raise TruncatedLog("log has no run.end record; it was cut short")
    return records


def check_conservation(records: list[dict]) -> list[str]:
    sent: dict[int, dict] = {}
    outcomes: Counter = Counter()
    problems = []
    for r in records:
        if r["kind"] == "msg.send":
            sent[r["detail"]["id"]] = r
        elif r["kind"] in ("msg.deliver", "msg.drop"):
            mid = r["detail"]["id"]
            if mid not in sent:
                problems.append(f"seq {r['seq']}: {r['kind']} of message {mid} that was never sent")
            outcomes[mid] += 1
    in_flight = set(records[-1]["detail"].get("in_flight", []))
    for mid, rec in sent.items():
        n = outcomes[mid] + (mid in in_flight)
        if n != 1:
            what = "never delivered or dropped" if n == 0 else f"accounted for {n} times"
            problems.append(f"message {mid} ({rec['detail']['msg']}, seq {rec['seq']}) {what}")
    return problems


def check_ordering(records: list[dict]) -> list[str]:
    problems = []
    prev_t = None
    for i, r in enumerate(records):
        if r["seq"] != i:
            problems.append(f"record {i} carries seq {r['seq']}: lines missing or reordered")
            break
        if prev_t is not None and r["t"] < prev_t:
            problems.append(f"seq {r['seq']}: time {r['t']} runs backwards (previous {prev_t})")
            break
        prev_t = r["t"]
    return problems


def check_registrations(records: list[dict]) -> list[str]:
    nonces: dict[str, str] = {}
    accepted: dict[tuple[str, str], str] = {}
    hoack: set[tuple[str, str]] = set()
    problems = []
    for r in records:
        d = r["detail"]
        if r["kind"] == "nonce":
            nonces[d["txn"]] = d["nonce"]
        elif r["kind"] == "attest.verify" and d["verdict"] == "Accept":
            accepted[(d["txn"], d["mt"])] = d["nonce"]
        elif r["kind"] == "ho.complete":
            hoack.add((r["entity"], d["txn"]))
        elif r["kind"] == "msg.send" and d["msg"] == "AttestationSubmit" and r["entity"] != "adversary":
            if (r["entity"], d["payload"]["txn"]) not in hoack:
                problems.append(f"seq {r['seq']}: {r['entity']} submitted attestation before its HoAck")
        elif r["kind"] == "tltac.register":
            key = (d["txn"], d["mt"])
            if key not in accepted:
                problems.append(f"seq {r['seq']}: {d['mt']} registered without an accepted attestation")
            elif accepted[key] != d["nonce"] or nonces.get(d["txn"]) != d["nonce"]:
                problems.append(f"seq {r['seq']}: {d['mt']} registered with a nonce not issued for {d['txn']}")
    return problems


def check_phases(records: list[dict]) -> list[str]:
    header = next((r for r in records if r["kind"] == "run.header"), None)
    if header is None:
        return ["log has no run.header record"]
    h = header["detail"]
    p_sp, p_pz = Policy.from_dict(h["p_sp"]), Policy.from_dict(h["p_pz"])
    base = FunctionState.normal(h["functions"], h["services"])
    expected = {
        Phase.Normal: base.to_dict(),
        Phase.AwaitingAttestation: base.to_dict(),
        Phase.LteActiveSp: apply_policy(base, p_sp).to_dict(),
        Phase.Deregistering: apply_policy(base, p_sp).to_dict(),
        Phase.EnforcingPz: apply_policy(base, p_pz).to_dict(),
    }
    current: dict[str, Phase] = {}
    problems = []
    for r in records:
        if r["kind"] != "phase":
            continue
        d = r["detail"]
        frm, to = Phase(d["from"]), Phase(d["to"])
        have = current.get(r["entity"], Phase.Normal)
        if frm is not have:
            problems.append(f"seq {r['seq']}: {r['entity']} leaves {frm.value} but was in {have.value}")
        elif frm is not to and to not in LEGAL[frm]:
            problems.append(f"seq {r['seq']}: {r['entity']} illegal transition {frm.value} -> {to.value}")
        if {"functions": d["functions"], "vault": d["vault"]} != expected[to]:
            problems.append(f"seq {r['seq']}: {r['entity']} function state does not match {to.value}")
        current[r["entity"]] = to
    return problems


CHECKS = (
    ("conservation", check_conservation),
    ("ordering", check_ordering),
    ("registration", check_registrations),
    ("phase/policy", check_phases),
)


def verify_records(records: list[dict]) -> list[tuple[str, str]]:
    """All invariant failures as (check name, message), in check order."""
    out = []
    for name, fn in CHECKS:
        out.extend((name, msg) for msg in fn(records))
    return out


def verify_text(text: str) -> list[tuple[str, str]]:
    return verify_records(parse_log(text))


def verify_lines(lines: Iterable[str]) -> list[tuple[str, str]]:
    return verify_text("\n".join(lines))
