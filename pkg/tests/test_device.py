import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import variant
from tlta.device import (LEGAL, FnState, FunctionState, LocationTriggerEnforcer, Phase, PolicyBundle, Vault,
                         apply_policy, authorize_local)
from tlta.errors import InvalidTransition, UnknownFunction
from tlta.geometry import Polygon, scale_polygon
from tlta.protocol.messages import Policy, Rule
from tlta.sim.world import simulate

FUNCS = ["bluetooth", "camera", "microphone"]
P_SP = Policy("P_sp", {"camera": Rule.Enable, "microphone": Rule.Enable, "bluetooth": Rule.Enable}, frozenset())
P_PZ = Policy("P_pz", {"camera": Rule.Disable, "microphone": Rule.Disable, "bluetooth": Rule.Enable},
              frozenset({"venue-content"}))
PZ = Polygon.of([(-150, -100), (150, -100), (150, 100), (-150, 100)])
OP = scale_polygon(PZ, 2.5)
BUNDLE = PolicyBundle(P_SP, P_PZ, PZ, OP)
INSIDE, BAND, OUTSIDE = (0.0, 0.0), (250.0, 0.0), (1000.0, 0.0)


def active_lte(debounce=2) -> LocationTriggerEnforcer:
    lte = LocationTriggerEnforcer(FUNCS, ["venue-content"], debounce)
    lte.begin_attestation(0.0)
    lte.on_attestation_ack(True, BUNDLE, 0.1)
    return lte


def feed(lte, points, t0=1.0):
    moves = []
    for i, p in enumerate(points):
        moves.extend(lte.on_location_fix(p, t0 + i))
    return [to for _, to in moves]


# -- apply_policy -------------------------------------------------------------------

def test_apply_policy_sets_functions_and_vault():
    fs = apply_policy(FunctionState.normal(FUNCS, ["venue-content"]), P_PZ)
    assert fs.functions == {"bluetooth": FnState.Enabled, "camera": FnState.Disabled,
                            "microphone": FnState.Disabled}
    assert fs.credential_vault == {"venue-content": Vault.Unlocked}


def test_apply_policy_relocks_vault():
    fs = apply_policy(apply_policy(FunctionState.normal(FUNCS, ["venue-content"]), P_PZ), P_SP)
    assert fs.credential_vault == {"venue-content": Vault.Locked}


def test_apply_policy_unknown_function():
    with pytest.raises(UnknownFunction):
        apply_policy(FunctionState.normal(["camera"]), P_PZ)


@settings(max_examples=100)
@given(rules=st.dictionaries(st.sampled_from(FUNCS), st.sampled_from(list(Rule))))
def test_apply_policy_idempotent(rules):
    p = Policy("P_pz", rules, frozenset({"venue-content"}))
    once = apply_policy(FunctionState.normal(FUNCS, ["venue-content"]), p)
    assert apply_policy(once, p) == once
    for f in FUNCS:
        want = rules.get(f, Rule.Enable)
        assert once.functions[f] is (FnState.Enabled if want is Rule.Enable else FnState.Disabled)


# -- attestation phases -------------------------------------------------------------

def test_rejected_attestation_returns_to_normal():
    lte = LocationTriggerEnforcer(FUNCS)
    lte.begin_attestation(0.0)
    assert lte.on_attestation_ack(False, None, 0.1) is Phase.Normal
    assert not lte.state.active


def test_download_before_ack_is_buffered():
    lte = LocationTriggerEnforcer(FUNCS, ["venue-content"])
    lte.begin_attestation(0.0)
    assert lte.on_policy_download(BUNDLE, 0.05) is Phase.AwaitingAttestation
    assert lte.on_attestation_ack(True, None, 0.1) is Phase.LteActiveSp
    assert lte.state.current_policy == "P_sp"


def test_ack_before_download_waits():
    lte = LocationTriggerEnforcer(FUNCS, ["venue-content"])
    lte.begin_attestation(0.0)
    assert lte.on_attestation_ack(True, None, 0.1) is Phase.AwaitingAttestation
    assert lte.on_policy_download(BUNDLE, 0.2) is Phase.LteActiveSp


def test_policy_timeout():
    lte = LocationTriggerEnforcer(FUNCS)
    lte.begin_attestation(0.0)
    assert lte.on_policy_timeout(10.0)
    assert lte.phase is Phase.Normal
    assert not lte.on_policy_timeout(11.0)


def test_illegal_transitions_raise():
    lte = LocationTriggerEnforcer(FUNCS)
    with pytest.raises(InvalidTransition):
        lte.on_attestation_ack(True, BUNDLE, 0.0)
    with pytest.raises(InvalidTransition):
        lte.on_cross_op_outbound(0.0)


# -- location trigger -----------------------------------------------------------------

def test_debounce_needs_k_fixes():
    lte = active_lte()
    assert feed(lte, [INSIDE]) == []
    assert feed(lte, [INSIDE], t0=2.0) == [Phase.EnforcingPz]
    assert lte.authorize_local("venue-content").grant


def test_single_outlier_does_not_flip():
    lte = active_lte()
    feed(lte, [INSIDE, INSIDE])
    assert feed(lte, [BAND, INSIDE, BAND, INSIDE], t0=3.0) == []
    assert lte.phase is Phase.EnforcingPz


def test_exit_through_band_then_op():
    lte = active_lte()
    assert feed(lte, [INSIDE, INSIDE, BAND, BAND, OUTSIDE, OUTSIDE]) == \
        [Phase.EnforcingPz, Phase.LteActiveSp, Phase.Deregistering]
    assert lte.on_cross_op_outbound(7.0) is Phase.Normal
    assert lte.fs == FunctionState.normal(FUNCS, ["venue-content"])


def test_direct_jump_from_pz_to_outside_op():
    # leaving pz and op at the same time: P_sp first, deregistration on the same fix
    lte = active_lte()
    assert feed(lte, [INSIDE, INSIDE, OUTSIDE, OUTSIDE]) == \
        [Phase.EnforcingPz, Phase.LteActiveSp, Phase.Deregistering]


def test_no_fix_handling_when_inactive():
    lte = LocationTriggerEnforcer(FUNCS)
    assert lte.on_location_fix(INSIDE, 0.0) == []


@pytest.mark.parametrize("debounce", [1, 2, 3, 5])
def test_debounce_k(debounce):
    lte = active_lte(debounce)
    moves = feed(lte, [INSIDE] * debounce)
    assert moves == [Phase.EnforcingPz]
    assert feed(active_lte(debounce), [INSIDE] * (debounce - 1)) == []


@settings(max_examples=200)
@given(path=st.lists(st.sampled_from([INSIDE, BAND, OUTSIDE]), max_size=40))
def test_random_fix_sequences_stay_legal(path):
    lte = active_lte()
    for i, p in enumerate(path):
        lte.on_location_fix(p, 1.0 + i)
        if lte.phase is Phase.Deregistering:
            lte.on_cross_op_outbound(1.5 + i)
    for _, frm, to in lte.transitions:
        assert to in LEGAL[frm]
    # function state always equals the policy of the current phase
    if lte.phase is Phase.EnforcingPz:
        assert lte.fs == apply_policy(FunctionState.normal(FUNCS, ["venue-content"]), P_PZ)
    elif lte.phase is Phase.LteActiveSp:
        assert lte.fs == apply_policy(FunctionState.normal(FUNCS, ["venue-content"]), P_SP)
    else:
        assert lte.fs == FunctionState.normal(FUNCS, ["venue-content"])


@pytest.mark.parametrize("phase_setup,service,expected", [
    ("inactive", "venue-content", "Deny(LteInactive)"),
    ("sp", "venue-content", "Deny(OutsidePz)"),
    ("pz", "other", "Deny(NotGranted)"),
    ("pz", "venue-content", "Grant"),
])
def test_authorize_local(phase_setup, service, expected):
    if phase_setup == "inactive":
        lte = LocationTriggerEnforcer(FUNCS)
    else:
        lte = active_lte()
        if phase_setup == "pz":
            feed(lte, [INSIDE, INSIDE])
    assert str(authorize_local(lte, service)) == expected


# -- timers inside a running world ----------------------------------------------------

def phases(world, mt="mt-1"):
    return [(r["detail"]["from"], r["detail"]["to"], r["detail"]["cause"])
            for r in world.engine.log.of_kind("phase") if r["entity"] == mt]


def test_lost_deregister_ack_retries_once_then_releases():
    cfg = variant("journey", engine={"drop": {"p": 0.0, "by_kind": {"DeregisterAck": 1.0}}})
    w = simulate(cfg, 5)
    mt = w.mts["mt-1"]
    assert mt.dereg_retries == 1
    assert phases(w)[-1] == ("Deregistering", "Normal", "timeout")
    sent = [r for r in w.engine.log.of_kind("msg.send") if r["detail"]["msg"] == "Deregister" and r["entity"] == "mt-1"]
    assert len(sent) == 2


def test_lost_policy_download_times_out():
    cfg = variant("journey", engine={"drop": {"p": 0.0, "by_kind": {"PolicyDownload": 1.0}}})
    w = simulate(cfg, 5)
    assert ("AwaitingAttestation", "Normal", "timeout") in phases(w)
    assert not any(to == "EnforcingPz" for _, to, _ in phases(w))


def test_local_and_collaborative_agree():
    decisions = {}
    for mode in ("local", "collaborative"):
        w = simulate(variant("journey", engine={"authz_mode": mode}), 9)
        if mode == "local":
            recs = w.engine.log.of_kind("authz.local")
        else:
            recs = w.engine.log.of_kind("authz.collaborative")
        decisions[mode] = [r["detail"]["decision"] for r in recs]
    assert decisions["local"] == ["Grant", "Deny(LteInactive)"]
    # collaborative requests only go out while the LTE is active; later ones fall back to local
    assert decisions["collaborative"] == ["Grant"]
