import copy
import itertools
import json

import pytest

from eeks import protocol as proto
from eeks.errors import ScriptInvalid
from eeks.protocol import parse_command
from eeks.session import HandshakeMessage
from eeks.sim import (ABORTED, FALLBACK, SECURED_OUTCOME, Adversary, ChannelState, Event,
                      Transcript, attempt_decrypt, load_script, negotiate_starttls, run_scenario)
from eeks.cli import scenario_dir
from eeks.verdicts import evaluate

PARTIES = [
    {"address": "alice@a.example", "ua": "ua_alice", "mta": "mta_a", "directory": "eeks_a"},
    {"address": "bob@b.example", "ua": "ua_bob", "mta": "mta_b", "directory": "eeks_b"},
]
DIRS = {"root": "eeks_root", "locals": [{"name": "eeks_a"}, {"name": "eeks_b"}]}


def script(actions, **extra):
    base = {"name": "t", "seed": 1, "group": "test", "parties": copy.deepcopy(PARTIES),
            "directories": copy.deepcopy(DIRS), "actions": actions}
    base.update(extra)
    return base


def send(at, body="hi", **kw):
    return {"at": at, "op": "send", "from": "alice@a.example", "to": "bob@b.example",
            "body": body, **kw}


def bundled(name):
    return load_script(scenario_dir() / f"{name}.json")


# -- negotiation --

@pytest.mark.parametrize("tls, stripped, policy",
                         list(itertools.product([True, False], [True, False],
                                                [proto.ENFORCED, proto.OPPORTUNISTIC])))
def test_negotiation_truth_table(tls, stripped, policy):
    chan = ChannelState(("m1", "m2"), client_policy=policy, server_supports_tls=tls)
    adv = Adversary(frozenset({"strip_starttls"} if stripped else ()), frozenset({"m1->m2"}))
    if tls and not stripped:
        want = SECURED_OUTCOME
    elif policy == proto.ENFORCED:
        want = ABORTED
    else:
        want = FALLBACK
    assert negotiate_starttls(chan, adv) == want


def test_strip_needs_position():
    chan = ChannelState(("m1", "m2"))
    adv = Adversary(frozenset({"strip_starttls"}), frozenset({"elsewhere"}))
    assert negotiate_starttls(chan, adv) == SECURED_OUTCOME
    assert negotiate_starttls(chan, None) == SECURED_OUTCOME


# -- determinism and validation --

def test_same_seed_same_transcript():
    s = bundled("strip_opportunistic")
    assert run_scenario(s).transcript.to_jsonl() == run_scenario(s).transcript.to_jsonl()


def test_seed_override_changes_run():
    s = script([send(1)])
    assert run_scenario(s, 1).transcript.to_jsonl() != run_scenario(s, 2).transcript.to_jsonl()


@pytest.mark.parametrize("actions, index, fragment", [
    ([send(5), send(3)], 1, "non-decreasing"),
    ([{"at": 1, "op": "explode"}], 0, "unknown op"),
    ([send(1, body="")], 0, "needs a body"),
    ([send(1, ttl=-4)], 0, "ttl"),
    ([{"at": 1, "op": "send", "from": "eve@e.example", "to": "bob@b.example", "body": "x"}],
     0, "unknown sender"),
    ([{"at": 1, "op": "sync", "directory": "nowhere"}], 0, "unknown directory"),
    ([{"at": 1, "op": "compromise", "ephemeral": 1}], 0, "instrumented"),
])
def test_script_invalid_with_index(actions, index, fragment):
    with pytest.raises(ScriptInvalid, match=fragment) as info:
        run_scenario(script(actions))
    assert info.value.index == index
    assert str(info.value).startswith(f"action {index}: ")


def test_script_invalid_structure():
    with pytest.raises(ScriptInvalid):
        run_scenario({"parties": []})
    bad = script([])
    bad["parties"][1]["address"] = "alice@a.example"
    with pytest.raises(ScriptInvalid, match="duplicate"):
        run_scenario(bad)
    with pytest.raises(ScriptInvalid, match="capabilities"):
        run_scenario(script([], adversary={"capabilities": ["teleport"]}))


# -- transcripts --

def test_clock_monotone_and_serialization():
    result = run_scenario(bundled("revocation"))
    times = [ev.t for ev in result.transcript]
    assert times == sorted(times)
    text = result.transcript.to_jsonl()
    first = json.loads(text.splitlines()[0])
    assert list(first) == ["t", "channel", "dir", "kind", "security", "msg", "actor", "raw"]
    assert Transcript.from_jsonl(text).to_jsonl() == text
    with pytest.raises(ValueError):
        Transcript([Event(5, "c", "c2s", "command", "plaintext", "QUIT\r\n")]).append(
            Event(4, "c", "c2s", "command", "plaintext", "QUIT\r\n"))


def test_transcript_replays_through_parsers():
    result = run_scenario(bundled("strip_opportunistic"))
    kinds = set()
    for ev in result.transcript:
        kinds.add(ev.kind)
        if ev.kind == "command":
            parse_command(ev.raw)
        elif ev.kind == "reply":
            proto.Reply.from_wire(ev.raw)
        elif ev.kind == "handshake":
            HandshakeMessage.decode(ev.raw.rstrip("\r\n"))
    assert {"command", "reply", "handshake", "data"} <= kinds


def test_stripped_hop_shape():
    result = run_scenario(bundled("strip_opportunistic"))
    hop = [ev for ev in result.transcript if ev.channel == "mta_a->mta_b"]
    forged = [ev for ev in hop if ev.actor == "adversary"]
    assert forged and all("STARTTLS" not in ev.raw for ev in forged)
    assert all(ev.security == "plaintext" for ev in hop)
    assert not any(ev.raw.startswith("STARTTLS") for ev in hop)
    other = [ev for ev in result.transcript if ev.channel == "ua_alice->mta_a" and ev.kind == "data"]
    assert other and all(ev.security == "secured" for ev in other)


def test_enforced_strip_aborts():
    result = run_scenario(bundled("strip_enforced"))
    hop = [ev for ev in result.transcript if ev.channel == "mta_a->mta_b" and ev.kind == "command"]
    assert [ev.raw.split()[0] for ev in hop] == ["EHLO", "QUIT"]
    assert not any(m.delivered for m in result.messages)


# -- attacker audit --

def test_audit_from_reloaded_transcript():
    result = run_scenario(bundled("pfs_demo"))
    reloaded = Transcript.from_jsonl(result.transcript.to_jsonl())
    stolen = result.adversary.compromised
    assert attempt_decrypt(reloaded, stolen, result.root) == \
        attempt_decrypt(result.transcript, stolen, result.root)


def test_pfs_long_term_keys_open_nothing():
    result = run_scenario(bundled("pfs_demo"))
    long_term = [c for c in result.adversary.compromised if c[0] == "long_term"]
    assert len(long_term) == 2
    found = attempt_decrypt(result.transcript, long_term, result.root)
    assert len(found) == 5 and not any(r.ok for r in found.values())


def test_each_ephemeral_opens_only_its_session():
    s = bundled("pfs_demo")
    result = run_scenario(s)
    for n, secrets in result.captured.items():
        found = attempt_decrypt(result.transcript, [("ephemeral", n, x) for x in secrets],
                                result.root)
        assert {m for m, r in found.items() if r.ok} == {n}
        assert found[n].plaintext == result.messages[n - 1].body


def test_plain_strip_reads_body():
    result = run_scenario(bundled("plain_strip"))
    found = attempt_decrypt(result.transcript, [], result.root, result.adversary)
    assert any(r.ok for r in found.values())


def test_adversary_visibility():
    ev_plain = Event(0, "x->y", "c2s", "command", "plaintext", "QUIT\r\n")
    ev_secure = Event(0, "x->y", "c2s", "command", "secured", "QUIT\r\n")
    at = Adversary(frozenset(), frozenset({"x->y"}))
    assert at.can_see(ev_plain) and not at.can_see(ev_secure)
    away = Adversary(frozenset(), frozenset())
    assert not away.can_see(ev_plain)
    assert Adversary(frozenset({"record_traffic"}), frozenset()).can_see(ev_plain)
    assert Adversary(frozenset({"read_secured_channel"}), frozenset({"x->y"})).can_see(ev_secure)


# -- other behaviour --

def test_revocation_window():
    result = run_scenario(bundled("revocation"))
    assert [m.delivered for m in result.messages] == [True, True, False]
    assert [m.stale for m in result.messages] == [False, True, False]
    assert "RecipientRevoked" in result.messages[2].reason


def test_ttl_purge_boundary():
    s = script([send(10, ttl=30), {"at": 40, "op": "sync"}, {"at": 41, "op": "sync"}])
    sim_result = run_scenario(s)
    assert any("self-destructed" in line and line.startswith("t=41") for line in sim_result.log)
    assert not any("self-destructed" in line and line.startswith("t=40") for line in sim_result.log)
    assert sim_result.parties["bob@b.example"].mailbox == []


def test_ttl_zero_stays():
    result = run_scenario(script([send(10, ttl=0), {"at": 10**6, "op": "sync"}]))
    assert len(result.parties["bob@b.example"].mailbox) == 1


def test_fallback_policies():
    enforced = run_scenario(bundled("fallback_enforced"))
    assert not enforced.messages[0].delivered
    opportunistic = run_scenario(bundled("fallback_opportunistic"))
    assert opportunistic.messages[0].delivered and opportunistic.messages[0].plaintext_mode


@pytest.mark.parametrize("path", sorted(p.name for p in scenario_dir().glob("*.json")))
def test_bundled_scenarios_meet_expectations(path):
    s = load_script(scenario_dir() / path)
    failed = [v for v in evaluate(run_scenario(s), s["expect"]) if not v.passed]
    assert not failed
