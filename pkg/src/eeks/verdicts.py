"""Named checks evaluated against a finished scenario.

Scripts choose which checks to run and what each should observe (their
``expect`` object); the code here only knows how to measure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from eeks.sim import ScenarioResult, attempt_decrypt

CHECKS = {}


def check(fn):
    CHECKS[fn.__name__] = fn
    return fn


@dataclass(frozen=True)
class Verdict:
    check: str
    expected: object
    observed: object

    @property
    def passed(self) -> bool:
        return self.observed == self.expected

    def as_dict(self) -> dict:
        return {"check": self.check, "expected": self.expected, "observed": self.observed,
                "result": "PASS" if self.passed else "FAIL"}


def _secrets(result: ScenarioResult, kind: str):
    return [c for c in result.adversary.compromised if c[0] == kind]


def _eeks_messages(result):
    return [m for m in result.messages if m.session_id is not None]


@check
def delivered_all(result):
    return all(m.delivered for m in result.messages)


@check
def delivered_count(result):
    return sum(m.delivered for m in result.messages)


@check
def refused_count(result):
    return sum(not m.delivered for m in result.messages)


@check
def opened_count(result):
    return sum(e.status == "opened" for p in result.parties.values() for e in p.mailbox)


@check
def pfs_holds(result):
    """Stolen long-term keys plus a full recording recover no EEKS message."""
    stolen = _secrets(result, "long_term")
    if not stolen or not _eeks_messages(result):
        return False
    found = attempt_decrypt(result.transcript, stolen, result.root)
    return not any(r.ok for r in found.values())


@check
def ephemeral_isolation(result):
    """Stolen ephemeral secrets open exactly their own sessions."""
    stolen = _secrets(result, "ephemeral")
    if not stolen:
        return False
    target = {n for _, n, _ in stolen}
    found = attempt_decrypt(result.transcript, stolen, result.root)
    opened = {msg for msg, r in found.items() if r.ok}
    return opened == target


@check
def attacker_read_plaintext_commands(result):
    adv = result.adversary
    return any(ev.kind == "command" and ev.security == "plaintext" and adv.can_see(ev)
               for ev in result.transcript)


def _norm(body: bytes) -> bytes:
    return body.replace(b"\r\n", b"\n").rstrip(b"\n")


@check
def attacker_read_body(result):
    bodies = {m.msg: _norm(m.body) for m in result.messages}
    found = attempt_decrypt(result.transcript, result.adversary.compromised, result.root,
                            result.adversary)
    return any(r.ok and bodies.get(msg) == _norm(r.plaintext) for msg, r in found.items())


@check
def body_confidential(result):
    """No EEKS message body appears verbatim in any recorded byte."""
    for m in _eeks_messages(result):
        needle = m.body.decode("utf-8", "replace")
        if any(needle in ev.raw for ev in result.transcript):
            return False
    return True


@check
def mail_events_on_stripped_channels(result):
    n = 0
    for ev in result.transcript:
        if ev.channel not in result.stripped_channels:
            continue
        if ev.kind == "data" or (ev.kind == "command" and ev.raw[:4].upper() in ("MAIL", "RCPT", "DATA")):
            n += 1
    return n


@check
def eeks_on_every_hop(result):
    """Each delivered EEKS message shows ENCRYPT, SESSION and FINGERPRINT on all its channels."""
    delivered = [m for m in _eeks_messages(result) if m.delivered and not m.plaintext_mode]
    if not delivered:
        return False
    for m in delivered:
        per_channel = {}
        for ev in result.transcript:
            if ev.msg == m.msg and ev.kind == "command":
                per_channel.setdefault(ev.channel, set()).add(ev.raw.split()[0].upper())
        if not per_channel:
            return False
        for verbs in per_channel.values():
            if "MAIL" in verbs and not {"ENCRYPT", "SESSION", "FINGERPRINT"} <= verbs:
                return False
    return True


@check
def plaintext_mode_count(result):
    return sum(m.plaintext_mode for m in result.messages)


@check
def stale_sends(result):
    return sum(m.stale and m.delivered for m in result.messages)


@check
def revoked_send_refused(result):
    return any(not m.delivered and "Revoked" in m.reason for m in result.messages)


@check
def fallback_refused(result):
    return any("enhanced SMTP" in m.reason for m in result.messages if not m.delivered)


@check
def directory_degraded(result):
    return any(node.degraded for node in result.locals.values())


@check
def self_destructed(result):
    return sum("self-destructed" in line for line in result.log)


def evaluate(result: ScenarioResult, expect: dict) -> list[Verdict]:
    unknown = sorted(set(expect) - CHECKS.keys())
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    return [Verdict(name, expected, CHECKS[name](result)) for name, expected in expect.items()]


def _show(value):
    return json.dumps(value)


def format_table(name: str, seed: int, verdicts: list[Verdict]) -> str:
    width = max([len(v.check) for v in verdicts] + [5])
    lines = [f"scenario {name} (seed {seed})",
             f"{'check':<{width}}  {'expected':<9} {'observed':<9} result"]
    for v in verdicts:
        lines.append(f"{v.check:<{width}}  {_show(v.expected):<9} {_show(v.observed):<9} "
                     f"{'PASS' if v.passed else 'FAIL'}")
    passed = sum(v.passed for v in verdicts)
    lines.append(f"{passed}/{len(verdicts)} checks passed")
    return "\n".join(lines) + "\n"


def format_json(name: str, seed: int, verdicts: list[Verdict]) -> str:
    return json.dumps({"scenario": name, "seed": seed,
                       "passed": all(v.passed for v in verdicts),
                       "verdicts": [v.as_dict() for v in verdicts]}, indent=2) + "\n"
