"""
Deterministic simulation of mail relay between user agents, MTAs and EEKS key servers.

A scenario script names the parties, the directory topology, per-channel
STARTTLS/EEKS policies, an adversary and a list of timed actions.  Running it
produces a transcript of every wire event, the recipients' mailboxes and a
verdict log.  Everything is driven by one seeded RNG and an integer clock that
only script actions advance, so a (script, seed) pair always yields the same
transcript byte for byte.

TLS is modeled, not implemented: a secured channel is one the adversary cannot
read unless it holds ``read_secured_channel``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from eeks import directory as kd
from eeks import envelope as env_mod
from eeks import protocol as proto
from eeks import session as sess
from eeks.envelope import MailEnvelope
from eeks.errors import (EeksError, IntegrityFailure, MalformedEnvelope, NotFound,
                         ScriptInvalid)
from eeks.schnorr import TEST_PARAMS, HashConfig, keygen, production_params, verify

PLAINTEXT = "plaintext"
SECURED = "secured"

SECURED_OUTCOME = "secured"
FALLBACK = "plaintext_fallback"
ABORTED = "aborted"

CAPABILITIES = frozenset({"strip_starttls", "record_traffic", "read_secured_channel"})

OPS = ("send", "advance", "sync", "revoke", "compromise")


def channel_name(client: str, server: str) -> str:
    return f"{client}->{server}"


@dataclass
class ChannelState:
    endpoints: tuple[str, str]
    security: str = PLAINTEXT
    client_policy: str = proto.OPPORTUNISTIC
    server_supports_tls: bool = True

    @property
    def name(self) -> str:
        return channel_name(*self.endpoints)


@dataclass(frozen=True)
class ChannelConfig:
    policy: str = proto.OPPORTUNISTIC
    tls_support: bool = True
    eeks_support: bool = True
    eeks_policy: str = proto.ENFORCED


@dataclass
class Adversary:
    """Network attacker.

    It sits on ``positions`` (channel names) where it can read plaintext
    traffic and, with ``strip_starttls``, suppress the STARTTLS upgrade.
    ``record_traffic`` makes it a passive recorder of every channel;
    ``read_secured_channel`` lets it read secured channels too.
    """

    capabilities: frozenset = frozenset()
    positions: frozenset = frozenset()
    compromised: list = field(default_factory=list)

    def can_strip(self, channel: str) -> bool:
        return "strip_starttls" in self.capabilities and channel in self.positions

    def can_see(self, event: Event) -> bool:
        if event.channel not in self.positions and "record_traffic" not in self.capabilities:
            return False
        return event.security == PLAINTEXT or "read_secured_channel" in self.capabilities


def negotiate_starttls(channel: ChannelState, adversary: Adversary | None) -> str:
    """Outcome of the STARTTLS attempt on ``channel``.

    Secured when the server supports TLS and nobody strips it; otherwise the
    client policy decides between aborting and carrying on in plaintext.
    """
    stripped = adversary is not None and adversary.can_strip(channel.name)
    if channel.server_supports_tls and not stripped:
        return SECURED_OUTCOME
    if channel.client_policy == proto.ENFORCED:
        return ABORTED
    return FALLBACK


@dataclass(frozen=True)
class Event:
    t: int
    channel: str
    direction: str  # "c2s" | "s2c"
    kind: str  # "reply" | "command" | "data" | "handshake" | "sync"
    security: str
    raw: str
    msg: int | None = None
    actor: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "t": self.t, "channel": self.channel, "dir": self.direction, "kind": self.kind,
            "security": self.security, "msg": self.msg, "actor": self.actor, "raw": self.raw,
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> Event:
        d = json.loads(line)
        return cls(d["t"], d["channel"], d["dir"], d["kind"], d["security"], d["raw"],
                   d["msg"], d["actor"])


class Transcript:
    """Append-only event log."""

    def __init__(self, events=()):
        self._events: list[Event] = list(events)

    def append(self, event: Event) -> None:
        if self._events and event.t < self._events[-1].t:
            raise ValueError("transcript time went backwards")
        self._events.append(event)

    @property
    def events(self) -> tuple[Event, ...]:
        return tuple(self._events)

    def __iter__(self):
        return iter(self._events)

    def __len__(self):
        return len(self._events)

    def to_jsonl(self) -> str:
        return "".join(ev.to_json() + "\n" for ev in self._events)

    @classmethod
    def from_jsonl(cls, text: str) -> Transcript:
        return cls(Event.from_json(line) for line in text.splitlines() if line.strip())


@dataclass
class MailboxEntry:
    msg: int
    sender: str
    delivered_at: int
    envelope: MailEnvelope | None
    plaintext: bytes | None
    status: str  # "opened" | "plaintext-mode" | error class name


@dataclass
class Party:
    address: str
    ua: str
    mta: str
    directory: str
    keypair: object = None
    record: sess.RegistrationRecord | None = None
    sessions: dict = field(default_factory=dict)
    mailbox: list = field(default_factory=list)


@dataclass
class SentMessage:
    msg: int
    sender: str
    recipient: str
    body: bytes
    sent_at: int
    eeks: bool
    session_id: bytes | None = None
    delivered: bool = False
    plaintext_mode: bool = False
    reason: str = ""
    stale: bool = False


@dataclass
class ScenarioResult:
    name: str
    seed: int
    params: object
    transcript: Transcript
    parties: dict
    messages: list
    root: kd.DirectoryNode
    locals: dict
    adversary: Adversary
    log: list
    stripped_channels: set
    captured: dict

    def mailboxes(self) -> dict:
        return {
            addr: [{"msg": e.msg, "from": e.sender, "delivered_at": e.delivered_at,
                    "status": e.status} for e in party.mailbox]
            for addr, party in self.parties.items()
        }


# ---------------------------------------------------------------------------
# script validation

def _require(cond, message, index=None):
    if not cond:
        raise ScriptInvalid(message, index)


def validate_script(script) -> None:
    _require(isinstance(script, dict), "script must be a JSON object")
    parties = script.get("parties")
    _require(isinstance(parties, list) and parties, "script needs a non-empty 'parties' list")
    dirs = script.get("directories") or {}
    local_specs = dirs.get("locals") or [{"name": "local"}]
    _require(all(isinstance(d, dict) and "name" in d for d in local_specs),
             "each local directory needs a name")
    local_names = {d["name"] for d in local_specs}
    addresses = set()
    for p in parties:
        _require(isinstance(p, dict) and {"address", "ua", "mta"} <= p.keys(),
                 "each party needs address, ua and mta")
        try:
            sess.check_identity(p["address"])
        except EeksError as exc:
            raise ScriptInvalid(str(exc)) from None
        _require(p["address"] not in addresses, f"duplicate party {p['address']}")
        addresses.add(p["address"])
        _require(p.get("directory", local_specs[0]["name"]) in local_names,
                 f"party {p['address']} uses unknown directory {p.get('directory')}")
    _require(script.get("group", "test") in ("test", "production"), "group must be test or production")
    adv = script.get("adversary", {})
    unknown = set(adv.get("capabilities", [])) - CAPABILITIES
    _require(not unknown, f"unknown adversary capabilities {sorted(unknown)}")
    for ch in script.get("channels", []):
        _require({"from", "to"} <= ch.keys(), "each channel needs from and to")
        _require(ch.get("policy", proto.OPPORTUNISTIC) in (proto.ENFORCED, proto.OPPORTUNISTIC),
                 f"bad TLS policy on {ch['from']}->{ch['to']}")
        _require(ch.get("eeks_policy", proto.ENFORCED) in (proto.ENFORCED, proto.OPPORTUNISTIC),
                 f"bad EEKS policy on {ch['from']}->{ch['to']}")
    last = 0
    n_sends = 0
    for i, act in enumerate(script.get("actions", [])):
        _require(isinstance(act, dict), "action must be an object", i)
        op = act.get("op")
        _require(op in OPS, f"unknown op {op!r}", i)
        at = act.get("at")
        _require(isinstance(at, int) and at >= last, "'at' must be a non-decreasing integer", i)
        last = at
        if op == "send":
            n_sends += 1
            _require(act.get("from") in addresses, f"unknown sender {act.get('from')!r}", i)
            _require(act.get("to") in addresses, f"unknown recipient {act.get('to')!r}", i)
            _require(isinstance(act.get("body"), str) and act["body"], "send needs a body", i)
            ttl = act.get("ttl", 0)
            _require(isinstance(ttl, int) and ttl >= 0, "ttl must be a non-negative integer", i)
        elif op == "revoke":
            _require(act.get("identity") in addresses, f"unknown identity {act.get('identity')!r}", i)
        elif op == "sync":
            target = act.get("directory")
            _require(target is None or target in local_names, f"unknown directory {target!r}", i)
        elif op == "compromise":
            lt, eph = act.get("long_term"), act.get("ephemeral")
            _require((lt is None) != (eph is None), "compromise needs long_term or ephemeral", i)
            if lt is not None:
                _require(lt in addresses, f"unknown identity {lt!r}", i)
            else:
                _require(script.get("instrumented", False),
                         "ephemeral compromise needs an instrumented run", i)
                _require(isinstance(eph, int) and 1 <= eph <= n_sends,
                         "ephemeral must name an earlier send (1-based)", i)


# ---------------------------------------------------------------------------
# the simulator

class _Connection:
    """One SMTP connection: drives the server state machine and logs the wire."""

    def __init__(self, sim, chan: ChannelState, config: ChannelConfig, msg: int):
        self.sim = sim
        self.chan = chan
        self.msg = msg
        self.state = proto.ServerState(policy=proto.ServerPolicy(
            hostname=chan.endpoints[1], tls_supported=config.tls_support,
            eeks_supported=config.eeks_support, eeks_policy=config.eeks_policy))
        self.delivered = None

    def emit(self, direction, kind, raw, actor):
        self.sim.emit(self.chan.name, direction, kind, self.chan.security, raw, self.msg, actor)

    def greet(self):
        self.emit("s2c", "reply", proto.Reply(220, f"{self.chan.endpoints[1]} ESMTP ready").to_wire(),
                  "server")

    def command(self, line: str) -> proto.Reply:
        self.emit("c2s", "command", line, "client")
        self.state, reply, action = proto.receive_line(self.state, line)
        self._act(action)
        actor = "server"
        if line.upper().startswith("EHLO") and self.sim.adversary.can_strip(self.chan.name) \
                and "STARTTLS" in reply.extra:
            reply = proto.Reply(reply.code, reply.text,
                                tuple(c for c in reply.extra if c != "STARTTLS"))
            actor = "adversary"
        self.emit("s2c", "reply", reply.to_wire(), actor)
        return reply

    def data(self, body: str) -> proto.Reply:
        lines = proto.dot_stuff(body) + ["."]
        self.emit("c2s", "data", "".join(line + "\r\n" for line in lines), "client")
        reply = None
        for line in lines:
            self.state, reply, action = proto.receive_line(self.state, line + "\r\n")
            self._act(action)
        self.emit("s2c", "reply", reply.to_wire(), "server")
        return reply

    def _act(self, action):
        if action is None:
            return
        if action.kind == "deliver":
            self.delivered = action.message


class Simulator:
    def __init__(self, script: dict, seed: int | None = None):
        validate_script(script)
        self.script = script
        self.name = script.get("name", "scenario")
        self.seed = script.get("seed", 0) if seed is None else seed
        self.rng = random.Random(self.seed)
        self.params = production_params() if script.get("group") == "production" else TEST_PARAMS
        self.instrumented = bool(script.get("instrumented", False))
        self.now = 0
        self.transcript = Transcript()
        self.log: list[str] = []
        self.messages: list[SentMessage] = []
        self.captured: dict[int, list[int]] = {}
        self.stripped_channels: set[str] = set()

        dirs = script.get("directories") or {}
        self.root = kd.DirectoryNode("root", dirs.get("root", "eeks_root"), params=self.params)
        self.locals: dict[str, kd.DirectoryNode] = {}
        for entry in dirs.get("locals") or [{"name": "local"}]:
            self.locals[entry["name"]] = kd.DirectoryNode(
                "local", entry["name"], upstream=self.root,
                sync_interval=entry.get("sync_interval", kd.DEFAULT_SYNC_INTERVAL))

        self.parties: dict[str, Party] = {}
        for p in script["parties"]:
            self.parties[p["address"]] = Party(p["address"], p["ua"], p["mta"],
                                               p.get("directory", next(iter(self.locals))))

        self.channels = {channel_name(c["from"], c["to"]): ChannelConfig(
            policy=c.get("policy", proto.OPPORTUNISTIC),
            tls_support=c.get("tls_support", True),
            eeks_support=c.get("eeks_support", True),
            eeks_policy=c.get("eeks_policy", proto.ENFORCED),
        ) for c in script.get("channels", [])}

        adv = script.get("adversary") or {}
        mtas = {p.mta for p in self.parties.values()}
        positions = adv.get("positions")
        if positions is None:
            positions = [channel_name(a, b) for a in sorted(mtas) for b in sorted(mtas) if a != b]
        self.adversary = Adversary(frozenset(adv.get("capabilities", [])), frozenset(positions))

    # -- plumbing ----------------------------------------------------------

    def emit(self, channel, direction, kind, security, raw, msg=None, actor=""):
        self.transcript.append(Event(self.now, channel, direction, kind, security, raw, msg, actor))

    def note(self, text: str) -> None:
        self.log.append(f"t={self.now} {text}")

    def config(self, client, server) -> ChannelConfig:
        return self.channels.get(channel_name(client, server), ChannelConfig())

    def channel(self, client, server) -> ChannelState:
        cfg = self.config(client, server)
        return ChannelState((client, server), PLAINTEXT, cfg.policy, cfg.tls_support)

    def local_of(self, party: Party) -> kd.DirectoryNode:
        return self.locals[party.directory]

    def path(self, sender: Party, recipient: Party) -> list[str]:
        hops = [sender.ua, sender.mta]
        if recipient.mta != sender.mta:
            hops.append(recipient.mta)
        hops.append(recipient.ua)
        return hops

    # -- time --------------------------------------------------------------

    def advance(self, t: int) -> None:
        self.now = t
        for name, node in self.locals.items():
            if node.sync_due(t):
                self.do_sync(node)
        self.purge()

    def purge(self) -> None:
        for party in self.parties.values():
            keep = []
            for entry in party.mailbox:
                if entry.envelope is not None and env_mod.is_expired(entry.envelope, self.now):
                    self.note(f"msg {entry.msg} self-destructed in {party.address}'s mailbox")
                else:
                    keep.append(entry)
            party.mailbox = keep

    # -- directory ---------------------------------------------------------

    def setup(self) -> None:
        for party in self.parties.values():
            party.keypair = keygen(self.params, self.rng)
            party.record = sess.register(party.address, party.keypair, self.local_of(party), self.now)
            self.note(f"registered {party.address} at {self.root.name}")
        for node in self.locals.values():
            self.do_sync(node)

    def do_sync(self, local: kd.DirectoryNode) -> None:
        chan = self.channel(local.name, self.root.name)
        outcome = negotiate_starttls(chan, self.adversary)
        if chan.server_supports_tls and self.adversary.can_strip(chan.name):
            self.stripped_channels.add(chan.name)
        if outcome == ABORTED:
            local.degraded = True
            self.emit(chan.name, "c2s", "sync", PLAINTEXT, f"SYNC {local.name}\r\n", None, "client")
            self.note(f"sync {local.name}: STARTTLS unavailable, enforced policy aborted; "
                      f"serving stale data (degraded)")
            return
        if outcome == SECURED_OUTCOME:
            chan.security = SECURED
        else:
            self.note(f"sync {local.name}: fell back to plaintext")
        fresh = kd.pending_updates(local, self.root)
        self.emit(chan.name, "c2s", "sync", chan.security, f"SYNC {local.name}\r\n", None, "client")
        self.emit(chan.name, "s2c", "sync", chan.security,
                  "".join(rec.to_line() + "\r\n" for rec in fresh) + ".\r\n", None, "server")
        n = kd.sync(local, self.root, self.now)
        if n:
            self.note(f"sync {local.name}: {n} record(s) updated")

    # -- sending -----------------------------------------------------------

    def send(self, act: dict) -> None:
        sender, recipient = self.parties[act["from"]], self.parties[act["to"]]
        msg = SentMessage(len(self.messages) + 1, sender.address, recipient.address,
                          act["body"].encode("utf-8"), self.now, act.get("eeks", True))
        self.messages.append(msg)
        ttl = act.get("ttl", 0)
        hops = self.path(sender, recipient)

        outcomes = []
        for client, server in zip(hops, hops[1:]):
            chan = self.channel(client, server)
            outcome = negotiate_starttls(chan, self.adversary)
            if chan.server_supports_tls and self.adversary.can_strip(chan.name):
                self.stripped_channels.add(chan.name)
            outcomes.append((chan, outcome))

        if msg.eeks:
            envelope = self._eeks_prepare(msg, sender, recipient, ttl, outcomes)
            if envelope is None:
                return
            body = envelope.to_wire()
        else:
            envelope = None
            body = msg.body.decode("utf-8").replace("\r\n", "\n").replace("\n", "\r\n")
            if not body.endswith("\r\n"):
                body += "\r\n"

        eeks_mode = msg.eeks
        received = None
        for chan, outcome in outcomes:
            received = self._smtp_hop(chan, outcome, msg, eeks_mode, envelope, body)
            if received is None:
                return
            if received.plaintext_mode and eeks_mode:
                eeks_mode = False
                msg.plaintext_mode = True
        self._deliver(msg, recipient, received)

    def _fail(self, msg: SentMessage, reason: str) -> None:
        msg.reason = reason
        self.note(f"msg {msg.msg} {msg.sender} -> {msg.recipient} refused: {reason}")

    def _eeks_prepare(self, msg, sender, recipient, ttl, outcomes):
        s_dir, r_dir = self.local_of(sender), self.local_of(recipient)
        try:
            root_rec = kd.lookup(self.root, recipient.address)
            local_rec = kd.lookup(s_dir, recipient.address)
            if not root_rec.active and local_rec.active:
                msg.stale = True
                self.note(f"msg {msg.msg}: {recipient.address} revoked at {self.root.name} but "
                          f"still active at {s_dir.name} (stale window)")
        except NotFound:
            pass

        blocked = next(((c, o) for c, o in outcomes if o == ABORTED), None)
        capture = self._capture(msg) if self.instrumented else None
        try:
            hs, ctx = sess.initiate_handshake(sender.record, sender.keypair.x, recipient.address,
                                              s_dir, self.params, self.rng, now=self.now)
            if blocked is not None:
                self._aborted_hop(*blocked, msg)
                ctx.erase()
                self._fail(msg, f"handshake cannot cross {blocked[0].name}: connection aborted")
                return None
            if capture:
                capture(ctx)
            for chan, _ in outcomes:
                self._handshake_event(chan, "c2s", hs, msg)
            reply, r_ctx = sess.respond_and_derive(hs, recipient.record, recipient.keypair.x,
                                                   r_dir, self.params, self.rng, now=self.now,
                                                   capture=capture)
            for chan, _ in reversed(outcomes):
                self._handshake_event(chan, "s2c", reply, msg)
            sess.complete_handshake(ctx, reply, s_dir, now=self.now)
            recipient.sessions[r_ctx.session_id] = r_ctx
            msg.session_id = ctx.session_id
            return env_mod.seal(msg.body, ctx, sender.keypair, recipient.address, ttl,
                                self.now, self.rng, directory=s_dir)
        except EeksError as exc:
            self._fail(msg, f"{type(exc).__name__}: {exc}")
            return None

    def _capture(self, msg):
        def capture(ctx):
            if ctx.ephemeral_secret is not None:
                self.captured.setdefault(msg.msg, []).append(ctx.ephemeral_secret)
        return capture

    def _handshake_event(self, chan, direction, hs, msg):
        security = SECURED if self._secured(chan) else PLAINTEXT
        self.emit(chan.name, direction, "handshake", security, hs.encode() + "\r\n", msg.msg,
                  "client" if direction == "c2s" else "server")

    def _secured(self, chan):
        return negotiate_starttls(chan, self.adversary) == SECURED_OUTCOME

    def _aborted_hop(self, chan, outcome, msg):
        conn = _Connection(self, chan, self.config(*chan.endpoints), msg.msg)
        conn.greet()
        conn.command(f"EHLO {chan.endpoints[0]}\r\n")
        conn.command("QUIT\r\n")
        self.note(f"{chan.name}: STARTTLS unavailable under enforced TLS policy; connection aborted")

    def _smtp_hop(self, chan, outcome, msg, eeks_mode, envelope, body):
        if outcome == ABORTED:
            self._aborted_hop(chan, outcome, msg)
            self._fail(msg, f"{chan.name}: connection aborted (enforced TLS)")
            return None
        cfg = self.config(*chan.endpoints)
        conn = _Connection(self, chan, cfg, msg.msg)
        conn.greet()
        client = chan.endpoints[0]

        def expect(line, *codes):
            reply = conn.command(line)
            if reply.code in codes:
                return True
            conn.command("QUIT\r\n")
            self._fail(msg, f"{chan.name}: {line.split()[0]} refused with {reply.code} {reply.text}")
            return False

        reply = conn.command(f"EHLO {client}\r\n")
        if outcome == SECURED_OUTCOME:
            if not expect("STARTTLS\r\n", 220):
                return None
            chan.security = SECURED
            reply = conn.command(f"EHLO {client}\r\n")
        else:
            self.note(f"{chan.name}: no STARTTLS offered, opportunistic fallback to plaintext")

        if eeks_mode and "ENCRYPT" not in reply.extra:
            if cfg.eeks_policy == proto.ENFORCED:
                conn.command("QUIT\r\n")
                self._fail(msg, f"{chan.name}: peer does not support enhanced SMTP "
                                f"(EEKS enforced, delivery refused)")
                return None
            self.note(f"{chan.name}: peer lacks enhanced SMTP, relaying msg {msg.msg} in plaintext mode")
            eeks_mode = False

        lines = []
        if eeks_mode:
            lines += [f"ENCRYPT {envelope.suite}\r\n", f"SESSION {envelope.session_id.hex()}\r\n"]
        lines += [f"MAIL FROM:<{msg.sender}>\r\n", f"RCPT TO:<{msg.recipient}>\r\n"]
        if eeks_mode:
            lines += [f"TIME2LIVE {envelope.ttl_seconds}\r\n",
                      f"FINGERPRINT {envelope.fingerprint.encode()}\r\n"]
        for line in lines:
            if not expect(line, 250):
                return None
        if not expect("DATA\r\n", 354):
            return None
        reply = conn.data(body)
        if reply.code != 250:
            conn.command("QUIT\r\n")
            self._fail(msg, f"{chan.name}: message rejected with {reply.code} {reply.text}")
            return None
        conn.command("QUIT\r\n")
        return conn.delivered

    def _deliver(self, msg: SentMessage, recipient: Party, received) -> None:
        msg.delivered = True
        envelope = received.envelope
        if envelope is None:
            try:
                envelope = MailEnvelope.from_wire(received.body)
            except MalformedEnvelope:
                envelope = None
        if envelope is None:
            entry = MailboxEntry(msg.msg, msg.sender, self.now, None,
                                 received.body.encode("utf-8"), "plaintext-mode")
        else:
            status, plaintext = self._open(recipient, envelope)
            entry = MailboxEntry(msg.msg, msg.sender, self.now, envelope, plaintext, status)
        recipient.mailbox.append(entry)
        mode = " (plaintext mode)" if received.plaintext_mode else ""
        self.note(f"msg {msg.msg} {msg.sender} -> {msg.recipient} delivered{mode}, {entry.status}")

    def _open(self, recipient: Party, envelope: MailEnvelope):
        ctx = recipient.sessions.get(envelope.session_id)
        if ctx is None or ctx.key is None:
            return "NoSession", None
        try:
            rec = kd.lookup(self.local_of(recipient), envelope.sender)
            return "opened", env_mod.open_envelope(envelope, ctx.key, rec.public_key,
                                                   self.now, self.params)
        except EeksError as exc:
            return type(exc).__name__, None

    # -- other actions -----------------------------------------------------

    def revoke(self, act):
        try:
            rec = kd.revoke(self.root, act["identity"], self.now)
            self.note(f"revoked {rec.identity} at {self.root.name} (version {rec.version})")
        except EeksError as exc:
            self.note(f"revoke {act['identity']} failed: {exc}")

    def compromise(self, act):
        if act.get("long_term") is not None:
            party = self.parties[act["long_term"]]
            self.adversary.compromised.append(("long_term", party.address, party.keypair.x))
            self.note(f"adversary obtained long-term key of {party.address}")
        else:
            n = act["ephemeral"]
            for secret in self.captured.get(n, []):
                self.adversary.compromised.append(("ephemeral", n, secret))
            self.note(f"adversary obtained ephemeral secret(s) of msg {n}'s session")

    def run(self) -> ScenarioResult:
        self.setup()
        for act in self.script.get("actions", []):
            self.advance(act["at"])
            op = act["op"]
            if op == "send":
                self.send(act)
            elif op == "sync":
                targets = [self.locals[act["directory"]]] if act.get("directory") else self.locals.values()
                for node in targets:
                    self.do_sync(node)
            elif op == "revoke":
                self.revoke(act)
            elif op == "compromise":
                self.compromise(act)
        return ScenarioResult(
            self.name, self.seed, self.params, self.transcript, self.parties, self.messages,
            self.root, self.locals, self.adversary, self.log, self.stripped_channels, self.captured)


def run_scenario(script: dict, seed: int | None = None) -> ScenarioResult:
    return Simulator(script, seed).run()


def load_script(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# attacker oracle

@dataclass(frozen=True)
class DecryptResult:
    msg: int
    session_id: bytes | None
    plaintext: bytes | None
    reason: str

    @property
    def ok(self) -> bool:
        return self.plaintext is not None


def _unstuff(raw: str) -> str:
    lines = raw.split("\r\n")
    if lines and lines[-1] == "":
        lines.pop()
    if lines and lines[-1] == ".":
        lines.pop()
    return "".join((line[1:] if line.startswith(".") else line) + "\r\n" for line in lines)


def attempt_decrypt(transcript, compromised, directory: kd.DirectoryNode,
                    adversary: Adversary | None = None) -> dict[int, DecryptResult]:
    """What an attacker recovers from recorded traffic plus stolen secrets.

    ``compromised`` is an iterable of secret exponents (long-term or
    ephemeral); ``adversary`` restricts which events were observable, and
    None means every event was recorded.  Only wire bytes, the stolen secrets
    and public directory data are consulted.  Each secret is tried as either
    side's exponent against the observed handshake values, and a candidate
    key counts only if it authenticates the ciphertext.
    """
    params = directory.params
    secrets = sorted({s[-1] if isinstance(s, tuple) else s for s in compromised})
    seen = [ev for ev in transcript if adversary is None or adversary.can_see(ev)]

    publics: dict[bytes, set[int]] = {}
    for ev in seen:
        if ev.kind != "handshake":
            continue
        try:
            hs = sess.HandshakeMessage.decode(ev.raw)
        except ValueError:
            continue
        publics.setdefault(hs.salt, set()).add(hs.ephemeral_public)

    results: dict[int, DecryptResult] = {}
    for ev in seen:
        if ev.kind != "data" or ev.msg is None or ev.msg in results:
            continue
        body = _unstuff(ev.raw)
        try:
            envelope = MailEnvelope.from_wire(body)
        except MalformedEnvelope:
            results[ev.msg] = DecryptResult(ev.msg, None, body.encode("utf-8"),
                                            "read from a plaintext body")
            continue
        results[ev.msg] = _crack(ev.msg, envelope, publics.get(envelope.session_id, set()),
                                 secrets, params, directory)
    return results


def _crack(msg, envelope, publics, secrets, params, directory) -> DecryptResult:
    sid = envelope.session_id
    if not publics:
        return DecryptResult(msg, sid, None, "handshake not observed")
    for secret in secrets:
        for public in sorted(publics):
            key = sess.derive_key(pow(public, secret, params.p), envelope.session_id)
            try:
                plaintext = env_mod.decrypt(envelope, key)
            except IntegrityFailure:
                continue
            try:
                rec = kd.lookup(directory, envelope.sender)
                signed = verify(params, rec.public_key, plaintext, envelope.fingerprint,
                                HashConfig.PRODUCTION)
            except NotFound:
                signed = False
            note = "fingerprint verifies" if signed else "fingerprint unverified"
            return DecryptResult(msg, sid, plaintext, f"session key recovered, {note}")
    return DecryptResult(msg, sid, None, "no compromised secret yields an authenticating key")
