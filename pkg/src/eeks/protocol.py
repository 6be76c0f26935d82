"""
SMTP with the EEKS extension verbs: parser, serializer and server state machine.

Command grammar (one CRLF-terminated ASCII line, at most 1024 bytes)::

    EHLO <domain>            MAIL FROM:<addr>        RCPT TO:<addr>
    DATA                     QUIT                    STARTTLS
    ENCRYPT <suite>          SESSION <32 hex>        FINGERPRINT <e-hex>:<s-hex>
    TIME2LIVE <decimal>

Server transitions.  "-" keeps the phase; every cell not listed answers 503
and keeps the phase.  QUIT moves any phase to Done with 221.

    phase             verb          next              reply
    Connected         EHLO          Greeted           250
    Greeted           STARTTLS      SecureNegotiated  220  (454 if TLS unsupported)
    SecureNegotiated  EHLO          -                 250
    Greeted/Secure    ENCRYPT       EncryptSet        250
    EncryptSet        SESSION       SessionSet        250
    Greeted..Session  MAIL          MailFrom          250  (530 if TLS required)
    MailFrom          RCPT          RcptTo            250
    EncryptSet..Rcpt  TIME2LIVE     -                 250
    SessionSet..Rcpt  FINGERPRINT   -                 250
    RcptTo            DATA          Data              354
    Data              <CRLF>.<CRLF> Done              250 / 554

DATA in any phase after EHLO is refused with 538 when the policy enforces
EEKS and ENCRYPT, SESSION and FINGERPRINT have not all been accepted.  An
opportunistic server accepts such mail and flags it plaintext-mode.  A server
without EEKS support answers 501 to the four extension verbs.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field, replace

from eeks.envelope import SUITE, MailEnvelope
from eeks.errors import CommandSyntaxError, EeksError, ProtocolError, UnknownVerb
from eeks.schnorr import Signature

MAX_LINE = 1024

BASE_VERBS = ("EHLO", "MAIL", "RCPT", "DATA", "QUIT", "STARTTLS")
EEKS_VERBS = ("ENCRYPT", "SESSION", "FINGERPRINT", "TIME2LIVE")
VERBS = BASE_VERBS + EEKS_VERBS
NO_ARGUMENT = ("DATA", "QUIT", "STARTTLS")

PHASES = ("Connected", "Greeted", "SecureNegotiated", "EncryptSet", "SessionSet",
          "MailFrom", "RcptTo", "Data", "Done")

REPLY_CODES = frozenset({220, 221, 250, 354, 454, 501, 503, 530, 538, 554})

ENFORCED = "enforced"
OPPORTUNISTIC = "opportunistic"

_HEX = frozenset(string.hexdigits)
_SUITE_CHARS = frozenset(string.ascii_letters + string.digits + "-_.")
_DOMAIN_CHARS = frozenset(string.ascii_letters + string.digits + "-_.[]:")


@dataclass(frozen=True)
class EeksCommand:
    verb: str
    argument: object = None

    def __str__(self):
        return serialize_command(self).rstrip("\r\n")


def _check_address(addr: str) -> str:
    if addr.count("@") != 1 or not all(33 <= ord(c) < 127 and c not in "<>" for c in addr):
        raise CommandSyntaxError(f"bad mailbox {addr!r}")
    local, _, domain = addr.partition("@")
    if not local or not domain:
        raise CommandSyntaxError(f"bad mailbox {addr!r}")
    return addr


def _path_argument(arg: str, keyword: str) -> str:
    head, colon, path = arg.partition(":")
    if not colon or head.upper() != keyword:
        raise CommandSyntaxError(f"expected {keyword}:<address>")
    if not (path.startswith("<") and path.endswith(">")):
        raise CommandSyntaxError("address must be enclosed in <>")
    return _check_address(path[1:-1])


def parse_command(line: bytes | str) -> EeksCommand:
    """Parse one command line including its CRLF terminator.

    Raises CommandSyntaxError or UnknownVerb; nothing else escapes.
    """
    if isinstance(line, str):
        try:
            line = line.encode("ascii")
        except UnicodeEncodeError:
            raise CommandSyntaxError("non-ASCII command line") from None
    if len(line) > MAX_LINE:
        raise CommandSyntaxError(f"line longer than {MAX_LINE} bytes")
    if not line.endswith(b"\r\n"):
        raise CommandSyntaxError("line not terminated by CRLF")
    body = line[:-2]
    if b"\r" in body or b"\n" in body:
        raise CommandSyntaxError("bare CR or LF inside line")
    if any(b < 32 or b >= 127 for b in body):
        raise CommandSyntaxError("non-printable byte in command line")
    text = body.decode("ascii")
    verb, space, arg = text.partition(" ")
    verb = verb.upper()
    if verb not in VERBS:
        raise UnknownVerb(f"unrecognized command {verb[:32]!r}")
    if verb in NO_ARGUMENT:
        if space:
            raise CommandSyntaxError(f"{verb} takes no argument")
        return EeksCommand(verb)
    if not arg:
        raise CommandSyntaxError(f"{verb} requires an argument")

    if verb == "EHLO":
        if not set(arg) <= _DOMAIN_CHARS:
            raise CommandSyntaxError("bad EHLO domain")
        return EeksCommand(verb, arg)
    if verb == "MAIL":
        return EeksCommand(verb, _path_argument(arg, "FROM"))
    if verb == "RCPT":
        return EeksCommand(verb, _path_argument(arg, "TO"))
    if verb == "ENCRYPT":
        if not set(arg) <= _SUITE_CHARS:
            raise CommandSyntaxError("bad suite name")
        return EeksCommand(verb, arg)
    if verb == "SESSION":
        if len(arg) != 32 or not set(arg) <= _HEX:
            raise CommandSyntaxError("SESSION takes exactly 32 hex characters")
        return EeksCommand(verb, bytes.fromhex(arg))
    if verb == "FINGERPRINT":
        try:
            return EeksCommand(verb, Signature.decode(arg))
        except ValueError as exc:
            raise CommandSyntaxError(str(exc)) from None
    # TIME2LIVE
    if not arg.isdigit():
        raise CommandSyntaxError("TIME2LIVE takes a non-negative decimal")
    return EeksCommand(verb, int(arg))


def serialize_command(cmd: EeksCommand) -> str:
    verb, arg = cmd.verb, cmd.argument
    if verb in NO_ARGUMENT:
        return f"{verb}\r\n"
    if verb == "MAIL":
        return f"MAIL FROM:<{arg}>\r\n"
    if verb == "RCPT":
        return f"RCPT TO:<{arg}>\r\n"
    if verb == "SESSION":
        return f"SESSION {arg.hex()}\r\n"
    if verb == "FINGERPRINT":
        return f"FINGERPRINT {arg.encode()}\r\n"
    if verb in VERBS:
        return f"{verb} {arg}\r\n"
    raise ValueError(f"unknown verb {verb!r}")


@dataclass(frozen=True)
class Reply:
    code: int
    text: str
    extra: tuple[str, ...] = ()

    def __post_init__(self):
        if self.code not in REPLY_CODES:
            raise ValueError(f"reply code {self.code} not in the protocol's set")

    def to_wire(self) -> str:
        lines = (self.text,) + self.extra
        out = [f"{self.code}-{line}\r\n" for line in lines[:-1]]
        out.append(f"{self.code} {lines[-1]}\r\n")
        return "".join(out)

    @classmethod
    def from_wire(cls, text: str) -> Reply:
        lines = [line for line in text.split("\r\n") if line]
        if not lines:
            raise ProtocolError("empty reply")
        try:
            code = int(lines[0][:3])
        except ValueError:
            raise ProtocolError(f"bad reply {lines[0]!r}") from None
        return cls(code, lines[0][4:], tuple(line[4:] for line in lines[1:]))


@dataclass(frozen=True)
class ServerPolicy:
    hostname: str = "mx.example"
    tls_supported: bool = True
    require_tls: bool = False
    eeks_supported: bool = True
    eeks_policy: str = ENFORCED
    suites: tuple[str, ...] = (SUITE,)

    def capabilities(self) -> tuple[str, ...]:
        caps = []
        if self.tls_supported:
            caps.append("STARTTLS")
        if self.eeks_supported:
            caps.extend(EEKS_VERBS)
        return tuple(caps)


@dataclass(frozen=True)
class Collected:
    helo: str | None = None
    suite: str | None = None
    session_id: bytes | None = None
    sender: str | None = None
    recipient: str | None = None
    ttl_seconds: int | None = None
    fingerprint: Signature | None = None
    body: tuple[str, ...] = ()

    @property
    def eeks_complete(self) -> bool:
        return None not in (self.suite, self.session_id, self.fingerprint)


@dataclass(frozen=True)
class ReceivedMessage:
    sender: str
    recipient: str
    body: str
    envelope: MailEnvelope | None
    plaintext_mode: bool


@dataclass(frozen=True)
class Action:
    kind: str  # "starttls" | "close" | "deliver"
    message: ReceivedMessage | None = None


@dataclass(frozen=True)
class ServerState:
    phase: str = "Connected"
    collected: Collected = field(default_factory=Collected)
    policy: ServerPolicy = field(default_factory=ServerPolicy)
    secure: bool = False


def _bad_sequence(state, what="bad sequence of commands"):
    return state, Reply(503, what), None


def step(state: ServerState, cmd: EeksCommand) -> tuple[ServerState, Reply, Action | None]:
    """Apply one command; protocol violations come back as numbered replies."""
    phase, c, policy = state.phase, state.collected, state.policy
    verb = cmd.verb

    if verb == "QUIT":
        return replace(state, phase="Done"), Reply(221, "closing connection"), Action("close")
    if phase in ("Data", "Done"):
        return _bad_sequence(state)
    if phase == "Connected" and verb != "EHLO":
        return _bad_sequence(state, "send EHLO first")
    if verb in EEKS_VERBS and not policy.eeks_supported:
        return state, Reply(501, "command not recognized"), None

    if verb == "EHLO":
        if phase not in ("Connected", "SecureNegotiated"):
            return _bad_sequence(state)
        new_phase = "Greeted" if phase == "Connected" else phase
        new = replace(state, phase=new_phase, collected=replace(c, helo=cmd.argument))
        return new, Reply(250, policy.hostname, policy.capabilities()), None

    if verb == "STARTTLS":
        if phase != "Greeted":
            return _bad_sequence(state)
        if not policy.tls_supported:
            return state, Reply(454, "TLS not available"), None
        return replace(state, phase="SecureNegotiated", secure=True), \
            Reply(220, "ready to start TLS"), Action("starttls")

    if verb == "ENCRYPT":
        if phase not in ("Greeted", "SecureNegotiated"):
            return _bad_sequence(state)
        if cmd.argument not in policy.suites:
            return state, Reply(501, f"unsupported suite {cmd.argument}"), None
        return replace(state, phase="EncryptSet", collected=replace(c, suite=cmd.argument)), \
            Reply(250, f"suite {cmd.argument} selected"), None

    if verb == "SESSION":
        if phase != "EncryptSet":
            return _bad_sequence(state, "ENCRYPT must precede SESSION")
        return replace(state, phase="SessionSet", collected=replace(c, session_id=cmd.argument)), \
            Reply(250, "session salt accepted"), None

    if verb == "MAIL":
        if phase not in ("Greeted", "SecureNegotiated", "EncryptSet", "SessionSet"):
            return _bad_sequence(state)
        if policy.require_tls and not state.secure:
            return state, Reply(530, "must issue STARTTLS first"), None
        return replace(state, phase="MailFrom", collected=replace(c, sender=cmd.argument)), \
            Reply(250, "sender ok"), None

    if verb == "RCPT":
        if phase != "MailFrom":
            return _bad_sequence(state)
        return replace(state, phase="RcptTo", collected=replace(c, recipient=cmd.argument)), \
            Reply(250, "recipient ok"), None

    if verb == "TIME2LIVE":
        if c.suite is None or phase not in ("EncryptSet", "SessionSet", "MailFrom", "RcptTo"):
            return _bad_sequence(state)
        return replace(state, collected=replace(c, ttl_seconds=cmd.argument)), \
            Reply(250, f"ttl {cmd.argument}s"), None

    if verb == "FINGERPRINT":
        if c.session_id is None or phase not in ("SessionSet", "MailFrom", "RcptTo"):
            return _bad_sequence(state, "SESSION must precede FINGERPRINT")
        return replace(state, collected=replace(c, fingerprint=cmd.argument)), \
            Reply(250, "fingerprint recorded"), None

    # DATA
    if policy.eeks_supported and policy.eeks_policy == ENFORCED and not c.eeks_complete:
        return state, Reply(538, "encryption required: ENCRYPT, SESSION and FINGERPRINT first"), None
    if phase != "RcptTo":
        return _bad_sequence(state)
    return replace(state, phase="Data"), Reply(354, "end data with <CRLF>.<CRLF>"), None


def _finish_data(state: ServerState) -> tuple[ServerState, Reply, Action | None]:
    c = state.collected
    body = "".join(line + "\r\n" for line in c.body)
    done = replace(state, phase="Done")
    if not c.eeks_complete:
        msg = ReceivedMessage(c.sender, c.recipient, body, None, plaintext_mode=True)
        return done, Reply(250, "accepted (plaintext mode)"), Action("deliver", msg)
    try:
        env = MailEnvelope.from_wire(body)
    except EeksError as exc:
        return done, Reply(554, f"malformed envelope: {exc}"), None
    mismatches = [name for name, ok in (
        ("Sender", env.sender == c.sender),
        ("Recipient", env.recipient == c.recipient),
        ("Session", env.session_id == c.session_id),
        ("Suite", env.suite == c.suite),
        ("Fingerprint", env.fingerprint == c.fingerprint),
        ("TTL", c.ttl_seconds is None or env.ttl_seconds == c.ttl_seconds),
    ) if not ok]
    if mismatches:
        return done, Reply(554, "envelope disagrees with commands: " + ", ".join(mismatches)), None
    msg = ReceivedMessage(c.sender, c.recipient, body, env, plaintext_mode=False)
    return done, Reply(250, "accepted"), Action("deliver", msg)


def receive_line(state: ServerState, line: bytes | str) -> tuple[ServerState, Reply | None, Action | None]:
    """Server entry point for one raw line.

    Outside DATA the line is parsed and stepped.  Inside DATA lines are
    collected (dot-unstuffed) and no reply is produced until the sentinel.
    """
    if state.phase == "Data":
        text = line.decode("ascii", "replace") if isinstance(line, bytes) else line
        text = text[:-2] if text.endswith("\r\n") else text
        if text == ".":
            return _finish_data(state)
        if text.startswith("."):
            text = text[1:]
        c = state.collected
        return replace(state, collected=replace(c, body=c.body + (text,))), None, None
    try:
        cmd = parse_command(line)
    except UnknownVerb:
        return state, Reply(501, "command not recognized"), None
    except CommandSyntaxError as exc:
        return state, Reply(501, f"syntax error: {exc}"), None
    return step(state, cmd)


def dot_stuff(body: str) -> list[str]:
    """Split a CRLF body into DATA lines with leading dots doubled."""
    lines = body.split("\r\n")
    if lines and lines[-1] == "":
        lines.pop()
    return ["." + line if line.startswith(".") else line for line in lines]
