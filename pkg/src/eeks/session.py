"""Per-session keys: ephemeral Diffie-Hellman authenticated by long-term Schnorr keys.

Each side draws a fresh exponent, publishes g^a signed under its registered
long-term key, and derives the session key from g^(ab) and the session salt.
The exponents are wiped right after derivation, so a later compromise of the
long-term keys reveals nothing about past session keys.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Callable

from eeks import directory as kd
from eeks.errors import (AlreadyRegistered, DirectoryUnavailable, EphemeralErased,
                         InvalidIdentity, NotFound, PeerNotRegistered, RecipientRevoked,
                         SenderRevoked, SignatureInvalid, SubgroupCheckFailed)
from eeks.schnorr import (HashConfig, SchnorrKeyPair, SchnorrParams, Signature,
                          encode_parts, int_to_bytes, random_exponent, sign, verify)

KDF_LABEL = b"EEKS-SK-v1"
SALT_BYTES = 16
INITIATOR = "initiator"
RESPONDER = "responder"


def check_identity(identity: str) -> None:
    if not identity or identity.count("@") != 1 or any(c.isspace() for c in identity):
        raise InvalidIdentity(f"{identity!r} is not a mailbox address")


@dataclass(frozen=True)
class RegistrationRecord:
    identity: str
    long_term_public: int
    registered_at: int


@dataclass(frozen=True)
class HandshakeMessage:
    role: str
    sender: str
    peer: str
    ephemeral_public: int
    salt: bytes
    signature: Signature

    def encode(self) -> str:
        return " ".join([self.role, self.sender, self.peer, f"{self.ephemeral_public:x}",
                         self.salt.hex(), self.signature.encode()])

    @classmethod
    def decode(cls, text: str) -> HandshakeMessage:
        fields = text.split()
        if len(fields) != 6:
            raise ValueError(f"handshake needs 6 fields, got {len(fields)}")
        role, sender, peer, pub_hex, salt_hex, sig = fields
        if role not in (INITIATOR, RESPONDER):
            raise ValueError(f"bad role {role!r}")
        salt = bytes.fromhex(salt_hex)
        if len(salt) != SALT_BYTES:
            raise ValueError("salt must be 16 bytes")
        return cls(role, sender, peer, int(pub_hex, 16), salt, Signature.decode(sig))


@dataclass(frozen=True)
class SessionKey:
    key_bytes: bytes
    session_id: bytes
    established_at: int

    def __repr__(self):
        return f"SessionKey(session_id={self.session_id.hex()}, established_at={self.established_at})"


def signed_payload(ephemeral_public: int, salt: bytes, peer: str) -> bytes:
    return encode_parts(int_to_bytes(ephemeral_public), salt, peer.encode())


def derive_key(shared: int, salt: bytes) -> bytes:
    return hashlib.sha256(int_to_bytes(shared) + salt + KDF_LABEL).digest()[:32]


def in_subgroup(params: SchnorrParams, value: int) -> bool:
    return 2 <= value <= params.p - 1 and pow(value, params.q, params.p) == 1


class SessionContext:
    """Private half of one handshake, owned by a single party.

    Holds the ephemeral exponent until :meth:`erase`; afterwards only the
    derived :class:`SessionKey` survives.
    """

    def __init__(self, role, owner, peer, params, salt, ephemeral, now):
        self.role = role
        self.owner = owner
        self.peer = peer
        self.params = params
        self.salt = salt
        self.created_at = now
        self.key: SessionKey | None = None
        self.counter = 0
        self._ephemeral: int | None = ephemeral
        self._shared: int | None = None
        self._erased = False

    @property
    def session_id(self) -> bytes:
        return self.salt

    @property
    def ephemeral_secret(self) -> int | None:
        return self._ephemeral

    @property
    def erased(self) -> bool:
        return self._erased

    def derive(self, peer_public: int, now: int) -> SessionKey:
        if self._ephemeral is None:
            raise EphemeralErased("ephemeral secret already erased; key cannot be re-derived")
        self._shared = pow(peer_public, self._ephemeral, self.params.p)
        self.key = SessionKey(derive_key(self._shared, self.salt), self.salt, now)
        return self.key

    def erase(self) -> bool:
        self._ephemeral = None
        self._shared = None
        self._erased = True
        return True

    def next_counter(self) -> int:
        n = self.counter
        self.counter += 1
        return n

    def __repr__(self):
        state = "erased" if self._erased else "live"
        return f"SessionContext({self.role}, {self.owner} -> {self.peer}, {self.salt.hex()}, {state})"


def register(identity: str, keypair: SchnorrKeyPair, directory: kd.DirectoryNode,
             now: int = 0) -> RegistrationRecord:
    """Publish ``keypair.y`` for ``identity``; repeating an identical registration is a no-op."""
    check_identity(identity)
    root = directory.root
    if root is None or not root.online:
        raise DirectoryUnavailable(f"no reachable root behind {directory.name}")
    try:
        current = kd.lookup(root, identity)
    except NotFound:
        current = None
    if current is not None and current.active:
        if current.public_key != keypair.y:
            raise AlreadyRegistered(f"{identity} has a different active key; revoke it first")
        return RegistrationRecord(identity, current.public_key, current.updated_at)
    rec = kd.publish(directory, identity, keypair.y, now)
    return RegistrationRecord(identity, rec.public_key, rec.updated_at)


def _active_key(directory, identity) -> int:
    try:
        rec = kd.lookup(directory, identity)
    except NotFound:
        raise PeerNotRegistered(f"{identity} is not registered at {directory.name}") from None
    if not rec.active:
        raise RecipientRevoked(f"{identity}'s key is revoked")
    return rec.public_key


def _check_incoming(msg: HandshakeMessage, expected_peer: str, directory, params) -> None:
    try:
        rec = kd.lookup(directory, msg.sender)
    except NotFound:
        raise PeerNotRegistered(f"{msg.sender} is not registered at {directory.name}") from None
    if not rec.active:
        raise SenderRevoked(f"{msg.sender}'s key is revoked")
    if msg.peer != expected_peer:
        raise SignatureInvalid(f"handshake addressed to {msg.peer}, not {expected_peer}")
    payload = signed_payload(msg.ephemeral_public, msg.salt, msg.peer)
    if not verify(params, rec.public_key, payload, msg.signature, HashConfig.PRODUCTION):
        raise SignatureInvalid(f"handshake from {msg.sender} fails signature check")
    if not in_subgroup(params, msg.ephemeral_public):
        raise SubgroupCheckFailed(f"ephemeral value from {msg.sender} is outside the subgroup")


def initiate_handshake(me: RegistrationRecord, secret: int, peer: str,
                       directory: kd.DirectoryNode, params: SchnorrParams,
                       rng: random.Random, salt_source: Callable[[], bytes] | None = None,
                       *, now: int = 0, ephemeral: int | None = None,
                       ) -> tuple[HandshakeMessage, SessionContext]:
    """Open a session towards ``peer``.

    Returns the message to transmit and the private context that must be
    kept to finish the exchange.  ``ephemeral`` forces the exponent (tests).
    """
    check_identity(peer)
    _active_key(directory, peer)
    salt = salt_source() if salt_source else rng.randbytes(SALT_BYTES)
    if len(salt) != SALT_BYTES:
        raise ValueError("salt must be 16 bytes")
    a = ephemeral if ephemeral is not None else random_exponent(params.q, rng)
    if not 1 <= a < params.q:
        raise ValueError("ephemeral exponent out of range")
    big_a = pow(params.g, a, params.p)
    sig = sign(params, secret, signed_payload(big_a, salt, peer), HashConfig.PRODUCTION, rng)
    ctx = SessionContext(INITIATOR, me.identity, peer, params, salt, a, now)
    return HandshakeMessage(INITIATOR, me.identity, peer, big_a, salt, sig), ctx


def respond_and_derive(incoming: HandshakeMessage, me: RegistrationRecord, secret: int,
                       directory: kd.DirectoryNode, params: SchnorrParams,
                       rng: random.Random, *, now: int = 0, ephemeral: int | None = None,
                       capture: Callable[[SessionContext], None] | None = None,
                       ) -> tuple[HandshakeMessage, SessionContext]:
    """Authenticate an initiator's message, answer it and derive the session key.

    The returned context carries ``key`` and has already been erased.
    ``capture`` sees the context just before erasure; only instrumented
    test builds pass it.
    """
    if incoming.role != INITIATOR:
        raise SignatureInvalid("expected an initiator message")
    _check_incoming(incoming, me.identity, directory, params)
    b = ephemeral if ephemeral is not None else random_exponent(params.q, rng)
    big_b = pow(params.g, b, params.p)
    sig = sign(params, secret, signed_payload(big_b, incoming.salt, incoming.sender),
               HashConfig.PRODUCTION, rng)
    ctx = SessionContext(RESPONDER, me.identity, incoming.sender, params, incoming.salt, b, now)
    ctx.derive(incoming.ephemeral_public, now)
    if capture is not None:
        capture(ctx)
    ctx.erase()
    reply = HandshakeMessage(RESPONDER, me.identity, incoming.sender, big_b, incoming.salt, sig)
    return reply, ctx


def complete_handshake(ctx: SessionContext, reply: HandshakeMessage,
                       directory: kd.DirectoryNode, *, now: int = 0,
                       capture: Callable[[SessionContext], None] | None = None) -> SessionKey:
    """Initiator side: check the responder's reply, derive, erase."""
    if reply.role != RESPONDER or reply.sender != ctx.peer or reply.salt != ctx.salt:
        raise SignatureInvalid("reply does not belong to this session")
    _check_incoming(reply, ctx.owner, directory, ctx.params)
    key = ctx.derive(reply.ephemeral_public, now)
    if capture is not None:
        capture(ctx)
    ctx.erase()
    return key


def erase_ephemeral(ctx: SessionContext) -> bool:
    return ctx.erase()
