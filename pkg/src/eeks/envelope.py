"""Encrypted, signed, self-destructing message envelopes carried in DATA."""

from __future__ import annotations

import base64
import binascii
import random
import struct
import textwrap
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from eeks import directory as kd
from eeks.errors import (Expired, FingerprintInvalid, IntegrityFailure, MalformedEnvelope,
                         NoSession, NotFound, RecipientRevoked, WrongSession)
from eeks.schnorr import HashConfig, SchnorrKeyPair, SchnorrParams, Signature, encode_parts, sign, verify
from eeks.session import SessionContext, SessionKey

SUITE = "EEKS-SCHNORR-DH-AEAD-V1"

HEADER_ORDER = ("Sender", "Recipient", "Session", "Suite", "TTL", "Sent", "Counter", "Fingerprint")


@dataclass(frozen=True)
class MailEnvelope:
    sender: str
    recipient: str
    session_id: bytes
    suite: str
    ciphertext: bytes
    fingerprint: Signature
    ttl_seconds: int
    sent_at: int
    counter: int = 0

    def associated_data(self) -> bytes:
        return associated_data(self.sender, self.recipient, self.session_id, self.suite,
                               self.ttl_seconds, self.sent_at, self.counter)

    def to_wire(self) -> str:
        """Header block, blank line, base64 body; CRLF line endings, no sentinel."""
        headers = {
            "Sender": self.sender,
            "Recipient": self.recipient,
            "Session": self.session_id.hex(),
            "Suite": self.suite,
            "TTL": str(self.ttl_seconds),
            "Sent": str(self.sent_at),
            "Counter": str(self.counter),
            "Fingerprint": self.fingerprint.encode(),
        }
        lines = [f"{name}: {headers[name]}" for name in HEADER_ORDER]
        lines.append("")
        lines.extend(textwrap.wrap(base64.b64encode(self.ciphertext).decode("ascii"), 76))
        return "".join(line + "\r\n" for line in lines)

    @classmethod
    def from_wire(cls, text: str) -> MailEnvelope:
        head, sep, body = text.replace("\r\n", "\n").partition("\n\n")
        if not sep:
            raise MalformedEnvelope("missing blank line after headers")
        headers = {}
        for line in head.split("\n"):
            name, colon, value = line.partition(": ")
            if not colon or name not in HEADER_ORDER or name in headers:
                raise MalformedEnvelope(f"bad header line {line!r}")
            headers[name] = value
        missing = set(HEADER_ORDER) - headers.keys()
        if missing:
            raise MalformedEnvelope(f"missing headers: {sorted(missing)}")
        try:
            session_id = bytes.fromhex(headers["Session"])
            if len(headers["Session"]) != 32:
                raise ValueError("Session must be 32 hex characters")
            ttl, sent_at, counter = (_decimal(headers[h]) for h in ("TTL", "Sent", "Counter"))
            fingerprint = Signature.decode(headers["Fingerprint"])
            ciphertext = base64.b64decode("".join(body.split()), validate=True)
        except (ValueError, binascii.Error) as exc:
            raise MalformedEnvelope(str(exc)) from None
        return cls(headers["Sender"], headers["Recipient"], session_id, headers["Suite"],
                   ciphertext, fingerprint, ttl, sent_at, counter)


def _decimal(text: str) -> int:
    if not text.isascii() or not text.isdigit():
        raise ValueError(f"{text!r} is not a non-negative decimal")
    return int(text)


def associated_data(sender, recipient, session_id, suite, ttl_seconds, sent_at, counter) -> bytes:
    return encode_parts(sender.encode(), recipient.encode(), session_id, suite.encode(),
                        struct.pack(">QQI", ttl_seconds, sent_at, counter))


def message_nonce(session_id: bytes, counter: int) -> bytes:
    return session_id[:8] + struct.pack(">I", counter)


def seal(plaintext: bytes, session: SessionContext, sender: SchnorrKeyPair, recipient: str,
         ttl_seconds: int, now: int, rng: random.Random,
         directory: kd.DirectoryNode | None = None) -> MailEnvelope:
    """Encrypt ``plaintext`` under the session key and sign it with the sender's long-term key.

    With ``directory`` given, a revoked recipient is refused before anything
    is encrypted.
    """
    if not plaintext:
        raise ValueError("plaintext must be non-empty")
    if ttl_seconds < 0:
        raise ValueError("ttl_seconds must be >= 0")
    if session is None or session.key is None or session.peer != recipient:
        raise NoSession(f"no established session with {recipient}")
    if directory is not None:
        try:
            rec = kd.lookup(directory, recipient)
        except NotFound:
            raise NoSession(f"{recipient} unknown to {directory.name}") from None
        if not rec.active:
            raise RecipientRevoked(f"{recipient}'s key is revoked")
    key = session.key
    counter = session.next_counter()
    aad = associated_data(session.owner, recipient, key.session_id, SUITE, ttl_seconds, now, counter)
    ciphertext = ChaCha20Poly1305(key.key_bytes).encrypt(
        message_nonce(key.session_id, counter), plaintext, aad)
    fingerprint = sign(session.params, sender.x, plaintext, HashConfig.PRODUCTION, rng)
    return MailEnvelope(session.owner, recipient, key.session_id, SUITE, ciphertext,
                        fingerprint, ttl_seconds, now, counter)


def is_expired(envelope: MailEnvelope, now: int) -> bool:
    return envelope.ttl_seconds > 0 and now > envelope.sent_at + envelope.ttl_seconds


def decrypt(envelope: MailEnvelope, key_bytes: bytes) -> bytes:
    """AEAD step alone; raises IntegrityFailure on a bad tag."""
    try:
        return ChaCha20Poly1305(key_bytes).decrypt(
            message_nonce(envelope.session_id, envelope.counter),
            envelope.ciphertext, envelope.associated_data())
    except InvalidTag:
        raise IntegrityFailure("authentication tag mismatch") from None


def open_envelope(envelope: MailEnvelope, key: SessionKey, sender_public: int, now: int,
                  params: SchnorrParams) -> bytes:
    if envelope.session_id != key.session_id:
        raise WrongSession(f"envelope belongs to session {envelope.session_id.hex()}")
    if is_expired(envelope, now):
        raise Expired(f"expired at {envelope.sent_at + envelope.ttl_seconds}")
    plaintext = decrypt(envelope, key.key_bytes)
    if not verify(params, sender_public, plaintext, envelope.fingerprint, HashConfig.PRODUCTION):
        raise FingerprintInvalid(f"fingerprint does not verify for {envelope.sender}")
    return plaintext
