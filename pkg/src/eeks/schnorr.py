"""
Schnorr signatures over a prime-order subgroup of Z_p^*.

Signing:       r = g^delta mod p,  e = h(M || r),  s = (x*e + delta) mod q
Verification:  r' = g^s * y^(-e) mod p,  accept iff h(M || r') == e

Two challenge hashes are available.  PRODUCTION is SHA-256 over a
length-prefixed encoding of (M, r); TEST is (int(M) + r) mod q, which keeps
small-group vectors checkable by hand.
"""

from __future__ import annotations

import enum
import hashlib
import random
import struct
from dataclasses import dataclass
from functools import lru_cache

from sympy import isprime

from eeks.errors import InvalidParameters, ParameterSearchExhausted

PRODUCTION_Q_BITS = 256
PRODUCTION_P_BITS = 2048
PRODUCTION_SEED = 0x45454B53  # "EEKS"

MAX_ATTEMPTS = 200_000


def int_to_bytes(n: int) -> bytes:
    """Minimal big-endian encoding; zero encodes as a single zero byte."""
    if n < 0:
        raise ValueError("negative integers have no encoding")
    return n.to_bytes(max(1, (n.bit_length() + 7) // 8), "big")


def encode_parts(*parts: bytes) -> bytes:
    """Length-prefixed concatenation: 8-byte big-endian length, then bytes."""
    return b"".join(struct.pack(">Q", len(part)) + part for part in parts)


def concat(message: bytes, r: int) -> bytes:
    """Canonical encoding of M || r."""
    return struct.pack(">Q", len(message)) + message + int_to_bytes(r)


@dataclass(frozen=True)
class SchnorrParams:
    p: int
    q: int
    g: int

    def __post_init__(self):
        check_params(self.p, self.q, self.g)

    @property
    def name(self) -> str:
        return f"schnorr-{self.p.bit_length()}-{self.q.bit_length()}"


def check_params(p: int, q: int, g: int) -> None:
    if p < 3 or not isprime(p):
        raise InvalidParameters(f"p={p} is not prime")
    if q < 2 or not isprime(q):
        raise InvalidParameters(f"q={q} is not prime")
    if (p - 1) % q:
        raise InvalidParameters("q does not divide p - 1")
    if not 2 <= g <= p - 1:
        raise InvalidParameters("g must lie in [2, p-1]")
    if pow(g, q, p) != 1:
        raise InvalidParameters("g does not generate the order-q subgroup")


@dataclass(frozen=True)
class SchnorrKeyPair:
    x: int
    y: int

    def __repr__(self):
        return f"SchnorrKeyPair(y={self.y:#x}, x=<hidden>)"


@dataclass(frozen=True)
class Signature:
    e: int
    s: int

    def encode(self) -> str:
        return f"{self.e:x}:{self.s:x}"

    @classmethod
    def decode(cls, text: str) -> Signature:
        """Parse ``e-hex:s-hex``; rejects uppercase, signs and leading zeros."""
        e_hex, sep, s_hex = text.partition(":")
        if not sep:
            raise ValueError(f"signature {text!r} lacks ':'")
        return cls(_parse_hex(e_hex), _parse_hex(s_hex))

    def __str__(self):
        return self.encode()


_HEX = frozenset("0123456789abcdef")


def _parse_hex(text: str) -> int:
    if not text or not set(text) <= _HEX:
        raise ValueError(f"bad hex field {text!r}")
    if len(text) > 1 and text[0] == "0":
        raise ValueError(f"hex field {text!r} has leading zeros")
    return int(text, 16)


class HashConfig(enum.Enum):
    PRODUCTION = "sha256"
    TEST = "test-mod-q"

    def challenge(self, message: bytes, r: int, q: int) -> int:
        if self is HashConfig.TEST:
            return (int.from_bytes(message, "big") + r) % q
        return int.from_bytes(hashlib.sha256(concat(message, r)).digest(), "big")


def gen_params(q_bits: int, p_bits: int, seed) -> SchnorrParams:
    """Search for a group with a q_bits prime q dividing p - 1 for a p_bits prime p.

    The search is a pure function of ``seed``.
    """
    if not 8 <= q_bits < p_bits:
        raise ValueError("need 8 <= q_bits < p_bits")
    rng = random.Random(seed)
    attempts = 0

    def bump():
        nonlocal attempts
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise ParameterSearchExhausted(
                f"no group found for q_bits={q_bits}, p_bits={p_bits} "
                f"after {MAX_ATTEMPTS} attempts")

    while True:
        bump()
        q = rng.getrandbits(q_bits) | (1 << (q_bits - 1)) | 1
        if isprime(q):
            break

    k_bits = p_bits - q_bits
    while True:
        bump()
        k = (rng.getrandbits(k_bits) | (1 << (k_bits - 1))) & ~1
        p = k * q + 1
        if p.bit_length() == p_bits and isprime(p):
            break

    cofactor = (p - 1) // q
    for h in range(2, p - 1):
        bump()
        g = pow(h, cofactor, p)
        if g != 1:
            return SchnorrParams(p, q, g)
    raise ParameterSearchExhausted("no generator found")  # pragma: no cover


TEST_PARAMS = SchnorrParams(p=23, q=11, g=2)


@lru_cache(maxsize=None)
def production_params() -> SchnorrParams:
    """The default 2048/256-bit group, regenerated deterministically on first use."""
    return gen_params(PRODUCTION_Q_BITS, PRODUCTION_P_BITS, PRODUCTION_SEED)


def random_exponent(q: int, rng: random.Random) -> int:
    """Uniform integer in [1, q-1] by rejection sampling."""
    width = (q - 1).bit_length()
    while True:
        k = rng.getrandbits(width)
        if 1 <= k < q:
            return k


def keygen(params: SchnorrParams, rng: random.Random, x: int | None = None) -> SchnorrKeyPair:
    if x is None:
        x = random_exponent(params.q, rng)
    elif not 1 <= x < params.q:
        raise ValueError("secret key out of range")
    return SchnorrKeyPair(x=x, y=pow(params.g, x, params.p))


def sign(params: SchnorrParams, x: int, message: bytes, hash: HashConfig,
         rng: random.Random | None = None, *, nonce: int | None = None) -> Signature:
    """Sign ``message`` with secret key ``x``.

    ``nonce`` forces delta for test vectors; otherwise delta is drawn from
    ``rng``.  Delta lives only in this frame.
    """
    p, q, g = params.p, params.q, params.g
    if not 1 <= x < q:
        raise ValueError("secret key out of range")
    if not message:
        raise ValueError("message must be non-empty")
    if nonce is None:
        if rng is None:
            raise ValueError("either rng or nonce is required")
        delta = random_exponent(q, rng)
    else:
        if not 1 <= nonce < q:
            raise ValueError("nonce out of range")
        delta = nonce
    r = pow(g, delta, p)
    e = hash.challenge(message, r, q)
    s = (x * e + delta) % q
    del delta, r
    return Signature(e=e, s=s)


def mod_inverse(a: int, m: int) -> int:
    """Inverse of ``a`` modulo ``m`` via the extended Euclidean algorithm."""
    old_r, r = a % m, m
    old_s, s = 1, 0
    while r:
        quot = old_r // r
        old_r, r = r, old_r - quot * r
        old_s, s = s, old_s - quot * s
    if old_r != 1:
        raise ValueError(f"{a} has no inverse modulo {m}")
    return old_s % m


def recover_commitment(params: SchnorrParams, y: int, sig: Signature) -> int:
    """r' = g^s * (y^-1)^e mod p."""
    p = params.p
    return pow(params.g, sig.s, p) * pow(mod_inverse(y, p), sig.e, p) % p


def verify(params: SchnorrParams, y: int, message: bytes, sig: Signature,
           hash: HashConfig) -> bool:
    if not (0 <= sig.s < params.q and sig.e >= 0):
        return False
    if not 1 <= y < params.p:
        return False
    r_prime = recover_commitment(params, y, sig)
    return hash.challenge(message, r_prime, params.q) == sig.e
