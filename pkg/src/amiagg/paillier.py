"""Paillier cryptosystem, the homomorphic baseline for the benchmark.

Textbook construction with the usual g = N+1 simplification: encryption is
(1 + mN) * z^N mod N^2 — the (N+1)^m power collapses to 1 + mN — and
decryption uses lambda = lcm(p-1, q-1) with mu = lambda^{-1} mod N.
Multiplying ciphertexts adds plaintexts mod N, which is exactly what the
in-network fold does on the tree.

Keygen is deterministic under a seeded rng so benchmark and test runs are
reproducible.  Correctness suites run 64–384 bit moduli; the benchmark runs
2048 bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import _arith
from .errors import AmiError


class PaillierError(AmiError):
    pass


class PlaintextOutOfRange(PaillierError):
    pass


class MalformedCiphertext(PaillierError):
    pass


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    n_sq: int

    @property
    def g(self) -> int:
        return self.n + 1

    @property
    def modulus_bytes(self) -> int:
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True)
class PaillierPrivateKey:
    lam: int  # lcm(p-1, q-1)
    mu: int   # lam^{-1} mod N


@dataclass(frozen=True)
class PaillierCiphertext:
    value: int

    def to_bytes(self, pk: PaillierPublicKey) -> bytes:
        return self.value.to_bytes(2 * pk.modulus_bytes, "big")

    @classmethod
    def from_bytes(cls, pk: PaillierPublicKey, data: bytes) -> "PaillierCiphertext":
        if len(data) != 2 * pk.modulus_bytes:
            raise ValueError("bad ciphertext length")
        return cls(value=int.from_bytes(data, "big"))


def _gen_prime(bits: int, rng) -> int:
    while True:
        # top two bits set so p*q has exactly the requested width; low bit odd
        cand = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if _arith.is_probable_prime(cand):
            return cand


def keygen(bits: int, rng) -> tuple[PaillierPublicKey, PaillierPrivateKey]:
    """Generate an N of `bits` bits.  Deterministic for a seeded rng."""
    if bits < 16:
        raise ValueError("modulus too small to be meaningful")
    half = bits // 2
    while True:
        p = _gen_prime(half, rng)
        q = _gen_prime(bits - half, rng)
        if p != q:
            break
    n = p * q
    lam = math.lcm(p - 1, q - 1)
    mu = _arith.invmod(lam, n)
    return PaillierPublicKey(n=n, n_sq=n * n), PaillierPrivateKey(lam=lam, mu=mu)


def encrypt(pk: PaillierPublicKey, m: int, rng) -> PaillierCiphertext:
    if not 0 <= m < pk.n:
        raise PlaintextOutOfRange(f"plaintext must lie in [0, N); got {m}")
    while True:
        z = rng.randrange(1, pk.n)
        if math.gcd(z, pk.n) == 1:
            break
    c = _arith.mulmod(1 + m * pk.n, _arith.powmod(z, pk.n, pk.n_sq), pk.n_sq)
    return PaillierCiphertext(value=c)


def add_ciphertexts(pk: PaillierPublicKey, a: PaillierCiphertext,
                    b: PaillierCiphertext) -> PaillierCiphertext:
    return PaillierCiphertext(value=_arith.mulmod(a.value, b.value, pk.n_sq))


def decrypt(sk: PaillierPrivateKey, pk: PaillierPublicKey,
            c: PaillierCiphertext) -> int:
    if not 0 < c.value < pk.n_sq or math.gcd(c.value, pk.n) != 1:
        raise MalformedCiphertext("ciphertext not a unit mod N^2")
    u = _arith.powmod(c.value, sk.lam, pk.n_sq)
    x = (u - 1) // pk.n  # the L function
    return _arith.mulmod(x, sk.mu, pk.n)
