"""Prime-order group arithmetic, hashing, signatures, and a stream cipher.

The protocol is written against an additively-notated group of prime order q
with a distinguished generator P.  Concretely we instantiate it as the order-q
subgroup of Z_p* for a prime p = c*q + 1: elements are ints in [1, p),
``point_add`` is modular multiplication, ``scalar_mul`` is modular
exponentiation, the identity is 1, and negation is the modular inverse.  This
keeps the toy profile exhaustively enumerable while the production profile
gets standard DSA-style sizes (2048-bit p, 256-bit q).

Element and scalar wire encodings are fixed-length big-endian, sized by the
profile (production: 256-byte elements, 32-byte scalars).  These encodings are
the byte-level contract every other module builds frames from.

Nothing in here is constant-time; side-channel hardening is out of scope.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

from . import _arith

# Production parameters, generated once by a deterministic seeded search:
# q is the first prime at or above a 256-bit value drawn from the SHA-256
# stream tagged "ami-aggregation-group-q-v1"; p = c*q + 1 for successive
# 1792-bit even c drawn from the "...-p-v1" stream until prime (50
# Miller-Rabin rounds); g = 2^((p-1)/q) mod p.  The test suite re-verifies
# primality of both, g != 1, and g^q = 1 mod p.
_PROD_P = int(
    "df1ac29e6a75f6538c70b5ebc5e2248dd64c2df2a91184f3411d0e3d188de928"
    "a088a410827bc212f644cca93ad5e4227a74ffc7eb13e3f2c520bb5b4c200d36"
    "d3cca8fde3b5653646507d0dfe0cd4f316132d297f774f3b1ff72a7414671c29"
    "79f788ad38362a141fddf155aca85f97b6154978822a4c68654507cc4e2b6c29"
    "c5f343d75122a46ea2a685f6b72fe98d22b3d4ce95aba7f839395d49f98f6f5b"
    "44a2a5f99e36480d650dce86872729aa1710edd7398e3057f51e7612704e1e2f"
    "d72320c48a89415ed0fe55cd5f5e06e0cc10d4129235e5ac3f0234256f3b6e13"
    "d905a5b23b9b338a10ca944f1a03a76829b813648ae00c9483ebe71285643e8d", 16)
_PROD_Q = int(
    "e674c927d53e60af33b1fdb713199b93f5382bb1d0a353ad4a760df00b9844d7", 16)
_PROD_G = int(
    "66e0b3570c6ac71d2dcd818d9b2e4e5405559ae785850f45e723264b8aadb8f4"
    "43401a6cf4093dd25350bcd8c7e92478d62ccbc404bfdb88373975ca3a448e08"
    "0ac78c0924b40c223473fe0b8c8e97c22de8446894c350e5fdcc897a86bc2d6e"
    "12885111942f25befe4e90580da9d9b0cba4f34ee8a629f917535a49a6807fdb"
    "eba35c1cd437050b94d1db03ae9a0dc1f06b084df0370d8bb00c572e5247bddc"
    "db83dffdcdc7e07cd63d550ae97c25657098eeda415dd017ffebfa814c2ef344"
    "e00a987630bc05d06cbb9d1262ef07519719b414489b6f38e13c474c3766750f"
    "d2dabf713cdf1fe3f5dc891b4c18b95944d08642b52f61642055adcb50d08ceb", 16)

_COMB_WINDOW = 8  # bits per fixed-base table window
_comb_tables: dict[tuple[int, int], list[list[int]]] = {}
_toy_cache: dict[int, "GroupParams"] = {}


@dataclass(frozen=True)
class GroupParams:
    """One group instantiation: modulus p, order q, generator g, profile name."""

    p: int
    q: int
    g: int
    profile: str  # "toy" or "production"

    @classmethod
    def production(cls) -> "GroupParams":
        return cls(p=_PROD_P, q=_PROD_Q, g=_PROD_G, profile="production")

    @classmethod
    def toy(cls, order: int = 65521) -> "GroupParams":
        """Small group of prime order `order`, exhaustively enumerable in tests.

        p and g are found by the same deterministic rule used for the
        production constants: smallest even c with c*order + 1 prime, then the
        smallest h >= 2 with h^c mod p != 1.
        """
        cached = _toy_cache.get(order)
        if cached is not None:
            return cached
        if not (2 < order < 1 << 16) or not _arith.is_probable_prime(order):
            raise ValueError(f"toy order must be a prime below 2^16, got {order}")
        c = 2
        while not _arith.is_probable_prime(c * order + 1):
            c += 2
        p = c * order + 1
        h = 2
        while True:
            g = pow(h, c, p)
            if g != 1:
                break
            h += 1
        params = cls(p=p, q=order, g=g, profile="toy")
        _toy_cache[order] = params
        return params

    # -- sizes and constants -------------------------------------------------

    @property
    def identity(self) -> int:
        return 1

    @cached_property
    def elem_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @cached_property
    def scalar_bytes(self) -> int:
        return (self.q.bit_length() + 7) // 8

    # -- group operations ----------------------------------------------------

    def is_element(self, a: int) -> bool:
        """Full subgroup membership check (one exponentiation)."""
        return 1 <= a < self.p and _arith.powmod(a, self.q, self.p) == 1

    def point_add(self, a: int, b: int) -> int:
        return _arith.mulmod(a, b, self.p)

    def point_sub(self, a: int, b: int) -> int:
        return _arith.mulmod(a, _arith.invmod(b, self.p), self.p)

    def neg(self, a: int) -> int:
        return _arith.invmod(a, self.p)

    def scalar_mul(self, k: int, a: int) -> int:
        k %= self.q
        if a == self.g:
            return self.g_mul(k)
        return _arith.powmod(a, k, self.p)

    def g_mul(self, k: int) -> int:
        """k*P for the distinguished generator, via a precomputed comb table."""
        k %= self.q
        table = _comb_tables.get((self.p, self.g))
        if table is None:
            table = self._build_comb()
        acc = 1
        for row in table:
            b = k & 0xFF
            if b:
                acc = _arith.mulmod(acc, row[b], self.p)
            k >>= _COMB_WINDOW
            if not k:
                break
        return acc

    def _build_comb(self) -> list[list[int]]:
        windows = (self.q.bit_length() + _COMB_WINDOW - 1) // _COMB_WINDOW
        table = []
        base = self.g
        for _ in range(windows):
            row = [1] * (1 << _COMB_WINDOW)
            for b in range(1, 1 << _COMB_WINDOW):
                row[b] = _arith.mulmod(row[b - 1], base, self.p)
            table.append(row)
            base = _arith.mulmod(row[-1], base, self.p)  # base^(2^window)
        _comb_tables[(self.p, self.g)] = table
        return table

    def random_scalar(self, rng, lower: int = 0) -> int:
        return rng.randrange(lower, self.q)

    # -- serialization -------------------------------------------------------

    def serialize_element(self, a: int) -> bytes:
        if not 1 <= a < self.p:
            raise ValueError("element out of range")
        return a.to_bytes(self.elem_bytes, "big")

    def deserialize_element(self, data: bytes, check_subgroup: bool = False) -> int:
        if len(data) != self.elem_bytes:
            raise ValueError(f"expected {self.elem_bytes} element bytes, got {len(data)}")
        a = int.from_bytes(data, "big")
        if not 1 <= a < self.p:
            raise ValueError("element out of range")
        if check_subgroup and not self.is_element(a):
            raise ValueError("not a subgroup element")
        return a

    def serialize_scalar(self, k: int) -> bytes:
        if not 0 <= k < self.q:
            raise ValueError("scalar out of range")
        return k.to_bytes(self.scalar_bytes, "big")

    def deserialize_scalar(self, data: bytes) -> int:
        if len(data) != self.scalar_bytes:
            raise ValueError(f"expected {self.scalar_bytes} scalar bytes, got {len(data)}")
        k = int.from_bytes(data, "big")
        if k >= self.q:
            raise ValueError("scalar out of range")
        return k

    # -- hashing into the scalar field ----------------------------------------

    def hash_to_scalar(self, tag: bytes, data: bytes) -> int:
        """Domain-separated hash onto [0, q).

        A single SHA-512 gives 512 output bits, at least 256 bits above the
        production q, so the mod-q bias is negligible; the tag is length-framed
        so distinct tags can never alias.
        """
        if len(tag) > 255:
            raise ValueError("domain tag too long")
        framed = bytes([len(tag)]) + tag + data
        return int.from_bytes(hashlib.sha512(framed).digest(), "big") % self.q


def hash_digest(data: bytes) -> bytes:
    """The protocol's fixed 32-byte digest (SHA-256)."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: int

    @classmethod
    def generate(cls, params: GroupParams, rng) -> "KeyPair":
        sk = rng.randrange(1, params.q)
        return cls(sk=sk, pk=params.g_mul(sk))


@dataclass(frozen=True)
class Signature:
    commitment: int  # R = r*P
    response: int    # s = r + c*sk mod q


def sign(params: GroupParams, sk: int, message: bytes, rng) -> Signature:
    """Schnorr signature over the group: R = rP, s = r + H(R||pk||m)*sk."""
    r = rng.randrange(1, params.q)
    big_r = params.g_mul(r)
    pk = params.g_mul(sk)
    c = params.hash_to_scalar(
        b"sig", params.serialize_element(big_r) + params.serialize_element(pk) + message)
    s = (r + c * sk) % params.q
    return Signature(commitment=big_r, response=s)


def verify(params: GroupParams, pk: int, message: bytes, sig: Signature) -> bool:
    """True iff sig verifies under pk; malformed inputs return False, never raise."""
    try:
        if not (1 <= sig.commitment < params.p and 0 <= sig.response < params.q):
            return False
        if not 1 <= pk < params.p:
            return False
        c = params.hash_to_scalar(
            b"sig",
            params.serialize_element(sig.commitment)
            + params.serialize_element(pk) + message)
        lhs = params.g_mul(sig.response)
        rhs = params.point_add(sig.commitment, _arith.powmod(pk, c, params.p))
        return lhs == rhs
    except (ValueError, TypeError):
        return False


def serialize_signature(params: GroupParams, sig: Signature) -> bytes:
    return params.serialize_element(sig.commitment) + params.serialize_scalar(sig.response)


def deserialize_signature(params: GroupParams, data: bytes) -> Signature:
    n = params.elem_bytes
    if len(data) != n + params.scalar_bytes:
        raise ValueError("bad signature length")
    return Signature(
        commitment=params.deserialize_element(data[:n]),
        response=params.deserialize_scalar(data[n:]))


def signature_bytes(params: GroupParams) -> int:
    return params.elem_bytes + params.scalar_bytes


def stream_xor(key: bytes, data: bytes) -> bytes:
    """Symmetric stream cipher: XOR with a SHA-256 counter keystream.

    Encryption and decryption are the same operation.  Key reuse across
    distinct plaintexts is the caller's responsibility (session keys here are
    single-use by construction).
    """
    out = bytearray(len(data))
    block = 0
    pos = 0
    while pos < len(data):
        ks = hashlib.sha256(key + block.to_bytes(8, "big")).digest()
        chunk = data[pos:pos + 32]
        for i, byte in enumerate(chunk):
            out[pos + i] = byte ^ ks[i]
        pos += len(chunk)
        block += 1
    return bytes(out)
