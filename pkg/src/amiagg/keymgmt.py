"""Authenticated key agreement between meters and the utility, and the
per-round session-key schedule derived from it.

One agreement run is two signed messages.  The meter sends
(id, k_m*P, timestamp, signature); the utility answers
(id, k_u*P, timestamp, confirmation-tag, signature) and both sides hold the
seed key K = k_m*k_u*P.  The confirmation tag is hash_digest(ser(K) || 0x01),
so a derivation divergence is caught before any schedule is built.

From the seed key both ends derive two hash chains over its serialization —
forward F_0 = H(ser(K) || id_meter), F_j = H(F_{j-1}), and backward
B_0 = H(ser(K) || id_utility), B_j = H(B_{j-1}) — and the round keys are
keys[j] = F_j XOR B_{t-j}, giving t+1 single-use 32-byte session keys per
agreement.  Each round key expands into 26 per-field cover scalars via the
domain-tagged hash_to_scalar.

Replay handling: timestamps are integer seconds; a request older (or newer)
than the freshness window is rejected, and a duplicate (id, timestamp) pair
inside the window is rejected by a bounded cache.

Wire frames (byte-exact):
  request: [0x01][8B meter id][element][8B BE timestamp][signature]
  reply:   [0x02][8B utility id][element][8B BE timestamp][32B tag][signature]
The signature covers every preceding byte of the frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import AmiError
from .groups import (GroupParams, KeyPair, Signature, deserialize_signature,
                     hash_digest, serialize_signature, sign, signature_bytes,
                     verify)

REQUEST_TYPE = 0x01
REPLY_TYPE = 0x02

DEFAULT_FRESHNESS_WINDOW = 60  # seconds


class ProtocolError(AmiError):
    pass


class StaleTimestamp(ProtocolError):
    pass


class BadSignature(ProtocolError):
    pass


class UnknownSender(ProtocolError):
    pass


class ConfirmationMismatch(ProtocolError):
    pass


class DuplicateRequest(ProtocolError):
    pass


class ScheduleExhausted(ProtocolError):
    pass


def _id8(node_id: int) -> bytes:
    return struct.pack(">Q", node_id)


def _check_fresh(timestamp: int, now: int, window: int) -> None:
    if abs(now - timestamp) > window:
        raise StaleTimestamp(f"timestamp {timestamp} outside {window}s window of {now}")


@dataclass(frozen=True)
class KeyEstablishRequest:
    sm_id: int
    ephemeral_point: int
    timestamp: int
    signature: Signature

    def signed_bytes(self, params: GroupParams) -> bytes:
        return (bytes([REQUEST_TYPE]) + _id8(self.sm_id)
                + params.serialize_element(self.ephemeral_point)
                + struct.pack(">Q", self.timestamp))

    def to_bytes(self, params: GroupParams) -> bytes:
        return self.signed_bytes(params) + serialize_signature(params, self.signature)

    @classmethod
    def from_bytes(cls, data: bytes, params: GroupParams) -> "KeyEstablishRequest":
        ne = params.elem_bytes
        if len(data) != 1 + 8 + ne + 8 + signature_bytes(params):
            raise ValueError("bad request frame length")
        if data[0] != REQUEST_TYPE:
            raise ValueError(f"not a request frame (type {data[0]:#x})")
        sm_id = struct.unpack(">Q", data[1:9])[0]
        point = params.deserialize_element(data[9:9 + ne])
        ts = struct.unpack(">Q", data[9 + ne:17 + ne])[0]
        sig = deserialize_signature(params, data[17 + ne:])
        return cls(sm_id=sm_id, ephemeral_point=point, timestamp=ts, signature=sig)


@dataclass(frozen=True)
class KeyEstablishReply:
    utility_id: int
    ephemeral_point: int
    timestamp: int
    confirmation_tag: bytes
    signature: Signature

    def signed_bytes(self, params: GroupParams) -> bytes:
        return (bytes([REPLY_TYPE]) + _id8(self.utility_id)
                + params.serialize_element(self.ephemeral_point)
                + struct.pack(">Q", self.timestamp) + self.confirmation_tag)

    def to_bytes(self, params: GroupParams) -> bytes:
        return self.signed_bytes(params) + serialize_signature(params, self.signature)

    @classmethod
    def from_bytes(cls, data: bytes, params: GroupParams) -> "KeyEstablishReply":
        ne = params.elem_bytes
        if len(data) != 1 + 8 + ne + 8 + 32 + signature_bytes(params):
            raise ValueError("bad reply frame length")
        if data[0] != REPLY_TYPE:
            raise ValueError(f"not a reply frame (type {data[0]:#x})")
        utility_id = struct.unpack(">Q", data[1:9])[0]
        point = params.deserialize_element(data[9:9 + ne])
        ts = struct.unpack(">Q", data[9 + ne:17 + ne])[0]
        tag = data[17 + ne:49 + ne]
        sig = deserialize_signature(params, data[49 + ne:])
        return cls(utility_id=utility_id, ephemeral_point=point, timestamp=ts,
                   confirmation_tag=tag, signature=sig)


@dataclass(frozen=True)
class SeedKey:
    """Shared DH secret between one meter and the utility."""

    value: int  # group element K = k_m * k_u * P
    sm_id: int
    utility_id: int
    established_at: int

    def confirmation_tag(self, params: GroupParams) -> bytes:
        return hash_digest(params.serialize_element(self.value) + b"\x01")


class ReplayGuard:
    """Bounded duplicate cache over (sender id, timestamp) pairs.

    Entries older than the freshness window are dropped on each check, so the
    cache never outgrows one window's worth of traffic.
    """

    def __init__(self, window: int = DEFAULT_FRESHNESS_WINDOW):
        self.window = window
        self._seen: dict[tuple[int, int], int] = {}

    def check(self, sender_id: int, timestamp: int, now: int) -> None:
        cutoff = now - self.window
        for key in [k for k, ts in self._seen.items() if ts < cutoff]:
            del self._seen[key]
        key = (sender_id, timestamp)
        if key in self._seen:
            raise DuplicateRequest(f"duplicate request from {sender_id} at {timestamp}")
        self._seen[key] = timestamp


def build_request(params: GroupParams, sm_keypair: KeyPair, sm_id: int,
                  now: int, rng) -> tuple[int, KeyEstablishRequest]:
    """Meter side, message 1.  Returns (ephemeral secret, signed request)."""
    k = rng.randrange(1, params.q)
    point = params.g_mul(k)
    unsigned = KeyEstablishRequest(sm_id=sm_id, ephemeral_point=point,
                                   timestamp=now, signature=Signature(1, 0))
    sig = sign(params, sm_keypair.sk, unsigned.signed_bytes(params), rng)
    return k, KeyEstablishRequest(sm_id=sm_id, ephemeral_point=point,
                                  timestamp=now, signature=sig)


def process_request(params: GroupParams, req: KeyEstablishRequest,
                    registry: dict[int, int], utility_keypair: KeyPair,
                    utility_id: int, now: int, rng,
                    window: int = DEFAULT_FRESHNESS_WINDOW,
                    replay_guard: ReplayGuard | None = None,
                    ) -> tuple[SeedKey, KeyEstablishReply]:
    """Utility side.  Validates the request and answers with the reply.

    Check order: sender registration, freshness, signature, duplicate cache.
    Each failure rejects the request without producing a reply.
    """
    pk = registry.get(req.sm_id)
    if pk is None:
        raise UnknownSender(f"meter {req.sm_id} not registered")
    _check_fresh(req.timestamp, now, window)
    if not verify(params, pk, req.signed_bytes(params), req.signature):
        raise BadSignature(f"request signature from meter {req.sm_id} invalid")
    if not params.is_element(req.ephemeral_point):
        raise BadSignature(f"request point from meter {req.sm_id} not in group")
    if replay_guard is not None:
        replay_guard.check(req.sm_id, req.timestamp, now)

    k_u = rng.randrange(1, params.q)
    seed = SeedKey(value=params.scalar_mul(k_u, req.ephemeral_point),
                   sm_id=req.sm_id, utility_id=utility_id, established_at=now)
    unsigned = KeyEstablishReply(utility_id=utility_id,
                                 ephemeral_point=params.g_mul(k_u),
                                 timestamp=now,
                                 confirmation_tag=seed.confirmation_tag(params),
                                 signature=Signature(1, 0))
    sig = sign(params, utility_keypair.sk, unsigned.signed_bytes(params), rng)
    reply = KeyEstablishReply(utility_id=unsigned.utility_id,
                              ephemeral_point=unsigned.ephemeral_point,
                              timestamp=unsigned.timestamp,
                              confirmation_tag=unsigned.confirmation_tag,
                              signature=sig)
    return seed, reply


def finalize(params: GroupParams, reply: KeyEstablishReply, ephemeral_secret: int,
             registry: dict[int, int], sm_id: int, now: int,
             window: int = DEFAULT_FRESHNESS_WINDOW) -> SeedKey:
    """Meter side, message 2.  Recomputes K and checks the confirmation tag."""
    pk = registry.get(reply.utility_id)
    if pk is None:
        raise UnknownSender(f"utility {reply.utility_id} not registered")
    _check_fresh(reply.timestamp, now, window)
    if not verify(params, pk, reply.signed_bytes(params), reply.signature):
        raise BadSignature("reply signature invalid")
    if not params.is_element(reply.ephemeral_point):
        raise BadSignature("reply point not in group")
    seed = SeedKey(value=params.scalar_mul(ephemeral_secret, reply.ephemeral_point),
                   sm_id=sm_id, utility_id=reply.utility_id,
                   established_at=reply.timestamp)
    if seed.confirmation_tag(params) != reply.confirmation_tag:
        raise ConfirmationMismatch("confirmation tag does not match derived key")
    return seed


def _xor32(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


@dataclass
class SessionKeySchedule:
    """t+1 single-use round keys shared by one meter and the utility.

    The cursor tracks the next unconsumed round; ``advance`` is the only
    stateful operation and never hands out the same index twice.  The schedule
    object is single-owner — each endpoint derives its own copy.
    """

    sm_id: int
    utility_id: int
    keys: tuple[bytes, ...]
    cursor: int = field(default=0)

    @property
    def chain_length(self) -> int:
        return len(self.keys) - 1

    def advance(self) -> int:
        if self.cursor >= len(self.keys):
            raise ScheduleExhausted(
                f"all {len(self.keys)} session keys consumed; re-run key agreement")
        idx = self.cursor
        self.cursor += 1
        return idx

    def fingerprint(self) -> str:
        return hash_digest(b"".join(self.keys)).hex()[:16]


def derive_schedule(params: GroupParams, seed: SeedKey, t: int) -> SessionKeySchedule:
    """Build the forward/backward chains and XOR them into t+1 round keys."""
    if t < 0:
        raise ValueError("chain length must be non-negative")
    kb = params.serialize_element(seed.value)
    fwd = [hash_digest(kb + _id8(seed.sm_id))]
    bwd = [hash_digest(kb + _id8(seed.utility_id))]
    for _ in range(t):
        fwd.append(hash_digest(fwd[-1]))
        bwd.append(hash_digest(bwd[-1]))
    keys = tuple(_xor32(fwd[j], bwd[t - j]) for j in range(t + 1))
    return SessionKeySchedule(sm_id=seed.sm_id, utility_id=seed.utility_id, keys=keys)


def mask_for_round(params: GroupParams, schedule: SessionKeySchedule,
                   round_index: int, field_index: int) -> int:
    """Cover scalar for one (round, field) cell.  Pure; no cursor movement."""
    if round_index < 0:
        raise ValueError("round index must be non-negative")
    if round_index >= len(schedule.keys):
        raise ScheduleExhausted(
            f"round {round_index} beyond schedule of {len(schedule.keys)} keys")
    data = schedule.keys[round_index] + struct.pack(">I", field_index)
    return params.hash_to_scalar(b"mask", data)
