"""Covered consumption reports, in-network folding, and utility-side
cover removal.

Two interchangeable masking modes:

* scalar — the report is one big integer mod 2^L (L = packed vector width):
  pack(v) plus every per-field cover scalar shifted to its field offset.
  Compact (L bits on the wire) and folded by plain modular addition.
* group — the report is 26 group elements, (r_f + k_f)*P per field.  Folding
  is field-wise point addition; the utility subtracts the summed covers and
  recovers each field by a bounded discrete log (baby-step giant-step, the
  per-field bound keeps it at ~2^8 group operations).

Recovery is exact while every field's community sum stays below both its bit
width and the group order; the acceptance generators and max_meters guard
this, and the simulator cross-checks each round against ground truth.

Wire frames (byte-exact; the codec config hash is mixed into each digest as
associated data, so endpoints with divergent codecs reject frames instead of
mis-parsing them):

  report:    [0x10][1B mode][8B sender][4B round][payload][8B ts][32B digest]
  aggregate: [0x11][1B mode][8B origin][4B round][2B contributor count]
             [8B id x count, ascending][payload][8B ts][32B digest]

The aggregate frame's contributor block exists so the utility knows exactly
which schedules' covers to subtract when meters drop out.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

from .errors import AmiError
from .groups import GroupParams, hash_digest
from .keymgmt import SessionKeySchedule, mask_for_round
from .vector import CodecConfig, ConsumptionVector, pack, unpack

REPORT_TYPE = 0x10
AGGREGATE_TYPE = 0x11

DEFAULT_REPORT_WINDOW = 60  # seconds


class AggregationError(AmiError):
    pass


class DuplicateContributor(AggregationError):
    pass


class IntegrityFailure(AggregationError):
    pass


class StaleReport(AggregationError):
    pass


class ModeMismatch(AggregationError):
    """Mode or round index disagrees across one aggregation wave."""


class DlogNotFound(AggregationError):
    pass


class DLRecoveryFailure(AggregationError):
    pass


class MissingSchedule(AggregationError):
    pass


class Mode(enum.IntEnum):
    SCALAR = 0
    GROUP = 1


def _scalar_payload_bytes(cfg: CodecConfig) -> int:
    return (cfg.total_bits + 7) // 8


def _payload_length(mode: Mode, cfg: CodecConfig, params: GroupParams) -> int:
    if mode is Mode.SCALAR:
        return _scalar_payload_bytes(cfg)
    return 26 * params.elem_bytes


def _serialize_payload(mode: Mode, payload, cfg: CodecConfig,
                       params: GroupParams) -> bytes:
    if mode is Mode.SCALAR:
        return payload.to_bytes(_scalar_payload_bytes(cfg), "big")
    return b"".join(params.serialize_element(e) for e in payload)


def _deserialize_payload(mode: Mode, data: bytes, cfg: CodecConfig,
                         params: GroupParams):
    if mode is Mode.SCALAR:
        return int.from_bytes(data, "big")
    ne = params.elem_bytes
    return tuple(params.deserialize_element(data[i * ne:(i + 1) * ne])
                 for i in range(26))


@dataclass(frozen=True)
class MaskedReport:
    """One meter's covered contribution for one round."""

    sender: int
    round_index: int
    mode: Mode
    payload: int | tuple[int, ...]
    timestamp: int
    digest: bytes

    def prefix_bytes(self, cfg: CodecConfig, params: GroupParams) -> bytes:
        return (bytes([REPORT_TYPE, self.mode]) + struct.pack(">Q", self.sender)
                + struct.pack(">I", self.round_index)
                + _serialize_payload(self.mode, self.payload, cfg, params)
                + struct.pack(">Q", self.timestamp))

    def expected_digest(self, cfg: CodecConfig, params: GroupParams) -> bytes:
        return hash_digest(self.prefix_bytes(cfg, params) + cfg.config_hash)

    def to_bytes(self, cfg: CodecConfig, params: GroupParams) -> bytes:
        return self.prefix_bytes(cfg, params) + self.digest

    @classmethod
    def from_bytes(cls, data: bytes, cfg: CodecConfig,
                   params: GroupParams) -> "MaskedReport":
        try:
            if len(data) < 22 or data[0] != REPORT_TYPE:
                raise ValueError("not a report frame")
            mode = Mode(data[1])
            plen = _payload_length(mode, cfg, params)
            if len(data) != 14 + plen + 40:
                raise ValueError("bad report frame length")
            sender = struct.unpack(">Q", data[2:10])[0]
            round_index = struct.unpack(">I", data[10:14])[0]
            payload = _deserialize_payload(mode, data[14:14 + plen], cfg, params)
            ts = struct.unpack(">Q", data[14 + plen:22 + plen])[0]
            digest = data[22 + plen:]
        except ValueError as exc:
            raise IntegrityFailure(f"malformed report frame: {exc}") from None
        return cls(sender=sender, round_index=round_index, mode=mode,
                   payload=payload, timestamp=ts, digest=digest)


def make_report(v: ConsumptionVector, schedule: SessionKeySchedule,
                round_index: int, mode: Mode, cfg: CodecConfig,
                params: GroupParams, now: int, mask_fn=None) -> MaskedReport:
    """Cover one meter's vector with this round's per-field mask scalars.

    mask_fn(round_index, field_index) -> scalar overrides the schedule-derived
    masks; it exists for tests (e.g. forcing all-zero covers) and must never
    be used on a real path.
    """
    if mask_fn is None:
        mask_fn = lambda r, f: mask_for_round(params, schedule, r, f)
    if mode is Mode.SCALAR:
        acc = pack(v, cfg)
        for f in cfg.fields:
            acc += mask_fn(round_index, f.index) << f.offset
        payload = acc % (1 << cfg.total_bits)
    else:
        q = params.q
        payload = tuple(
            params.g_mul((v.values[f.index] + mask_fn(round_index, f.index)) % q)
            for f in cfg.fields)
    report = MaskedReport(sender=schedule.sm_id, round_index=round_index,
                          mode=mode, payload=payload, timestamp=now, digest=b"")
    return MaskedReport(sender=report.sender, round_index=report.round_index,
                        mode=mode, payload=payload, timestamp=now,
                        digest=report.expected_digest(cfg, params))


@dataclass(frozen=True)
class AggregateState:
    """Folded payload plus the exact set of meters folded into it."""

    mode: Mode
    round_index: int
    payload: int | tuple[int, ...]
    contributors: frozenset[int]

    @classmethod
    def empty(cls, mode: Mode, round_index: int) -> "AggregateState":
        payload = 0 if mode is Mode.SCALAR else (1,) * 26
        return cls(mode=mode, round_index=round_index, payload=payload,
                   contributors=frozenset())


def _combine(mode: Mode, a, b, cfg: CodecConfig, params: GroupParams):
    if mode is Mode.SCALAR:
        return (a + b) % (1 << cfg.total_bits)
    return tuple(params.point_add(x, y) for x, y in zip(a, b))


def fold(acc: AggregateState, report: MaskedReport, cfg: CodecConfig,
         params: GroupParams, now: int,
         window: int = DEFAULT_REPORT_WINDOW) -> AggregateState:
    """Fold one meter's report into the running aggregate."""
    # authenticate before interpreting: a tampered frame must read as
    # IntegrityFailure, not as whatever field the flipped bit landed in
    if report.expected_digest(cfg, params) != report.digest:
        raise IntegrityFailure(f"report digest mismatch from {report.sender}")
    if report.mode is not acc.mode or report.round_index != acc.round_index:
        raise ModeMismatch(
            f"report (mode {report.mode.name}, round {report.round_index}) vs "
            f"aggregate (mode {acc.mode.name}, round {acc.round_index})")
    if abs(now - report.timestamp) > window:
        raise StaleReport(f"report from {report.sender} aged out")
    if report.sender in acc.contributors:
        raise DuplicateContributor(f"meter {report.sender} already folded")
    return AggregateState(
        mode=acc.mode, round_index=acc.round_index,
        payload=_combine(acc.mode, acc.payload, report.payload, cfg, params),
        contributors=acc.contributors | {report.sender})


@dataclass(frozen=True)
class AggregateFrame:
    """A subtree's folded aggregate in transit to the parent node."""

    origin: int
    round_index: int
    mode: Mode
    contributors: tuple[int, ...]  # ascending
    payload: int | tuple[int, ...]
    timestamp: int
    digest: bytes

    def prefix_bytes(self, cfg: CodecConfig, params: GroupParams) -> bytes:
        ids = b"".join(struct.pack(">Q", i) for i in self.contributors)
        return (bytes([AGGREGATE_TYPE, self.mode]) + struct.pack(">Q", self.origin)
                + struct.pack(">I", self.round_index)
                + struct.pack(">H", len(self.contributors)) + ids
                + _serialize_payload(self.mode, self.payload, cfg, params)
                + struct.pack(">Q", self.timestamp))

    def expected_digest(self, cfg: CodecConfig, params: GroupParams) -> bytes:
        return hash_digest(self.prefix_bytes(cfg, params) + cfg.config_hash)

    def to_bytes(self, cfg: CodecConfig, params: GroupParams) -> bytes:
        return self.prefix_bytes(cfg, params) + self.digest

    @classmethod
    def from_bytes(cls, data: bytes, cfg: CodecConfig,
                   params: GroupParams) -> "AggregateFrame":
        try:
            if len(data) < 24 or data[0] != AGGREGATE_TYPE:
                raise ValueError("not an aggregate frame")
            mode = Mode(data[1])
            origin = struct.unpack(">Q", data[2:10])[0]
            round_index = struct.unpack(">I", data[10:14])[0]
            k = struct.unpack(">H", data[14:16])[0]
            ids = struct.unpack(f">{k}Q", data[16:16 + 8 * k]) if k else ()
            if list(ids) != sorted(set(ids)):
                raise ValueError("contributor ids not strictly ascending")
            plen = _payload_length(mode, cfg, params)
            rest = data[16 + 8 * k:]
            if len(rest) != plen + 40:
                raise ValueError("bad aggregate frame length")
            payload = _deserialize_payload(mode, rest[:plen], cfg, params)
            ts = struct.unpack(">Q", rest[plen:plen + 8])[0]
            digest = rest[plen + 8:]
        except ValueError as exc:
            raise IntegrityFailure(f"malformed aggregate frame: {exc}") from None
        return cls(origin=origin, round_index=round_index, mode=mode,
                   contributors=tuple(ids), payload=payload, timestamp=ts,
                   digest=digest)

    @classmethod
    def seal(cls, state: AggregateState, origin: int, now: int,
             cfg: CodecConfig, params: GroupParams) -> "AggregateFrame":
        frame = cls(origin=origin, round_index=state.round_index, mode=state.mode,
                    contributors=tuple(sorted(state.contributors)),
                    payload=state.payload, timestamp=now, digest=b"")
        return cls(origin=origin, round_index=frame.round_index, mode=frame.mode,
                   contributors=frame.contributors, payload=frame.payload,
                   timestamp=now, digest=frame.expected_digest(cfg, params))

    def to_state(self) -> AggregateState:
        return AggregateState(mode=self.mode, round_index=self.round_index,
                              payload=self.payload,
                              contributors=frozenset(self.contributors))


def merge_aggregate(acc: AggregateState, frame: AggregateFrame, cfg: CodecConfig,
                    params: GroupParams, now: int,
                    window: int = DEFAULT_REPORT_WINDOW) -> AggregateState:
    """Fold a child subtree's aggregate frame into the running aggregate."""
    if frame.expected_digest(cfg, params) != frame.digest:
        raise IntegrityFailure(f"aggregate digest mismatch from {frame.origin}")
    if frame.mode is not acc.mode or frame.round_index != acc.round_index:
        raise ModeMismatch(
            f"aggregate (mode {frame.mode.name}, round {frame.round_index}) vs "
            f"local (mode {acc.mode.name}, round {acc.round_index})")
    if abs(now - frame.timestamp) > window:
        raise StaleReport(f"aggregate from {frame.origin} aged out")
    overlap = acc.contributors & set(frame.contributors)
    if overlap:
        raise DuplicateContributor(f"meters {sorted(overlap)} already folded")
    return AggregateState(
        mode=acc.mode, round_index=acc.round_index,
        payload=_combine(acc.mode, acc.payload, frame.payload, cfg, params),
        contributors=acc.contributors | set(frame.contributors))


@dataclass(frozen=True)
class RecoveredTotal:
    total: ConsumptionVector
    contributing_meters: int
    contributors: tuple[int, ...]


_baby_cache: dict[tuple[int, int, int], dict[int, int]] = {}


def bounded_dlog(params: GroupParams, element: int, bound: int) -> int:
    """Return x in [0, bound] with x*P = element, by baby-step giant-step.

    O(sqrt(bound)) group operations; the baby table is cached per (group,
    table size) since every unmask reuses the same base point.
    """
    if bound < 0:
        raise ValueError("bound must be non-negative")
    bound = min(bound, params.q - 1)  # dlogs are unique mod q
    if element == params.identity:
        return 0
    m = math.isqrt(bound) + 1
    key = (params.p, params.g, m)
    baby = _baby_cache.get(key)
    if baby is None:
        baby = {}
        e = params.identity
        for j in range(m):
            baby[e] = j
            e = params.point_add(e, params.g)
        _baby_cache[key] = baby
    giant = params.neg(params.g_mul(m))
    gamma = element
    for i in range(bound // m + 1):
        j = baby.get(gamma)
        if j is not None:
            x = i * m + j
            if x <= bound:
                return x
        gamma = params.point_add(gamma, giant)
    raise DlogNotFound(f"no discrete log within bound {bound}")


def field_recovery_bound(width: int, params: GroupParams) -> int:
    return min((1 << width) - 1, params.q - 1)


@dataclass(frozen=True)
class CoverTable:
    """Per-meter cover material for one round, derived before any frame lands.

    The utility holds every schedule and knows the round index up front, so the
    26-hash-per-meter derivation can run while meters are still reporting and
    folding; only the batch subtraction (and group-mode dlogs) stays on the
    round-trip critical path.  full_sums is the cover over *all* tabled meters;
    absentees are subtracted out at unmask time.
    """

    round_index: int
    masks: dict[int, tuple[int, ...]]  # meter -> per-field cover scalars
    full_sums: tuple[int, ...]


def precompute_covers(schedules: dict[int, SessionKeySchedule],
                      round_index: int, cfg: CodecConfig,
                      params: GroupParams) -> CoverTable:
    masks = {m: tuple(mask_for_round(params, sched, round_index, f.index)
                      for f in cfg.fields)
             for m, sched in schedules.items()}
    sums = [0] * len(cfg.fields)
    for row in masks.values():
        for i, v in enumerate(row):
            sums[i] += v
    return CoverTable(round_index=round_index, masks=masks,
                      full_sums=tuple(sums))


def unmask(acc: AggregateState, schedules: dict[int, SessionKeySchedule],
           round_index: int, cfg: CodecConfig, params: GroupParams,
           covers: CoverTable | None = None) -> RecoveredTotal:
    """Subtract every contributor's covers and recover the community total.

    The cover sum is computed once over all contributors and removed in one
    batch subtraction per field.  Group mode then takes a bounded discrete
    log per field; a residual outside the field bound means an overflowed
    field or a wrong cover set and raises DLRecoveryFailure.
    """
    if round_index != acc.round_index:
        raise ModeMismatch(f"unmask round {round_index} vs aggregate "
                           f"round {acc.round_index}")
    if covers is not None and covers.round_index != round_index:
        raise ValueError(f"cover table is for round {covers.round_index}, "
                         f"not {round_index}")
    known = covers.masks if covers is not None else schedules
    missing = sorted(i for i in acc.contributors if i not in known)
    if missing:
        raise MissingSchedule(f"no schedule for contributors {missing}")

    if covers is not None:
        mask_sums = list(covers.full_sums)
        contributing = set(acc.contributors)
        for m, row in covers.masks.items():
            if m in contributing:
                continue
            for i, v in enumerate(row):
                mask_sums[i] -= v
    else:
        mask_sums = [0] * len(cfg.fields)
        for meter in acc.contributors:
            sched = schedules[meter]
            for f in cfg.fields:
                mask_sums[f.index] += mask_for_round(params, sched,
                                                     round_index, f.index)

    if acc.mode is Mode.SCALAR:
        cover = 0
        for f in cfg.fields:
            cover += mask_sums[f.index] << f.offset
        x = (acc.payload - cover) % (1 << cfg.total_bits)
        total = unpack(x, cfg)
    else:
        values = []
        for f in cfg.fields:
            residual = params.point_sub(
                acc.payload[f.index], params.g_mul(mask_sums[f.index] % params.q))
            try:
                values.append(bounded_dlog(
                    params, residual, field_recovery_bound(f.width, params)))
            except DlogNotFound:
                raise DLRecoveryFailure(
                    f"field {f.name}: residual outside recovery bound — field "
                    "overflow or cover-set mismatch") from None
        total = ConsumptionVector(values=tuple(values))
    return RecoveredTotal(total=total, contributing_meters=len(acc.contributors),
                          contributors=tuple(sorted(acc.contributors)))
