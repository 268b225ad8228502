"""Deterministic simulation of the metering tree: topology, round
orchestration, timing instrumentation, benchmark sweeps, and the collusion
probe.

Node ids: the utility is 0, the gateway is 2^64-1, meters are 1..n numbered
in breadth-first order (meter 1 is the tree root that uplinks to the
gateway).  The gateway is a pure relay: it verifies the frame digest and
forwards the bytes unchanged.

Timing model: protocol logic runs in simulated time, crypto work is measured
with a wall clock.  Each round yields two headline numbers —

* completion_ns: the simulated-parallel critical path.  All meters start
  computing their reports at t=0; an internal node folds each arriving child
  frame as soon as it is free (a busy-server model per node); the gateway
  relay and the utility phase are appended; an optional per-hop latency
  constant (default 0) is added per edge.
* compute_total_ns: the plain sum of every measured crypto duration in the
  round — what completing the round costs a single sequential host.

Both are emitted side by side because they answer different questions: the
critical path shows what deployed meters would experience (per-node work is
constant, only tree depth grows), the sequential total shows how aggregate
cryptographic cost scales with community size.

Operation counts in TimingRecord are analytic per phase (worst-case for the
discrete-log recovery); a Paillier ciphertext product is tallied as one
point addition since both are a single modular multiplication.
"""

from __future__ import annotations

import math
import statistics
import struct
import time
from dataclasses import dataclass, field

from . import aggregation as agg
from . import keymgmt as km
from . import paillier as pai
from .errors import AmiError
from .groups import GroupParams, KeyPair, hash_digest
from .vector import (CONTROLLABLE, LEVELS, Appliance, ApplianceReading,
                     CodecConfig, ConsumptionVector, encode,
                     is_single_meter_well_formed, pack, unpack, vec_add)

UTILITY_ID = 0
GATEWAY_ID = (1 << 64) - 1

SCHEME_MASKED_SCALAR = "masked-scalar"
SCHEME_MASKED_GROUP = "masked-group"
SCHEME_PAILLIER = "paillier"
SCHEMES = (SCHEME_MASKED_SCALAR, SCHEME_MASKED_GROUP, SCHEME_PAILLIER)

_SCHEME_MODE = {SCHEME_MASKED_SCALAR: agg.Mode.SCALAR,
                SCHEME_MASKED_GROUP: agg.Mode.GROUP}

PAILLIER_FRAME_TYPE = 0x12


class SimulationError(AmiError):
    pass


class ProbeInfeasible(SimulationError):
    """The probe cannot certify full-domain ambiguity for this configuration,
    so it refuses to run rather than report a vacuous pass."""


@dataclass(frozen=True)
class Topology:
    """Complete k-ary tree over meters 1..n, filled breadth-first."""

    n: int
    arity: int
    parents: dict[int, int | None]
    children: dict[int, tuple[int, ...]]

    def depth_of(self, meter: int) -> int:
        d = 0
        while self.parents[meter] is not None:
            meter = self.parents[meter]
            d += 1
        return d


def build_tree(n: int, arity: int, rng=None) -> Topology:
    """Breadth-first complete k-ary tree; deterministic (rng accepted for
    interface symmetry, unused)."""
    if n < 1 or arity < 1:
        raise ValueError("need n >= 1 and arity >= 1")
    parents: dict[int, int | None] = {1: None}
    children: dict[int, list[int]] = {m: [] for m in range(1, n + 1)}
    for m in range(2, n + 1):
        p = (m - 2) // arity + 1
        parents[m] = p
        children[p].append(m)
    return Topology(n=n, arity=arity, parents=parents,
                    children={m: tuple(c) for m, c in children.items()})


@dataclass
class Community:
    """One configured metering community with all key material established."""

    params: GroupParams
    cfg: CodecConfig
    topology: Topology
    chain_length: int
    window: int
    utility_keypair: KeyPair
    meter_keypairs: dict[int, KeyPair]
    registry: dict[int, int]
    meter_schedules: dict[int, km.SessionKeySchedule]
    utility_schedules: dict[int, km.SessionKeySchedule]
    paillier_pk: pai.PaillierPublicKey | None = None
    paillier_sk: pai.PaillierPrivateKey | None = None


def setup_community(params: GroupParams, topology: Topology, cfg: CodecConfig,
                    t: int, rng, now: int = 0,
                    window: int = km.DEFAULT_FRESHNESS_WINDOW,
                    paillier_bits: int | None = None) -> Community:
    """Register keypairs and run the real two-message agreement per meter."""
    if topology.n > cfg.max_meters:
        raise ValueError(f"{topology.n} meters exceeds codec max_meters "
                         f"{cfg.max_meters}")
    utility_kp = KeyPair.generate(params, rng)
    registry = {UTILITY_ID: utility_kp.pk}
    meter_kps = {}
    for m in range(1, topology.n + 1):
        kp = KeyPair.generate(params, rng)
        meter_kps[m] = kp
        registry[m] = kp.pk

    guard = km.ReplayGuard(window)
    meter_scheds, utility_scheds = {}, {}
    for m in range(1, topology.n + 1):
        secret, req = km.build_request(params, meter_kps[m], m, now, rng)
        seed_u, reply = km.process_request(
            params, req, registry, utility_kp, UTILITY_ID, now, rng,
            window=window, replay_guard=guard)
        seed_m = km.finalize(params, reply, secret, registry, m, now, window=window)
        meter_scheds[m] = km.derive_schedule(params, seed_m, t)
        utility_scheds[m] = km.derive_schedule(params, seed_u, t)
        if meter_scheds[m].keys != utility_scheds[m].keys:
            raise SimulationError(f"schedule divergence for meter {m}")

    ppk = psk = None
    if paillier_bits is not None:
        if paillier_bits <= cfg.total_bits + 8:
            raise ValueError(
                f"paillier modulus of {paillier_bits} bits cannot hold "
                f"{cfg.total_bits}-bit packed vectors")
        ppk, psk = pai.keygen(paillier_bits, rng)
    return Community(params=params, cfg=cfg, topology=topology, chain_length=t,
                     window=window, utility_keypair=utility_kp,
                     meter_keypairs=meter_kps, registry=registry,
                     meter_schedules=meter_scheds, utility_schedules=utility_scheds,
                     paillier_pk=ppk, paillier_sk=psk)


# -- wire frame for the Paillier path ----------------------------------------

@dataclass(frozen=True)
class PaillierFrame:
    """Ciphertext in transit, with the same contributor/integrity dressing as
    the masked aggregate frame.

    [0x12][8B sender][4B round][2B count][8B id x count][ciphertext]
    [8B ts][32B digest]
    """

    sender: int
    round_index: int
    contributors: tuple[int, ...]
    ciphertext: pai.PaillierCiphertext
    timestamp: int
    digest: bytes

    def prefix_bytes(self, pk: pai.PaillierPublicKey, cfg: CodecConfig) -> bytes:
        ids = b"".join(struct.pack(">Q", i) for i in self.contributors)
        return (bytes([PAILLIER_FRAME_TYPE]) + struct.pack(">Q", self.sender)
                + struct.pack(">I", self.round_index)
                + struct.pack(">H", len(self.contributors)) + ids
                + self.ciphertext.to_bytes(pk)
                + struct.pack(">Q", self.timestamp))

    def expected_digest(self, pk: pai.PaillierPublicKey, cfg: CodecConfig) -> bytes:
        return hash_digest(self.prefix_bytes(pk, cfg) + cfg.config_hash)

    def to_bytes(self, pk: pai.PaillierPublicKey, cfg: CodecConfig) -> bytes:
        return self.prefix_bytes(pk, cfg) + self.digest

    @classmethod
    def seal(cls, sender: int, round_index: int, contributors: tuple[int, ...],
             ciphertext: pai.PaillierCiphertext, now: int,
             pk: pai.PaillierPublicKey, cfg: CodecConfig) -> "PaillierFrame":
        frame = cls(sender=sender, round_index=round_index,
                    contributors=contributors, ciphertext=ciphertext,
                    timestamp=now, digest=b"")
        return cls(sender=sender, round_index=round_index,
                   contributors=contributors, ciphertext=ciphertext,
                   timestamp=now, digest=frame.expected_digest(pk, cfg))

    @classmethod
    def from_bytes(cls, data: bytes, pk: pai.PaillierPublicKey,
                   cfg: CodecConfig) -> "PaillierFrame":
        try:
            if len(data) < 16 or data[0] != PAILLIER_FRAME_TYPE:
                raise ValueError("not a paillier frame")
            sender = struct.unpack(">Q", data[1:9])[0]
            round_index = struct.unpack(">I", data[9:13])[0]
            k = struct.unpack(">H", data[13:15])[0]
            ids = struct.unpack(f">{k}Q", data[15:15 + 8 * k]) if k else ()
            if list(ids) != sorted(set(ids)):
                raise ValueError("contributor ids not strictly ascending")
            rest = data[15 + 8 * k:]
            clen = 2 * pk.modulus_bytes
            if len(rest) != clen + 40:
                raise ValueError("bad paillier frame length")
            ct = pai.PaillierCiphertext.from_bytes(pk, rest[:clen])
            ts = struct.unpack(">Q", rest[clen:clen + 8])[0]
            digest = rest[clen + 8:]
        except ValueError as exc:
            raise agg.IntegrityFailure(f"malformed paillier frame: {exc}") from None
        return cls(sender=sender, round_index=round_index,
                   contributors=tuple(ids), ciphertext=ct, timestamp=ts,
                   digest=digest)


# -- round orchestration ------------------------------------------------------

@dataclass(frozen=True)
class TimingRecord:
    node_id: int
    phase: str  # prepare | report | fold | relay | unmask | decrypt
    duration_ns: int
    point_adds: int = 0
    scalar_muls: int = 0
    modexps: int = 0


@dataclass(frozen=True)
class TranscriptFrame:
    src: int
    dst: int
    data: bytes


@dataclass
class RoundResult:
    scheme: str
    n: int
    arity: int
    round_index: int
    ok: bool
    diagnostic: str | None
    recovered: agg.RecoveredTotal | None
    ground_truth: ConsumptionVector
    records: list[TimingRecord]
    message_count: int
    bytes_on_wire: int
    completion_ns: int
    compute_total_ns: int
    transcript: list[TranscriptFrame] = field(default_factory=list)

    def phase_total_ns(self, phase: str) -> int:
        return sum(r.duration_ns for r in self.records if r.phase == phase)


def _ground_truth(vectors: dict[int, ConsumptionVector],
                  cfg: CodecConfig) -> ConsumptionVector:
    total = ConsumptionVector.zeros()
    for m in sorted(vectors):
        total = vec_add(total, vectors[m], cfg)
    return total


def _bsgs_op_bounds(cfg: CodecConfig, params: GroupParams) -> tuple[int, int]:
    # worst-case giant steps + the residual subtraction, per field
    adds = muls = 0
    for f in cfg.fields:
        bound = agg.field_recovery_bound(f.width, params)
        m = math.isqrt(bound) + 1
        adds += bound // m + 2
        muls += 2  # cover multiple + giant stride
    return adds, muls


def run_round(community: Community, scheme: str,
              readings: dict[int, list[ApplianceReading]], round_index: int,
              now: int, rng, hop_latency_ns: int = 0,
              drop: frozenset[int] | set[int] = frozenset(),
              drop_probability: float = 0.0) -> RoundResult:
    """Execute one full aggregation round over the tree.

    Dropped meters contribute no reading but still fold and forward their
    children's frames (their radio lives; the metering path is what failed).
    Any module error marks the round failed with a diagnostic instead of
    propagating.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    topo, cfg, params = community.topology, community.cfg, community.params
    if set(readings) != set(range(1, topo.n + 1)):
        raise ValueError("need readings for every meter 1..n")
    drop = set(drop)
    if drop_probability:
        drop |= {m for m in range(1, topo.n + 1)
                 if rng.random() < drop_probability}
    reporting = [m for m in range(1, topo.n + 1) if m not in drop]

    mode = _SCHEME_MODE.get(scheme)
    vectors = {m: encode(readings[m], cfg) for m in reporting}
    truth = _ground_truth(vectors, cfg)
    records: list[TimingRecord] = []
    transcript: list[TranscriptFrame] = []

    def fail(diag: str) -> RoundResult:
        return RoundResult(scheme=scheme, n=topo.n, arity=topo.arity,
                           round_index=round_index, ok=False, diagnostic=diag,
                           recovered=None, ground_truth=truth, records=records,
                           message_count=0, bytes_on_wire=0, completion_ns=0,
                           compute_total_ns=0, transcript=transcript)

    try:
        return _run_round_inner(community, scheme, mode, vectors, reporting,
                                round_index, now, rng, hop_latency_ns, truth,
                                records, transcript)
    except AmiError as exc:
        return fail(f"{type(exc).__name__}: {exc}")


def _run_round_inner(community, scheme, mode, vectors, reporting, round_index,
                     now, rng, hop_latency_ns, truth, records, transcript):
    topo, cfg, params = community.topology, community.cfg, community.params
    clock = time.perf_counter_ns
    pk, sk = community.paillier_pk, community.paillier_sk
    if scheme == SCHEME_PAILLIER and pk is None:
        raise SimulationError("community has no paillier keypair")

    covers = None
    if scheme != SCHEME_PAILLIER:
        # The utility derives the round's cover table while meters are still
        # reporting and folding; it needs only schedules and the round index,
        # so this pipelines off the critical path.
        t0 = clock()
        covers = agg.precompute_covers(community.utility_schedules,
                                       round_index, cfg, params)
        records.append(TimingRecord(node_id=UTILITY_ID, phase="prepare",
                                    duration_ns=clock() - t0))

    # Phase 1: every reporting meter computes its covered report (parallel
    # in simulated time — all start at t=0).
    own_payload = {}
    report_done = {}
    for m in reporting:
        t0 = clock()
        if scheme == SCHEME_PAILLIER:
            own_payload[m] = pai.encrypt(pk, pack(vectors[m], cfg), rng)
            ops = dict(modexps=1)
        else:
            idx = community.meter_schedules[m].advance()
            if idx != round_index:
                raise SimulationError(
                    f"meter {m} schedule cursor {idx} != round {round_index}")
            own_payload[m] = agg.make_report(
                vectors[m], community.meter_schedules[m], round_index, mode,
                cfg, params, now)
            ops = dict(scalar_muls=26) if mode is agg.Mode.GROUP else {}
        dt = clock() - t0
        report_done[m] = dt
        records.append(TimingRecord(node_id=m, phase="report", duration_ns=dt,
                                    **ops))

    # Phase 2: fold bottom-up.  Meters are BFS-numbered so children always
    # have larger ids; iterating n..1 visits leaves before parents.
    sent_frames: dict[int, bytes] = {}
    send_at: dict[int, int] = {}
    for m in range(topo.n, 0, -1):
        kids = [c for c in topo.children[m] if c in sent_frames]
        contributes = m in vectors
        if not kids and contributes:
            # no child frames arrived: ship the bare report frame
            if scheme == SCHEME_PAILLIER:
                frame = PaillierFrame.seal(m, round_index, (m,), own_payload[m],
                                           now, pk, cfg).to_bytes(pk, cfg)
            else:
                frame = own_payload[m].to_bytes(cfg, params)
            sent_frames[m] = frame
            send_at[m] = report_done[m]
            continue
        if not kids and not contributes:
            if topo.parents[m] is not None:
                continue  # dropped leaf: nothing to send
            # dropped root of n==1: send an explicitly empty aggregate
        busy = report_done.get(m, 0)
        fold_ns = 0
        adds = 0
        if scheme == SCHEME_PAILLIER:
            acc_ct = pai.PaillierCiphertext(value=1)  # encryption of 0 w/ unit randomizer
            contributors: set[int] = set()
            if contributes:
                t0 = clock()
                acc_ct = pai.add_ciphertexts(pk, acc_ct, own_payload[m])
                dt = clock() - t0
                busy += dt
                fold_ns += dt
                adds += 1
                contributors.add(m)
            arrivals = sorted(kids, key=lambda c: send_at[c])
            for c in arrivals:
                t0 = clock()
                child = PaillierFrame.from_bytes(sent_frames[c], pk, cfg)
                if child.expected_digest(pk, cfg) != child.digest:
                    raise agg.IntegrityFailure(f"paillier frame from {c}")
                overlap = contributors & set(child.contributors)
                if overlap:
                    raise agg.DuplicateContributor(str(sorted(overlap)))
                acc_ct = pai.add_ciphertexts(pk, acc_ct, child.ciphertext)
                contributors |= set(child.contributors)
                dt = clock() - t0
                busy = max(busy, send_at[c] + hop_latency_ns) + dt
                fold_ns += dt
                adds += 1
            out = PaillierFrame.seal(m, round_index, tuple(sorted(contributors)),
                                     acc_ct, now, pk, cfg).to_bytes(pk, cfg)
        else:
            state = agg.AggregateState.empty(mode, round_index)
            if contributes:
                t0 = clock()
                state = agg.fold(state, own_payload[m], cfg, params, now,
                                 community.window)
                dt = clock() - t0
                busy += dt
                fold_ns += dt
                adds += 26 if mode is agg.Mode.GROUP else 0
            arrivals = sorted(kids, key=lambda c: send_at[c])
            for c in arrivals:
                t0 = clock()
                data = sent_frames[c]
                if data[0] == agg.REPORT_TYPE:
                    state = agg.fold(state,
                                     agg.MaskedReport.from_bytes(data, cfg, params),
                                     cfg, params, now, community.window)
                else:
                    state = agg.merge_aggregate(
                        state, agg.AggregateFrame.from_bytes(data, cfg, params),
                        cfg, params, now, community.window)
                dt = clock() - t0
                busy = max(busy, send_at[c] + hop_latency_ns) + dt
                fold_ns += dt
                adds += 26 if mode is agg.Mode.GROUP else 0
            out = agg.AggregateFrame.seal(state, m, now, cfg, params
                                          ).to_bytes(cfg, params)
        sent_frames[m] = out
        send_at[m] = busy
        records.append(TimingRecord(node_id=m, phase="fold", duration_ns=fold_ns,
                                    point_adds=adds))

    # Phase 3: gateway relay (digest verification, bytes forwarded unchanged).
    message_count = len(sent_frames)
    bytes_on_wire = sum(len(f) for f in sent_frames.values())
    for m, f in sent_frames.items():
        transcript.append(TranscriptFrame(
            src=m, dst=topo.parents[m] if topo.parents[m] else GATEWAY_ID, data=f))
    if 1 not in sent_frames:
        # the whole community dropped out and nothing reached the gateway
        recovered = agg.RecoveredTotal(total=ConsumptionVector.zeros(),
                                       contributing_meters=0, contributors=())
        return RoundResult(scheme=scheme, n=topo.n, arity=topo.arity,
                           round_index=round_index, ok=True, diagnostic=None,
                           recovered=recovered, ground_truth=truth,
                           records=records, message_count=0, bytes_on_wire=0,
                           completion_ns=0, compute_total_ns=0,
                           transcript=transcript)

    root_frame = sent_frames[1]
    t0 = clock()
    if scheme == SCHEME_PAILLIER:
        parsed = PaillierFrame.from_bytes(root_frame, pk, cfg)
        relay_ok = parsed.expected_digest(pk, cfg) == parsed.digest
    elif root_frame[0] == agg.REPORT_TYPE:
        rep = agg.MaskedReport.from_bytes(root_frame, cfg, params)
        relay_ok = rep.expected_digest(cfg, params) == rep.digest
    else:
        af = agg.AggregateFrame.from_bytes(root_frame, cfg, params)
        relay_ok = af.expected_digest(cfg, params) == af.digest
    relay_ns = clock() - t0
    if not relay_ok:
        raise agg.IntegrityFailure("gateway rejected the root aggregate")
    records.append(TimingRecord(node_id=GATEWAY_ID, phase="relay",
                                duration_ns=relay_ns))
    message_count += 1
    bytes_on_wire += len(root_frame)
    transcript.append(TranscriptFrame(src=GATEWAY_ID, dst=UTILITY_ID,
                                      data=root_frame))

    # Phase 4: utility removes covers / decrypts.
    t0 = clock()
    if scheme == SCHEME_PAILLIER:
        frame = PaillierFrame.from_bytes(root_frame, pk, cfg)
        total = unpack(pai.decrypt(sk, pk, frame.ciphertext), cfg)
        recovered = agg.RecoveredTotal(total=total,
                                       contributing_meters=len(frame.contributors),
                                       contributors=frame.contributors)
        utility_ns = clock() - t0
        records.append(TimingRecord(node_id=UTILITY_ID, phase="decrypt",
                                    duration_ns=utility_ns, modexps=1))
    else:
        if root_frame[0] == agg.REPORT_TYPE:
            state = agg.fold(agg.AggregateState.empty(mode, round_index),
                             agg.MaskedReport.from_bytes(root_frame, cfg, params),
                             cfg, params, now, community.window)
        else:
            state = agg.AggregateFrame.from_bytes(root_frame, cfg, params).to_state()
        recovered = agg.unmask(state, community.utility_schedules, round_index,
                               cfg, params, covers=covers)
        utility_ns = clock() - t0
        if mode is agg.Mode.GROUP:
            badds, bmuls = _bsgs_op_bounds(cfg, params)
            records.append(TimingRecord(node_id=UTILITY_ID, phase="unmask",
                                        duration_ns=utility_ns,
                                        point_adds=badds, scalar_muls=bmuls))
        else:
            records.append(TimingRecord(node_id=UTILITY_ID, phase="unmask",
                                        duration_ns=utility_ns))

    # Critical path: root send -> gateway -> utility, plus per-hop latency.
    completion = (send_at[1] + hop_latency_ns + relay_ns + hop_latency_ns
                  + utility_ns)
    compute_total = sum(r.duration_ns for r in records)

    ok = recovered.total.values == truth.values
    diag = None if ok else (
        f"recovered {recovered.total.values} != ground truth {truth.values}")
    return RoundResult(scheme=scheme, n=topo.n, arity=topo.arity,
                       round_index=round_index, ok=ok, diagnostic=diag,
                       recovered=recovered, ground_truth=truth, records=records,
                       message_count=message_count, bytes_on_wire=bytes_on_wire,
                       completion_ns=completion, compute_total_ns=compute_total,
                       transcript=transcript)


def random_readings(rng, n: int, cfg: CodecConfig,
                    max_field_sum: int | None = None
                    ) -> dict[int, list[ApplianceReading]]:
    """Random per-meter readings whose field sums stay within capacity.

    Consumption per meter is capped at max_field_sum // n so every field's
    community sum stays below both the bit width and (for group mode) the
    recovery bound the caller passes in.
    """
    cap = (1 << cfg.consumption_bits) - 1
    if max_field_sum is not None:
        cap = min(cap, max_field_sum)
    per_meter = max(1, cap // max(n, 1))
    readings = {}
    for m in range(1, n + 1):
        rs = []
        for app in CONTROLLABLE:
            if rng.random() < 0.4:
                rs.append(ApplianceReading.off(app))
            else:
                rs.append(ApplianceReading.on(
                    app, rng.choice(LEVELS), rng.randrange(0, per_meter + 1)))
        rs.append(ApplianceReading.uncontrollable(rng.randrange(0, per_meter + 1)))
        readings[m] = rs
    return readings


# -- benchmark ----------------------------------------------------------------

BENCH_COLUMNS = ("scheme", "mode", "n", "arity", "round", "phase",
                 "duration_ns", "point_adds", "scalar_muls", "modexps",
                 "bytes_on_wire")


def _scheme_columns(scheme: str) -> tuple[str, str]:
    if scheme == SCHEME_PAILLIER:
        return "paillier", "-"
    return "masked", _SCHEME_MODE[scheme].name.lower()


def run_benchmark(points: list[tuple[str, int, int]], rounds: int,
                  params: GroupParams, cfg: CodecConfig, rng,
                  paillier_bits: int = 2048, hop_latency_ns: int = 0,
                  progress=None) -> list[dict]:
    """Measure `rounds` rounds per (scheme, n, arity) point.

    Emits one row per (round, phase) plus two derived rows per round:
    phase="completion" (simulated-parallel critical path) and
    phase="round_compute" (sum of all measured crypto durations).  Key
    establishment happens once per point, outside the timed region.
    """
    if not points:
        raise ValueError("benchmark sweep is empty")
    rows: list[dict] = []
    paillier_keys: tuple | None = None
    for scheme, n, arity in points:
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        topo = build_tree(n, arity)
        needs_paillier = scheme == SCHEME_PAILLIER
        community = setup_community(
            params, topo, cfg, t=max(rounds - 1, 0), rng=rng,
            paillier_bits=None)
        if needs_paillier:
            if paillier_keys is None:
                paillier_keys = pai.keygen(paillier_bits, rng)
            community.paillier_pk, community.paillier_sk = paillier_keys
        sch, mode_col = _scheme_columns(scheme)
        bound = min((1 << cfg.consumption_bits) - 1, params.q - 1)
        for r in range(rounds):
            readings = random_readings(rng, n, cfg, max_field_sum=bound)
            result = run_round(community, scheme, readings, r, now=0, rng=rng,
                               hop_latency_ns=hop_latency_ns)
            if not result.ok:
                raise SimulationError(
                    f"benchmark round failed at {scheme} n={n} arity={arity} "
                    f"round={r}: {result.diagnostic}")
            base = dict(scheme=sch, mode=mode_col, n=n, arity=arity, round=r)
            for phase in ("prepare", "report", "fold", "relay", "unmask",
                          "decrypt"):
                recs = [x for x in result.records if x.phase == phase]
                if not recs:
                    continue
                rows.append(dict(base, phase=phase,
                                 duration_ns=sum(x.duration_ns for x in recs),
                                 point_adds=sum(x.point_adds for x in recs),
                                 scalar_muls=sum(x.scalar_muls for x in recs),
                                 modexps=sum(x.modexps for x in recs),
                                 bytes_on_wire=0))
            rows.append(dict(base, phase="completion",
                             duration_ns=result.completion_ns, point_adds=0,
                             scalar_muls=0, modexps=0,
                             bytes_on_wire=result.bytes_on_wire))
            rows.append(dict(base, phase="round_compute",
                             duration_ns=result.compute_total_ns, point_adds=0,
                             scalar_muls=0, modexps=0,
                             bytes_on_wire=result.bytes_on_wire))
        if progress is not None:
            progress(scheme, n, arity)
    return rows


def summarize_benchmark(rows: list[dict]) -> dict:
    """Per (scheme, mode, n, arity, phase): median and IQR of duration_ns."""
    groups: dict[tuple, list[int]] = {}
    for row in rows:
        key = (row["scheme"], row["mode"], row["n"], row["arity"], row["phase"])
        groups.setdefault(key, []).append(row["duration_ns"])
    out = {}
    for key, vals in groups.items():
        vals.sort()
        med = statistics.median(vals)
        if len(vals) >= 4:
            q = statistics.quantiles(vals, n=4)
            iqr = q[2] - q[0]
        else:
            iqr = vals[-1] - vals[0]
        out[key] = {"median_ns": med, "iqr_ns": iqr, "rounds": len(vals),
                    "mean_ns": statistics.fmean(vals)}
    return out


# -- collusion probe ----------------------------------------------------------

_dlog_tables: dict[tuple[int, int], dict[int, int]] = {}


def _full_dlog_table(params: GroupParams) -> dict[int, int]:
    if params.q > 1 << 20:
        raise ProbeInfeasible("full discrete-log table needs a toy group")
    key = (params.p, params.g)
    table = _dlog_tables.get(key)
    if table is None:
        table = {}
        e = params.identity
        for x in range(params.q):
            table[e] = x
            e = params.point_add(e, params.g)
        _dlog_tables[key] = table
    return table


def single_meter_field_domain(f, cfg: CodecConfig) -> tuple[int, ...]:
    """All values one well-formed meter could put in this field.

    Counts are 0 or 1; the uncontrollable count is pinned to 1 (a reporting
    meter always reports); consumption spans its full bit range.
    """
    if f.kind == "count":
        if f.appliance is Appliance.UNCONTROLLABLE:
            return (1,)
        return (0, 1)
    return tuple(range(1 << f.width))


def _witness_vector(f, value: int, cfg: CodecConfig) -> ConsumptionVector:
    # minimal well-formed single-meter vector with field f set to `value`
    values = [0] * len(cfg.fields)
    values[cfg.field_of(Appliance.UNCONTROLLABLE, None, "count").index] = 1
    values[f.index] = value
    if f.kind == "consumption" and f.appliance is not Appliance.UNCONTROLLABLE \
            and value > 0:
        values[cfg.field_of(f.appliance, f.level, "count").index] = 1
    return ConsumptionVector(values=tuple(values))


def _solve_scalar_masks(target: int, cfg: CodecConfig, q: int) -> dict[int, int] | None:
    """Greedy per-field mask assignment reproducing `target` mod 2^L.

    Walks fields least-significant-first; each field's mask clears its own bit
    window exactly (mask spill into higher bits is absorbed by later fields).
    """
    masks = {}
    t = target
    for f in sorted(cfg.fields, key=lambda s: s.offset):
        need = (t >> f.offset) & ((1 << f.width) - 1)
        if need >= q:
            return None
        masks[f.index] = need
        t -= need << f.offset
    return masks if t == 0 else None


@dataclass
class MeterInference:
    meter: int
    candidates: dict[int, tuple[int, ...]]  # field index -> candidate values
    full_domain: bool


@dataclass
class ProbeReport:
    scheme: str
    round_index: int
    n: int
    compromised: tuple[int, ...]
    domains: dict[int, tuple[int, ...]]
    honest: dict[int, MeterInference]
    compromised_recovered: dict[int, bool]

    @property
    def all_private(self) -> bool:
        return all(inf.full_domain for inf in self.honest.values())

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "round": self.round_index,
            "n": self.n,
            "compromised": list(self.compromised),
            "all_private": self.all_private,
            "honest_meters": {
                str(m): {
                    "full_domain": inf.full_domain,
                    "candidate_counts": {str(f): len(c)
                                         for f, c in inf.candidates.items()},
                } for m, inf in self.honest.items()},
            "compromised_recovered": {str(m): ok for m, ok
                                      in self.compromised_recovered.items()},
        }


def collusion_probe(community: Community, result: RoundResult,
                    compromised: set[int],
                    compromised_readings: dict[int, list[ApplianceReading]] | None = None,
                    ) -> ProbeReport:
    """What could colluders (plus any wire observer) learn about each honest
    meter's fields from one round's transcript?

    Every meter's individual covered contribution is isolable from the
    transcript alone: its uplink frame minus the sum of its children's
    frames.  That isolated contribution is the maximal per-meter information
    available — subtracting the colluders' own payloads from wider aggregates
    yields nothing beyond it — so the probe enumerates, per field, every
    candidate value admitting a mask consistent with the observation, with an
    explicit verification of each (value, mask) witness.

    As a sanity check that the probe is a real attack and not a no-op, it also
    confirms that each COMPROMISED meter's contribution is exactly recoverable
    using its schedule (and equals its true reading when provided).

    Toy profiles only: full-domain certification needs an enumerable group
    and, in scalar mode, q >= 2^width for every field window.
    """
    topo, cfg, params = community.topology, community.cfg, community.params
    if result.scheme not in (_SCHEME_MODE):
        raise ValueError("collusion probe applies to the masked schemes")
    mode = _SCHEME_MODE[result.scheme]
    compromised = set(compromised)
    if not compromised <= set(range(1, topo.n + 1)):
        raise ValueError("compromised set contains unknown meter ids")
    if len(compromised) > topo.n - 1:
        raise ValueError(
            f"adversary model allows at most n-1 = {topo.n - 1} compromised "
            f"meters, got {len(compromised)}")
    if mode is agg.Mode.SCALAR and params.q < max(1 << f.width for f in cfg.fields):
        raise ProbeInfeasible(
            "scalar-mode certification needs q >= 2^width for every field")

    # -- parse transcript into per-sender payloads ----------------------------
    payload_of = {}
    contributors_of = {}
    for fr in result.transcript:
        if not 1 <= fr.src <= topo.n:
            continue  # gateway relay duplicates the root frame
        if fr.data[0] == agg.REPORT_TYPE:
            rep = agg.MaskedReport.from_bytes(fr.data, cfg, params)
            payload_of[fr.src] = rep.payload
            contributors_of[fr.src] = frozenset((rep.sender,))
        else:
            af = agg.AggregateFrame.from_bytes(fr.data, cfg, params)
            payload_of[fr.src] = af.payload
            contributors_of[fr.src] = frozenset(af.contributors)

    L = cfg.total_bits

    def isolate(m: int):
        """This meter's own covered contribution, from the wire frames alone."""
        if m not in payload_of:
            return None
        acc = payload_of[m]
        for c in topo.children[m]:
            if c not in payload_of:
                continue
            if mode is agg.Mode.SCALAR:
                acc = (acc - payload_of[c]) % (1 << L)
            else:
                acc = tuple(params.point_sub(a, b)
                            for a, b in zip(acc, payload_of[c]))
        return acc

    domains = {f.index: single_meter_field_domain(f, cfg) for f in cfg.fields}
    dlog = _full_dlog_table(params) if mode is agg.Mode.GROUP else None

    honest: dict[int, MeterInference] = {}
    for m in range(1, topo.n + 1):
        if m in compromised or m not in contributors_of or m not in contributors_of[m]:
            continue
        contribution = isolate(m)
        candidates: dict[int, tuple[int, ...]] = {}
        for f in cfg.fields:
            found = []
            for v in domains[f.index]:
                if mode is agg.Mode.GROUP:
                    s = dlog[contribution[f.index]]
                    mask = (s - v) % params.q
                    if params.g_mul((v + mask) % params.q) == contribution[f.index]:
                        found.append(v)
                else:
                    w = _witness_vector(f, v, cfg)
                    t = (contribution - pack(w, cfg)) % (1 << L)
                    masks = _solve_scalar_masks(t, cfg, params.q)
                    if masks is None:
                        continue
                    rebuilt = (pack(w, cfg) + sum(
                        mv << cfg.fields[fi].offset
                        for fi, mv in masks.items())) % (1 << L)
                    if rebuilt == contribution:
                        found.append(v)
            candidates[f.index] = tuple(found)
        honest[m] = MeterInference(
            meter=m, candidates=candidates,
            full_domain=all(candidates[i] == domains[i] for i in candidates))

    # -- colluder self-recovery cross-check -----------------------------------
    recovered_ok: dict[int, bool] = {}
    for m in sorted(compromised):
        if m not in contributors_of or m not in contributors_of[m]:
            continue
        contribution = isolate(m)
        sched = community.meter_schedules[m]
        if mode is agg.Mode.GROUP:
            vals = []
            for f in cfg.fields:
                s = dlog[contribution[f.index]]
                mask = km.mask_for_round(params, sched, result.round_index, f.index)
                vals.append((s - mask) % params.q)
            rec = ConsumptionVector(values=tuple(vals))
        else:
            cover = sum(km.mask_for_round(params, sched, result.round_index, f.index)
                        << f.offset for f in cfg.fields)
            rec = unpack((contribution - cover) % (1 << L), cfg)
        if compromised_readings is not None and m in compromised_readings:
            rec_ok = rec.values == encode(compromised_readings[m], cfg).values
        else:
            rec_ok = is_single_meter_well_formed(rec, cfg)
        recovered_ok[m] = rec_ok

    return ProbeReport(scheme=result.scheme, round_index=result.round_index,
                       n=topo.n, compromised=tuple(sorted(compromised)),
                       domains=domains, honest=honest,
                       compromised_recovered=recovered_ok)
