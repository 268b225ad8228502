"""End-to-end rounds over simulated tree topologies, plus the collusion probe.

The oracle for tree shape is the closed-form parent index (m - 2) // arity + 1;
the oracle for recovered totals is a plaintext sum of the encoded readings.
"""

import random

import pytest

from amiagg import aggregation as agg
from amiagg import paillier as pai
from amiagg.groups import GroupParams
from amiagg.simnet import (GATEWAY_ID, SCHEME_MASKED_GROUP,
                           SCHEME_MASKED_SCALAR, SCHEME_PAILLIER, SCHEMES,
                           PaillierFrame, ProbeInfeasible, SimulationError,
                           build_tree, collusion_probe, random_readings,
                           run_benchmark, run_round, setup_community,
                           summarize_benchmark)
from amiagg.vector import (Appliance, ApplianceReading, CodecConfig, Level,
                           encode, vec_add)


def make_community(params, cfg, n, arity, t=4, seed=7, paillier_bits=None):
    rng = random.Random(seed)
    topo = build_tree(n, arity)
    return setup_community(params, topo, cfg, t=t, rng=rng,
                           paillier_bits=paillier_bits)


def fixed_readings(n):
    """One deterministic controllable + uncontrollable reading per meter."""
    out = {}
    for m in range(1, n + 1):
        out[m] = [
            ApplianceReading.on(Appliance.WATER_HEATER, Level.MEDIUM, 3 + m),
            ApplianceReading.uncontrollable(m),
        ]
    return out


def plaintext_total(readings, cfg):
    total = None
    for m in sorted(readings):
        v = encode(readings[m], cfg)
        total = v if total is None else vec_add(total, v, cfg)
    return total


# -- topology ------------------------------------------------------------------


def test_tree_single_meter():
    topo = build_tree(1, 2)
    assert topo.parents == {1: None}
    assert topo.children[1] == ()
    assert topo.depth_of(1) == 0


def test_tree_binary_seven():
    topo = build_tree(7, 2)
    assert {m: topo.parents[m] for m in range(2, 8)} == {
        2: 1, 3: 1, 4: 2, 5: 2, 6: 3, 7: 3}
    assert topo.children[1] == (2, 3)
    assert topo.children[2] == (4, 5)
    assert topo.depth_of(7) == 2


def test_tree_matches_parent_formula():
    for arity in (2, 3, 4):
        topo = build_tree(40, arity)
        for m in range(2, 41):
            assert topo.parents[m] == (m - 2) // arity + 1


def test_tree_ternary_children_capped():
    topo = build_tree(13, 3)
    for m in range(1, 14):
        assert len(topo.children[m]) <= 3
    # every non-root appears exactly once as someone's child
    seen = [c for m in range(1, 14) for c in topo.children[m]]
    assert sorted(seen) == list(range(2, 14))


def test_tree_rejects_bad_args():
    with pytest.raises(ValueError):
        build_tree(0, 2)
    with pytest.raises(ValueError):
        build_tree(3, 0)


# -- community setup -----------------------------------------------------------


def test_setup_schedules_agree_both_sides(toy, codec):
    com = make_community(toy, codec, 3, 2)
    for m in (1, 2, 3):
        assert com.meter_schedules[m].keys == com.utility_schedules[m].keys
        assert com.meter_schedules[m].chain_length == 4


def test_setup_rejects_oversized_community(toy):
    cfg = CodecConfig(max_meters=3)
    with pytest.raises(ValueError, match="max_meters"):
        make_community(toy, cfg, 4, 2)


def test_setup_rejects_undersized_paillier_modulus(toy, codec):
    # packed vectors are 312 bits; a 256-bit modulus cannot hold them
    with pytest.raises(ValueError, match="cannot hold"):
        make_community(toy, codec, 2, 2, paillier_bits=256)


# -- rounds --------------------------------------------------------------------


def test_round_masked_group_seven_meters(toy, codec):
    com = make_community(toy, codec, 7, 2)
    readings = fixed_readings(7)
    res = run_round(com, SCHEME_MASKED_GROUP, readings, 0, now=0,
                    rng=random.Random(1))
    assert res.ok, res.diagnostic
    assert res.recovered.total.values == plaintext_total(readings, codec).values
    assert res.recovered.contributors == tuple(range(1, 8))
    # 7 uplinks plus the gateway relay
    assert res.message_count == 8
    assert res.bytes_on_wire > 0
    assert res.completion_ns > 0
    assert res.compute_total_ns >= res.phase_total_ns("report")


def test_round_all_schemes_agree(toy, codec):
    readings = fixed_readings(5)
    truth = plaintext_total(readings, codec)
    for scheme in SCHEMES:
        com = make_community(toy, codec, 5, 2,
                             paillier_bits=384 if scheme == SCHEME_PAILLIER else None)
        res = run_round(com, scheme, readings, 0, now=0, rng=random.Random(2))
        assert res.ok, (scheme, res.diagnostic)
        assert res.recovered.total.values == truth.values
        assert res.ground_truth.values == truth.values


def test_round_single_meter_is_root_report(toy, codec):
    com = make_community(toy, codec, 1, 2)
    res = run_round(com, SCHEME_MASKED_SCALAR, fixed_readings(1), 0, now=0,
                    rng=random.Random(3))
    assert res.ok
    # one uplink to the gateway, one relay to the utility
    assert res.message_count == 2
    assert res.transcript[-1].src == GATEWAY_ID


def test_round_message_count_invariant(toy, codec):
    for n, arity in ((2, 2), (6, 3), (9, 2)):
        com = make_community(toy, codec, n, arity)
        res = run_round(com, SCHEME_MASKED_SCALAR, fixed_readings(n), 0,
                        now=0, rng=random.Random(4))
        assert res.ok
        assert res.message_count == n + 1


def test_round_requires_all_readings(toy, codec):
    com = make_community(toy, codec, 3, 2)
    readings = fixed_readings(3)
    del readings[2]
    with pytest.raises(ValueError, match="every meter"):
        run_round(com, SCHEME_MASKED_SCALAR, readings, 0, now=0,
                  rng=random.Random(5))


def test_round_rejects_unknown_scheme(toy, codec):
    com = make_community(toy, codec, 2, 2)
    with pytest.raises(ValueError, match="unknown scheme"):
        run_round(com, "rot13", fixed_readings(2), 0, now=0,
                  rng=random.Random(6))


def test_round_deterministic_recovery_same_seed(toy, codec):
    readings = fixed_readings(6)
    results = []
    for _ in range(2):
        com = make_community(toy, codec, 6, 2, seed=42)
        res = run_round(com, SCHEME_MASKED_GROUP, readings, 0, now=0,
                        rng=random.Random(42))
        assert res.ok
        results.append(res)
    assert results[0].recovered.total.values == results[1].recovered.total.values
    assert [f.data for f in results[0].transcript] == \
        [f.data for f in results[1].transcript]


def test_round_advances_schedule_cursor(toy, codec):
    com = make_community(toy, codec, 2, 2, t=3)
    for r in range(4):
        res = run_round(com, SCHEME_MASKED_SCALAR, fixed_readings(2), r,
                        now=0, rng=random.Random(7))
        assert res.ok, (r, res.diagnostic)
    # chain exhausted: round 4 has no key material left
    res = run_round(com, SCHEME_MASKED_SCALAR, fixed_readings(2), 4, now=0,
                    rng=random.Random(7))
    assert not res.ok
    assert "ScheduleExhausted" in res.diagnostic


def test_round_cursor_mismatch_is_diagnosed(toy, codec):
    com = make_community(toy, codec, 2, 2)
    # skipping round 0 leaves every cursor behind the requested index
    res = run_round(com, SCHEME_MASKED_SCALAR, fixed_readings(2), 3, now=0,
                    rng=random.Random(8))
    assert not res.ok
    assert res.diagnostic
    assert res.recovered is None


# -- drop model ------------------------------------------------------------------


def test_round_explicit_drop_excludes_contribution(toy, codec):
    com = make_community(toy, codec, 7, 2)
    readings = fixed_readings(7)
    res = run_round(com, SCHEME_MASKED_GROUP, readings, 0, now=0,
                    rng=random.Random(9), drop={5})
    assert res.ok
    assert res.recovered.contributors == (1, 2, 3, 4, 6, 7)
    expect = plaintext_total({m: r for m, r in readings.items() if m != 5},
                             codec)
    assert res.recovered.total.values == expect.values


def test_round_dropped_internal_node_still_relays(toy, codec):
    # meter 2 has children 4 and 5; dropping it must not orphan them
    com = make_community(toy, codec, 7, 2)
    res = run_round(com, SCHEME_MASKED_SCALAR, fixed_readings(7), 0, now=0,
                    rng=random.Random(10), drop={2})
    assert res.ok
    assert 4 in res.recovered.contributors
    assert 5 in res.recovered.contributors
    assert 2 not in res.recovered.contributors


def test_round_drop_probability_applies(toy, codec):
    com = make_community(toy, codec, 8, 2)
    res = run_round(com, SCHEME_MASKED_SCALAR, fixed_readings(8), 0, now=0,
                    rng=random.Random(11), drop_probability=0.5)
    assert res.ok
    assert 0 < len(res.recovered.contributors) < 8
    expect = plaintext_total(
        {m: fixed_readings(8)[m] for m in res.recovered.contributors}, codec)
    assert res.recovered.total.values == expect.values


def test_round_all_dropped_but_root_still_reports(toy, codec):
    com = make_community(toy, codec, 3, 2)
    res = run_round(com, SCHEME_MASKED_SCALAR, fixed_readings(3), 0, now=0,
                    rng=random.Random(12), drop={2, 3})
    assert res.ok
    assert res.recovered.contributors == (1,)


# -- paillier frame ---------------------------------------------------------------


@pytest.fixture(scope="module")
def pkp():
    return pai.keygen(384, random.Random(99))


def test_paillier_frame_roundtrip(pkp, codec):
    pk, _ = pkp
    ct = pai.encrypt(pk, 1234, random.Random(1))
    fr = PaillierFrame.seal(3, 7, (1, 2, 3), ct, now=50, pk=pk, cfg=codec)
    back = PaillierFrame.from_bytes(fr.to_bytes(pk, codec), pk, codec)
    assert back == fr
    assert back.expected_digest(pk, codec) == back.digest


def test_paillier_frame_tamper_detected(pkp, codec):
    pk, _ = pkp
    ct = pai.encrypt(pk, 9, random.Random(2))
    blob = bytearray(PaillierFrame.seal(1, 0, (1,), ct, now=0, pk=pk,
                                        cfg=codec).to_bytes(pk, codec))
    blob[10] ^= 0x04
    back = PaillierFrame.from_bytes(bytes(blob), pk, codec)
    assert back.expected_digest(pk, codec) != back.digest


def test_paillier_frame_rejects_unsorted_contributors(pkp, codec):
    pk, _ = pkp
    ct = pai.encrypt(pk, 9, random.Random(3))
    fr = PaillierFrame.seal(1, 0, (2, 1), ct, now=0, pk=pk, cfg=codec)
    with pytest.raises(agg.IntegrityFailure):
        PaillierFrame.from_bytes(fr.to_bytes(pk, codec), pk, codec)


def test_paillier_frame_rejects_truncation(pkp, codec):
    pk, _ = pkp
    ct = pai.encrypt(pk, 9, random.Random(4))
    blob = PaillierFrame.seal(1, 0, (1,), ct, now=0, pk=pk,
                              cfg=codec).to_bytes(pk, codec)
    with pytest.raises(agg.IntegrityFailure):
        PaillierFrame.from_bytes(blob[:-1], pk, codec)


# -- collusion probe ----------------------------------------------------------


@pytest.fixture
def probe_setup(tiny):
    # fresh per test: each round consumes one schedule slot
    cfg = CodecConfig(count_bits=3, consumption_bits=3, max_meters=7)
    com = make_community(tiny, cfg, 4, 2, seed=13)
    return com, cfg


def probe_round(com, scheme, n, seed=21):
    readings = {}
    rng = random.Random(seed)
    for m in range(1, n + 1):
        # 3-bit fields: keep community sums under 8
        readings[m] = [
            ApplianceReading.on(Appliance.WATER_HEATER, Level.LOW,
                                rng.randrange(0, 2)),
            ApplianceReading.uncontrollable(rng.randrange(0, 2)),
        ]
    res = run_round(com, scheme, readings, 0, now=0, rng=rng)
    assert res.ok, res.diagnostic
    return readings, res


def test_probe_group_mode_full_domain(probe_setup):
    com, cfg = probe_setup
    readings, res = probe_round(com, SCHEME_MASKED_GROUP, 4)
    rep = collusion_probe(com, res, {2, 3}, compromised_readings=readings)
    assert rep.all_private
    assert set(rep.honest) == {1, 4}
    for inf in rep.honest.values():
        assert inf.full_domain
        for fi, cands in inf.candidates.items():
            assert cands == rep.domains[fi]
    assert rep.compromised_recovered == {2: True, 3: True}


def test_probe_scalar_mode_full_domain(probe_setup):
    com, cfg = probe_setup
    readings, res = probe_round(com, SCHEME_MASKED_SCALAR, 4, seed=22)
    rep = collusion_probe(com, res, {1}, compromised_readings=readings)
    assert rep.all_private
    assert set(rep.honest) == {2, 3, 4}
    assert rep.compromised_recovered == {1: True}


def test_probe_rejects_full_compromise(probe_setup):
    com, _ = probe_setup
    _, res = probe_round(com, SCHEME_MASKED_GROUP, 4)
    with pytest.raises(ValueError, match="n-1"):
        collusion_probe(com, res, {1, 2, 3, 4})


def test_probe_rejects_unknown_meters(probe_setup):
    com, _ = probe_setup
    _, res = probe_round(com, SCHEME_MASKED_GROUP, 4)
    with pytest.raises(ValueError, match="unknown meter"):
        collusion_probe(com, res, {9})


def test_probe_rejects_paillier_rounds(toy, codec):
    com = make_community(toy, codec, 2, 2, paillier_bits=384)
    res = run_round(com, SCHEME_PAILLIER, fixed_readings(2), 0, now=0,
                    rng=random.Random(14))
    assert res.ok
    with pytest.raises(ValueError, match="masked"):
        collusion_probe(com, res, {1})


def test_probe_scalar_needs_wide_enough_order(tiny):
    # 8-bit windows but q = 251 < 256: scalar certification is out of reach
    cfg = CodecConfig(count_bits=8, consumption_bits=8, max_meters=7)
    com = make_community(tiny, cfg, 2, 2)
    _, res = probe_round(com, SCHEME_MASKED_SCALAR, 2, seed=23)
    with pytest.raises(ProbeInfeasible):
        collusion_probe(com, res, {1})


def test_probe_group_needs_enumerable_order(codec):
    params = GroupParams.production()
    with pytest.raises(ProbeInfeasible):
        from amiagg.simnet import _full_dlog_table
        _full_dlog_table(params)


def test_probe_excludes_dropped_meters(probe_setup):
    com, cfg = probe_setup
    readings = {m: [ApplianceReading.uncontrollable(1)] for m in range(1, 5)}
    res = run_round(com, SCHEME_MASKED_GROUP, readings, 0, now=0,
                    rng=random.Random(15), drop={4})
    assert res.ok
    rep = collusion_probe(com, res, {2})
    assert 4 not in rep.honest  # never reported, nothing to infer about
    assert rep.all_private


def test_probe_json_shape(probe_setup):
    com, cfg = probe_setup
    readings, res = probe_round(com, SCHEME_MASKED_GROUP, 4, seed=24)
    doc = collusion_probe(com, res, {2}, compromised_readings=readings).to_json()
    assert doc["all_private"] is True
    assert doc["compromised"] == [2]
    assert set(doc["honest_meters"]) == {"1", "3", "4"}
    counts = doc["honest_meters"]["1"]["candidate_counts"]
    assert len(counts) == len(cfg.fields)


# -- benchmark -----------------------------------------------------------------


def test_benchmark_row_shape(toy, codec):
    rows = run_benchmark([(SCHEME_MASKED_SCALAR, 3, 2)], rounds=2,
                         params=toy, cfg=codec, rng=random.Random(16))
    from amiagg.simnet import BENCH_COLUMNS
    for row in rows:
        assert set(row) == set(BENCH_COLUMNS)
    phases = {r["phase"] for r in rows}
    assert {"report", "fold", "relay", "unmask",
            "completion", "round_compute"} <= phases
    assert all(r["scheme"] == "masked" and r["mode"] == "scalar" for r in rows)
    assert {r["round"] for r in rows} == {0, 1}


def test_benchmark_paillier_rows(toy, codec):
    rows = run_benchmark([(SCHEME_PAILLIER, 2, 2)], rounds=1, params=toy,
                         cfg=codec, rng=random.Random(17), paillier_bits=384)
    phases = {r["phase"] for r in rows}
    assert "decrypt" in phases
    assert "unmask" not in phases
    assert all(r["mode"] == "-" for r in rows)


def test_benchmark_rejects_empty_sweep(toy, codec):
    with pytest.raises(ValueError, match="empty"):
        run_benchmark([], rounds=1, params=toy, cfg=codec,
                      rng=random.Random(18))


def test_benchmark_progress_callback(toy, codec):
    seen = []
    run_benchmark([(SCHEME_MASKED_GROUP, 2, 2), (SCHEME_MASKED_SCALAR, 3, 2)],
                  rounds=1, params=toy, cfg=codec, rng=random.Random(19),
                  progress=lambda s, n, a: seen.append((s, n, a)))
    assert seen == [(SCHEME_MASKED_GROUP, 2, 2), (SCHEME_MASKED_SCALAR, 3, 2)]


def test_summarize_benchmark(toy, codec):
    rows = run_benchmark([(SCHEME_MASKED_SCALAR, 2, 2)], rounds=5,
                         params=toy, cfg=codec, rng=random.Random(20))
    summary = summarize_benchmark(rows)
    key = ("masked", "scalar", 2, 2, "completion")
    assert key in summary
    stats = summary[key]
    assert stats["rounds"] == 5
    assert stats["median_ns"] > 0
    assert stats["iqr_ns"] >= 0
    assert stats["mean_ns"] > 0


def test_random_readings_respect_field_cap(codec):
    rng = random.Random(25)
    for n in (1, 5, 50):
        readings = random_readings(rng, n, codec, max_field_sum=200)
        total = plaintext_total(readings, codec)
        for f in codec.fields:
            if f.kind == "consumption":
                assert total.values[f.index] <= 200
