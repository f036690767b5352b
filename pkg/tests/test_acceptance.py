"""Acceptance gate: twelve end-to-end criteria, one printed verdict each.

Each test prints exactly one `[PASS]`/`[FAIL]` line on the real stdout (so
the verdicts stay visible under pytest's capture) and then asserts. Expected
values come from the committed independent oracles (crc_oracle, trace_oracle,
randgen) or from the reference record in conftest; nothing here trusts the
code under test for its own expectations.
"""

import json
import random
import sys
import time
from collections import Counter
from pathlib import Path

from conftest import (GENERAL, REFERENCE_RECORD, SPECIFIC, make_mini_scenario,
                      make_product_template)
from crc_oracle import crc16_oracle
from randgen import random_pair
from trace_oracle import OracleCycle, bfs_trace
from test_enterprise import read_rec, resolver_for
from test_trace import random_registry

from tagnet import enterprise as ent
from tagnet import gate as gt
from tagnet import modbus as mb
from tagnet import rfidsim as rf
from tagnet.clock import SimClock
from tagnet.scenario import parse_scenario, run_scenario, run_scenario_file
from tagnet.tagcodec import decode_record, encode_record, layout_groups
from tagnet.trace import (CycleDetected, TraceRecord, TraceRegistry,
                          origin_report, trace)

T0 = 1_173_949_200
DEMO = str(Path(__file__).resolve().parent.parent / "scenarios" / "demo.json")


def _verdict(capsys, num: int, label: str, body) -> None:
    try:
        body()
        ok, detail = True, ""
    except Exception as e:
        ok, detail = False, f" ({type(e).__name__}: {e})"
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:02d}: {label}{detail}"
    with capsys.disabled():
        sys.stdout.write("\n" + line + "\n")
        sys.stdout.flush()
    assert ok, line


def _traffic_scenario(count: int) -> dict:
    part = dict(REFERENCE_RECORD, TAG_ID=202, TAG_TYPE=0, COMPONENTS_NUMBER=0,
                ID_BD_0=0, ID_BD_1=0, ID_BD_2=0)
    return make_mini_scenario([
        {"op": "commission_tag", "enterprise": "client", "uid": 9001,
         "template": 1, "record": dict(REFERENCE_RECORD)},
        {"op": "commission_tag", "enterprise": "client", "uid": 9202,
         "template": 1, "record": part},
        {"op": "random_traffic", "enterprise": "client", "gate": "RG1",
         "count": count, "uids": [9001, 9202]},
        {"op": "poll_gate", "enterprise": "client"},
    ])


def test_01_reference_record_round_trip(capsys):
    def body():
        t = make_product_template()
        img = encode_record(t, REFERENCE_RECORD, uid=0x23F5)
        assert decode_record(t, img) == REFERENCE_RECORD
        views = layout_groups(t, REFERENCE_RECORD)
        assert [v.title for v in views] == [GENERAL, SPECIFIC]
        assert views[0].rows[0] == ("TAG_ID", "298")
        assert ("TAG_DATE", "3/15/2007 9:01") in views[1].rows
        assert sum(len(v.rows) for v in views) == 15

    _verdict(capsys, 1, "reference record encodes, decodes and renders in its two groups", body)


def test_02_assembly_expands_to_three_primary_origins(capsys):
    def body():
        result = run_scenario_file(DEMO)
        tree = trace(result.world.registry, 298)
        assert {c.record.tag_id for c in tree.root.children} == {202, 305, 423}
        rows = origin_report(tree)
        assert [r.tag_id for r in rows] == [202, 305, 423]
        assert all(r.tag_type == 0 and r.path == (298, r.tag_id) for r in rows)

    _verdict(capsys, 2, "tag 298 expands to parts 202/305/423, three primary origins", body)


def test_03_crc_vectors_match_independent_oracle(capsys):
    def body():
        vectors = [
            (b"123456789", 0x4B37),
            (bytes([0x11, 0x03, 0x00, 0x6B, 0x00, 0x03]), 0x8776),
            (b"", 0xFFFF),
        ]
        for data, expect in vectors:
            assert crc16_oracle(data) == expect
            assert mb.crc16(data) == expect

    _verdict(capsys, 3, "CRC-16 check values confirmed by a structurally different oracle", body)


def test_04_any_single_bit_flip_is_caught(capsys):
    def body():
        raw = mb.encode_frame(0x11, 0x03, bytes([0x00, 0x6B, 0x00, 0x03]))
        assert len(raw) == 8
        mb.decode_frame(raw)  # healthy frame decodes
        caught = 0
        for byte_i in range(len(raw)):
            for bit in range(8):
                corrupt = bytearray(raw)
                corrupt[byte_i] ^= 1 << bit
                try:
                    mb.decode_frame(bytes(corrupt))
                except mb.CrcMismatch:
                    caught += 1
        assert caught == 64

    _verdict(capsys, 4, "all 64 single-bit corruptions of an 8-byte frame are rejected", body)


def test_05_thousand_random_round_trips_under_ten_seconds(capsys):
    def body():
        rng = random.Random(20070315)
        started = time.perf_counter()
        for _ in range(1000):
            t, record = random_pair(rng)
            img = encode_record(t, record, uid=rng.randint(1, 2**64 - 1))
            assert decode_record(t, img) == record
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"took {elapsed:.2f}s"

    _verdict(capsys, 5, "1000 seeded random template/record round trips finish in <10 s", body)


def test_06_slaves_never_transmit_unsolicited(capsys):
    def body():
        result = run_scenario(parse_scenario(_traffic_scenario(100)))
        gate = result.world.rigs["client"].gates["RG1"].gate
        assert gate.history.total_appended == 100
        slave_frames = 0
        for rig in result.world.rigs.values():
            transcript = rig.bus.transcript
            for i, (_, role, _raw) in enumerate(transcript):
                if role == "slave":
                    slave_frames += 1
                    assert i > 0 and transcript[i - 1][1] == "master"
        assert slave_frames > 0

    _verdict(capsys, 6, "every bus frame a gate sends answers an immediately preceding "
                "master request (100-event run)", body)


def test_07_low_cost_gate_ring_keeps_newest_1024(capsys):
    def body():
        clock = SimClock(start_ms=T0 * 1000)
        world = rf.TagWorld(clock)
        field = world.create_field("dock")
        gate = gt.Gate("G1", gt.GateTier.LCCG, 9, clock,
                       templates={1: make_product_template()})
        gate.attach_reader(rf.ReaderLink(field))
        img = encode_record(make_product_template(), REFERENCE_RECORD, uid=777)
        world.create_tag(777).image.data[:] = img.data
        field.enter(777)
        for _ in range(1030):
            gate.on_tag_event(777)
            clock.advance_ms(100)
        assert gate.history.total_appended == 1030
        kept = gate.history_query(1, 2048)
        assert [r.seq for r in kept] == list(range(7, 1031))

    _verdict(capsys, 7, "after 1030 events an LCCG gate retains exactly records 7..1030", body)


def test_08_shipped_demo_receives_tag_298(capsys):
    def body():
        result = run_scenario_file(DEMO)
        entry = result.world.rigs["client"].store.entry(298)
        assert (entry.state, entry.quantity, entry.price) == ("received", 1, 25000)

    _verdict(capsys, 8, "demo scenario ends with tag 298 received, quantity 1, price 25000",
             body)


def test_09_fixed_seed_replays_byte_identically(capsys):
    def body():
        doc = _traffic_scenario(30)
        first = run_scenario(parse_scenario(doc)).log.dump()
        second = run_scenario(parse_scenario(doc)).log.dump()
        assert first and first == second
        demo_a = run_scenario_file(DEMO).log.dump()
        demo_b = run_scenario_file(DEMO).log.dump()
        assert demo_a == demo_b

    _verdict(capsys, 9, "same scenario and seed produce byte-identical event logs", body)


def test_10_trace_matches_breadth_first_oracle(capsys):
    def body():
        rng = random.Random(424242)
        cycles_checked = 0
        for case in range(100):
            root, records = random_registry(rng, rng.randint(1, 50),
                                            inject_cycle=case % 4 == 0)
            registry = TraceRegistry()
            for tid, (tag_type, comps) in records.items():
                registry.register(TraceRecord(tag_id=tid, tag_type=tag_type,
                                              components=comps))
            try:
                expect = bfs_trace(records, root, max_depth=64)
            except OracleCycle:
                cycles_checked += 1
                try:
                    trace(registry, root, max_depth=64)
                    raise AssertionError("cycle went undetected")
                except CycleDetected:
                    continue
            tree = trace(registry, root, max_depth=64)
            assert len(list(tree.walk())) == expect.nodes
            assert sorted((r.tag_id, r.path_length) for r in origin_report(tree)) \
                == sorted(expect.origins)
            assert sorted((u.tag_id, u.reason) for u in tree.unresolved()) \
                == sorted(expect.unresolved)
        assert cycles_checked > 0

    _verdict(capsys, 10, "trace agrees with an independent walk on 100 random registries "
                 "incl. injected cycles", body)


def test_11_random_transitions_conserve_inventory(capsys):
    def body():
        rng = random.Random(8899)
        clock = SimClock(start_ms=T0 * 1000)
        store = ent.EnterpriseStore("client", clock)
        store.register_gate("RG1", ent.DIR_IN, "receiving")
        tag_ids = list(range(1, 41))
        for i, tid in enumerate(tag_ids):
            fields = {"TAG_ID": tid, "TAG_TYPE": 0, "PRODUCT_PRICE": 100 + tid,
                      "PRODUCT_QUANTITY": 1, "template_id": 1}
            store.ingest_history([("RG1", read_rec(i + 1, T0 + i * 10, 1000 + tid))],
                                 tag_reader=resolver_for({1000 + tid: fields}))
        mirror = {tid: "received" for tid in tag_ids}
        applied = rejected = 0
        for _ in range(500):
            clock.advance_ms(1000)
            tid = rng.choice(tag_ids)
            target = rng.choice(ent.STATES)
            if target in ent.LIFECYCLE[mirror[tid]]:
                store.transition_entity(tid, target)
                mirror[tid] = target
                applied += 1
            else:
                try:
                    store.transition_entity(tid, target)
                    raise AssertionError(
                        f"illegal transition {mirror[tid]} -> {target} accepted")
                except ent.IllegalTransition:
                    rejected += 1
                assert store.entry(tid).state == mirror[tid]
        assert applied > 0 and rejected > 0
        assert len(store.entries) == len(tag_ids)
        got = Counter(e.state for e in store.entries.values())
        assert got == Counter(mirror.values())
        assert sum(got.values()) == len(tag_ids)

    _verdict(capsys, 11, "500 random lifecycle transitions conserve counts and every "
                 "illegal one is rejected", body)


def test_12_replayed_journal_reproduces_report(capsys):
    def body():
        result = run_scenario_file(DEMO)
        corp = result.world.corp
        period = (T0, T0 + 7 * 86400)
        rows = ent.corporate_report(corp, period)
        assert any(r.count for r in rows)

        replayed = ent.Corporation(SimClock())
        for eid, store in corp.stores.items():
            events = [json.loads(line) for line in store.dump_events().splitlines()]
            replayed.stores[eid] = ent.EnterpriseStore.replay(eid, events,
                                                              replayed.clock)
        rows_again = ent.corporate_report(replayed, period)
        assert rows_again == rows
        assert ent.report_to_csv(rows_again) == ent.report_to_csv(rows)

    _verdict(capsys, 12, "a journal reloaded from its serialized form reproduces the "
                 "corporate report exactly", body)
