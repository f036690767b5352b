"""Scenario parsing, validation, deterministic execution."""

import copy
import json

import pytest

from conftest import REFERENCE_RECORD, make_product_template
from tagnet import scenario as sc
from tagnet.gate import CapabilityDenied, MBX_CAPABILITY
from tagnet.tagcodec import template_to_dict

T0 = 1_173_949_200

TEMPLATE_DOC = template_to_dict(make_product_template())


def base():
    return {
        "name": "mini", "seed": 7, "start_epoch": T0,
        "world": {
            "templates": [copy.deepcopy(TEMPLATE_DOC)],
            "enterprises": [
                {"id": "client", "gates": [
                    {"id": "RG1", "tier": "MCCG", "slave_addr": 1,
                     "direction": "IN", "department": "receiving"}]},
                {"id": "supplier", "gates": [
                    {"id": "SG1", "tier": "MCCG", "slave_addr": 1,
                     "direction": "OUT", "department": "shipping"}]},
            ],
            "tags": [{"uid": 9001}, {"uid": 9202}],
        },
        "steps": [],
    }


def commission(uid=9001, record=None, enterprise="client"):
    return {"op": "commission_tag", "enterprise": enterprise, "uid": uid,
            "template": 1, "record": record or dict(REFERENCE_RECORD)}


def pass_gate(uid=9001, enterprise="client", gate="RG1"):
    return [{"op": "tag_enters_field", "enterprise": enterprise, "gate": gate, "uid": uid},
            {"op": "advance_clock", "ms": 3000},
            {"op": "tag_leaves_field", "enterprise": enterprise, "gate": gate, "uid": uid}]


def run(doc):
    return sc.run_scenario(sc.parse_scenario(json.dumps(doc)))


class TestParseStructure:
    def test_empty_document(self):
        s = sc.parse_scenario("{}")
        assert s.seed == 0 and s.steps == [] and s.templates == {}

    def test_not_json(self):
        with pytest.raises(sc.ScenarioSyntaxError, match="not valid JSON"):
            sc.parse_scenario(b"{nope")

    def test_top_level_must_be_object(self):
        with pytest.raises(sc.ScenarioSyntaxError):
            sc.parse_scenario("[1, 2]")

    def test_bytes_str_and_dict_accepted(self):
        doc = base()
        blob = json.dumps(doc)
        for form in (blob, blob.encode("utf-8"), doc):
            assert sc.parse_scenario(form).name == "mini"

    @pytest.mark.parametrize("mutate,fragment", [
        (lambda d: d["world"]["templates"].append({"bad": 1}), "templates"),
        (lambda d: d["world"]["templates"].append(copy.deepcopy(TEMPLATE_DOC)),
         "duplicate template"),
        (lambda d: d["world"]["templates"][0]["fields"].append(
            {"name": "TAG_ID", "type": "integer", "group": 1}), "duplicate field"),
        (lambda d: d["world"]["enterprises"].append({"id": "client"}),
         "duplicate enterprise"),
        (lambda d: d["world"]["enterprises"][0]["gates"].append(
            {"id": "RG1", "tier": "MCCG", "slave_addr": 2}), "duplicate gate"),
        (lambda d: d["world"]["enterprises"][0]["gates"].append(
            {"id": "X", "tier": "XXCG", "slave_addr": 2}), "unknown tier"),
        (lambda d: d["world"]["enterprises"][0]["gates"].append(
            {"id": "X", "tier": "MCCG", "slave_addr": 300}), "slave_addr"),
        (lambda d: d["world"]["enterprises"][0]["gates"].append(
            {"id": "X", "tier": "MCCG", "slave_addr": 1}), "duplicate slave_addr"),
        (lambda d: d["world"]["enterprises"][0]["gates"][0].update(direction="UP"),
         "IN or OUT"),
        (lambda d: d["world"]["enterprises"][0]["gates"][0].update(ports=2),
         "ports"),
        (lambda d: d["world"]["enterprises"][0]["gates"][0].update(templates=[9]),
         "unknown template"),
        (lambda d: d["world"]["tags"].append({"uid": 9001}), "duplicate uid"),
        (lambda d: d["world"]["tags"].append({"uid": 2**64}), "64-bit"),
        (lambda d: d["world"]["tags"].append({"uid": 5, "capacity": 10}),
         "whole blocks"),
        (lambda d: d["world"]["tags"].append({"uid": 5, "record": {}}),
         "needs a template"),
        (lambda d: d["world"]["tags"].append(
            {"uid": 5, "template": 1, "record": {"TAG_ID": 1}}), "record keys"),
        (lambda d: d["world"].update(alarm_rules=[{"name": "r",
                                                   "conditions": [["a", "~", 1]]}]),
         "conditions"),
    ])
    def test_world_rejections(self, mutate, fragment):
        doc = base()
        mutate(doc)
        with pytest.raises(sc.ScenarioSyntaxError, match=fragment):
            sc.parse_scenario(doc)

    def test_gate_script_checked_at_parse_time(self):
        doc = base()
        doc["world"]["enterprises"][0]["gates"][0].update(
            tier="LCCG", script="ON READ WHEN TRUE DO LOG;")
        with pytest.raises(sc.ScenarioSyntaxError, match="bad script"):
            sc.parse_scenario(doc)

    def test_script_fields_checked_against_gate_templates(self):
        doc = base()
        doc["world"]["enterprises"][0]["gates"][0]["script"] = \
            "ON READ WHEN NOT_A_FIELD == 1 DO ALARM(1);"
        with pytest.raises(sc.ScenarioSyntaxError, match="unknown field"):
            sc.parse_scenario(doc)

    def test_predeclared_tag_record_is_validated(self):
        doc = base()
        doc["world"]["tags"][0].update(template=1, record=dict(REFERENCE_RECORD))
        sc.parse_scenario(doc)  # well-formed: fine


class TestStepValidation:
    def check_reference(self, step, index=0):
        doc = base()
        doc["steps"] = [step] if index == 0 else [{"op": "advance_clock", "ms": 1}, step]
        with pytest.raises(sc.ScenarioReferenceError) as ei:
            sc.parse_scenario(doc)
        assert ei.value.step_index == index

    def test_unknown_op(self):
        doc = base()
        doc["steps"] = [{"op": "explode"}]
        with pytest.raises(sc.ScenarioSyntaxError, match="unknown op"):
            sc.parse_scenario(doc)

    def test_unknown_enterprise(self):
        self.check_reference({"op": "tag_enters_field", "enterprise": "ghost",
                              "gate": "RG1", "uid": 9001})

    def test_unknown_gate(self):
        self.check_reference({"op": "tag_enters_field", "enterprise": "client",
                              "gate": "XX", "uid": 9001})

    def test_unknown_uid(self):
        self.check_reference({"op": "tag_enters_field", "enterprise": "client",
                              "gate": "RG1", "uid": 4040})

    def test_unknown_port(self):
        self.check_reference({"op": "tag_enters_field", "enterprise": "client",
                              "gate": "RG1", "uid": 9001, "port": 1})

    def test_unknown_template_in_step(self):
        self.check_reference({"op": "confirm_order", "supplier": "supplier",
                              "template": 9, "order_id": "x"})

    def test_step_index_reported(self):
        self.check_reference({"op": "trace_nothing_here", "enterprise": "ghost",
                              "gate": "RG1", "uid": 9001} | {"op": "clear_alarms",
                                                             "enterprise": "ghost",
                                                             "gate": "RG1"}, index=1)

    def test_order_ref_must_be_placed_first(self):
        self.check_reference({"op": "confirm_order", "supplier": "supplier",
                              "template": 1, "order_ref": "o1"})

    def test_order_ref_after_place_accepted(self):
        doc = base()
        doc["steps"] = [
            {"op": "place_order", "client": "client", "supplier": "supplier",
             "item": "valve", "qty": 1, "ref": "o1"},
            {"op": "confirm_order", "supplier": "supplier", "template": 1,
             "order_ref": "o1"}]
        sc.parse_scenario(doc)

    @pytest.mark.parametrize("step,fragment", [
        ({"op": "advance_clock"}, "needs ms"),
        ({"op": "advance_clock", "ms": -5}, "needs ms"),
        ({"op": "transition", "enterprise": "client", "tag_id": 1,
          "state": "on_fire"}, "unknown state"),
        ({"op": "report", "period": "123"}, "A..B"),
        ({"op": "report"}, "missing 'start'"),
        ({"op": "handheld_write", "session": "s", "tag_id": 1,
          "attr": "COLOR", "value": 1}, "attr"),
        ({"op": "random_traffic", "enterprise": "client", "gate": "RG1",
          "count": 0}, "positive"),
        ({"op": "pc_command", "enterprise": "client", "gate": "RG1",
          "uid": 9001, "value": 1}, "field"),
    ])
    def test_step_shape_errors(self, step, fragment):
        doc = base()
        doc["steps"] = [step]
        with pytest.raises(sc.ScenarioSyntaxError, match=fragment):
            sc.parse_scenario(doc)


class TestExecution:
    def test_commission_read_poll_creates_entry(self):
        doc = base()
        doc["steps"] = [commission(), *pass_gate(),
                        {"op": "poll_gate", "enterprise": "client"}]
        result = run(doc)
        store = result.world.rigs["client"].store
        entry = store.entry(298)
        assert (entry.state, entry.price, entry.quantity) == ("received", 25000, 1)
        events = [e["event"] for e in result.log.entries]
        assert "movement" in events and "ingest" in events
        assert result.summary["movements"] == 1

    def test_predeclared_tag_is_readable_without_commission(self):
        doc = base()
        doc["world"]["tags"][0].update(template=1, record=dict(REFERENCE_RECORD))
        doc["steps"] = pass_gate()
        result = run(doc)
        gate = result.world.rigs["client"].gates["RG1"].gate
        assert gate.history.total_appended == 1

    def test_gate_script_raises_alarm(self):
        doc = base()
        doc["world"]["enterprises"][0]["gates"][0]["script"] = \
            "ON READ WHEN PRODUCT_ACCEPTED == 0 DO ALARM(2);"
        rejected = dict(REFERENCE_RECORD, PRODUCT_ACCEPTED=0)
        doc["steps"] = [commission(record=rejected), *pass_gate()]
        result = run(doc)
        assert result.summary["gate_alarms"] == 1
        gate = result.world.rigs["client"].gates["RG1"].gate
        assert gate.alarm_flags == 0b10

    def test_clear_alarms_step(self):
        doc = base()
        doc["world"]["enterprises"][0]["gates"][0]["script"] = \
            "ON READ WHEN PRODUCT_ACCEPTED == 0 DO ALARM(2);"
        doc["steps"] = [commission(record=dict(REFERENCE_RECORD, PRODUCT_ACCEPTED=0)),
                        *pass_gate(),
                        {"op": "clear_alarms", "enterprise": "client", "gate": "RG1"}]
        result = run(doc)
        assert result.world.rigs["client"].gates["RG1"].gate.alarm_flags == 0

    def test_corp_alarm_rule_fires_on_transition(self):
        doc = base()
        doc["world"]["alarm_rules"] = [
            {"name": "defect", "severity": "high", "message": "tag {tag_id} defective",
             "conditions": [["kind", "==", "transition"], ["state", "==", "defective"]]}]
        doc["steps"] = [commission(), *pass_gate(),
                        {"op": "poll_gate", "enterprise": "client"},
                        {"op": "transition", "enterprise": "client", "tag_id": 298,
                         "state": "defective"}]
        result = run(doc)
        assert result.summary["corp_alarms"] == 1
        corp_events = [e for e in result.log.entries if e["event"] == "corp_alarm"]
        assert corp_events[0]["message"] == "tag 298 defective"

    def test_pc_command_by_field_name(self):
        doc = base()
        doc["steps"] = [commission(),
                        {"op": "tag_enters_field", "enterprise": "client",
                         "gate": "RG1", "uid": 9001},
                        {"op": "pc_command", "enterprise": "client", "gate": "RG1",
                         "uid": 9001, "field": "PRODUCT_PRICE", "value": 30000}]
        result = run(doc)
        resolver = sc._resolver(result.world, result.world.rigs["client"].store)
        assert resolver(9001)["PRODUCT_PRICE"] == 30000

    def test_pc_command_on_lccg_fails_step(self):
        doc = base()
        doc["world"]["enterprises"][0]["gates"][0]["tier"] = "LCCG"
        doc["steps"] = [commission(),
                        {"op": "tag_enters_field", "enterprise": "client",
                         "gate": "RG1", "uid": 9001},
                        {"op": "pc_command", "enterprise": "client", "gate": "RG1",
                         "uid": 9001, "field": "PRODUCT_PRICE", "value": 1}]
        with pytest.raises(sc.StepFailure) as ei:
            run(doc)
        assert ei.value.step_index == 2 and ei.value.op == "pc_command"
        assert isinstance(ei.value.cause, CapabilityDenied)

    def test_pc_command_expected_status_passes(self):
        doc = base()
        doc["world"]["enterprises"][0]["gates"][0]["tier"] = "LCCG"
        doc["steps"] = [commission(),
                        {"op": "tag_enters_field", "enterprise": "client",
                         "gate": "RG1", "uid": 9001},
                        {"op": "pc_command", "enterprise": "client", "gate": "RG1",
                         "uid": 9001, "field": "PRODUCT_PRICE", "value": 1,
                         "expect_status": MBX_CAPABILITY}]
        run(doc)  # no failure: the denial was the expected outcome

    def test_illegal_transition_fails_step(self):
        doc = base()
        doc["steps"] = [commission(), *pass_gate(),
                        {"op": "poll_gate", "enterprise": "client"},
                        {"op": "transition", "enterprise": "client", "tag_id": 298,
                         "state": "repaired"}]
        with pytest.raises(sc.StepFailure) as ei:
            run(doc)
        assert ei.value.step_index == 5

    def test_trace_step_logs_tree(self):
        doc = base()
        doc["steps"] = [commission(), {"op": "trace", "tag_id": 298}]
        result = run(doc)
        (entry,) = [e for e in result.log.entries if e["event"] == "trace"]
        assert entry["stats"]["unresolved"] == 3  # components never commissioned
        assert entry["tree"]["tag_id"] == 298

    def test_handheld_flow_and_conflicts(self):
        doc = base()
        doc["steps"] = [
            commission(),
            {"op": "handheld_read", "session": "hh-1", "uid": 9001},
            {"op": "handheld_write", "session": "hh-1", "tag_id": 298,
             "attr": "PRODUCT_QUANTITY", "value": 3},
            {"op": "handheld_write", "session": "hh-1", "tag_id": 999,
             "attr": "PRODUCT_PRICE", "value": 1},
            {"op": "handheld_sync", "session": "hh-1", "enterprise": "client"},
        ]
        result = run(doc)
        store = result.world.rigs["client"].store
        assert store.entry(298).quantity == 3
        assert result.summary["conflicts"] == 1  # the write against tag 999

    def test_set_input_runs_input_rules(self):
        doc = base()
        doc["world"]["enterprises"][0]["gates"][0]["script"] = \
            "ON INPUT 0 WHEN TRUE DO RELAY(0, ON);"
        doc["steps"] = [{"op": "set_input", "enterprise": "client", "gate": "RG1",
                         "input": 0, "level": 1}]
        result = run(doc)
        assert result.world.rigs["client"].gates["RG1"].gate.relays[0] is True

    def test_load_script_step(self):
        doc = base()
        doc["steps"] = [{"op": "load_script", "enterprise": "client", "gate": "RG1",
                         "script": "ON READ WHEN TRUE DO LOG;"}]
        result = run(doc)
        assert len(result.world.rigs["client"].gates["RG1"].gate.rules) == 1

    def test_report_step_period_string(self):
        doc = base()
        doc["steps"] = [{"op": "report", "period": f"{T0}..{T0 + 3600}"}]
        result = run(doc)
        assert len(result.world.last_report) == 16  # 2 enterprises x 8 labels
        (entry,) = [e for e in result.log.entries if e["event"] == "report"]
        assert entry["period_start"] == T0

    def test_advance_clock_seconds_form(self):
        doc = base()
        doc["steps"] = [{"op": "advance_clock", "s": 2}]
        result = run(doc)
        assert result.world.clock.now_ms == T0 * 1000 + 2000


class TestDeterminismAndIsolation:
    def traffic_doc(self):
        doc = base()
        doc["steps"] = [commission(9001), commission(9202, dict(
            REFERENCE_RECORD, TAG_ID=202, TAG_TYPE=0, COMPONENTS_NUMBER=0,
            ID_BD_0=0, ID_BD_1=0, ID_BD_2=0)),
            {"op": "random_traffic", "enterprise": "client", "gate": "RG1",
             "count": 20, "uids": [9001, 9202]},
            {"op": "poll_gate", "enterprise": "client"},
            {"op": "report", "period": f"{T0}..{T0 + 86400}"}]
        return doc

    def test_equal_seed_equal_bytes(self):
        a = run(self.traffic_doc()).log.dump()
        b = run(self.traffic_doc()).log.dump()
        assert a == b

    def test_different_seed_diverges(self):
        doc = self.traffic_doc()
        other = copy.deepcopy(doc)
        other["seed"] = 8
        assert run(doc).log.dump() != run(other).log.dump()

    def test_seed_override_in_file_runner(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps(self.traffic_doc()))
        log_path = tmp_path / "out.jsonl"
        r1 = sc.run_scenario_file(str(path), seed=99, log_path=str(log_path))
        r2 = sc.run_scenario_file(str(path), seed=99)
        assert r1.log.dump() == r2.log.dump()
        assert log_path.read_text() == r1.log.dump()

    def test_runs_share_no_state(self):
        scenario = sc.parse_scenario(self.traffic_doc())
        r1 = sc.run_scenario(scenario)
        r2 = sc.run_scenario(scenario)
        assert r1.world is not r2.world
        g1 = r1.world.rigs["client"].gates["RG1"].gate
        g2 = r2.world.rigs["client"].gates["RG1"].gate
        assert g1.history.total_appended == g2.history.total_appended
        assert len(r2.world.rigs["client"].store.entries) == 2

    def test_summary_shape(self):
        result = run(self.traffic_doc())
        assert result.summary["steps"] == 5
        assert result.summary["events"] == len(result.log.entries)
        assert result.log.entries[-1]["event"] == "scenario_finished"
        assert result.log.entries[0]["event"] == "scenario_started"
