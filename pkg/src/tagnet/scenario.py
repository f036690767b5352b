"""Deterministic scenario runner: declare a world, drive it step by step.

A scenario is one UTF-8 JSON document:

    {
      "name": "...", "seed": 42, "start_epoch": 1173949200,
      "world": {
        "templates": [ <template documents> ],
        "enterprises": [
          {"id": "client", "gates": [
            {"id": "RG1", "tier": "MCCG", "slave_addr": 1, "direction": "IN",
             "department": "receiving", "ports": 1, "script": "...",
             "templates": [1]}]}
        ],
        "tags": [ {"uid": 9001, "capacity": 256, "block_size": 4} ],
        "alarm_rules": [ {"name": "...", "severity": "...", "message": "...",
                          "conditions": [["attr", "==", 1]]} ]
      },
      "steps": [ {"op": "advance_clock", "ms": 1000}, ... ]
    }

Step ops: advance_clock, tag_enters_field, tag_leaves_field, pc_command,
place_order, confirm_order, transition, commission_tag, poll_gate,
handheld_read, handheld_write, handheld_sync, set_input, clear_alarms,
load_script, trace, report, random_traffic.

Parsing validates structure and every reference (a step naming an
undeclared gate, tag or template is rejected with its step index). Running
builds a fresh world each time, so two runs never share state, and appends
every observable event to a log whose JSON-lines serialization is
byte-identical across runs with an equal (scenario, seed) pair: the only
randomness is a generator seeded from `seed`, and the only clock is
simulated.

A failing step halts the run with StepFailure carrying the step index and
the underlying error.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from .clock import SimClock
from .enterprise import (Corporation, CorpAlarmRule, EnterpriseStore,
                         HandheldSession, corporate_report,
                         trace_record_fields, DIR_IN, DIR_OUT, STATES,
                         WRITE_ATTRS)
from .gate import (CapabilityDenied, Gate, GateTier, GateClient, GateError,
                   MBX_BAD_FIELD, MBX_CAPABILITY, MBX_DONE, MBX_TAG_ABSENT,
                   TIER_PROFILES)
from .gatescript import parse_script
from .modbus import SerialBus
from .rfidsim import ReaderLink, TagWorld
from .tagcodec import (TagCodecError, TagTemplate, TemplateSyntaxError,
                       check_record, decode_record, encode_record,
                       parse_header, template_from_dict, validate_template)
from .trace import TraceRecord, TraceRegistry, trace, tree_to_dict

DEFAULT_MAX_DEPTH = 32


class ScenarioError(Exception):
    pass


class ScenarioSyntaxError(ScenarioError):
    """The document is not a structurally valid scenario."""


class ScenarioReferenceError(ScenarioError):
    """A step names an entity the world never declared."""

    def __init__(self, step_index: int, message: str) -> None:
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index


class StepFailure(ScenarioError):
    """A step was valid but failed while executing."""

    def __init__(self, step_index: int, op: str, cause: Exception) -> None:
        super().__init__(f"step {step_index} ({op}) failed: {cause}")
        self.step_index = step_index
        self.op = op
        self.cause = cause


@dataclass
class Scenario:
    name: str
    seed: int
    start_epoch: int
    world: dict
    steps: list[dict]
    templates: dict[int, TagTemplate]


class EventLog:
    """Append-only run log; canonical JSON lines for byte comparison."""

    def __init__(self, clock: SimClock) -> None:
        self.clock = clock
        self.entries: list[dict] = []

    def append(self, source: str, event: str, **payload: Any) -> None:
        entry = {"t": self.clock.now_ms, "source": source, "event": event}
        entry.update(payload)
        self.entries.append(entry)

    def dump(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n"
                       for e in self.entries)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dump())


# --- parsing -----------------------------------------------------------

def _need(obj: dict, key: str, types, where: str):
    if key not in obj:
        raise ScenarioSyntaxError(f"{where}: missing {key!r}")
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool) and types is not bool:
        raise ScenarioSyntaxError(f"{where}: {key!r} has the wrong type")
    return value


def _opt(obj: dict, key: str, types, default, where: str):
    if key not in obj:
        return default
    return _need(obj, key, types, where)


def parse_scenario(data) -> Scenario:
    """bytes/str/dict -> validated Scenario; every reference is checked."""
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as e:
            raise ScenarioSyntaxError(f"not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ScenarioSyntaxError("scenario document must be a JSON object")

    name = _opt(data, "name", str, "scenario", "scenario")
    seed = _opt(data, "seed", int, 0, "scenario")
    start_epoch = _opt(data, "start_epoch", int, 0, "scenario")
    if start_epoch < 0:
        raise ScenarioSyntaxError("start_epoch must be >= 0")
    world = _opt(data, "world", dict, {}, "scenario")
    steps = _opt(data, "steps", list, [], "scenario")

    templates: dict[int, TagTemplate] = {}
    for i, raw in enumerate(_opt(world, "templates", list, [], "world")):
        where = f"world.templates[{i}]"
        if not isinstance(raw, dict):
            raise ScenarioSyntaxError(f"{where}: must be an object")
        try:
            t = template_from_dict(raw)
        except TemplateSyntaxError as e:
            raise ScenarioSyntaxError(f"{where}: {e}") from e
        violations = validate_template(t, capacity=None)
        if violations:
            raise ScenarioSyntaxError(f"{where}: {violations[0].message}")
        if t.template_id in templates:
            raise ScenarioSyntaxError(f"{where}: duplicate template id {t.template_id}")
        templates[t.template_id] = t

    ent_ids: set[str] = set()
    gates: dict[str, dict[str, dict]] = {}
    for i, e in enumerate(_opt(world, "enterprises", list, [], "world")):
        where = f"world.enterprises[{i}]"
        if not isinstance(e, dict):
            raise ScenarioSyntaxError(f"{where}: must be an object")
        eid = _need(e, "id", str, where)
        if eid in ent_ids:
            raise ScenarioSyntaxError(f"{where}: duplicate enterprise id {eid!r}")
        ent_ids.add(eid)
        gates[eid] = {}
        addrs: set[int] = set()
        for j, g in enumerate(_opt(e, "gates", list, [], where)):
            gw = f"{where}.gates[{j}]"
            if not isinstance(g, dict):
                raise ScenarioSyntaxError(f"{gw}: must be an object")
            gid = _need(g, "id", str, gw)
            if gid in gates[eid]:
                raise ScenarioSyntaxError(f"{gw}: duplicate gate id {gid!r}")
            tier_name = _need(g, "tier", str, gw)
            if tier_name not in GateTier.__members__:
                raise ScenarioSyntaxError(f"{gw}: unknown tier {tier_name!r}")
            tier = GateTier[tier_name]
            addr = _need(g, "slave_addr", int, gw)
            if not 1 <= addr <= 247:
                raise ScenarioSyntaxError(f"{gw}: slave_addr {addr} outside 1..247")
            if addr in addrs:
                raise ScenarioSyntaxError(f"{gw}: duplicate slave_addr {addr}")
            addrs.add(addr)
            direction = _opt(g, "direction", str, DIR_IN, gw)
            if direction not in (DIR_IN, DIR_OUT):
                raise ScenarioSyntaxError(f"{gw}: direction must be IN or OUT")
            ports = _opt(g, "ports", int, 1, gw)
            profile = TIER_PROFILES[tier]
            if not 1 <= ports <= profile.reader_ports:
                raise ScenarioSyntaxError(
                    f"{gw}: {tier_name} supports 1..{profile.reader_ports} ports")
            gate_tids = _opt(g, "templates", list, sorted(templates), gw)
            for tid in gate_tids:
                if tid not in templates:
                    raise ScenarioSyntaxError(f"{gw}: references unknown template {tid}")
            script = _opt(g, "script", str, "", gw)
            if script:
                kinds: dict[str, str] = {}
                for tid in gate_tids:
                    for f in templates[tid].fields:
                        kinds.setdefault(f.name, f.kind)
                try:
                    parse_script(script, tier=profile, field_kinds=kinds)
                except Exception as exc:
                    raise ScenarioSyntaxError(f"{gw}: bad script: {exc}") from exc
            gates[eid][gid] = {"tier": tier_name, "ports": ports}

    uids: set[int] = set()
    for i, tg in enumerate(_opt(world, "tags", list, [], "world")):
        where = f"world.tags[{i}]"
        if not isinstance(tg, dict):
            raise ScenarioSyntaxError(f"{where}: must be an object")
        uid = _need(tg, "uid", int, where)
        if not 0 < uid < 2**64:
            raise ScenarioSyntaxError(f"{where}: uid outside 64-bit range")
        if uid in uids:
            raise ScenarioSyntaxError(f"{where}: duplicate uid {uid}")
        uids.add(uid)
        capacity = _opt(tg, "capacity", int, 256, where)
        block_size = _opt(tg, "block_size", int, 4, where)
        if capacity <= 0 or block_size <= 0 or capacity % block_size:
            raise ScenarioSyntaxError(f"{where}: capacity must be whole blocks")
        tid = _opt(tg, "template", int, None, where)
        record = _opt(tg, "record", dict, None, where)
        if record is not None:
            if tid is None:
                raise ScenarioSyntaxError(f"{where}: record needs a template")
            _check_tag_record(templates, tid, record, where)

    for i, r in enumerate(_opt(world, "alarm_rules", list, [], "world")):
        where = f"world.alarm_rules[{i}]"
        if not isinstance(r, dict):
            raise ScenarioSyntaxError(f"{where}: must be an object")
        _need(r, "name", str, where)
        for c in _opt(r, "conditions", list, [], where):
            if (not isinstance(c, list) or len(c) != 3 or not isinstance(c[0], str)
                    or c[1] not in ("==", "!=", "<", ">", "<=", ">=")):
                raise ScenarioSyntaxError(f"{where}: conditions are [attr, op, value]")

    # tags declared with template references
    for i, tg in enumerate(world.get("tags", [])):
        tid = tg.get("template")
        if tid is not None and tid not in templates:
            raise ScenarioSyntaxError(f"world.tags[{i}]: references unknown template {tid}")

    _validate_steps(steps, ent_ids, gates, uids, templates)
    return Scenario(name=name, seed=seed, start_epoch=start_epoch, world=world,
                    steps=steps, templates=templates)


def _check_tag_record(templates: dict[int, TagTemplate], tid: int, record: dict,
                      where: str) -> None:
    if tid not in templates:
        raise ScenarioSyntaxError(f"{where}: references unknown template {tid}")
    try:
        check_record(templates[tid], record)
    except TagCodecError as e:
        raise ScenarioSyntaxError(f"{where}: {e}") from e


def _validate_steps(steps: list, ent_ids: set, gates: dict, uids: set,
                    templates: dict[int, TagTemplate]) -> None:
    order_refs: set[str] = set()
    for i, step in enumerate(steps):
        if not isinstance(step, dict):
            raise ScenarioSyntaxError(f"step {i}: must be an object")
        op = _need(step, "op", str, f"step {i}")
        where = f"step {i} ({op})"

        def ref_ent(key: str = "enterprise") -> str:
            eid = _need(step, key, str, where)
            if eid not in ent_ids:
                raise ScenarioReferenceError(i, f"unknown enterprise {eid!r}")
            return eid

        def ref_gate(eid: str) -> str:
            gid = _need(step, "gate", str, where)
            if gid not in gates[eid]:
                raise ScenarioReferenceError(i, f"unknown gate {gid!r} in {eid!r}")
            return gid

        def ref_uid() -> int:
            uid = _need(step, "uid", int, where)
            if uid not in uids:
                raise ScenarioReferenceError(i, f"unknown tag uid {uid}")
            return uid

        def ref_template() -> int:
            tid = _need(step, "template", int, where)
            if tid not in templates:
                raise ScenarioReferenceError(i, f"unknown template {tid}")
            return tid

        if op == "advance_clock":
            ms = step.get("ms", step.get("s", 0) * 1000 if isinstance(step.get("s"), int) else None)
            if not isinstance(ms, int) or ms < 0:
                raise ScenarioSyntaxError(f"{where}: needs ms >= 0 (or s)")
        elif op in ("tag_enters_field", "tag_leaves_field"):
            eid = ref_ent()
            gid = ref_gate(eid)
            ref_uid()
            port = _opt(step, "port", int, 0, where)
            if not 0 <= port < gates[eid][gid]["ports"]:
                raise ScenarioReferenceError(i, f"gate {gid!r} has no port {port}")
        elif op == "pc_command":
            eid = ref_ent()
            ref_gate(eid)
            ref_uid()
            if not isinstance(step.get("field"), (str, int)):
                raise ScenarioSyntaxError(f"{where}: needs field (name or index)")
            _need(step, "value", int, where)
        elif op == "place_order":
            ref_ent("client")
            ref_ent("supplier")
            _need(step, "item", str, where)
            _need(step, "qty", int, where)
            ref = _opt(step, "ref", str, None, where)
            if ref:
                order_refs.add(ref)
        elif op == "confirm_order":
            ref_ent("supplier")
            ref_template()
            ref = _opt(step, "order_ref", str, None, where)
            if ref is None:
                _need(step, "order_id", str, where)
            elif ref not in order_refs:
                raise ScenarioReferenceError(i, f"order ref {ref!r} never placed")
        elif op == "transition":
            ref_ent()
            _need(step, "tag_id", int, where)
            state = _need(step, "state", str, where)
            if state not in STATES:
                raise ScenarioSyntaxError(f"{where}: unknown state {state!r}")
        elif op == "commission_tag":
            ref_ent()
            ref_uid()
            tid = ref_template()
            record = _need(step, "record", dict, where)
            _check_tag_record(templates, tid, record, where)
        elif op == "poll_gate":
            eid = ref_ent()
            for gid in _opt(step, "gates", list, sorted(gates[eid]), where):
                if gid not in gates[eid]:
                    raise ScenarioReferenceError(i, f"unknown gate {gid!r} in {eid!r}")
        elif op == "handheld_read":
            _need(step, "session", str, where)
            ref_uid()
        elif op == "handheld_write":
            _need(step, "session", str, where)
            _need(step, "tag_id", int, where)
            attr = _need(step, "attr", str, where)
            if attr not in WRITE_ATTRS:
                raise ScenarioSyntaxError(f"{where}: attr must be one of {sorted(WRITE_ATTRS)}")
            _need(step, "value", int, where)
        elif op == "handheld_sync":
            _need(step, "session", str, where)
            ref_ent()
        elif op == "set_input":
            eid = ref_ent()
            ref_gate(eid)
            _need(step, "input", int, where)
            _need(step, "level", int, where)
        elif op == "clear_alarms":
            eid = ref_ent()
            ref_gate(eid)
        elif op == "load_script":
            eid = ref_ent()
            ref_gate(eid)
            _need(step, "script", str, where)
        elif op == "trace":
            _need(step, "tag_id", int, where)
        elif op == "report":
            period = _opt(step, "period", str, None, where)
            if period is None:
                _need(step, "start", int, where)
                _need(step, "end", int, where)
            elif ".." not in period:
                raise ScenarioSyntaxError(f"{where}: period must look like A..B")
        elif op == "random_traffic":
            eid = ref_ent()
            ref_gate(eid)
            count = _need(step, "count", int, where)
            if count <= 0:
                raise ScenarioSyntaxError(f"{where}: count must be positive")
            for uid in _opt(step, "uids", list, [], where):
                if uid not in uids:
                    raise ScenarioReferenceError(i, f"unknown tag uid {uid}")
        else:
            raise ScenarioSyntaxError(f"{where}: unknown op")


# --- world construction -------------------------------------------------

@dataclass
class GateRig:
    gate: Gate
    client: GateClient
    fields: list  # ReaderField per port


@dataclass
class EnterpriseRig:
    store: EnterpriseStore
    bus: SerialBus
    gates: dict[str, GateRig] = field(default_factory=dict)


class World:
    """Everything one scenario run owns. Never shared between runs."""

    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.clock = SimClock(start_ms=scenario.start_epoch * 1000)
        self.rng = random.Random(scenario.seed)
        self.log = EventLog(self.clock)
        self.corp = Corporation(self.clock)
        self.registry = TraceRegistry()
        self.tag_world = TagWorld(self.clock)
        self.templates = dict(scenario.templates)
        self.rigs: dict[str, EnterpriseRig] = {}
        self.sessions: dict[str, HandheldSession] = {}
        self.order_refs: dict[str, str] = {}
        self.conflicts = 0
        self.last_report: list = []


def build_world(scenario: Scenario) -> World:
    world = World(scenario)
    w = scenario.world

    for decl in w.get("tags", []):
        tag = world.tag_world.create_tag(decl["uid"], capacity=decl.get("capacity", 256),
                                         block_size=decl.get("block_size", 4))
        tid = decl.get("template")
        record = decl.get("record")
        if tid is not None and record is not None:
            img = encode_record(world.templates[tid], record, tag.uid,
                                block_size=tag.image.block_size,
                                block_count=tag.image.block_count)
            tag.image.data[:] = img.data

    for e in w.get("enterprises", []):
        eid = e["id"]
        store = world.corp.add_enterprise(eid)
        rig = EnterpriseRig(store=store, bus=SerialBus(world.clock))
        world.rigs[eid] = rig
        for g in e.get("gates", []):
            gid = g["id"]
            tier = GateTier[g["tier"]]
            templates = {tid: world.templates[tid]
                         for tid in g.get("templates", sorted(world.templates))}
            gate = Gate(gate_id=gid, tier=tier, slave_addr=g["slave_addr"],
                        clock=world.clock, templates=templates)
            fields = []
            for port in range(g.get("ports", 1)):
                rf = world.tag_world.create_field(f"{eid}:{gid}:{port}")
                gate.attach_reader(ReaderLink(rf))
                fields.append(rf)
            if g.get("script"):
                gate.load_script(g["script"])
            gate.effect_sink = _effect_sink(world, eid, gid)
            rig.bus.attach_slave(gate.modbus_responder())
            rig.gates[gid] = GateRig(gate=gate, client=GateClient(rig.bus, g["slave_addr"]),
                                     fields=fields)
            store.register_gate(gid, g.get("direction", DIR_IN),
                                g.get("department", "main"))

    for r in w.get("alarm_rules", []):
        world.corp.add_alarm_rule(CorpAlarmRule(
            name=r["name"], severity=r.get("severity", "warning"),
            message=r.get("message", r["name"]),
            conditions=tuple((c[0], c[1], c[2]) for c in r.get("conditions", []))))
    return world


def _effect_sink(world: World, eid: str, gid: str):
    source = f"gate:{eid}:{gid}"

    def sink(gate: Gate, eff) -> None:
        world.log.append(source, eff.kind, **eff.data)

    return sink


def _resolver(world: World, store: EnterpriseStore):
    """Back-office tag decoding: works only with templates this enterprise
    holds (its own or ones delivered through order confirmations)."""

    def resolve(uid: int) -> Optional[dict]:
        tag = world.tag_world.tags.get(uid)
        if tag is None:
            return None
        try:
            tid, version, _ = parse_header(bytes(tag.image.data))
        except TagCodecError:
            return None
        template = store.get_template(tid, version)
        if template is None:
            return None
        try:
            record = decode_record(template, tag.image)
        except TagCodecError:
            return None
        return dict(record, template_id=tid)

    return resolve


# --- execution ----------------------------------------------------------

@dataclass
class RunResult:
    world: World
    log: EventLog
    summary: dict


def run_scenario(scenario: Scenario, log_path: Optional[str] = None) -> RunResult:
    world = build_world(scenario)
    log = world.log
    log.append("runner", "scenario_started", name=scenario.name,
               seed=scenario.seed)
    for i, step in enumerate(scenario.steps):
        try:
            _execute(world, i, step)
        except StepFailure:
            raise
        except Exception as e:
            raise StepFailure(i, step["op"], e) from e
    summary = {
        "steps": len(scenario.steps),
        "events": len(log.entries) + 1,  # counting the closing entry
        "gate_alarms": sum(1 for e in log.entries if e["event"] == "alarm"),
        "corp_alarms": len(world.corp.alarm_log),
        "movements": sum(1 for e in log.entries if e["event"] == "movement"),
        "conflicts": world.conflicts,
    }
    log.append("runner", "scenario_finished", **summary)
    if log_path:
        log.save(log_path)
    return RunResult(world=world, log=log, summary=summary)


def _mailbox_error(status: int) -> Exception:
    if status == MBX_CAPABILITY:
        return CapabilityDenied("gate tier cannot modify tags")
    if status == MBX_TAG_ABSENT:
        return GateError("tag not in any reader field")
    if status == MBX_BAD_FIELD:
        return GateError("field index or value rejected")
    return GateError(f"mailbox status {status}")


def _corp_alarm_mark(world: World) -> int:
    return len(world.corp.alarm_log)


def _log_corp_alarms(world: World, mark: int) -> None:
    for alarm in world.corp.alarm_log[mark:]:
        world.log.append("corp", "corp_alarm", **alarm)


def _execute(world: World, i: int, step: dict) -> None:
    op = step["op"]
    log = world.log

    if op == "advance_clock":
        ms = step.get("ms", step.get("s", 0) * 1000)
        world.clock.advance_ms(ms)
        log.append("runner", "clock", now_ms=world.clock.now_ms)

    elif op == "tag_enters_field":
        rig = world.rigs[step["enterprise"]].gates[step["gate"]]
        port = step.get("port", 0)
        rig.fields[port].enter(step["uid"])
        log.append("runner", "tag_entered", uid=step["uid"], gate=step["gate"],
                   port=port)
        rig.gate.on_tag_event(step["uid"], port)

    elif op == "tag_leaves_field":
        rig = world.rigs[step["enterprise"]].gates[step["gate"]]
        port = step.get("port", 0)
        rig.fields[port].leave(step["uid"])
        log.append("runner", "tag_left", uid=step["uid"], gate=step["gate"], port=port)

    elif op == "pc_command":
        rig = world.rigs[step["enterprise"]].gates[step["gate"]]
        uid, fld = step["uid"], step["field"]
        if isinstance(fld, str):
            tag = world.tag_world.tag(uid)
            tid, _, _ = parse_header(bytes(tag.image.data))
            template = world.templates[tid]
            names = [f.name for f in template.fields]
            if fld not in names:
                raise GateError(f"template {tid} has no field {fld!r}")
            fld = names.index(fld)
        status = rig.client.send_field_command(uid, fld, step["value"] & 0xFFFFFFFF)
        log.append("runner", "pc_command", uid=uid, field=fld,
                   value=step["value"], status=status)
        expect = step.get("expect_status", MBX_DONE)
        if status != expect:
            raise _mailbox_error(status)

    elif op == "place_order":
        order = world.corp.place_order(step["client"], step["supplier"],
                                       step["item"], step["qty"])
        if step.get("ref"):
            world.order_refs[step["ref"]] = order["order_id"]
        log.append("runner", "order_placed", **order)

    elif op == "confirm_order":
        order_id = step.get("order_id") or world.order_refs[step["order_ref"]]
        template = world.templates[step["template"]]
        confirmation = world.corp.confirm_order(step["supplier"], order_id,
                                                template, step.get("accepted", True))
        log.append("runner", "order_confirmed", order_id=order_id,
                   accepted=confirmation["accepted"],
                   template_id=template.template_id)

    elif op == "transition":
        mark = _corp_alarm_mark(world)
        entry = world.corp.transition(step["enterprise"], step["tag_id"], step["state"])
        log.append(f"store:{step['enterprise']}", "transition", **entry.to_dict())
        _log_corp_alarms(world, mark)

    elif op == "commission_tag":
        eid, uid, tid = step["enterprise"], step["uid"], step["template"]
        template = world.templates[tid]
        store = world.rigs[eid].store
        tag = world.tag_world.tag(uid)
        img = encode_record(template, step["record"], uid,
                            block_size=tag.image.block_size,
                            block_count=tag.image.block_count)
        tag.image.data[:] = img.data
        if (tid, template.version) not in store.template_cache:
            store.cache_template(template)
        tr = trace_record_fields(step["record"])
        if tr is not None and step.get("register_trace", True):
            world.registry.register(TraceRecord(enterprise=eid, **tr))
        log.append(f"store:{eid}", "tag_commissioned", uid=uid, template_id=tid,
                   tag_id=(tr or {}).get("tag_id"))

    elif op == "poll_gate":
        eid = step["enterprise"]
        rig = world.rigs[eid]
        mark = _corp_alarm_mark(world)
        batch = []
        for gid in step.get("gates", sorted(rig.gates)):
            from_seq = rig.store.watermarks.get(gid, 0) + 1
            for rec in rig.gates[gid].client.fetch_history(from_seq):
                batch.append((gid, rec))
        report = world.corp.ingest(eid, batch, _resolver(world, rig.store))
        for m in report.movements:
            log.append(f"store:{eid}", "movement", **m.to_dict())
        for a in report.gate_alarms:
            log.append(f"store:{eid}", "gate_alarm", **a)
        log.append(f"store:{eid}", "ingest", records=len(batch),
                   filtered=report.filtered, skipped=report.skipped,
                   created=sorted(report.created))
        _log_corp_alarms(world, mark)

    elif op == "handheld_read":
        session = world.sessions.setdefault(step["session"],
                                            HandheldSession(step["session"]))
        uid = step["uid"]
        tag = world.tag_world.tag(uid)
        tid, version, _ = parse_header(bytes(tag.image.data))
        template = world.templates[tid]
        record = decode_record(template, tag.image)
        session.queue_read(uid, dict(record, template_id=tid), world.clock.now_s)
        log.append(f"handheld:{step['session']}", "offline_read", uid=uid,
                   template_id=tid)

    elif op == "handheld_write":
        session = world.sessions.setdefault(step["session"],
                                            HandheldSession(step["session"]))
        session.queue_write(step["tag_id"], step["attr"], step["value"],
                            world.clock.now_s)
        log.append(f"handheld:{step['session']}", "offline_write",
                   tag_id=step["tag_id"], attr=step["attr"], value=step["value"])

    elif op == "handheld_sync":
        session = world.sessions.setdefault(step["session"],
                                            HandheldSession(step["session"]))
        report = world.rigs[step["enterprise"]].store.handheld_sync(session)
        world.conflicts += len(report.conflicts)
        log.append(f"handheld:{step['session']}", "sync",
                   enterprise=step["enterprise"], applied_reads=report.applied_reads,
                   known_reads=report.known_reads, applied_writes=report.applied_writes,
                   conflicts=report.conflicts)

    elif op == "set_input":
        rig = world.rigs[step["enterprise"]].gates[step["gate"]]
        rig.gate.io_update(step["input"], step["level"])

    elif op == "clear_alarms":
        rig = world.rigs[step["enterprise"]].gates[step["gate"]]
        rig.client.clear_alarms(step.get("keep_mask", 0))
        log.append("runner", "alarms_cleared", gate=step["gate"])

    elif op == "load_script":
        rig = world.rigs[step["enterprise"]].gates[step["gate"]]
        count = rig.gate.load_script(step["script"])
        log.append("runner", "script_loaded", gate=step["gate"], rules=count)

    elif op == "trace":
        tree = trace(world.registry, step["tag_id"],
                     max_depth=step.get("max_depth", DEFAULT_MAX_DEPTH))
        log.append("runner", "trace", tag_id=step["tag_id"], stats=tree.stats(),
                   tree=tree_to_dict(tree))

    elif op == "report":
        if "period" in step:
            a, b = step["period"].split("..", 1)
            start, end = int(a), int(b)
        else:
            start, end = step["start"], step["end"]
        rows = corporate_report(world.corp, (start, end))
        world.last_report = rows
        log.append("runner", "report", period_start=start, period_end=end,
                   rows=[[r.enterprise, r.state, r.count] for r in rows])

    elif op == "random_traffic":
        rig = world.rigs[step["enterprise"]].gates[step["gate"]]
        pool = step.get("uids") or sorted(world.tag_world.tags)
        lo = step.get("min_gap_ms", 100)
        hi = max(lo, step.get("max_gap_ms", 3000))
        for _ in range(step["count"]):
            uid = world.rng.choice(pool)
            world.clock.advance_ms(world.rng.randrange(lo, hi + 1))
            rig.fields[0].enter(uid)
            rig.gate.on_tag_event(uid, 0)
            world.clock.advance_ms(world.rng.randrange(50, 500))
            rig.fields[0].leave(uid)
        log.append("runner", "random_traffic", gate=step["gate"], count=step["count"])

    else:  # unreachable after validation
        raise ScenarioSyntaxError(f"unknown op {op!r}")


def run_scenario_file(path: str, seed: Optional[int] = None,
                      log_path: Optional[str] = None) -> RunResult:
    with open(path, "r", encoding="utf-8") as fh:
        scenario = parse_scenario(fh.read())
    if seed is not None:
        scenario.seed = seed
    return run_scenario(scenario, log_path=log_path)
