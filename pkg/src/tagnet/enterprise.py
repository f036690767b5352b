"""Enterprise and corporation levels: inventory, orders, ingest, reports.

Each enterprise owns an append-only journal of `{ts, kind, payload}` events
(UTF-8 JSON, one per line when persisted). Every mutating operation appends
exactly one event and routes through the same `_apply` used by replay, so
rebuilding a store from its journal reproduces identical state.

Inventory entries are keyed by the logical TAG_ID carried in tag memory
(not the chip uid) and move along a fixed lifecycle:

    received -> sent | defective
    defective -> repaired | returned
    repaired -> sent
    sent, returned: terminal

Gate history ingestion turns READ records into movement events:

  * filtering: repeat reads of one uid at one gate within a 2 s window
    collapse into the first event (their seqs are absorbed by it);
  * correlation: an IN-gate read followed by an OUT-gate read of the same
    uid in one batch becomes a single TRANSFER consuming both seq sets;
  * a new uid entering through an IN gate creates an inventory entry in
    state `received`, with price and quantity decoded from tag memory by
    a caller-supplied resolver.

Per-gate seq watermarks make re-polling idempotent: a seq is consumed at
most once, ever.

The corporation aggregates stores: partner order/confirmation exchange
(the confirmation carries the full tag template, which the client caches
so it can decode the supplier's tags), alarm rules evaluated over every
ingested or transitioned event, and periodic reports counting state
entries and movements per enterprise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .clock import SimClock
from .gate import HistoryEvent, HistoryRecord
from .tagcodec import TagTemplate, template_from_dict, template_to_dict

# Reserved field names shared across the platform. A template that carries
# them participates in inventory ingest and traceability.
F_TAG_ID = "TAG_ID"
F_TAG_TYPE = "TAG_TYPE"
F_COMPONENTS_NUMBER = "COMPONENTS_NUMBER"
F_ID_BD_PREFIX = "ID_BD_"
F_PRICE = "PRODUCT_PRICE"
F_QUANTITY = "PRODUCT_QUANTITY"

ST_RECEIVED = "received"
ST_SENT = "sent"
ST_DEFECTIVE = "defective"
ST_REPAIRED = "repaired"
ST_RETURNED = "returned"

STATES = (ST_RECEIVED, ST_SENT, ST_DEFECTIVE, ST_REPAIRED, ST_RETURNED)

LIFECYCLE: dict[str, frozenset] = {
    ST_RECEIVED: frozenset({ST_SENT, ST_DEFECTIVE}),
    ST_DEFECTIVE: frozenset({ST_REPAIRED, ST_RETURNED}),
    ST_REPAIRED: frozenset({ST_SENT}),
    ST_SENT: frozenset(),
    ST_RETURNED: frozenset(),
}

DIR_IN = "IN"
DIR_OUT = "OUT"
MOVE_TRANSFER = "TRANSFER"
MOVEMENT_KINDS = (DIR_IN, DIR_OUT, MOVE_TRANSFER)

DEFAULT_FILTER_WINDOW_S = 2

# Handheld write attributes map to inventory entry fields.
WRITE_ATTRS = {F_PRICE: "price", F_QUANTITY: "quantity"}


class EnterpriseError(Exception):
    pass


class BadQuantity(EnterpriseError):
    pass


class UnknownOrder(EnterpriseError):
    pass


class AlreadyConfirmed(EnterpriseError):
    pass


class UnknownEntity(EnterpriseError):
    pass


class IllegalTransition(EnterpriseError):
    pass


class UnknownGate(EnterpriseError):
    pass


@dataclass
class InventoryEntry:
    tag_id: int
    state: str
    quantity: int
    price: int
    location: str
    last_update: int
    uid: int = 0
    template_id: int = 0

    def to_dict(self) -> dict:
        return {"tag_id": self.tag_id, "state": self.state,
                "quantity": self.quantity, "price": self.price,
                "location": self.location, "last_update": self.last_update,
                "uid": self.uid, "template_id": self.template_id}


@dataclass(frozen=True)
class MovementEvent:
    kind: str  # IN | OUT | TRANSFER
    uid: int
    tag_id: Optional[int]
    ts: int
    gate_id: str
    location: str
    seqs: tuple[tuple[str, int], ...]  # (gate_id, seq) pairs consumed
    src_gate_id: Optional[str] = None  # the IN side of a TRANSFER

    def to_dict(self) -> dict:
        return {"kind": self.kind, "uid": self.uid, "tag_id": self.tag_id,
                "ts": self.ts, "gate_id": self.gate_id, "location": self.location,
                "seqs": [list(p) for p in self.seqs], "src_gate_id": self.src_gate_id}


@dataclass
class IngestReport:
    movements: list[MovementEvent] = field(default_factory=list)
    created: list[int] = field(default_factory=list)  # tag_ids of new entries
    gate_alarms: list[dict] = field(default_factory=list)
    filtered: int = 0  # duplicate reads absorbed by the window rule
    skipped: int = 0  # unreadable/unresolvable records


@dataclass
class MergeReport:
    applied_reads: int = 0
    known_reads: int = 0
    applied_writes: int = 0
    conflicts: list[dict] = field(default_factory=list)


# A resolver maps a chip uid to the decoded field dict of that tag, or
# None when the tag cannot be decoded with any cached template.
TagResolver = Callable[[int], Optional[dict]]


class EnterpriseStore:
    """One enterprise: inventory, orders, templates, gates, its journal."""

    def __init__(self, enterprise_id: str, clock: SimClock) -> None:
        self.enterprise_id = enterprise_id
        self.clock = clock
        self.events: list[dict] = []
        self.entries: dict[int, InventoryEntry] = {}
        self.uid_to_tag: dict[int, int] = {}
        self.orders_out: dict[str, dict] = {}
        self.orders_in: dict[str, dict] = {}
        self.confirmations: dict[str, dict] = {}
        self.template_cache: dict[tuple[int, int], dict] = {}
        self.gates: dict[str, dict] = {}  # gate_id -> {direction, department}
        self.watermarks: dict[str, int] = {}  # gate_id -> last consumed seq
        self._order_counter = 0

    # --- journal plumbing ---

    def _record(self, kind: str, payload: dict) -> dict:
        event = {"ts": self.clock.now_s, "kind": kind, "payload": payload}
        self.events.append(event)
        self._apply(event)
        return event

    def _apply(self, event: dict) -> None:
        kind = event["kind"]
        p = event["payload"]
        if kind == "gate_registered":
            self.gates[p["gate_id"]] = {"direction": p["direction"],
                                        "department": p["department"]}
        elif kind == "order_placed":
            self.orders_out[p["order_id"]] = dict(p, status="pending")
        elif kind == "order_received":
            self.orders_in[p["order_id"]] = dict(p, status="pending")
        elif kind == "order_confirmed":
            self.orders_in[p["order_id"]]["status"] = "confirmed"
        elif kind == "confirmation_received":
            self.orders_out[p["order_id"]]["status"] = "confirmed"
            self.confirmations[p["order_id"]] = p
            t = p["template"]
            self.template_cache[(t["template_id"], t["version"])] = t
        elif kind == "template_cached":
            t = p["template"]
            self.template_cache[(t["template_id"], t["version"])] = t
        elif kind == "ingest":
            for g, seq in p["watermarks"].items():
                self.watermarks[g] = max(self.watermarks.get(g, 0), seq)
            for m in p["movements"]:
                self._apply_movement(m)
        elif kind == "transition":
            entry = self.entries[p["tag_id"]]
            entry.state = p["to_state"]
            entry.last_update = event["ts"]
        elif kind == "handheld_sync":
            for r in p["reads"]:
                self._apply_handheld_read(r)
            for w in p["writes"]:
                entry = self.entries[w["tag_id"]]
                setattr(entry, WRITE_ATTRS[w["attr"]], w["value"])
                entry.last_update = event["ts"]
        else:
            raise EnterpriseError(f"journal corrupt: unknown event kind {kind!r}")

    def _apply_movement(self, m: dict) -> None:
        tag_id = m["tag_id"]
        if tag_id is None:
            return
        self.uid_to_tag[m["uid"]] = tag_id
        entry = self.entries.get(tag_id)
        if entry is None:
            if m.get("entry") is None:
                return
            e = m["entry"]
            self.entries[tag_id] = InventoryEntry(
                tag_id=tag_id, state=ST_RECEIVED, quantity=e["quantity"],
                price=e["price"], location=m["location"], last_update=m["ts"],
                uid=m["uid"], template_id=e["template_id"])
            return
        entry.last_update = m["ts"]
        if m["kind"] in (DIR_IN, MOVE_TRANSFER):
            entry.location = m["location"]

    def _apply_handheld_read(self, r: dict) -> None:
        tag_id = r["tag_id"]
        self.uid_to_tag[r["uid"]] = tag_id
        if tag_id in self.entries:
            return
        self.entries[tag_id] = InventoryEntry(
            tag_id=tag_id, state=ST_RECEIVED, quantity=r["quantity"],
            price=r["price"], location=r["location"], last_update=r["ts"],
            uid=r["uid"], template_id=r["template_id"])

    # --- persistence ---

    def dump_events(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n"
                       for e in self.events)

    def save_events(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dump_events())

    @classmethod
    def replay(cls, enterprise_id: str, events: list[dict], clock: SimClock) -> "EnterpriseStore":
        store = cls(enterprise_id, clock)
        for event in events:
            store.events.append(event)
            store._apply(event)
        # order ids must keep advancing after a reload
        store._order_counter = sum(1 for e in store.events if e["kind"] == "order_placed")
        return store

    @classmethod
    def load_events(cls, enterprise_id: str, path: str, clock: SimClock) -> "EnterpriseStore":
        with open(path, "r", encoding="utf-8") as fh:
            events = [json.loads(line) for line in fh if line.strip()]
        return cls.replay(enterprise_id, events, clock)

    # --- configuration ---

    def register_gate(self, gate_id: str, direction: str, department: str) -> None:
        if direction not in (DIR_IN, DIR_OUT):
            raise EnterpriseError(f"gate direction must be IN or OUT, got {direction!r}")
        self._record("gate_registered", {"gate_id": gate_id, "direction": direction,
                                         "department": department})

    def cache_template(self, template: TagTemplate) -> None:
        self._record("template_cached", {"template": template_to_dict(template)})

    def get_template(self, template_id: int, version: Optional[int] = None) -> Optional[TagTemplate]:
        if version is not None:
            raw = self.template_cache.get((template_id, version))
            return template_from_dict(raw) if raw else None
        versions = [v for (tid, v) in self.template_cache if tid == template_id]
        if not versions:
            return None
        return template_from_dict(self.template_cache[(template_id, max(versions))])

    # --- orders (driven by the corporation, which owns both sides) ---

    def next_order_id(self) -> str:
        self._order_counter += 1
        return f"{self.enterprise_id}-O{self._order_counter:04d}"

    def record_order_out(self, order: dict) -> None:
        self._record("order_placed", order)

    def record_order_in(self, order: dict) -> None:
        self._record("order_received", order)

    def record_order_confirmed(self, order_id: str) -> None:
        self._record("order_confirmed", {"order_id": order_id})

    def record_confirmation(self, confirmation: dict) -> None:
        self._record("confirmation_received", confirmation)

    # --- lifecycle ---

    def entry(self, tag_id: int) -> InventoryEntry:
        if tag_id not in self.entries:
            raise UnknownEntity(f"no inventory entry for tag {tag_id}")
        return self.entries[tag_id]

    def transition_entity(self, tag_id: int, new_state: str) -> InventoryEntry:
        entry = self.entry(tag_id)
        if new_state not in STATES:
            raise IllegalTransition(f"unknown state {new_state!r}")
        if new_state not in LIFECYCLE[entry.state]:
            raise IllegalTransition(
                f"tag {tag_id}: {entry.state} -> {new_state} is not allowed")
        self._record("transition", {"tag_id": tag_id, "from_state": entry.state,
                                    "to_state": new_state})
        return self.entries[tag_id]

    # --- gate history ingestion ---

    def ingest_history(self, batch: list[tuple[str, HistoryRecord]],
                       tag_reader: Optional[TagResolver] = None,
                       filter_window_s: int = DEFAULT_FILTER_WINDOW_S) -> IngestReport:
        """Consume polled history records (gate_id, record) into movements.

        Records at or below a gate's watermark are ignored, so re-polling
        the same window is harmless. Returns what happened; the journal
        gains at most one `ingest` event.
        """
        report = IngestReport()
        fresh: list[tuple[str, HistoryRecord]] = []
        watermarks: dict[str, int] = {}
        for gate_id, rec in batch:
            if gate_id not in self.gates:
                raise UnknownGate(f"gate {gate_id!r} is not registered here")
            if rec.seq <= self.watermarks.get(gate_id, 0) or rec.seq <= watermarks.get(gate_id, 0):
                continue
            watermarks[gate_id] = max(watermarks.get(gate_id, 0), rec.seq)
            fresh.append((gate_id, rec))
        if not fresh:
            return report

        reads: list[tuple[str, HistoryRecord]] = []
        for gate_id, rec in fresh:
            if rec.event == HistoryEvent.READ:
                reads.append((gate_id, rec))
            elif rec.event == HistoryEvent.ALARM:
                report.gate_alarms.append({"gate_id": gate_id, "seq": rec.seq,
                                           "ts": rec.timestamp, "uid": rec.uid,
                                           "code": rec.snapshot[0]})
        reads.sort(key=lambda gr: (gr[1].timestamp, gr[0], gr[1].seq))

        # filtering: bursts of one uid at one gate collapse into the first read
        kept: list[dict] = []
        open_burst: dict[tuple[str, int], dict] = {}
        for gate_id, rec in reads:
            key = (gate_id, rec.uid)
            burst = open_burst.get(key)
            if burst is not None and rec.timestamp - burst["ts"] < filter_window_s:
                burst["seqs"].append((gate_id, rec.seq))
                report.filtered += 1
                continue
            burst = {"gate_id": gate_id, "uid": rec.uid, "ts": rec.timestamp,
                     "seqs": [(gate_id, rec.seq)],
                     "direction": self.gates[gate_id]["direction"],
                     "department": self.gates[gate_id]["department"]}
            open_burst[key] = burst
            kept.append(burst)

        # correlation: IN then OUT of one uid in this batch pairs to TRANSFER
        movements: list[MovementEvent] = []
        pending_in: dict[int, dict] = {}
        for ev in kept:
            if ev["direction"] == DIR_IN:
                if ev["uid"] in pending_in:
                    movements.append(self._finish_movement(pending_in.pop(ev["uid"])))
                pending_in[ev["uid"]] = ev
                continue
            first = pending_in.pop(ev["uid"], None)
            if first is not None:
                movements.append(MovementEvent(
                    kind=MOVE_TRANSFER, uid=ev["uid"], tag_id=None, ts=ev["ts"],
                    gate_id=ev["gate_id"], location=ev["department"],
                    seqs=tuple(first["seqs"] + ev["seqs"]),
                    src_gate_id=first["gate_id"]))
            else:
                movements.append(self._finish_movement(ev))
        movements.extend(self._finish_movement(ev) for ev in pending_in.values())
        movements.sort(key=lambda m: (m.ts, m.seqs))

        # resolve tags, decide entry creation
        payload_moves: list[dict] = []
        resolved: dict[int, tuple[Optional[int], Optional[dict]]] = {}
        created_here: set[int] = set()
        for m in movements:
            if m.uid in resolved:
                tag_id, fields = resolved[m.uid]
            else:
                tag_id, fields = self.uid_to_tag.get(m.uid), None
                if tag_id is None and tag_reader is not None:
                    fields = tag_reader(m.uid)
                    if fields is not None and F_TAG_ID in fields:
                        tag_id = fields[F_TAG_ID]
                resolved[m.uid] = (tag_id, fields)
            m = MovementEvent(kind=m.kind, uid=m.uid, tag_id=tag_id, ts=m.ts,
                              gate_id=m.gate_id, location=m.location,
                              seqs=m.seqs, src_gate_id=m.src_gate_id)
            d = m.to_dict()
            if tag_id is None:
                report.skipped += 1
            elif (tag_id not in self.entries and tag_id not in created_here
                    and m.kind in (DIR_IN, MOVE_TRANSFER)):
                d["entry"] = {"price": int((fields or {}).get(F_PRICE, 0)),
                              "quantity": int((fields or {}).get(F_QUANTITY, 0)),
                              "template_id": int((fields or {}).get("template_id", 0))}
                created_here.add(tag_id)
                report.created.append(tag_id)
            report.movements.append(m)
            payload_moves.append(d)

        self._record("ingest", {"movements": payload_moves,
                                "gate_alarms": report.gate_alarms,
                                "watermarks": watermarks,
                                "filtered": report.filtered,
                                "skipped": report.skipped})
        return report

    def _finish_movement(self, ev: dict) -> MovementEvent:
        return MovementEvent(kind=ev["direction"], uid=ev["uid"], tag_id=None,
                             ts=ev["ts"], gate_id=ev["gate_id"],
                             location=ev["department"], seqs=tuple(ev["seqs"]))

    # --- handheld sync ---

    def handheld_sync(self, session: "HandheldSession") -> MergeReport:
        """Merge a stand-alone session: reads ingest, writes replay unless
        the server changed that entry after the session watermark (then the
        server value stands and the write becomes a conflict row)."""
        report = MergeReport()
        reads_payload: list[dict] = []
        writes_payload: list[dict] = []
        for r in session.queued_reads:
            tag_id = r["fields"].get(F_TAG_ID)
            if tag_id is None:
                report.conflicts.append({"kind": "read", "uid": r["uid"],
                                         "reason": "no TAG_ID on tag"})
                continue
            if tag_id in self.entries:
                report.known_reads += 1
                continue
            reads_payload.append({
                "uid": r["uid"], "tag_id": tag_id, "ts": r["ts"],
                "price": int(r["fields"].get(F_PRICE, 0)),
                "quantity": int(r["fields"].get(F_QUANTITY, 0)),
                "template_id": int(r["fields"].get("template_id", 0)),
                "location": session.session_id})
            report.applied_reads += 1
        for w in session.queued_writes:
            if w["attr"] not in WRITE_ATTRS:
                report.conflicts.append(dict(w, kind="write", reason="unknown attribute"))
                continue
            entry = self.entries.get(w["tag_id"])
            pending = any(r["tag_id"] == w["tag_id"] for r in reads_payload)
            if entry is None and not pending:
                report.conflicts.append(dict(w, kind="write", reason="unknown entity"))
                continue
            if entry is not None and entry.last_update > session.watermark:
                report.conflicts.append(dict(
                    w, kind="write", reason="server changed after watermark",
                    server_value=getattr(entry, WRITE_ATTRS[w["attr"]])))
                continue
            writes_payload.append({"tag_id": w["tag_id"], "attr": w["attr"],
                                   "value": w["value"]})
            report.applied_writes += 1
        if reads_payload or writes_payload:
            # writes queued against a tag first seen offline need the read
            # applied before the write; payload order preserves that
            self._record("handheld_sync", {"session_id": session.session_id,
                                           "reads": reads_payload,
                                           "writes": writes_payload,
                                           "conflicts": report.conflicts})
        session.queued_reads.clear()
        session.queued_writes.clear()
        session.watermark = self.clock.now_s
        return report


@dataclass
class HandheldSession:
    """A mobile reader working away from the servers, queueing work."""

    session_id: str
    watermark: int = 0  # server time of the last completed sync
    templates: dict = field(default_factory=dict)
    queued_reads: list[dict] = field(default_factory=list)
    queued_writes: list[dict] = field(default_factory=list)

    def cache_template(self, template: TagTemplate) -> None:
        self.templates[(template.template_id, template.version)] = template

    def queue_read(self, uid: int, fields: dict, ts: int) -> None:
        self.queued_reads.append({"uid": uid, "fields": dict(fields), "ts": ts})

    def queue_write(self, tag_id: int, attr: str, value: int, ts: int) -> None:
        self.queued_writes.append({"tag_id": tag_id, "attr": attr,
                                   "value": value, "ts": ts})


def handheld_sync(store: EnterpriseStore, session: HandheldSession) -> MergeReport:
    return store.handheld_sync(session)


def transition_entity(store: EnterpriseStore, tag_id: int, new_state: str) -> InventoryEntry:
    return store.transition_entity(tag_id, new_state)


def ingest_history(store: EnterpriseStore, batch: list[tuple[str, HistoryRecord]],
                   tag_reader: Optional[TagResolver] = None,
                   filter_window_s: int = DEFAULT_FILTER_WINDOW_S) -> IngestReport:
    return store.ingest_history(batch, tag_reader, filter_window_s)


# --- corporation level ---

@dataclass(frozen=True)
class CorpAlarmRule:
    """Fires when every (attribute, op, value) condition matches an event.

    Events are flattened dicts ({kind, enterprise} plus the payload); a
    missing attribute or a type mismatch simply fails the condition.
    """

    name: str
    severity: str
    message: str
    conditions: tuple[tuple[str, str, Any], ...]

    _OPS = {"==": lambda a, b: a == b, "!=": lambda a, b: a != b,
            "<": lambda a, b: a < b, ">": lambda a, b: a > b,
            "<=": lambda a, b: a <= b, ">=": lambda a, b: a >= b}

    def matches(self, event: dict) -> bool:
        for attr, op, value in self.conditions:
            if attr not in event or op not in self._OPS:
                return False
            try:
                if not self._OPS[op](event[attr], value):
                    return False
            except TypeError:
                return False
        return True


@dataclass(frozen=True)
class ReportRow:
    enterprise: str
    state: str  # lifecycle state or movement kind
    count: int
    period_start: int
    period_end: int


REPORT_LABELS = STATES + MOVEMENT_KINDS


class Corporation:
    """The group level: all stores, shared trace registry, rules, reports."""

    def __init__(self, clock: SimClock) -> None:
        self.clock = clock
        self.stores: dict[str, EnterpriseStore] = {}
        self.alarm_rules: list[CorpAlarmRule] = []
        self.alarm_log: list[dict] = []

    def add_enterprise(self, enterprise_id: str) -> EnterpriseStore:
        if enterprise_id in self.stores:
            raise EnterpriseError(f"enterprise {enterprise_id!r} already exists")
        store = EnterpriseStore(enterprise_id, self.clock)
        self.stores[enterprise_id] = store
        return store

    def store(self, enterprise_id: str) -> EnterpriseStore:
        if enterprise_id not in self.stores:
            raise EnterpriseError(f"unknown enterprise {enterprise_id!r}")
        return self.stores[enterprise_id]

    # --- partner order exchange ---

    def place_order(self, client_id: str, supplier_id: str, item: str, qty: int) -> dict:
        if qty <= 0:
            raise BadQuantity(f"quantity must be positive, got {qty}")
        client = self.store(client_id)
        supplier = self.store(supplier_id)
        order = {"order_id": client.next_order_id(), "client_id": client_id,
                 "supplier_id": supplier_id, "item": item, "quantity": qty,
                 "placed_at": self.clock.now_s}
        client.record_order_out(order)
        supplier.record_order_in(order)
        return dict(order, status="pending")

    def confirm_order(self, supplier_id: str, order_id: str,
                      template: TagTemplate, accepted: bool = True) -> dict:
        supplier = self.store(supplier_id)
        order = supplier.orders_in.get(order_id)
        if order is None:
            raise UnknownOrder(f"order {order_id!r} was never received by {supplier_id}")
        if order["status"] != "pending":
            raise AlreadyConfirmed(f"order {order_id!r} is already confirmed")
        confirmation = {"order_id": order_id, "accepted": accepted,
                        "template": template_to_dict(template),
                        "confirmed_at": self.clock.now_s}
        supplier.record_order_confirmed(order_id)
        self.store(order["client_id"]).record_confirmation(confirmation)
        return confirmation

    # --- alarms ---

    def add_alarm_rule(self, rule: CorpAlarmRule) -> None:
        self.alarm_rules.append(rule)

    def evaluate_alarm_rules(self, event: dict) -> list[dict]:
        fired = []
        for rule in self.alarm_rules:
            if rule.matches(event):
                try:
                    message = rule.message.format(**event)
                except (KeyError, IndexError):
                    message = rule.message
                alarm = {"ts": self.clock.now_s, "rule": rule.name,
                         "severity": rule.severity, "message": message,
                         "event_kind": event.get("kind"),
                         "enterprise": event.get("enterprise")}
                self.alarm_log.append(alarm)
                fired.append(alarm)
        return fired

    # --- wrapped store operations that feed the rule engine ---

    def transition(self, enterprise_id: str, tag_id: int, new_state: str) -> InventoryEntry:
        entry = self.store(enterprise_id).transition_entity(tag_id, new_state)
        self.evaluate_alarm_rules({"kind": "transition", "enterprise": enterprise_id,
                                   "tag_id": tag_id, "state": new_state})
        return entry

    def ingest(self, enterprise_id: str, batch: list[tuple[str, HistoryRecord]],
               tag_reader: Optional[TagResolver] = None,
               filter_window_s: int = DEFAULT_FILTER_WINDOW_S) -> IngestReport:
        report = self.store(enterprise_id).ingest_history(batch, tag_reader, filter_window_s)
        for m in report.movements:
            self.evaluate_alarm_rules({"kind": "movement", "enterprise": enterprise_id,
                                       "movement": m.kind, "uid": m.uid,
                                       "tag_id": m.tag_id, "gate_id": m.gate_id,
                                       "location": m.location})
        for a in report.gate_alarms:
            self.evaluate_alarm_rules(dict(a, kind="gate_alarm", enterprise=enterprise_id))
        return report


def evaluate_alarm_rules(corp: Corporation, event: dict) -> list[dict]:
    return corp.evaluate_alarm_rules(event)


def _count_events(store: EnterpriseStore, start: int, end: int) -> dict[str, int]:
    counts = {label: 0 for label in REPORT_LABELS}
    for event in store.events:
        kind = event["kind"]
        p = event["payload"]
        if kind == "ingest":
            for m in p["movements"]:
                if start <= m["ts"] < end and m["tag_id"] is not None:
                    counts[m["kind"]] += 1
                    if m.get("entry") is not None:
                        counts[ST_RECEIVED] += 1
        elif kind == "transition":
            if start <= event["ts"] < end:
                counts[p["to_state"]] += 1
        elif kind == "handheld_sync":
            for r in p["reads"]:
                if start <= r["ts"] < end:
                    counts[ST_RECEIVED] += 1
    return counts


def corporate_report(corp: Corporation, period: tuple[int, int]) -> list[ReportRow]:
    """Counts per enterprise over [start, end): entities entering each
    lifecycle state, and movement events by kind. Derived purely from the
    journals, so a reloaded corporation reports identically."""
    start, end = period
    rows: list[ReportRow] = []
    for enterprise_id in sorted(corp.stores):
        counts = _count_events(corp.stores[enterprise_id], start, end)
        for label in REPORT_LABELS:
            rows.append(ReportRow(enterprise=enterprise_id, state=label,
                                  count=counts[label], period_start=start,
                                  period_end=end))
    return rows


def report_to_csv(rows: list[ReportRow]) -> str:
    lines = ["enterprise,state,count,period_start,period_end"]
    lines.extend(f"{r.enterprise},{r.state},{r.count},{r.period_start},{r.period_end}"
                 for r in rows)
    return "\n".join(lines) + "\n"


def trace_record_fields(record: dict) -> Optional[dict]:
    """Extract the traceability view of a decoded tag record, if it has one:
    TAG_ID, TAG_TYPE and the first COMPONENTS_NUMBER many ID_BD_i fields."""
    if F_TAG_ID not in record or F_TAG_TYPE not in record:
        return None
    n = int(record.get(F_COMPONENTS_NUMBER, 0))
    components = []
    for i in range(n):
        name = f"{F_ID_BD_PREFIX}{i}"
        if name not in record:
            return None
        components.append(int(record[name]))
    return {"tag_id": int(record[F_TAG_ID]), "tag_type": int(record[F_TAG_TYPE]),
            "components": tuple(components)}
