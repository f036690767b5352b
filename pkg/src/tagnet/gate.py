"""Control gates: tag-event logging, rule scripts, alarms, ModBus slave face.

Three tiers with fixed capability profiles:

    LCCG: log + alarm only, 1024-record history, 1 relay, 2 inputs, no scripts
    MCCG: + script engine (<=32 rules) and tag-field modification, 4096
          records, 2 relays, 4 inputs
    HCCG: + up to 4 reader ports and duplicate-read filtering (2 s window),
          16384 records

History is a wrap-around ring of fixed 32-byte records with a strictly
increasing sequence number; the oldest record is overwritten at capacity.
Serialized record layout (big-endian, seq carried positionally):

    ts u32 | uid u64 | template_id u16 | port u8 | event u8 | 8 x u16 snapshot

The snapshot holds the low 16 bits of the first eight integer/date fields
of the record's template, in layout order, zero-padded.

The gate is a pull-only ModBus slave; it never emits a byte on the RS485
bus except in direct response to a master request. Register map:

    0x0000  status (ro): tier index << 8 | 0x01
    0x0001  alarm flags (write a keep-mask; writing 0 clears all)
    0x0002  history count, high word (ro); 0x0003 low word
    0x0004  relay command/state bits
    0x0005  digital input bits (ro)
    0x0010..0x0013  mailbox: target uid (u64, high word first)
    0x0014  mailbox: field index
    0x0015..0x0016  mailbox: value (u32, high word first)
    0x0017  mailbox: control -- writing nonzero executes the command
    0x0018  mailbox: status (ro) 0 idle, 1 done, 2 tag absent, 3 bad field,
            5 capability denied
    0x0100..0x0101  history window: from_seq (u32, high word first)
    0x0102  window: number of records available (ro, <= 4)
    0x0103..0x0104  window: seq of first record (u32, ro)
    0x0110..0x014F  window: up to 4 records x 16 registers (ro)

Alarm code N sets flag bit N-1. A tag whose header cannot be matched to a
known template logs an ALARM record with code 0x01 instead of failing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any, Optional

from . import modbus
from .clock import SimClock
from .gatescript import (ACTION_ALARM, ACTION_LOG, ACTION_RELAY, ACTION_SET,
                         Rule, TRIGGER_INPUT, TRIGGER_READ, parse_script)
from .modbus import RegisterFile, SerialBus
from .rfidsim import ReaderClient, ReaderLink, TagNotInField
from .tagcodec import (HEADER_SIZE, KIND_DATE, KIND_INTEGER, TagCodecError,
                       TagImage, TagTemplate, decode_record, parse_header,
                       _encode_slot)

RECORD_SIZE = 32
SNAPSHOT_WORDS = 8
HISTORY_WINDOW_RECORDS = 4

ALARM_UNKNOWN_TEMPLATE = 0x01

MBX_IDLE = 0x00
MBX_DONE = 0x01
MBX_TAG_ABSENT = 0x02
MBX_BAD_FIELD = 0x03
MBX_CAPABILITY = 0x05

REG_STATUS = 0x0000
REG_ALARMS = 0x0001
REG_HIST_COUNT_HI = 0x0002
REG_HIST_COUNT_LO = 0x0003
REG_RELAYS = 0x0004
REG_INPUTS = 0x0005
REG_MBX_BASE = 0x0010
REG_MBX_CONTROL = 0x0017
REG_MBX_STATUS = 0x0018
REG_WIN_FROM_HI = 0x0100
REG_WIN_FROM_LO = 0x0101
REG_WIN_COUNT = 0x0102
REG_WIN_FIRST_HI = 0x0103
REG_WIN_FIRST_LO = 0x0104
REG_WIN_DATA = 0x0110


class GateError(Exception):
    pass


class CapabilityDenied(GateError):
    pass


class GateRangeError(GateError):
    pass


class GateTier(Enum):
    LCCG = 0
    MCCG = 1
    HCCG = 2


@dataclass(frozen=True)
class TierProfile:
    name: str
    history_capacity: int
    relays: int
    inputs: int
    max_rules: int
    can_modify_tags: bool
    reader_ports: int
    dedup_filter: bool


TIER_PROFILES = {
    GateTier.LCCG: TierProfile("LCCG", 1024, 1, 2, 0, False, 1, False),
    GateTier.MCCG: TierProfile("MCCG", 4096, 2, 4, 32, True, 1, False),
    GateTier.HCCG: TierProfile("HCCG", 16384, 2, 4, 32, True, 4, True),
}

DEFAULT_DEDUP_WINDOW_MS = 2000


class HistoryEvent(IntEnum):
    READ = 1
    WRITE = 2
    ALARM = 3
    INPUT = 4


@dataclass(frozen=True)
class HistoryRecord:
    seq: int
    timestamp: int  # simulated epoch seconds
    reader_port: int
    uid: int
    template_id: int
    event: HistoryEvent
    snapshot: tuple[int, ...]  # always exactly 8 16-bit words

    def to_bytes(self) -> bytes:
        """Fixed 32-byte wire form; seq travels positionally, not inline."""
        out = struct.pack(">IQHBB", self.timestamp & 0xFFFFFFFF, self.uid,
                          self.template_id, self.reader_port, int(self.event))
        out += b"".join(struct.pack(">H", w & 0xFFFF) for w in self.snapshot)
        return out

    @classmethod
    def from_bytes(cls, data: bytes, seq: int) -> "HistoryRecord":
        if len(data) != RECORD_SIZE:
            raise GateError(f"history record must be {RECORD_SIZE} bytes")
        ts, uid, template_id, port, event = struct.unpack(">IQHBB", data[:16])
        words = struct.unpack(">8H", data[16:])
        return cls(seq=seq, timestamp=ts, reader_port=port, uid=uid,
                   template_id=template_id, event=HistoryEvent(event),
                   snapshot=tuple(words))


def _pad_snapshot(words: list[int]) -> tuple[int, ...]:
    words = [w & 0xFFFF for w in words[:SNAPSHOT_WORDS]]
    return tuple(words + [0] * (SNAPSHOT_WORDS - len(words)))


def snapshot_fields(template: TagTemplate) -> list[str]:
    """Fields captured in history snapshots: the first eight integer/date
    fields, in layout order."""
    names = [f.name for f in template.fields if f.kind in (KIND_INTEGER, KIND_DATE)]
    return names[:SNAPSHOT_WORDS]


def record_snapshot(template: TagTemplate, record: dict) -> tuple[int, ...]:
    return _pad_snapshot([int(record[name]) for name in snapshot_fields(template)])


class HistoryLog:
    """Fixed-capacity ring of history records with monotone seq numbers."""

    def __init__(self, capacity: int) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be > 0")
        self.capacity = capacity
        self._records: list[HistoryRecord] = []
        self._next_seq = 1

    @property
    def total_appended(self) -> int:
        return self._next_seq - 1

    @property
    def oldest_seq(self) -> int:
        """Seq of the oldest retrievable record (0 when empty)."""
        return self._records[0].seq if self._records else 0

    def append(self, timestamp: int, reader_port: int, uid: int, template_id: int,
               event: HistoryEvent, snapshot: tuple[int, ...]) -> HistoryRecord:
        rec = HistoryRecord(seq=self._next_seq, timestamp=timestamp,
                            reader_port=reader_port, uid=uid, template_id=template_id,
                            event=event, snapshot=_pad_snapshot(list(snapshot)))
        self._next_seq += 1
        self._records.append(rec)
        if len(self._records) > self.capacity:
            self._records.pop(0)
        return rec

    def query(self, from_seq: int, max_records: int) -> list[HistoryRecord]:
        """Records with seq >= from_seq, ascending, at most max_records."""
        if max_records <= 0:
            return []
        # records are stored in seq order; binary-search-free slice is fine
        # at these capacities
        out = [r for r in self._records if r.seq >= from_seq]
        return out[:max_records]


@dataclass
class GateEffect:
    """One observable consequence of a gate event, for logs and tests."""

    kind: str  # history | alarm | tag_write | relay | dedup_suppressed | input | log
    data: dict


class Gate:
    """One control gate: event loop over reader events, bus requests, I/O."""

    def __init__(self, gate_id: str, tier: GateTier, slave_addr: int,
                 clock: SimClock, templates: Optional[dict[int, TagTemplate]] = None,
                 dedup_window_ms: int = DEFAULT_DEDUP_WINDOW_MS) -> None:
        if not 1 <= slave_addr <= modbus.MAX_SLAVE_ADDR:
            raise GateError(f"slave address {slave_addr} outside 1..247")
        self.gate_id = gate_id
        self.tier = tier
        self.profile = TIER_PROFILES[tier]
        self.slave_addr = slave_addr
        self.clock = clock
        self.templates: dict[int, TagTemplate] = dict(templates or {})
        self.dedup_window_ms = dedup_window_ms
        self.history = HistoryLog(self.profile.history_capacity)
        self.rules: tuple[Rule, ...] = ()
        self.alarm_flags = 0
        self.relays = [False] * self.profile.relays
        self.inputs = [0] * self.profile.inputs
        self.readers: list[ReaderClient] = []
        self.effect_sink = None  # optional callable(GateEffect)
        self._last_logged_read: dict[int, int] = {}  # uid -> ms of last kept READ
        self._mailbox_status = MBX_IDLE
        self._registers = GateRegisterFile(self)

    # --- configuration ---

    def add_template(self, template: TagTemplate) -> None:
        self.templates[template.template_id] = template

    def attach_reader(self, link: ReaderLink) -> int:
        """Attach a reader port; returns the port index."""
        if len(self.readers) >= self.profile.reader_ports:
            raise CapabilityDenied(
                f"{self.profile.name} supports {self.profile.reader_ports} reader port(s)")
        self.readers.append(ReaderClient(link))
        return len(self.readers) - 1

    def field_kinds(self) -> dict[str, str]:
        kinds: dict[str, str] = {}
        for t in self.templates.values():
            for f in t.fields:
                kinds.setdefault(f.name, f.kind)
        return kinds

    def load_script(self, text: str) -> int:
        """Parse and install rules; capability checks happen here."""
        self.rules = parse_script(text, tier=self.profile, field_kinds=self.field_kinds())
        return len(self.rules)

    # --- event handling ---

    def _emit(self, effects: list[GateEffect], kind: str, **data: Any) -> GateEffect:
        eff = GateEffect(kind=kind, data=data)
        effects.append(eff)
        if self.effect_sink is not None:
            self.effect_sink(self, eff)
        return eff

    def _append_history(self, effects: list[GateEffect], port: int, uid: int,
                        template_id: int, event: HistoryEvent,
                        snapshot: tuple[int, ...]) -> HistoryRecord:
        rec = self.history.append(self.clock.now_s, port, uid, template_id,
                                  event, snapshot)
        self._emit(effects, "history", seq=rec.seq, record_event=event.name,
                   uid=uid, template_id=template_id)
        return rec

    def _raise_alarm(self, effects: list[GateEffect], code: int, port: int,
                     uid: int, template_id: int) -> None:
        self.alarm_flags |= 1 << (code - 1)
        self._append_history(effects, port, uid, template_id, HistoryEvent.ALARM,
                             _pad_snapshot([code]))
        self._emit(effects, "alarm", code=code, flags=self.alarm_flags, uid=uid)

    def _reader(self, port: int) -> ReaderClient:
        if not 0 <= port < len(self.readers):
            raise GateRangeError(f"no reader attached at port {port}")
        return self.readers[port]

    def _read_tag(self, port: int, uid: int) -> tuple[TagTemplate, dict]:
        """Fetch and decode a present tag through the reader link."""
        reader = self._reader(port)
        bs = reader.block_size
        header_blocks = (HEADER_SIZE + bs - 1) // bs
        head = reader.read_blocks(uid, 0, header_blocks)
        template_id, version, payload_len = parse_header(head)
        template = self.templates.get(template_id)
        if template is None or template.version != version:
            raise TagCodecError(f"unknown template {template_id} v{version}")
        total = HEADER_SIZE + payload_len
        total_blocks = (total + bs - 1) // bs
        if total_blocks > header_blocks:
            head += reader.read_blocks(uid, header_blocks, total_blocks - header_blocks)
        img = TagImage(uid=uid, block_size=bs, block_count=total_blocks,
                       data=bytearray(head))
        return template, decode_record(template, img)

    def _write_field(self, port: int, uid: int, template: TagTemplate,
                     name: str, value: Any) -> None:
        """Patch a single field slot in place (read-modify-write on blocks)."""
        reader = self._reader(port)
        bs = reader.block_size
        off = HEADER_SIZE + template.field_offset(name)
        slot = _encode_slot(template.field(name), value)
        first = off // bs
        last = (off + len(slot) - 1) // bs
        blob = bytearray(reader.read_blocks(uid, first, last - first + 1))
        rel = off - first * bs
        blob[rel:rel + len(slot)] = slot
        reader.write_blocks(uid, first, bytes(blob))

    def on_tag_event(self, uid: int, port: int = 0) -> list[GateEffect]:
        """Handle a tag seen at a reader port: log, run rules, act."""
        effects: list[GateEffect] = []
        try:
            template, record = self._read_tag(port, uid)
        except TagNotInField:
            raise
        except TagCodecError:
            self._raise_alarm(effects, ALARM_UNKNOWN_TEMPLATE, port, uid, 0)
            return effects

        if self.profile.dedup_filter:
            last = self._last_logged_read.get(uid)
            now = self.clock.now_ms
            if last is not None and now - last < self.dedup_window_ms:
                self._emit(effects, "dedup_suppressed", uid=uid, port=port)
                return effects
            self._last_logged_read[uid] = now

        self._append_history(effects, port, uid, template.template_id,
                             HistoryEvent.READ, record_snapshot(template, record))
        self._run_rules(effects, TRIGGER_READ, None, port=port, uid=uid,
                        template=template, record=record)
        return effects

    def _run_rules(self, effects: list[GateEffect], trigger: str,
                   input_index: Optional[int], *, port: int = 0, uid: int = 0,
                   template: Optional[TagTemplate] = None,
                   record: Optional[dict] = None) -> None:
        lookup = (record or {}).get
        for rule in self.rules:
            if rule.trigger != trigger:
                continue
            if trigger == TRIGGER_INPUT and rule.input_index != input_index:
                continue
            if not rule.condition.evaluate(lookup):
                continue
            for action in rule.actions:
                if action.kind == ACTION_ALARM:
                    tid = template.template_id if template else 0
                    self._raise_alarm(effects, action.args[0], port, uid, tid)
                elif action.kind == ACTION_RELAY:
                    n, on = action.args
                    self.relays[n] = on
                    self._emit(effects, "relay", index=n, on=on)
                elif action.kind == ACTION_SET and template is not None and record is not None:
                    name, literal = action.args
                    self._write_field(port, uid, template, name, literal)
                    record[name] = literal  # later rules see the new value
                    self._emit(effects, "tag_write", uid=uid, field=name, value=literal)
                elif action.kind == ACTION_LOG:
                    if trigger == TRIGGER_INPUT:
                        snap = _pad_snapshot([input_index or 0, self.inputs[input_index or 0]])
                        self._append_history(effects, 0, 0, 0, HistoryEvent.INPUT, snap)
                    else:
                        # READ events are already logged once; LOG is a marker
                        self._emit(effects, "log", trigger=trigger, uid=uid)

    def io_update(self, input_index: int, level: int) -> list[GateEffect]:
        """Digital input change: update register, run ON INPUT rules on edges."""
        if not 0 <= input_index < self.profile.inputs:
            raise GateRangeError(
                f"input {input_index} outside {self.profile.name} profile "
                f"({self.profile.inputs} inputs)")
        effects: list[GateEffect] = []
        level = 1 if level else 0
        changed = self.inputs[input_index] != level
        self.inputs[input_index] = level
        self._emit(effects, "input", index=input_index, level=level)
        if changed:
            self._run_rules(effects, TRIGGER_INPUT, input_index)
        return effects

    def apply_pc_command(self, uid: int, field_index: int, value: int) -> tuple[int, list[GateEffect]]:
        """PC-initiated tag field modification; returns (mailbox status, effects)."""
        effects: list[GateEffect] = []
        if not self.profile.can_modify_tags:
            return MBX_CAPABILITY, effects
        port = self._find_port(uid)
        if port is None:
            return MBX_TAG_ABSENT, effects
        try:
            template, record = self._read_tag(port, uid)
        except TagCodecError:
            return MBX_BAD_FIELD, effects
        if not 0 <= field_index < len(template.fields):
            return MBX_BAD_FIELD, effects
        fdef = template.fields[field_index]
        if fdef.kind == KIND_INTEGER:
            if value >= 2**31:
                value -= 2**32  # mailbox carries raw u32; integers are signed
        elif fdef.kind != KIND_DATE:
            return MBX_BAD_FIELD, effects  # mailbox writes numeric fields only
        try:
            self._write_field(port, uid, template, fdef.name, value)
        except TagNotInField:
            return MBX_TAG_ABSENT, effects
        record[fdef.name] = value
        self._append_history(effects, port, uid, template.template_id,
                             HistoryEvent.WRITE, record_snapshot(template, record))
        self._emit(effects, "tag_write", uid=uid, field=fdef.name, value=value)
        return MBX_DONE, effects

    def _find_port(self, uid: int) -> Optional[int]:
        for port, reader in enumerate(self.readers):
            if uid in reader.inventory():
                return port
        return None

    # --- PC-facing surfaces ---

    def history_query(self, from_seq: int, max_records: int) -> list[HistoryRecord]:
        return self.history.query(from_seq, max_records)

    def registers(self) -> "GateRegisterFile":
        return self._registers

    def modbus_responder(self):
        """Byte-level responder suitable for SerialBus.attach_slave."""
        def responder(raw: bytes) -> Optional[bytes]:
            return modbus.slave_handle_raw(self._registers, raw, self.slave_addr)
        return responder


class GateRegisterFile(RegisterFile):
    """Register surface bound to one gate; see the module docstring map."""

    def __init__(self, gate: Gate) -> None:
        super().__init__()
        self.gate = gate
        self.declare_range(REG_STATUS, 6, readable=True, writable=False)
        self.declare_range(REG_ALARMS, 1, readable=True, writable=True)
        self.declare_range(REG_RELAYS, 1, readable=True, writable=True)
        self.declare_range(REG_MBX_BASE, 9, readable=True, writable=False)
        self.declare_range(REG_MBX_BASE, 8, readable=False, writable=True)
        self.declare_range(REG_WIN_FROM_HI, 5, readable=True, writable=False)
        self.declare_range(REG_WIN_FROM_HI, 2, readable=False, writable=True)
        self.declare_range(REG_WIN_DATA, HISTORY_WINDOW_RECORDS * (RECORD_SIZE // 2),
                           readable=True, writable=False)

    def _window(self) -> list[HistoryRecord]:
        from_seq = (self._values.get(REG_WIN_FROM_HI, 0) << 16) | self._values.get(REG_WIN_FROM_LO, 0)
        return self.gate.history_query(from_seq, HISTORY_WINDOW_RECORDS)

    def _get(self, addr: int) -> int:
        g = self.gate
        if addr == REG_STATUS:
            return (g.tier.value << 8) | 0x01
        if addr == REG_ALARMS:
            return g.alarm_flags
        if addr == REG_HIST_COUNT_HI:
            return (g.history.total_appended >> 16) & 0xFFFF
        if addr == REG_HIST_COUNT_LO:
            return g.history.total_appended & 0xFFFF
        if addr == REG_RELAYS:
            return sum(1 << i for i, on in enumerate(g.relays) if on)
        if addr == REG_INPUTS:
            return sum(1 << i for i, lv in enumerate(g.inputs) if lv)
        if addr == REG_MBX_CONTROL:
            return 0
        if addr == REG_MBX_STATUS:
            return g._mailbox_status
        if addr == REG_WIN_COUNT:
            return len(self._window())
        if addr == REG_WIN_FIRST_HI or addr == REG_WIN_FIRST_LO:
            window = self._window()
            first = window[0].seq if window else 0
            return (first >> 16) & 0xFFFF if addr == REG_WIN_FIRST_HI else first & 0xFFFF
        if REG_WIN_DATA <= addr < REG_WIN_DATA + HISTORY_WINDOW_RECORDS * (RECORD_SIZE // 2):
            window = self._window()
            idx = addr - REG_WIN_DATA
            rec_idx, word_idx = divmod(idx, RECORD_SIZE // 2)
            if rec_idx >= len(window):
                return 0
            blob = window[rec_idx].to_bytes()
            return struct.unpack(">H", blob[2 * word_idx:2 * word_idx + 2])[0]
        return super()._get(addr)

    def _set(self, addr: int, value: int) -> None:
        g = self.gate
        if addr == REG_ALARMS:
            g.alarm_flags &= value  # write 0 to clear, mask to keep selected bits
            return
        if addr == REG_RELAYS:
            for i in range(len(g.relays)):
                g.relays[i] = bool(value & (1 << i))
            return
        if addr == REG_MBX_CONTROL:
            if value:
                uid = ((self._values.get(REG_MBX_BASE, 0) << 48)
                       | (self._values.get(REG_MBX_BASE + 1, 0) << 32)
                       | (self._values.get(REG_MBX_BASE + 2, 0) << 16)
                       | self._values.get(REG_MBX_BASE + 3, 0))
                field_index = self._values.get(REG_MBX_BASE + 4, 0)
                raw_value = ((self._values.get(REG_MBX_BASE + 5, 0) << 16)
                             | self._values.get(REG_MBX_BASE + 6, 0))
                status, _ = g.apply_pc_command(uid, field_index, raw_value)
                g._mailbox_status = status
            return
        super()._set(addr, value)


class GateClient:
    """PC-side master for one gate on a shared RS485 bus."""

    def __init__(self, bus: SerialBus, slave_addr: int, timeout_ms: int = 50,
                 retries: int = 2) -> None:
        self.bus = bus
        self.slave_addr = slave_addr
        self.kw = {"timeout_ms": timeout_ms, "retries": retries}

    def _read(self, start: int, count: int) -> list[int]:
        return modbus.read_registers(self.bus, self.slave_addr, start, count, **self.kw)

    def history_count(self) -> int:
        hi, lo = self._read(REG_HIST_COUNT_HI, 2)
        return (hi << 16) | lo

    def alarm_flags(self) -> int:
        return self._read(REG_ALARMS, 1)[0]

    def clear_alarms(self, keep_mask: int = 0) -> None:
        modbus.write_register(self.bus, self.slave_addr, REG_ALARMS, keep_mask, **self.kw)

    def set_relays(self, mask: int) -> None:
        modbus.write_register(self.bus, self.slave_addr, REG_RELAYS, mask, **self.kw)

    def fetch_history(self, from_seq: int, max_records: int = 10_000) -> list[HistoryRecord]:
        """Pull records with seq >= from_seq through the register window."""
        out: list[HistoryRecord] = []
        cursor = from_seq
        while len(out) < max_records:
            modbus.write_registers(self.bus, self.slave_addr, REG_WIN_FROM_HI,
                                   [(cursor >> 16) & 0xFFFF, cursor & 0xFFFF], **self.kw)
            count = self._read(REG_WIN_COUNT, 1)[0]
            if count == 0:
                break
            hi, lo = self._read(REG_WIN_FIRST_HI, 2)
            first_seq = (hi << 16) | lo
            words = self._read(REG_WIN_DATA, count * (RECORD_SIZE // 2))
            blob = b"".join(struct.pack(">H", w) for w in words)
            for i in range(count):
                rec = HistoryRecord.from_bytes(blob[i * RECORD_SIZE:(i + 1) * RECORD_SIZE],
                                               seq=first_seq + i)
                out.append(rec)
                if len(out) >= max_records:
                    break
            cursor = first_seq + count
        return out

    def send_field_command(self, uid: int, field_index: int, value: int) -> int:
        """Mailbox write: modify one tag field; returns the mailbox status."""
        words = [(uid >> 48) & 0xFFFF, (uid >> 32) & 0xFFFF,
                 (uid >> 16) & 0xFFFF, uid & 0xFFFF,
                 field_index & 0xFFFF,
                 (value >> 16) & 0xFFFF, value & 0xFFFF]
        modbus.write_registers(self.bus, self.slave_addr, REG_MBX_BASE, words, **self.kw)
        modbus.write_register(self.bus, self.slave_addr, REG_MBX_CONTROL, 1, **self.kw)
        return self._read(REG_MBX_STATUS, 1)[0]
