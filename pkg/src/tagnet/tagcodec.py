"""Typed tag templates and the fixed-layout binary codec for tag memory.

A template is an ordered list of typed fields plus display groups; encoding
a record lays every field out at a fixed offset so a gate can later patch a
single field in place. All multi-byte values are big-endian. The on-tag
header (8 bytes, blocks 0..1 at the default 4-byte block size) lets any
reader pick the right template before decoding:

    magic 0xB2 | template_id u16 | version u8 | payload_len u16 | pad u16

Field slot sizes: character 1 byte, string maxlen+1 bytes (length byte then
fixed buffer), integer 4 bytes signed, real 8 bytes IEEE-754, date 4 bytes
unsigned epoch seconds UTC.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Optional, Union

HEADER_MAGIC = 0xB2
HEADER_SIZE = 8
DEFAULT_BLOCK_SIZE = 4
DEFAULT_BLOCK_COUNT = 64
DEFAULT_CAPACITY = DEFAULT_BLOCK_SIZE * DEFAULT_BLOCK_COUNT

KIND_CHARACTER = "character"
KIND_STRING = "string"
KIND_INTEGER = "integer"
KIND_REAL = "real"
KIND_DATE = "date"
KINDS = (KIND_CHARACTER, KIND_STRING, KIND_INTEGER, KIND_REAL, KIND_DATE)

NAME_RE = re.compile(r"^[A-Z0-9_]+$")
MAX_NAME_LEN = 24
MAX_STRING_LEN = 64

INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1
UINT32_MAX = 2**32 - 1


class TagCodecError(Exception):
    pass


class RecordMismatch(TagCodecError):
    """Record does not match the template: wrong keys or out-of-range value."""


class HeaderMismatch(TagCodecError):
    """Image header magic/template_id/version disagree with the template."""


class TruncatedImage(TagCodecError):
    """Image too small for the header plus declared payload."""


class PayloadCorrupt(TagCodecError):
    """In-payload bytes are not a valid encoding (e.g. bad string length)."""


class TemplateInvalid(TagCodecError):
    def __init__(self, violations: list["Violation"]) -> None:
        super().__init__("; ".join(v.message for v in violations))
        self.violations = violations


class TemplateSyntaxError(TagCodecError):
    def __init__(self, message: str, line: Optional[int] = None, col: Optional[int] = None) -> None:
        where = f" (line {line}, col {col})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.col = col


class TemplateSemanticError(TemplateInvalid):
    pass


@dataclass(frozen=True)
class FieldDef:
    name: str
    kind: str
    group_id: int
    maxlen: Optional[int] = None  # strings only

    def slot_size(self) -> int:
        if self.kind == KIND_CHARACTER:
            return 1
        if self.kind == KIND_STRING:
            return (self.maxlen or 0) + 1
        if self.kind == KIND_INTEGER or self.kind == KIND_DATE:
            return 4
        if self.kind == KIND_REAL:
            return 8
        raise TagCodecError(f"unknown field kind {self.kind!r}")


@dataclass(frozen=True)
class VisualGroup:
    group_id: int
    title: str


@dataclass(frozen=True)
class TagTemplate:
    template_id: int
    version: int
    name: str
    fields: tuple[FieldDef, ...]
    groups: tuple[VisualGroup, ...]

    def payload_size(self) -> int:
        return sum(f.slot_size() for f in self.fields)

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def field(self, name: str) -> FieldDef:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def field_offset(self, name: str) -> int:
        """Byte offset of the field's slot within the payload area."""
        off = 0
        for f in self.fields:
            if f.name == name:
                return off
            off += f.slot_size()
        raise KeyError(name)

    def group_members(self, group_id: int) -> list[FieldDef]:
        return [f for f in self.fields if f.group_id == group_id]


# A record is a plain dict: field name -> typed value. character: 1-char
# str, string: str, integer: int, real: float, date: int epoch seconds.
TagRecord = dict


@dataclass
class TagImage:
    """Block-structured tag memory: 64-bit UID plus user-memory blocks."""

    uid: int
    block_size: int = DEFAULT_BLOCK_SIZE
    block_count: int = DEFAULT_BLOCK_COUNT
    data: bytearray = field(default_factory=bytearray)

    def __post_init__(self) -> None:
        cap = self.block_size * self.block_count
        if not self.data:
            self.data = bytearray(cap)
        elif len(self.data) != cap:
            raise TagCodecError(f"image data {len(self.data)} bytes != capacity {cap}")

    @property
    def capacity(self) -> int:
        return self.block_size * self.block_count

    def read_blocks(self, start: int, count: int) -> bytes:
        if start < 0 or count < 0 or start + count > self.block_count:
            raise TagCodecError("block range out of bounds")
        return bytes(self.data[start * self.block_size:(start + count) * self.block_size])

    def write_blocks(self, start: int, blob: bytes) -> None:
        if len(blob) % self.block_size != 0:
            raise TagCodecError("write length must be a multiple of block size")
        count = len(blob) // self.block_size
        if start < 0 or start + count > self.block_count:
            raise TagCodecError("block range out of bounds")
        self.data[start * self.block_size:start * self.block_size + len(blob)] = blob


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


def validate_template(t: TagTemplate, capacity: Optional[int] = DEFAULT_CAPACITY) -> list[Violation]:
    """Check every template invariant; empty list means ok.

    Violations are data, not faults. Pass capacity=None to skip the fit
    check (used when the target tag geometry is not yet known).
    """
    out: list[Violation] = []
    if not 1 <= t.template_id <= 0xFFFF:
        out.append(Violation("bad id", str(t.template_id),
                             f"template_id {t.template_id} outside 1..65535"))
    if not 0 <= t.version <= 0xFF:
        out.append(Violation("bad version", str(t.version),
                             f"version {t.version} outside 0..255"))
    group_ids = [g.group_id for g in t.groups]
    for gid in set(group_ids):
        if group_ids.count(gid) > 1:
            out.append(Violation("duplicate group", str(gid), f"group id {gid} declared twice"))
    seen: set[str] = set()
    for f in t.fields:
        if f.name in seen:
            out.append(Violation("duplicate field", f.name, f"duplicate field {f.name}"))
        seen.add(f.name)
        if not NAME_RE.match(f.name) or len(f.name) > MAX_NAME_LEN:
            out.append(Violation("bad name", f.name,
                                 f"field name {f.name!r} must match [A-Z0-9_]+ and be <= 24 chars"))
        if f.kind not in KINDS:
            out.append(Violation("bad type", f.name, f"field {f.name} has unknown type {f.kind!r}"))
        if f.kind == KIND_STRING and not (f.maxlen and 1 <= f.maxlen <= MAX_STRING_LEN):
            out.append(Violation("bad maxlen", f.name,
                                 f"field {f.name} string maxlen must be in 1..64"))
        if f.group_id not in group_ids:
            out.append(Violation("unknown group", f.name,
                                 f"field {f.name} references undeclared group {f.group_id}"))
    # Layout size is undefined while any field kind is unknown
    if capacity is not None and all(f.kind in KINDS for f in t.fields):
        need = HEADER_SIZE + t.payload_size()
        if need > capacity:
            out.append(Violation("overflow", t.name,
                                 f"layout needs {need} bytes but tag holds {capacity}"))
    return out


def _check_value(f: FieldDef, value: Any) -> None:
    if f.kind == KIND_CHARACTER:
        if not (isinstance(value, str) and len(value) == 1 and ord(value) <= 0xFF):
            raise RecordMismatch(f"field {f.name}: expected single latin-1 character")
    elif f.kind == KIND_STRING:
        if not isinstance(value, str):
            raise RecordMismatch(f"field {f.name}: expected string")
        if len(value.encode("utf-8")) > (f.maxlen or 0):
            raise RecordMismatch(f"field {f.name}: string exceeds maxlen {f.maxlen}")
    elif f.kind == KIND_INTEGER:
        if not isinstance(value, int) or isinstance(value, bool) or not INT32_MIN <= value <= INT32_MAX:
            raise RecordMismatch(f"field {f.name}: expected signed 32-bit integer")
    elif f.kind == KIND_DATE:
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= UINT32_MAX:
            raise RecordMismatch(f"field {f.name}: expected epoch seconds in 0..2^32-1")
    elif f.kind == KIND_REAL:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise RecordMismatch(f"field {f.name}: expected real number")


def _encode_slot(f: FieldDef, value: Any) -> bytes:
    if f.kind == KIND_CHARACTER:
        return bytes([ord(value)])
    if f.kind == KIND_STRING:
        raw = value.encode("utf-8")
        return bytes([len(raw)]) + raw + b"\x00" * ((f.maxlen or 0) - len(raw))
    if f.kind == KIND_INTEGER:
        return struct.pack(">i", value)
    if f.kind == KIND_DATE:
        return struct.pack(">I", value)
    return struct.pack(">d", float(value))


def _decode_slot(f: FieldDef, blob: bytes) -> Any:
    if f.kind == KIND_CHARACTER:
        return chr(blob[0])
    if f.kind == KIND_STRING:
        n = blob[0]
        if n > (f.maxlen or 0):
            raise PayloadCorrupt(f"field {f.name}: string length byte {n} > maxlen")
        try:
            return blob[1:1 + n].decode("utf-8")
        except UnicodeDecodeError as e:
            raise PayloadCorrupt(f"field {f.name}: invalid UTF-8") from e
    if f.kind == KIND_INTEGER:
        return struct.unpack(">i", blob)[0]
    if f.kind == KIND_DATE:
        return struct.unpack(">I", blob)[0]
    return struct.unpack(">d", blob)[0]


def check_record(t: TagTemplate, r: TagRecord) -> None:
    """Raise RecordMismatch unless r's key set and values match t exactly."""
    missing = [f.name for f in t.fields if f.name not in r]
    extra = [k for k in r if k not in {f.name for f in t.fields}]
    if missing or extra:
        raise RecordMismatch(f"record keys do not match template"
                             f"{': missing ' + ','.join(missing) if missing else ''}"
                             f"{'; extra ' + ','.join(extra) if extra else ''}")
    for f in t.fields:
        _check_value(f, r[f.name])


def encode_record(t: TagTemplate, r: TagRecord, uid: int, *,
                  block_size: int = DEFAULT_BLOCK_SIZE,
                  block_count: int = DEFAULT_BLOCK_COUNT) -> TagImage:
    """Encode a record onto a fresh tag image. Unused tail bytes stay zero."""
    capacity = block_size * block_count
    violations = validate_template(t, capacity)
    if violations:
        raise TemplateInvalid(violations)
    check_record(t, r)
    img = TagImage(uid=uid, block_size=block_size, block_count=block_count)
    payload_len = t.payload_size()
    header = struct.pack(">BHBH", HEADER_MAGIC, t.template_id, t.version, payload_len) + b"\x00\x00"
    img.data[0:HEADER_SIZE] = header
    off = HEADER_SIZE
    for f in t.fields:
        slot = _encode_slot(f, r[f.name])
        img.data[off:off + len(slot)] = slot
        off += len(slot)
    return img


def parse_header(data: bytes) -> tuple[int, int, int]:
    """Return (template_id, version, payload_len); raises on bad magic/size."""
    if len(data) < HEADER_SIZE:
        raise TruncatedImage(f"need {HEADER_SIZE} header bytes, have {len(data)}")
    magic, template_id, version, payload_len = struct.unpack(">BHBH", data[:6])
    if magic != HEADER_MAGIC:
        raise HeaderMismatch(f"bad magic 0x{magic:02X}")
    return template_id, version, payload_len


def decode_record(t: TagTemplate, img: TagImage) -> TagRecord:
    """Exact inverse of encode_record for a matching template."""
    template_id, version, payload_len = parse_header(bytes(img.data))
    if template_id != t.template_id:
        raise HeaderMismatch(f"image template_id {template_id} != template {t.template_id}")
    if version != t.version:
        raise HeaderMismatch(f"image version {version} != template {t.version}")
    if payload_len != t.payload_size():
        raise HeaderMismatch(f"declared payload {payload_len} != template layout {t.payload_size()}")
    if HEADER_SIZE + payload_len > img.capacity:
        raise TruncatedImage("image smaller than header plus declared payload")
    out: TagRecord = {}
    off = HEADER_SIZE
    for f in t.fields:
        size = f.slot_size()
        out[f.name] = _decode_slot(f, bytes(img.data[off:off + size]))
        off += size
    return out


def render_date(epoch_s: int) -> str:
    """Render epoch seconds as M/D/YYYY H:MM in UTC (no leading zeros)."""
    dt = datetime.fromtimestamp(epoch_s, tz=timezone.utc)
    return f"{dt.month}/{dt.day}/{dt.year} {dt.hour}:{dt.minute:02d}"


def render_value(f: FieldDef, value: Any) -> str:
    if f.kind == KIND_DATE:
        return render_date(value)
    if f.kind == KIND_REAL:
        return str(float(value))
    return str(value)


@dataclass(frozen=True)
class GroupView:
    group_id: int
    title: str
    rows: tuple[tuple[str, str], ...]  # (field name, rendered value)


def layout_groups(t: TagTemplate, r: TagRecord) -> list[GroupView]:
    """Display model: every field exactly once, under its group, in order."""
    check_record(t, r)
    views = []
    for g in t.groups:
        rows = tuple((f.name, render_value(f, r[f.name])) for f in t.group_members(g.group_id))
        views.append(GroupView(group_id=g.group_id, title=g.title, rows=rows))
    return views


# --- template transfer file (UTF-8 JSON) ---

def _field_type_to_json(f: FieldDef) -> Union[str, dict]:
    if f.kind == KIND_STRING:
        return {"string": f.maxlen}
    return f.kind


def template_to_dict(t: TagTemplate) -> dict:
    return {
        "template_id": t.template_id,
        "version": t.version,
        "name": t.name,
        "groups": [{"id": g.group_id, "title": g.title} for g in t.groups],
        "fields": [{"name": f.name, "type": _field_type_to_json(f), "group": f.group_id}
                   for f in t.fields],
    }


def emit_template_file(t: TagTemplate) -> bytes:
    return (json.dumps(template_to_dict(t), indent=2) + "\n").encode("utf-8")


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise TemplateSyntaxError(message)


def template_from_dict(doc: Any) -> TagTemplate:
    """Build a template from the transfer-file JSON structure (unvalidated)."""
    _expect(isinstance(doc, dict), "top level must be a JSON object")
    for key in ("template_id", "version", "name", "groups", "fields"):
        _expect(key in doc, f"missing key {key!r}")
    _expect(isinstance(doc["template_id"], int), "template_id must be an integer")
    _expect(isinstance(doc["version"], int), "version must be an integer")
    _expect(isinstance(doc["name"], str), "name must be a string")
    _expect(isinstance(doc["groups"], list), "groups must be an array")
    _expect(isinstance(doc["fields"], list), "fields must be an array")
    groups = []
    for i, g in enumerate(doc["groups"]):
        _expect(isinstance(g, dict) and isinstance(g.get("id"), int)
                and isinstance(g.get("title"), str), f"groups[{i}] must be {{id, title}}")
        groups.append(VisualGroup(group_id=g["id"], title=g["title"]))
    fields = []
    for i, f in enumerate(doc["fields"]):
        _expect(isinstance(f, dict) and isinstance(f.get("name"), str)
                and isinstance(f.get("group"), int), f"fields[{i}] must be {{name, type, group}}")
        ftype = f.get("type")
        if isinstance(ftype, str):
            _expect(ftype in (KIND_CHARACTER, KIND_INTEGER, KIND_REAL, KIND_DATE),
                    f"fields[{i}]: unknown type token {ftype!r}")
            fields.append(FieldDef(name=f["name"], kind=ftype, group_id=f["group"]))
        elif isinstance(ftype, dict) and set(ftype) == {"string"}:
            _expect(isinstance(ftype["string"], int), f"fields[{i}]: string maxlen must be an integer")
            fields.append(FieldDef(name=f["name"], kind=KIND_STRING,
                                   group_id=f["group"], maxlen=ftype["string"]))
        else:
            raise TemplateSyntaxError(f"fields[{i}]: unknown type token {ftype!r}")
    return TagTemplate(template_id=doc["template_id"], version=doc["version"],
                       name=doc["name"], fields=tuple(fields), groups=tuple(groups))


def parse_template_file(data: bytes) -> TagTemplate:
    """Parse and validate a template transfer file.

    Raises TemplateSyntaxError (with line/position for malformed JSON) or
    TemplateSemanticError when the structure parses but the template breaks
    an invariant. The capacity fit check is deferred to deployment time.
    """
    try:
        doc = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise TemplateSyntaxError(f"not valid UTF-8: {e}") from e
    except json.JSONDecodeError as e:
        raise TemplateSyntaxError(e.msg, line=e.lineno, col=e.colno) from e
    t = template_from_dict(doc)
    violations = validate_template(t, capacity=None)
    if violations:
        raise TemplateSemanticError(violations)
    return t
