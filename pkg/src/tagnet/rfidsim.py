"""Simulated passive HF tags, reader fields and the framed reader protocol.

Tags live in a TagWorld (UID-unique); a ReaderField models one reader's RF
field and answers the framed byte protocol a gate speaks over its serial
reader link. Anticollision is idealized: an inventory always returns every
present tag, UIDs ascending, so runs are deterministic.

Reader frame format (byte-exact):

    SOF 0xAA | length (cmd+payload) | cmd | payload... | CRC-16 lo, hi

CRC is the same algorithm as the ModBus link, computed over length..payload.
Malformed or CRC-corrupt frames get no response at all, like a real serial
device; protocol-level failures come back as status frames (cmd|0x80, code).
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .clock import SimClock
from .modbus import crc16
from .tagcodec import TagImage

SOF = 0xAA
MAX_BODY_LEN = 250  # length byte covers cmd + payload

CMD_INVENTORY = 0x01
CMD_READ = 0x02
CMD_WRITE = 0x03

ST_BAD_CMD = 0x01
ST_TAG_ABSENT = 0x02
ST_RANGE = 0x03
ST_PROTECTED = 0x04


class RfidError(Exception):
    pass


class DuplicateUid(RfidError):
    pass


class BadUid(RfidError):
    pass


class TagNotInField(RfidError):
    pass


class BlockRangeError(RfidError):
    pass


class WriteProtected(RfidError):
    pass


@dataclass
class SimTag:
    """A passive tag: memory image, presence, per-block write protection."""

    image: TagImage
    present_in: Optional[str] = None  # reader_id of the field it sits in
    protected: set = field(default_factory=set)

    @property
    def uid(self) -> int:
        return self.image.uid

    def protect_blocks(self, start: int, count: int) -> None:
        if start < 0 or start + count > self.image.block_count:
            raise BlockRangeError("protect range out of bounds")
        self.protected.update(range(start, start + count))


class TagWorld:
    """Owns every simulated tag; enforces world-wide UID uniqueness."""

    def __init__(self, clock: Optional[SimClock] = None) -> None:
        self.clock = clock or SimClock()
        self.tags: dict[int, SimTag] = {}
        self.fields: dict[str, "ReaderField"] = {}

    def create_tag(self, uid: int, capacity: int = 256, block_size: int = 4) -> SimTag:
        """New tag, all data blocks zeroed, unprotected, out of any field."""
        if uid == 0:
            raise BadUid("UID 0 is reserved")
        if not 0 < uid < 2**64:
            raise BadUid(f"UID {uid} outside 64-bit range")
        if uid in self.tags:
            raise DuplicateUid(f"UID {uid} already exists in this world")
        if capacity % block_size != 0:
            raise RfidError("capacity must be a whole number of blocks")
        tag = SimTag(image=TagImage(uid=uid, block_size=block_size,
                                    block_count=capacity // block_size))
        self.tags[uid] = tag
        return tag

    def create_field(self, reader_id: str) -> "ReaderField":
        if reader_id in self.fields:
            raise RfidError(f"reader field {reader_id!r} already exists")
        f = ReaderField(self, reader_id)
        self.fields[reader_id] = f
        return f

    def tag(self, uid: int) -> SimTag:
        if uid not in self.tags:
            raise BadUid(f"unknown UID {uid}")
        return self.tags[uid]


class ReaderField:
    """One reader's RF field: the set of tags currently present."""

    def __init__(self, world: TagWorld, reader_id: str) -> None:
        self.world = world
        self.reader_id = reader_id

    def enter(self, uid: int) -> None:
        """Bring a tag into this field (moving it out of any other)."""
        self.world.tag(uid).present_in = self.reader_id

    def leave(self, uid: int) -> None:
        tag = self.world.tag(uid)
        if tag.present_in == self.reader_id:
            tag.present_in = None

    def _present_tag(self, uid: int) -> SimTag:
        tag = self.world.tags.get(uid)
        if tag is None or tag.present_in != self.reader_id:
            raise TagNotInField(f"UID {uid} not in field {self.reader_id!r}")
        return tag

    def inventory(self) -> list[int]:
        """Exactly the present UIDs, ascending."""
        return sorted(uid for uid, t in self.world.tags.items()
                      if t.present_in == self.reader_id)

    def read_blocks(self, uid: int, start: int, count: int) -> bytes:
        tag = self._present_tag(uid)
        if start < 0 or count < 0 or start + count > tag.image.block_count:
            raise BlockRangeError(f"blocks {start}..{start + count} out of bounds")
        return tag.image.read_blocks(start, count)

    def write_blocks(self, uid: int, start: int, blob: bytes) -> None:
        """All-or-nothing block write; every check runs before any byte moves."""
        tag = self._present_tag(uid)
        bs = tag.image.block_size
        if len(blob) == 0 or len(blob) % bs != 0:
            raise BlockRangeError("write length must be a non-zero multiple of block size")
        count = len(blob) // bs
        if start < 0 or start + count > tag.image.block_count:
            raise BlockRangeError(f"blocks {start}..{start + count} out of bounds")
        hit = [b for b in range(start, start + count) if b in tag.protected]
        if hit:
            raise WriteProtected(f"blocks {hit} are write-protected")
        tag.image.write_blocks(start, blob)

    def handle_frame(self, raw: bytes) -> bytes:
        return handle_reader_frame(self, raw)


def encode_reader_frame(cmd: int, payload: bytes = b"") -> bytes:
    body_len = 1 + len(payload)
    if body_len > MAX_BODY_LEN:
        raise RfidError(f"frame body {body_len} bytes exceeds {MAX_BODY_LEN}")
    body = bytes([body_len, cmd]) + payload
    return bytes([SOF]) + body + struct.pack("<H", crc16(body))


def decode_reader_frame(raw: bytes) -> Optional[tuple[int, bytes]]:
    """(cmd, payload) for a well-formed frame, else None (silence)."""
    if len(raw) < 5 or raw[0] != SOF:
        return None
    body_len = raw[1]
    if body_len < 1 or body_len > MAX_BODY_LEN or len(raw) != 2 + body_len + 2:
        return None
    body = raw[1:2 + body_len]
    if struct.unpack("<H", raw[-2:])[0] != crc16(body):
        return None
    return body[1], bytes(body[2:])


def _status_frame(cmd: int, code: int) -> bytes:
    return encode_reader_frame((cmd | 0x80) & 0xFF, bytes([code]))


def handle_reader_frame(field: ReaderField, raw: bytes) -> bytes:
    """Serve one reader-link frame; b'' means silence (malformed/bad CRC)."""
    decoded = decode_reader_frame(bytes(raw))
    if decoded is None:
        return b""
    cmd, payload = decoded

    if cmd == CMD_INVENTORY:
        uids = field.inventory()
        max_listed = (MAX_BODY_LEN - 2) // 8  # what fits in one response frame
        uids = uids[:max_listed]
        out = bytes([len(uids)]) + b"".join(struct.pack(">Q", u) for u in uids)
        return encode_reader_frame(cmd, out)

    if cmd == CMD_READ:
        if len(payload) != 12:
            return _status_frame(cmd, ST_BAD_CMD)
        uid, start, count = struct.unpack(">QHH", payload)
        try:
            data = field.read_blocks(uid, start, count)
        except TagNotInField:
            return _status_frame(cmd, ST_TAG_ABSENT)
        except BlockRangeError:
            return _status_frame(cmd, ST_RANGE)
        if 1 + len(data) > MAX_BODY_LEN:
            return _status_frame(cmd, ST_RANGE)
        return encode_reader_frame(cmd, data)

    if cmd == CMD_WRITE:
        if len(payload) < 10:
            return _status_frame(cmd, ST_BAD_CMD)
        uid, start = struct.unpack(">QH", payload[:10])
        try:
            field.write_blocks(uid, start, payload[10:])
        except TagNotInField:
            return _status_frame(cmd, ST_TAG_ABSENT)
        except BlockRangeError:
            return _status_frame(cmd, ST_RANGE)
        except WriteProtected:
            return _status_frame(cmd, ST_PROTECTED)
        return encode_reader_frame(cmd, b"\x00")

    return _status_frame(cmd, ST_BAD_CMD)


class ReaderLink:
    """The simulated RS232 line between one gate port and one reader.

    A byte-stream channel pair: send() pushes a frame toward the reader,
    receive() pops whatever the reader answered (b'' when it stayed silent).
    """

    def __init__(self, field: ReaderField) -> None:
        self.field = field
        self._rx: deque[bytes] = deque()

    def send(self, raw: bytes) -> None:
        resp = self.field.handle_frame(raw)
        if resp:
            self._rx.append(resp)

    def receive(self) -> bytes:
        return self._rx.popleft() if self._rx else b""

    def transact(self, raw: bytes) -> bytes:
        self.send(raw)
        return self.receive()


class ReaderClient:
    """Gate-side convenience wrapper: block access over a ReaderLink.

    Splits large transfers across frames so no frame body exceeds the wire
    limit. Raises the same exceptions as direct field access.
    """

    _ERRORS = {ST_TAG_ABSENT: TagNotInField, ST_RANGE: BlockRangeError,
               ST_PROTECTED: WriteProtected}

    def __init__(self, link: ReaderLink, block_size: int = 4) -> None:
        self.link = link
        self.block_size = block_size
        # blocks per frame, limited by the response/request body budget
        self._chunk = max(1, (MAX_BODY_LEN - 16) // block_size)

    def _transact(self, cmd: int, payload: bytes) -> bytes:
        resp = self.link.transact(encode_reader_frame(cmd, payload))
        decoded = decode_reader_frame(resp)
        if decoded is None:
            raise RfidError("reader stayed silent")
        rcmd, rpayload = decoded
        if rcmd == (cmd | 0x80):
            code = rpayload[0] if rpayload else 0
            exc = self._ERRORS.get(code, RfidError)
            raise exc(f"reader status 0x{code:02X}")
        return rpayload

    def inventory(self) -> list[int]:
        payload = self._transact(CMD_INVENTORY, b"")
        n = payload[0]
        return [struct.unpack(">Q", payload[1 + 8 * i:9 + 8 * i])[0] for i in range(n)]

    def read_blocks(self, uid: int, start: int, count: int) -> bytes:
        out = b""
        done = 0
        while done < count:
            step = min(self._chunk, count - done)
            out += self._transact(CMD_READ, struct.pack(">QHH", uid, start + done, step))
            done += step
        return out

    def write_blocks(self, uid: int, start: int, blob: bytes) -> None:
        bs = self.block_size
        total = len(blob) // bs
        done = 0
        while done < total:
            step = min(self._chunk, total - done)
            chunk = blob[done * bs:(done + step) * bs]
            self._transact(CMD_WRITE, struct.pack(">QH", uid, start + done) + chunk)
            done += step
