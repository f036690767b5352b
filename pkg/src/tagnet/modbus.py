"""ModBus RTU framing, CRC-16, register files and master/slave transactions.

The PC-to-gate link is a simulated RS485 bus: a broadcast byte channel with
one master and any number of slaves. RTU silent-interval timing is replaced
by explicit frame delimiting (each bus send carries exactly one frame), so
runs are deterministic without modeling baud rates. Supported function
codes: 0x03 Read Holding Registers, 0x06 Write Single Register, 0x10 Write
Multiple Registers. Everything else raises an Illegal Function exception
frame, as a real slave would.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional

from .clock import SimClock

MAX_FRAME_LEN = 256
MAX_PAYLOAD_LEN = 252  # addr + fc + payload + crc16 <= 256
BROADCAST_ADDR = 0
MAX_SLAVE_ADDR = 247

FC_READ_HOLDING = 0x03
FC_WRITE_SINGLE = 0x06
FC_WRITE_MULTIPLE = 0x10

EXC_ILLEGAL_FUNCTION = 0x01
EXC_ILLEGAL_ADDRESS = 0x02
EXC_ILLEGAL_VALUE = 0x03


class ModbusError(Exception):
    pass


class FrameTooLong(ModbusError):
    pass


class BadAddress(ModbusError):
    pass


class CrcMismatch(ModbusError):
    pass


class TooShort(ModbusError):
    pass


class BusTimeout(ModbusError):
    pass


class ModbusExceptionResponse(ModbusError):
    """A slave answered with an exception frame."""

    def __init__(self, function: int, code: int) -> None:
        super().__init__(f"modbus exception fc=0x{function:02X} code=0x{code:02X}")
        self.function = function
        self.code = code


def crc16(data: bytes) -> int:
    """CRC-16/MODBUS: init 0xFFFF, reflected polynomial 0xA001."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xA001
            else:
                crc >>= 1
    return crc


@dataclass(frozen=True)
class ModbusFrame:
    slave_addr: int
    function: int
    payload: bytes = b""

    @property
    def is_exception(self) -> bool:
        return bool(self.function & 0x80)


def encode_frame(addr: int, function: int, payload: bytes = b"") -> bytes:
    if not 0 <= addr <= MAX_SLAVE_ADDR:
        raise BadAddress(f"slave address {addr} outside 0..247")
    if len(payload) > MAX_PAYLOAD_LEN:
        raise FrameTooLong(f"payload {len(payload)} bytes exceeds {MAX_PAYLOAD_LEN}")
    body = bytes([addr, function & 0xFF]) + payload
    return body + struct.pack("<H", crc16(body))


def decode_frame(raw: bytes) -> ModbusFrame:
    if len(raw) < 4:
        raise TooShort(f"frame of {len(raw)} bytes, need at least 4")
    body, wire_crc = raw[:-2], struct.unpack("<H", raw[-2:])[0]
    if crc16(body) != wire_crc:
        raise CrcMismatch("frame CRC check failed")
    return ModbusFrame(slave_addr=body[0], function=body[1], payload=bytes(body[2:]))


class RegisterAccessError(ModbusError):
    """Raised by register files; dispatched as a ModBus exception frame."""

    def __init__(self, code: int, message: str = "") -> None:
        super().__init__(message or f"register access error 0x{code:02X}")
        self.code = code


class RegisterFile:
    """16-bit holding registers with declared readable/writable ranges.

    Backing storage is a plain dict; subclasses may override `_get`/`_set`
    to expose computed registers or attach side effects (the control gate
    does exactly that). Reads and writes outside the declared ranges raise
    `RegisterAccessError(EXC_ILLEGAL_ADDRESS)`.
    """

    def __init__(self) -> None:
        self._ranges: list[tuple[int, int, bool, bool]] = []
        self._values: dict[int, int] = {}

    def declare_range(self, start: int, count: int, *, readable: bool = True,
                      writable: bool = False) -> None:
        self._ranges.append((start, count, readable, writable))

    def _access(self, addr: int) -> tuple[bool, bool]:
        readable = writable = False
        for start, count, r, w in self._ranges:
            if start <= addr < start + count:
                readable = readable or r
                writable = writable or w
        return readable, writable

    def read_register(self, addr: int) -> int:
        readable, _ = self._access(addr)
        if not readable:
            raise RegisterAccessError(EXC_ILLEGAL_ADDRESS, f"register 0x{addr:04X} not readable")
        return self._get(addr) & 0xFFFF

    def write_register(self, addr: int, value: int) -> None:
        _, writable = self._access(addr)
        if not writable:
            raise RegisterAccessError(EXC_ILLEGAL_ADDRESS, f"register 0x{addr:04X} not writable")
        self._set(addr, value & 0xFFFF)

    def _get(self, addr: int) -> int:
        return self._values.get(addr, 0)

    def _set(self, addr: int, value: int) -> None:
        self._values[addr] = value


def _exception_frame(req: ModbusFrame, code: int) -> ModbusFrame:
    return ModbusFrame(req.slave_addr, req.function | 0x80, bytes([code]))


def slave_dispatch(regs: RegisterFile, req: ModbusFrame, slave_addr: int) -> Optional[ModbusFrame]:
    """Serve one request against a register file.

    Returns the response frame, or None for silence (frame addressed to a
    different slave, or a broadcast; broadcast writes are applied but never
    answered). Errors come back as exception frames, never as raised faults.
    """
    if req.slave_addr not in (slave_addr, BROADCAST_ADDR):
        return None
    broadcast = req.slave_addr == BROADCAST_ADDR

    def reply(payload: bytes) -> Optional[ModbusFrame]:
        return None if broadcast else ModbusFrame(req.slave_addr, req.function, payload)

    def fail(code: int) -> Optional[ModbusFrame]:
        return None if broadcast else _exception_frame(req, code)

    p = req.payload
    if req.function == FC_READ_HOLDING:
        if broadcast:
            return None  # reads are not meaningful on broadcast
        if len(p) != 4:
            return fail(EXC_ILLEGAL_VALUE)
        start, count = struct.unpack(">HH", p)
        if not 1 <= count <= 125:
            return fail(EXC_ILLEGAL_VALUE)
        try:
            values = [regs.read_register(start + i) for i in range(count)]
        except RegisterAccessError as e:
            return fail(e.code)
        out = bytes([2 * count]) + b"".join(struct.pack(">H", v) for v in values)
        return reply(out)

    if req.function == FC_WRITE_SINGLE:
        if len(p) != 4:
            return fail(EXC_ILLEGAL_VALUE)
        addr, value = struct.unpack(">HH", p)
        try:
            regs.write_register(addr, value)
        except RegisterAccessError as e:
            return fail(e.code)
        return reply(p)  # single-write response echoes the request body

    if req.function == FC_WRITE_MULTIPLE:
        if len(p) < 5:
            return fail(EXC_ILLEGAL_VALUE)
        start, count, byte_count = struct.unpack(">HHB", p[:5])
        if not 1 <= count <= 123 or byte_count != 2 * count or len(p) != 5 + byte_count:
            return fail(EXC_ILLEGAL_VALUE)
        values = [struct.unpack(">H", p[5 + 2 * i:7 + 2 * i])[0] for i in range(count)]
        # validate the whole range before touching anything
        for i in range(count):
            _, writable = regs._access(start + i)
            if not writable:
                return fail(EXC_ILLEGAL_ADDRESS)
        try:
            for i, v in enumerate(values):
                regs.write_register(start + i, v)
        except RegisterAccessError as e:
            return fail(e.code)
        return reply(struct.pack(">HH", start, count))

    return fail(EXC_ILLEGAL_FUNCTION)


def slave_handle_raw(regs: RegisterFile, raw: bytes, slave_addr: int) -> Optional[bytes]:
    """Byte-level slave entry point: bad CRC or runt frames get silence."""
    try:
        frame = decode_frame(raw)
    except (CrcMismatch, TooShort):
        return None
    resp = slave_dispatch(regs, frame, slave_addr)
    if resp is None:
        return None
    return encode_frame(resp.slave_addr, resp.function, resp.payload)


class SerialBus:
    """Simulated RS485 bus: one master, many slaves, full transcript.

    Every frame that crosses the wire lands in `transcript` as
    (sim_time_ms, role, bytes) with role 'master' or 'slave'. Slaves are
    callables taking raw frame bytes and returning response bytes or None.
    """

    def __init__(self, clock: Optional[SimClock] = None) -> None:
        self.clock = clock
        self.transcript: list[tuple[int, str, bytes]] = []
        self._slaves: list[Callable[[bytes], Optional[bytes]]] = []

    def attach_slave(self, responder: Callable[[bytes], Optional[bytes]]) -> None:
        self._slaves.append(responder)

    def _t(self) -> int:
        return self.clock.now_ms if self.clock else 0

    def master_send(self, raw: bytes) -> list[bytes]:
        self.transcript.append((self._t(), "master", bytes(raw)))
        responses = []
        for responder in self._slaves:
            resp = responder(raw)
            if resp is not None:
                self.transcript.append((self._t(), "slave", bytes(resp)))
                responses.append(bytes(resp))
        return responses


def master_transact(bus: SerialBus, req: ModbusFrame, timeout_ms: int = 50,
                    retries: int = 2) -> Optional[ModbusFrame]:
    """Send a request and await the matching response.

    Broadcast requests return None immediately (no response expected).
    Retries up to `retries` extra attempts on timeout or CRC error; each
    failed attempt advances the bus clock by `timeout_ms`.
    """
    raw = encode_frame(req.slave_addr, req.function, req.payload)
    if req.slave_addr == BROADCAST_ADDR:
        bus.master_send(raw)
        return None
    crc_failure = None
    for _ in range(retries + 1):
        for resp_raw in bus.master_send(raw):
            try:
                resp = decode_frame(resp_raw)
            except (CrcMismatch, TooShort) as e:
                crc_failure = e
                continue
            if resp.slave_addr == req.slave_addr:
                return resp
        if bus.clock is not None:
            bus.clock.advance_ms(timeout_ms)
    if crc_failure is not None:
        raise CrcMismatch(f"no clean response after {retries + 1} attempts")
    raise BusTimeout(f"slave {req.slave_addr} silent after {retries + 1} attempts")


def read_registers(bus: SerialBus, slave_addr: int, start: int, count: int, **kw) -> list[int]:
    """Master-side FC 0x03 convenience; raises ModbusExceptionResponse on NAK."""
    req = ModbusFrame(slave_addr, FC_READ_HOLDING, struct.pack(">HH", start, count))
    resp = master_transact(bus, req, **kw)
    assert resp is not None
    if resp.is_exception:
        raise ModbusExceptionResponse(resp.function, resp.payload[0])
    n = resp.payload[0] // 2
    return [struct.unpack(">H", resp.payload[1 + 2 * i:3 + 2 * i])[0] for i in range(n)]


def write_register(bus: SerialBus, slave_addr: int, addr: int, value: int, **kw) -> None:
    req = ModbusFrame(slave_addr, FC_WRITE_SINGLE, struct.pack(">HH", addr, value & 0xFFFF))
    resp = master_transact(bus, req, **kw)
    if slave_addr == BROADCAST_ADDR:
        return
    assert resp is not None
    if resp.is_exception:
        raise ModbusExceptionResponse(resp.function, resp.payload[0])


def write_registers(bus: SerialBus, slave_addr: int, start: int, values: list[int], **kw) -> None:
    payload = struct.pack(">HHB", start, len(values), 2 * len(values))
    payload += b"".join(struct.pack(">H", v & 0xFFFF) for v in values)
    req = ModbusFrame(slave_addr, FC_WRITE_MULTIPLE, payload)
    resp = master_transact(bus, req, **kw)
    if slave_addr == BROADCAST_ADDR:
        return
    assert resp is not None
    if resp.is_exception:
        raise ModbusExceptionResponse(resp.function, resp.payload[0])
