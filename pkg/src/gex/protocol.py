"""Bit-exact servo bus codec: framing, byte stuffing, CRC-16, stream decode.

Frame layout (all multi-byte fields little-endian):

    FF FF FD 00 | id | len_lo len_hi | body... | crc_lo crc_hi

`len` counts body + 2 CRC bytes. The body is the instruction byte (plus
the error byte for status frames) followed by parameters, with every
FF FF FD occurrence escaped as FF FF FD FD so the header pattern cannot
appear inside a frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .errors import ProtocolError

HEADER = bytes((0xFF, 0xFF, 0xFD, 0x00))
BROADCAST_ID = 0xFE
MAX_PARAMS = 1024
# Worst-case stuffed body: instruction + error + params + one escape per
# three payload bytes + CRC, rounded up.
MAX_FRAME = 7 + 2 + MAX_PARAMS + MAX_PARAMS // 3 + 2 + 16

ERRBIT_ALERT = 0x80
ERR_ACCESS = 0x07
ERR_DATA_RANGE = 0x04


class Instruction(IntEnum):
    PING = 0x01
    READ = 0x02
    WRITE = 0x03
    SYNC_READ = 0x82
    SYNC_WRITE = 0x83
    STATUS = 0x55


@dataclass(frozen=True)
class InstructionPacket:
    id: int
    instruction: Instruction
    params: bytes = b""

    def validate(self) -> None:
        if not (0 <= self.id <= 253 or self.id == BROADCAST_ID):
            raise ProtocolError(f"bad packet id {self.id}")
        if self.instruction == Instruction.STATUS:
            raise ProtocolError("STATUS is not a valid instruction to send")
        if self.instruction in (Instruction.SYNC_READ, Instruction.SYNC_WRITE):
            if self.id != BROADCAST_ID:
                raise ProtocolError("sync instructions must use the broadcast id")
        if len(self.params) > MAX_PARAMS:
            raise ProtocolError(f"params too long ({len(self.params)} > {MAX_PARAMS})")


@dataclass(frozen=True)
class StatusPacket:
    id: int
    error: int = 0
    params: bytes = b""

    @property
    def alert(self) -> bool:
        return bool(self.error & ERRBIT_ALERT)

    @property
    def error_code(self) -> int:
        return self.error & ~ERRBIT_ALERT


def _build_crc_table(poly: int = 0x8005) -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ poly) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _build_crc_table()


def crc16(data: bytes, crc: int = 0) -> int:
    """CRC-16 (poly 0x8005, init 0, MSB-first). Pass a previous value in
    `crc` to continue a streaming computation."""
    for b in data:
        crc = ((crc << 8) ^ _CRC_TABLE[((crc >> 8) ^ b) & 0xFF]) & 0xFFFF
    return crc


def stuff(payload: bytes) -> bytes:
    """Escape header patterns: each FF FF FD becomes FF FF FD FD."""
    out = bytearray()
    for b in payload:
        out.append(b)
        if b == 0xFD and len(out) >= 3 and out[-3] == 0xFF and out[-2] == 0xFF:
            out.append(0xFD)
    return bytes(out)


def unstuff(payload: bytes) -> bytes:
    """Inverse of stuff(). Raises on a header pattern not followed by the
    escape byte (including at end of stream)."""
    out = bytearray()
    i, n = 0, len(payload)
    while i < n:
        out.append(payload[i])
        i += 1
        if len(out) >= 3 and out[-3] == 0xFF and out[-2] == 0xFF and out[-1] == 0xFD:
            if i < n and payload[i] == 0xFD:
                i += 1
            else:
                raise ProtocolError("dangling header pattern in stuffed payload")
    return bytes(out)


def _frame(dev_id: int, body: bytes) -> bytes:
    stuffed = stuff(body)
    length = len(stuffed) + 2
    head = HEADER + bytes((dev_id,)) + struct.pack("<H", length)
    crc = crc16(head + stuffed)
    return head + stuffed + struct.pack("<H", crc)


def encode(pkt: InstructionPacket) -> bytes:
    pkt.validate()
    return _frame(pkt.id, bytes((pkt.instruction,)) + pkt.params)


def encode_status(pkt: StatusPacket) -> bytes:
    if not 0 <= pkt.id <= 253:
        raise ProtocolError(f"bad status id {pkt.id}")
    if len(pkt.params) > MAX_PARAMS:
        raise ProtocolError("status params too long")
    body = bytes((Instruction.STATUS, pkt.error & 0xFF)) + pkt.params
    return _frame(pkt.id, body)


_INSTRUCTION_VALUES = {int(v) for v in Instruction}


class StreamDecoder:
    """Incremental frame scanner tolerant of garbage, splits, and corruption.

    Feed arbitrary byte chunks; well-formed frames come back in order. A
    frame failing its CRC (or otherwise malformed) is dropped and scanning
    resumes one byte past its header, bumping `resync_count`.
    """

    def __init__(self, max_frame: int = MAX_FRAME):
        self.max_frame = max_frame
        self._buf = bytearray()
        self.resync_count = 0

    def feed(self, data: bytes) -> list[InstructionPacket | StatusPacket]:
        self._buf.extend(data)
        out = []
        while True:
            pkt = self._scan_one()
            if pkt is None:
                return out
            out.append(pkt)

    def pending_bytes(self) -> int:
        return len(self._buf)

    def _resync(self, header_at: int) -> None:
        del self._buf[: header_at + 1]
        self.resync_count += 1

    def _scan_one(self):
        buf = self._buf
        while True:
            start = bytes(buf).find(HEADER)
            if start < 0:
                # Keep a possible partial header tail, drop the rest.
                if len(buf) > len(HEADER) - 1:
                    del buf[: len(buf) - (len(HEADER) - 1)]
                return None
            if start:
                del buf[:start]
            if len(buf) < 7:
                return None
            length = buf[5] | (buf[6] << 8)
            total = 7 + length
            if length < 3 or total > self.max_frame:
                self._resync(0)
                continue
            if len(buf) < total:
                return None
            frame = bytes(buf[:total])
            crc_got = frame[-2] | (frame[-1] << 8)
            if crc16(frame[:-2]) != crc_got:
                self._resync(0)
                continue
            try:
                body = unstuff(frame[7:-2])
            except ProtocolError:
                self._resync(0)
                continue
            pkt = self._parse_body(frame[4], body)
            if pkt is None:
                self._resync(0)
                continue
            del buf[:total]
            return pkt

    @staticmethod
    def _parse_body(dev_id: int, body: bytes):
        if not body or body[0] not in _INSTRUCTION_VALUES:
            return None
        instr = Instruction(body[0])
        if instr == Instruction.STATUS:
            if len(body) < 2 or dev_id == BROADCAST_ID:
                return None
            return StatusPacket(id=dev_id, error=body[1], params=body[2:])
        return InstructionPacket(id=dev_id, instruction=instr, params=body[1:])


def build_sync_write(addr: int, width: int, entries: list[tuple[int, bytes]]) -> InstructionPacket:
    """SYNC_WRITE one register block to many servos in a single frame."""
    ids = [e[0] for e in entries]
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate servo id in sync write")
    params = bytearray(struct.pack("<HH", addr, width))
    for dev_id, value in entries:
        if len(value) != width:
            raise ProtocolError(
                f"sync write value for id {dev_id} is {len(value)} bytes, expected {width}"
            )
        params.append(dev_id)
        params.extend(value)
    return InstructionPacket(BROADCAST_ID, Instruction.SYNC_WRITE, bytes(params))


def build_sync_read(addr: int, width: int, ids: list[int]) -> InstructionPacket:
    """SYNC_READ one register block from many servos in a single frame."""
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate servo id in sync read")
    params = struct.pack("<HH", addr, width) + bytes(ids)
    return InstructionPacket(BROADCAST_ID, Instruction.SYNC_READ, params)


def parse_sync_write(params: bytes) -> tuple[int, int, list[tuple[int, bytes]]]:
    if len(params) < 4:
        raise ProtocolError("sync write params shorter than the addr/width header")
    addr, width = struct.unpack("<HH", params[:4])
    block = width + 1
    rest = params[4:]
    if width == 0 or len(rest) % block:
        raise ProtocolError("sync write params not a whole number of id/value blocks")
    entries = [
        (rest[i], bytes(rest[i + 1 : i + block])) for i in range(0, len(rest), block)
    ]
    return addr, width, entries


def parse_sync_read(params: bytes) -> tuple[int, int, list[int]]:
    if len(params) < 4:
        raise ProtocolError("sync read params shorter than the addr/width header")
    addr, width = struct.unpack("<HH", params[:4])
    return addr, width, list(params[4:])


def le_bytes(value: int, width: int) -> bytes:
    """Little-endian two's-complement encoding of `value` in `width` bytes."""
    return int(value).to_bytes(width, "little", signed=value < 0)


def le_uint(data: bytes) -> int:
    return int.from_bytes(data, "little", signed=False)


def le_int(data: bytes) -> int:
    return int.from_bytes(data, "little", signed=True)


def parse_hex(text: str) -> bytes:
    """Hex pairs with optional whitespace, e.g. 'FF FF FD 00 01'."""
    compact = "".join(text.split())
    if len(compact) % 2:
        raise ProtocolError("odd number of hex digits")
    try:
        return bytes.fromhex(compact)
    except ValueError as e:
        raise ProtocolError(f"bad hex input: {e}") from e


def format_hex(data: bytes) -> str:
    return " ".join(f"{b:02X}" for b in data)
