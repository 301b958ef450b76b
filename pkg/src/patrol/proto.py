"""Binary wire protocol: frame layout, canonical encoding, payload compression.

Every message on the wire is one frame:

    magic "MAP1" | version u8 | msg_type u8 | flags u8 | reserved u8 | payload_len u32 BE | payload

Payloads are canonical encodings of the domain types (see `Writer`/`Reader`),
optionally DEFLATE-compressed when that actually shrinks them.  Canonical
encoding is injective and deterministic: equal values always produce identical
bytes, which is what makes signatures over encoded values stable across hops.
"""

from __future__ import annotations

import io
import math
import struct
import zlib
from enum import IntEnum
from typing import BinaryIO, Callable, TypeVar

MAGIC = b"MAP1"
VERSION = 1
MAX_PAYLOAD = 8 * 1024 * 1024

_HEADER = struct.Struct("!4sBBBBI")
HEADER_LEN = _HEADER.size

# Frame flag bits.
FLAG_COMPRESSED = 0x01
FLAG_SEALED = 0x02
FLAG_SIGNED = 0x04


class MsgType(IntEnum):
    AGENT_STATE = 1
    CODE_BUNDLE = 2
    CONTROL_REQ = 3
    CONTROL_RESP = 4
    ANNOUNCE = 5
    RESULT = 6


class ProtocolError(Exception):
    """Base for all framing/encoding failures."""


class BadMagic(ProtocolError):
    pass


class BadVersion(ProtocolError):
    pass


class Truncated(ProtocolError):
    pass


class UnknownType(ProtocolError):
    pass


class Oversize(ProtocolError):
    pass


class Corrupt(ProtocolError):
    pass


class FieldRange(ProtocolError):
    """A field value does not fit its declared wire width or domain."""


def encode_frame(
    msg_type: int, flags: int, payload: bytes, max_payload: int = MAX_PAYLOAD
) -> bytes:
    if len(payload) > max_payload:
        raise Oversize(f"payload {len(payload)} exceeds max {max_payload}")
    if not 0 <= flags <= 0xFF:
        raise FieldRange(f"flags out of range: {flags}")
    msg_type = MsgType(msg_type)
    return _HEADER.pack(MAGIC, VERSION, msg_type, flags, 0, len(payload)) + payload


def decode_frame(
    source: bytes | BinaryIO, max_payload: int = MAX_PAYLOAD
) -> tuple[MsgType, int, bytes]:
    """Decode one frame from bytes or a readable binary stream.

    Returns (msg_type, flags, payload).  Raises BadMagic / BadVersion /
    UnknownType / Truncated / Oversize.
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        source = io.BytesIO(source)
    header = source.read(HEADER_LEN)
    if len(header) < HEADER_LEN:
        if header[: len(MAGIC)] and not MAGIC.startswith(header[: len(MAGIC)]):
            raise BadMagic(f"bad magic: {header[:4]!r}")
        raise Truncated(f"header short: {len(header)} of {HEADER_LEN} bytes")
    magic, version, msg_type, flags, _reserved, payload_len = _HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagic(f"bad magic: {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version: {version}")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise UnknownType(f"unknown msg_type: {msg_type}") from None
    if payload_len > max_payload:
        raise Oversize(f"declared payload {payload_len} exceeds max {max_payload}")
    payload = source.read(payload_len)
    if len(payload) < payload_len:
        raise Truncated(f"payload short: {len(payload)} of {payload_len} bytes")
    return msg_type, flags, payload


# read_frame is the streaming alias used by the daemons' socket loops.
read_frame = decode_frame


def compress(payload: bytes) -> tuple[bytes, bool]:
    """Raw-DEFLATE the payload; keep the original when that is not smaller."""
    comp = zlib.compressobj(level=6, wbits=-zlib.MAX_WBITS)
    packed = comp.compress(payload) + comp.flush()
    if len(packed) < len(payload):
        return packed, True
    return payload, False


def decompress(payload: bytes, max_out: int = 64 * 1024 * 1024) -> bytes:
    decomp = zlib.decompressobj(wbits=-zlib.MAX_WBITS)
    try:
        out = decomp.decompress(payload, max_out)
    except zlib.error as exc:
        raise Corrupt(f"bad deflate stream: {exc}") from None
    if decomp.unconsumed_tail:
        raise Oversize(f"decompressed output exceeds max {max_out}")
    if not decomp.eof:
        raise Corrupt("truncated deflate stream")
    return out


_T = TypeVar("_T")


class Writer:
    """Canonical encoder.

    Rules: integers fixed-width big-endian; booleans one byte 0/1; strings
    u16 length + UTF-8; byte arrays u32 length + bytes; lists u16 count +
    elements in order; optionals one presence byte then the value; composite
    values write their fields in fixed declared order.  Maps are forbidden;
    keyed collections must be written as lists sorted by key.
    """

    def __init__(self) -> None:
        self._buf = bytearray()

    def getvalue(self) -> bytes:
        return bytes(self._buf)

    def _uint(self, value: int, width: int, what: str) -> None:
        if not isinstance(value, int) or isinstance(value, bool):
            raise FieldRange(f"{what}: expected int, got {type(value).__name__}")
        if value < 0 or value >= 1 << (8 * width):
            raise FieldRange(f"{what}: {value} out of range for u{8 * width}")
        self._buf += value.to_bytes(width, "big")

    def u8(self, value: int) -> None:
        self._uint(value, 1, "u8")

    def u16(self, value: int) -> None:
        self._uint(value, 2, "u16")

    def u32(self, value: int) -> None:
        self._uint(value, 4, "u32")

    def u64(self, value: int) -> None:
        self._uint(value, 8, "u64")

    def i64(self, value: int) -> None:
        if not isinstance(value, int) or isinstance(value, bool):
            raise FieldRange(f"i64: expected int, got {type(value).__name__}")
        if not -(1 << 63) <= value < 1 << 63:
            raise FieldRange(f"i64: {value} out of range")
        self._buf += value.to_bytes(8, "big", signed=True)

    def f64(self, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise FieldRange(f"f64: non-finite value {value!r}")
        self._buf += struct.pack("!d", value)

    def bool(self, value: bool) -> None:
        self._buf.append(1 if value else 0)

    def str(self, value: str) -> None:
        raw = value.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FieldRange(f"string too long: {len(raw)} bytes")
        self._buf += len(raw).to_bytes(2, "big")
        self._buf += raw

    def bytes(self, value: bytes) -> None:
        if len(value) > 0xFFFFFFFF:
            raise FieldRange(f"byte array too long: {len(value)}")
        self._buf += len(value).to_bytes(4, "big")
        self._buf += value

    def list(self, items, encode_item: Callable[[Writer, _T], None]) -> None:
        items = list(items)
        if len(items) > 0xFFFF:
            raise FieldRange(f"list too long: {len(items)} items")
        self._buf += len(items).to_bytes(2, "big")
        for item in items:
            encode_item(self, item)

    def opt(self, value, encode_value: Callable[[Writer, _T], None]) -> None:
        if value is None:
            self._buf.append(0)
        else:
            self._buf.append(1)
            encode_value(self, value)


class Reader:
    """Canonical decoder; inverse of `Writer`.  Raises Corrupt on malformed input."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._data):
            raise Corrupt(f"needed {n} bytes at offset {self._pos}, have {len(self._data) - self._pos}")
        chunk = self._data[self._pos : end]
        self._pos = end
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self._take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self._take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self._take(8), "big")

    def i64(self) -> int:
        return int.from_bytes(self._take(8), "big", signed=True)

    def f64(self) -> float:
        return struct.unpack("!d", self._take(8))[0]

    def bool(self) -> bool:
        flag = self._take(1)[0]
        if flag not in (0, 1):
            raise Corrupt(f"bad boolean byte: {flag}")
        return flag == 1

    def str(self) -> str:
        length = self.u16()
        try:
            return self._take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise Corrupt(f"bad utf-8 in string: {exc}") from None

    def bytes(self) -> bytes:
        return self._take(self.u32())

    def list(self, decode_item: Callable[[Reader], _T]) -> list[_T]:
        return [decode_item(self) for _ in range(self.u16())]

    def opt(self, decode_value: Callable[[Reader], _T]) -> _T | None:
        flag = self._take(1)[0]
        if flag not in (0, 1):
            raise Corrupt(f"bad presence byte: {flag}")
        return decode_value(self) if flag else None

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise Corrupt(f"{len(self._data) - self._pos} trailing bytes")


def canonical_encode(value) -> bytes:
    """Encode any payload value that implements encode(writer)."""
    writer = Writer()
    value.encode(writer)
    return writer.getvalue()


def canonical_decode(cls, data: bytes):
    """Decode a full payload of type cls; trailing bytes are an error."""
    reader = Reader(data)
    value = cls.decode(reader)
    reader.expect_end()
    return value
