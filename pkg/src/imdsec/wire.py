"""Canonical message framing for the access-control protocols.

Frame layout: heading (1 byte), session number (8 bytes big-endian),
field count (1 byte), then each field as a 4-byte big-endian length
followed by its bytes.  MAC inputs reuse the same encoding over exactly
the components each protocol step authenticates, in step order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence

__all__ = [
    "WireError",
    "Heading",
    "WireMessage",
    "encode_message",
    "decode_message",
    "auth_bytes",
    "ts_bytes",
    "freshness_check",
    "DEFAULT_FRESHNESS_WINDOW",
]

DEFAULT_FRESHNESS_WINDOW = 30  # simulated seconds


class WireError(ValueError):
    pass


class Heading(IntEnum):
    PAIR_REQ = 1
    PAIR_SUCC = 2
    AUTH_REQ = 3
    OPTIONAL = 4
    READ_AUTH_REQ = 5
    READ_ALLOW = 6
    READ_READY = 7
    READ_REQ = 8
    WRITE_AUTH_REQ = 9
    WRITE_ALLOW = 10
    WRITE_READY = 11
    WRITE_REQ = 12
    SET_ALLOW = 13
    WRITE_SUCC = 14


@dataclass(frozen=True)
class WireMessage:
    heading: Heading
    session: int
    fields: tuple[bytes, ...] = ()

    def __post_init__(self):
        if not 0 <= self.session < 2**64:
            raise WireError("session number must fit in 64 bits")
        if len(self.fields) > 255:
            raise WireError("too many fields")
        object.__setattr__(self, "fields", tuple(bytes(f) for f in self.fields))


_PREFIX = struct.Struct(">BQB")
_FIELD_LEN = struct.Struct(">I")


def encode_message(msg: WireMessage) -> bytes:
    out = [_PREFIX.pack(int(msg.heading), msg.session, len(msg.fields))]
    for f in msg.fields:
        out.append(_FIELD_LEN.pack(len(f)))
        out.append(f)
    return b"".join(out)


def decode_message(buf: bytes) -> WireMessage:
    if len(buf) < _PREFIX.size:
        raise WireError("frame too short")
    heading, session, count = _PREFIX.unpack_from(buf, 0)
    try:
        heading = Heading(heading)
    except ValueError:
        raise WireError(f"unknown heading {heading}") from None
    pos = _PREFIX.size
    fields = []
    for _ in range(count):
        if pos + _FIELD_LEN.size > len(buf):
            raise WireError("truncated field length")
        (ln,) = _FIELD_LEN.unpack_from(buf, pos)
        pos += _FIELD_LEN.size
        if pos + ln > len(buf):
            raise WireError("truncated field")
        fields.append(buf[pos : pos + ln])
        pos += ln
    if pos != len(buf):
        raise WireError("trailing bytes after frame")
    return WireMessage(heading=heading, session=session, fields=tuple(fields))


def auth_bytes(
    heading: Optional[Heading],
    session: Optional[int],
    fields: Sequence[bytes] = (),
) -> bytes:
    """Bytes a MAC or signature covers: optional heading byte, optional
    8-byte session, then length-prefixed fields in step order."""
    out = bytearray()
    if heading is not None:
        out += struct.pack(">B", int(heading))
    if session is not None:
        out += struct.pack(">Q", session)
    for f in fields:
        out += _FIELD_LEN.pack(len(f))
        out += f
    return bytes(out)


def u64_bytes(value: int) -> bytes:
    return struct.pack(">Q", int(value))


def ts_bytes(seconds: int) -> bytes:
    return u64_bytes(seconds)


def ts_from_bytes(data: bytes) -> int:
    if len(data) != 8:
        raise WireError("timestamp must be 8 bytes")
    return struct.unpack(">Q", data)[0]


def freshness_check(ts: int, now: int, window: int = DEFAULT_FRESHNESS_WINDOW) -> bool:
    """Accept timestamps within the closed window |now - ts| <= window."""
    return abs(int(now) - int(ts)) <= window
