"""Bit-exact frame codec for inter-platform messages.

Layout::

    0x41 0x47 | version 0x01 | msg_type | payload length (u32 big-endian)
    payload (canonical document bytes)
    tag: HMAC-SHA256(key, header + payload), 32 bytes

The sender is not part of the frame; it is known from the connection the
frame arrived on, and it selects the key used to check the tag.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass
from typing import Final

from .model import FirmId

MAGIC: Final[bytes] = b"AG"
VERSION: Final[int] = 0x01
HEADER_SIZE: Final[int] = 8
TAG_SIZE: Final[int] = 32
OVERHEAD: Final[int] = HEADER_SIZE + TAG_SIZE
MAX_PAYLOAD: Final[int] = 1 << 24

_HEADER = struct.Struct(">2sBBI")


class MsgType(enum.IntEnum):
    HELLO = 0x01
    TRANSFER = 0x02
    ACK = 0x03
    REJECT = 0x04
    RESULT = 0x05


class FrameError(ValueError):
    pass


class PayloadTooLarge(FrameError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class LengthMismatch(FrameError):
    pass


class BadTag(FrameError):
    pass


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    sender: FirmId
    payload: bytes

    def __post_init__(self) -> None:
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        object.__setattr__(self, "payload", bytes(self.payload))


def mac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def encode_frame(frame: Frame, key: bytes) -> bytes:
    """Serialise and tag ``frame`` with the sender-to-receiver key."""
    if len(frame.payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}")
    body = _HEADER.pack(MAGIC, VERSION, int(frame.msg_type), len(frame.payload)) + frame.payload
    return body + mac(key, body)


def frame_length(header: bytes) -> int:
    """Total frame size announced by an 8-byte header."""
    if len(header) < HEADER_SIZE:
        raise LengthMismatch("short header")
    magic, version, _, length = _HEADER.unpack(header[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    return HEADER_SIZE + length + TAG_SIZE


def decode_frame(data: bytes, key: bytes, sender: FirmId) -> Frame:
    """Parse and authenticate a frame received from ``sender``.

    Checks magic, version, length consistency and then the tag, raising the
    matching :class:`FrameError` subclass for the first that fails.
    """
    data = bytes(data)
    if len(data) < 3:
        raise LengthMismatch(f"{len(data)} bytes is shorter than a header")
    if data[:2] != MAGIC:
        raise BadMagic(f"bad magic {data[:2]!r}")
    if data[2] != VERSION:
        raise BadVersion(f"unsupported version {data[2]}")
    if len(data) < HEADER_SIZE:
        raise LengthMismatch(f"{len(data)} bytes is shorter than a header")
    _, _, msg_type, length = _HEADER.unpack(data[:HEADER_SIZE])
    if length > MAX_PAYLOAD:
        raise PayloadTooLarge(f"announced payload of {length} bytes")
    if len(data) != HEADER_SIZE + length + TAG_SIZE:
        raise LengthMismatch(
            f"header announces {length} payload bytes, frame has {len(data) - OVERHEAD}"
        )
    body, tag = data[:-TAG_SIZE], data[-TAG_SIZE:]
    if not hmac.compare_digest(tag, mac(key, body)):
        raise BadTag("frame tag does not verify")
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise FrameError(f"unknown message type {msg_type:#04x}") from None
    return Frame(msg_type=kind, sender=sender, payload=body[HEADER_SIZE:])
