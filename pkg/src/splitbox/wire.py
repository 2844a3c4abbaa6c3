"""Wire codec for messages between entry, processors and client.

Layout, big-endian, one message per datagram::

    offset  size  field
    0       2     magic "SB"
    2       1     version
    3       1     kind
    4       8     seq
    12      4     counter index
    16      1     processor id (0 unless the message concerns a processor)
    17      1     flag share (low bit)
    18      4     body length
    22      ...   body

Bodies by kind, with ``F = ceil(n / 8)``:

* ``TO_PROCESSOR``: the blinded header, ``F`` bytes.
* ``TO_CLIENT_SHARES``: cumulative alpha share then beta share, ``2F`` bytes.
* ``TO_CLIENT_XW``: prefix bits u32, payload bits u32, header (``F``
  bytes), payload (``ceil(payload_bits / 8)`` bytes).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from splitbox.nfmodel import BitString, Packet, bits_to_bytes, bytes_to_bits

MAGIC = b"SB"
VERSION = 1
HEADER = struct.Struct(">2sBBQIBBI")
PACKET_PREFIX = struct.Struct(">II")
MAX_DATAGRAM = 65_507
MAX_BODY_LENGTH = MAX_DATAGRAM - HEADER.size


class MessageKind(IntEnum):
    TO_PROCESSOR = 1
    TO_CLIENT_XW = 2
    TO_CLIENT_SHARES = 3


class WireError(ValueError):
    """Base class for codec failures."""


class EncodeError(WireError):
    """Raised when a message cannot be encoded."""


class DecodeError(WireError):
    """Raised when bytes are not a valid message."""


class TruncatedMessageError(DecodeError):
    pass


class BadMagicError(DecodeError):
    pass


class UnsupportedVersionError(DecodeError):
    pass


class UnknownKindError(DecodeError):
    pass


class LengthMismatchError(DecodeError):
    pass


@dataclass(frozen=True)
class WireMessage:
    """One message on the wire.

    Attributes:
        kind: Message kind.
        seq: Entry sequence number, shared by all messages of one emission.
        counter_index: 1-based blind index.
        processor_id: Destination (for ``TO_PROCESSOR``) or source (for
            ``TO_CLIENT_SHARES``) processor; 0 otherwise.
        flag_share: This processor's share of the real/dummy bit.
        body: Kind-specific body.
        version: Protocol version.
    """

    kind: MessageKind
    seq: int
    counter_index: int
    processor_id: int = 0
    flag_share: int = 0
    body: bytes = b""
    version: int = VERSION


_LIMITS = (
    ("seq", 64),
    ("counter_index", 32),
    ("processor_id", 8),
    ("flag_share", 8),
    ("version", 8),
)


def encode(message: WireMessage) -> bytes:
    """Serialise ``message``.

    Raises:
        EncodeError: If a field is out of range or the body is too long.
    """
    for name, width in _LIMITS:
        value = getattr(message, name)
        if not 0 <= value < 1 << width:
            raise EncodeError(f"{name}={value} does not fit in {width} bits")
    if len(message.body) > MAX_BODY_LENGTH:
        raise EncodeError(
            f"body of {len(message.body)} bytes exceeds {MAX_BODY_LENGTH}"
        )
    header = HEADER.pack(
        MAGIC,
        message.version,
        int(message.kind),
        message.seq,
        message.counter_index,
        message.processor_id,
        message.flag_share,
        len(message.body),
    )
    return header + message.body


def decode(data: bytes, n: int | None = None) -> WireMessage:
    """Parse one message.

    Args:
        data: The datagram.
        n: Header width; when given, the body length is checked against the
            kind.

    Raises:
        DecodeError: A subclass naming what is wrong.
    """
    if len(data) < HEADER.size:
        raise TruncatedMessageError(
            f"{len(data)} bytes is shorter than the {HEADER.size}-byte header"
        )
    magic, version, kind, seq, index, pid, flag, body_length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    try:
        kind = MessageKind(kind)
    except ValueError as exc:
        raise UnknownKindError(f"unknown message kind {kind}") from exc
    available = len(data) - HEADER.size
    if available < body_length:
        raise TruncatedMessageError(
            f"body declares {body_length} bytes, {available} present"
        )
    if available > body_length:
        raise LengthMismatchError(f"{available - body_length} trailing byte(s)")
    body = bytes(data[HEADER.size:])
    if n is not None:
        _check_body(kind, body, n)
    return WireMessage(kind, seq, index, pid, flag, body, version)


def _field_bytes(n: int) -> int:
    return (n + 7) // 8


def _check_body(kind: MessageKind, body: bytes, n: int) -> None:
    width = _field_bytes(n)
    if kind is MessageKind.TO_PROCESSOR:
        expected = width
    elif kind is MessageKind.TO_CLIENT_SHARES:
        expected = 2 * width
    else:
        if len(body) < PACKET_PREFIX.size + width:
            raise LengthMismatchError(f"packet body of {len(body)} bytes is too short")
        _, payload_bits = PACKET_PREFIX.unpack_from(body)
        expected = PACKET_PREFIX.size + width + _field_bytes(payload_bits)
    if len(body) != expected:
        raise LengthMismatchError(
            f"{kind.name} body is {len(body)} bytes, expected {expected} at n={n}"
        )


def pack_bits(value: BitString) -> bytes:
    return value.to_bytes()


def unpack_bits(body: bytes, n: int) -> BitString:
    """Read one ``n``-bit value.

    Raises:
        LengthMismatchError: If ``body`` is not exactly ``ceil(n / 8)`` bytes.
    """
    if len(body) != _field_bytes(n):
        raise LengthMismatchError(f"expected {_field_bytes(n)} bytes, got {len(body)}")
    return BitString(bytes_to_bits(body, n), n)


def pack_shares(alpha: BitString, beta: BitString) -> bytes:
    return alpha.to_bytes() + beta.to_bytes()


def unpack_shares(body: bytes, n: int) -> tuple[BitString, BitString]:
    width = _field_bytes(n)
    if len(body) != 2 * width:
        raise LengthMismatchError(f"expected {2 * width} bytes, got {len(body)}")
    return unpack_bits(body[:width], n), unpack_bits(body[width:], n)


def pack_packet(packet: Packet) -> bytes:
    payload = packet.payload
    return (
        PACKET_PREFIX.pack(packet.prefix_bits, len(payload))
        + packet.header.to_bytes()
        + bits_to_bytes(payload.value, len(payload))
    )


def unpack_packet(body: bytes, n: int) -> Packet:
    """Read a packet written by :func:`pack_packet`.

    Raises:
        LengthMismatchError: If the body does not hold exactly one packet.
    """
    _check_body(MessageKind.TO_CLIENT_XW, body, n)
    prefix_bits, payload_bits = PACKET_PREFIX.unpack_from(body)
    if prefix_bits > n:
        raise LengthMismatchError(f"prefix of {prefix_bits} bits exceeds n={n}")
    start = PACKET_PREFIX.size
    width = _field_bytes(n)
    header = unpack_bits(body[start:start + width], n)
    payload = BitString(bytes_to_bits(body[start + width:], payload_bits),
                        payload_bits)
    return Packet(header, payload, prefix_bits)
