"""Unit tests for the wire codec."""

import numpy as np
import pytest

from splitbox.nfmodel import BitString, Packet
from splitbox.wire import (
    HEADER,
    BadMagicError,
    DecodeError,
    EncodeError,
    LengthMismatchError,
    MessageKind,
    TruncatedMessageError,
    UnknownKindError,
    UnsupportedVersionError,
    WireMessage,
    decode,
    encode,
    pack_packet,
    pack_shares,
    unpack_packet,
    unpack_shares,
)

pytestmark = pytest.mark.unit

SHARES_GOLDEN = bytes.fromhex(
    "5342" "01" "03" "0000000000000007" "00000001" "01" "01" "00000002" "f0" "0f"
)


def shares_message():
    body = pack_shares(BitString(0xF0, 8), BitString(0x0F, 8))
    return WireMessage(MessageKind.TO_CLIENT_SHARES, 7, 1, 1, 1, body)


def hand_decode(data):
    """Field-by-field reading of the layout, independent of the codec."""
    return {
        "magic": data[0:2],
        "version": data[2],
        "kind": data[3],
        "seq": int.from_bytes(data[4:12], "big"),
        "index": int.from_bytes(data[12:16], "big"),
        "processor": data[16],
        "flag": data[17],
        "length": int.from_bytes(data[18:22], "big"),
        "body": data[22:],
    }


class TestGolden:
    def test_encode_matches_golden(self):
        assert encode(shares_message()) == SHARES_GOLDEN

    def test_hand_decoder_agrees(self):
        fields = hand_decode(SHARES_GOLDEN)
        assert fields["magic"] == b"SB"
        assert fields["kind"] == MessageKind.TO_CLIENT_SHARES
        assert fields["seq"] == 7
        assert fields["index"] == 1
        assert fields["length"] == len(fields["body"]) == 2

    def test_decode_golden(self):
        message = decode(SHARES_GOLDEN, 8)
        assert message == shares_message()
        assert unpack_shares(message.body, 8) == (BitString(0xF0, 8),
                                                  BitString(0x0F, 8))

    def test_header_size(self):
        assert HEADER.size == 22


class TestDecodeErrors:
    def test_truncated_header(self):
        with pytest.raises(TruncatedMessageError):
            decode(SHARES_GOLDEN[:10])

    def test_truncated_body(self):
        with pytest.raises(TruncatedMessageError):
            decode(SHARES_GOLDEN[:-1])

    def test_trailing_bytes(self):
        with pytest.raises(LengthMismatchError):
            decode(SHARES_GOLDEN + b"\x00")

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            decode(b"XX" + SHARES_GOLDEN[2:])

    def test_bad_version(self):
        with pytest.raises(UnsupportedVersionError):
            decode(SHARES_GOLDEN[:2] + b"\x09" + SHARES_GOLDEN[3:])

    def test_unknown_kind(self):
        with pytest.raises(UnknownKindError):
            decode(SHARES_GOLDEN[:3] + b"\x7f" + SHARES_GOLDEN[4:])

    def test_body_width_checked_against_n(self):
        with pytest.raises(LengthMismatchError):
            decode(SHARES_GOLDEN, 16)


class TestEncodeErrors:
    def test_seq_out_of_range(self):
        with pytest.raises(EncodeError):
            encode(WireMessage(MessageKind.TO_PROCESSOR, 1 << 64, 1))

    def test_body_too_long(self):
        with pytest.raises(EncodeError):
            encode(WireMessage(MessageKind.TO_CLIENT_XW, 1, 1, body=b"\x00" * 70_000))


class TestPacketBody:
    def test_payload_and_prefix_survive(self):
        packet = Packet(BitString(0xAB, 8), BitString(0b101, 3), prefix_bits=2)
        assert unpack_packet(pack_packet(packet), 8) == packet

    def test_prefix_longer_than_header(self):
        body = bytearray(pack_packet(Packet(BitString(1, 8))))
        body[0:4] = (9).to_bytes(4, "big")
        with pytest.raises(LengthMismatchError):
            unpack_packet(bytes(body), 8)

    def test_wrong_share_width(self):
        with pytest.raises(LengthMismatchError):
            unpack_shares(b"\x00\x00\x00", 8)


class TestFuzz:
    def test_random_bytes_never_escape(self):
        gen = np.random.default_rng(8)
        seeds = [encode(shares_message()),
                 encode(WireMessage(MessageKind.TO_PROCESSOR, 3, 2, 1, 0, b"\x5a"))]
        accepted = 0
        for k in range(100_000):
            if k % 2:
                data = bytearray(seeds[k % 4 // 2])
                data[int(gen.integers(len(data)))] = int(gen.integers(256))
                data = data[:int(gen.integers(len(data) + 1))]
            else:
                data = gen.bytes(int(gen.integers(0, 40)))
            try:
                message = decode(bytes(data), 8)
            except DecodeError:
                continue
            accepted += 1
            assert encode(message) == bytes(data)
        assert accepted > 0
