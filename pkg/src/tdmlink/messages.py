"""Virtual-channel message formats and the event-fragment packet.

Framing on channels A, B and C-down is a start bit (1), a fixed payload,
and one even-parity bit; an idle channel carries zeros, so no start bit
means no message. Frame lengths are exactly 10 (A), 64 (B) and 42
(C request) bits. The normative field order is documented in
docs/wire-format.md and mirrored by the golden vectors.

Event fragments ride upstream on channel C as 16-bit words (MSB first):
a header word with SOE/EOE flags and the byte size, an even number of
payload words, and CRC-32 over header plus payload.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .bits import BitArray, as_bits, bits_from_bytes, bits_from_int, bits_to_int

__all__ = [
    "CHANNEL_A_FRAME_BITS",
    "CHANNEL_B_FRAME_BITS",
    "CHANNEL_C_REQUEST_BITS",
    "OPCODE_SEND_NEXT_PACKET",
    "MAX_PACKET_BYTES",
    "EVENT_HEADER_WORDS",
    "ParityError",
    "MessageFormatError",
    "ChannelAMessageDown",
    "ChannelAMessageUp",
    "ChannelBTransaction",
    "ChannelCRequest",
    "FragmentPacket",
    "crc32",
    "encode_channel_a",
    "decode_channel_a_down",
    "decode_channel_a_up",
    "encode_channel_b",
    "decode_channel_b",
    "encode_channel_c_request",
    "decode_channel_c_request",
]

CHANNEL_A_FRAME_BITS = 10
CHANNEL_B_FRAME_BITS = 64
CHANNEL_C_REQUEST_BITS = 42

OPCODE_SEND_NEXT_PACKET = 0x01

# Largest fragment packet on the wire: header word + payload + CRC-32.
# The word count must stay even, hence 1020 words (2046 wire bytes).
MAX_PACKET_BYTES = 2048
MAX_PAYLOAD_WORDS = ((MAX_PACKET_BYTES - 2 - 4) // 2) & ~1

# SOE packets carry event number (2 words), timestamp (3 words) and one
# reserved pad word at the start of the payload, keeping the count even.
EVENT_HEADER_WORDS = 6


class MessageFormatError(ValueError):
    """Frame violates its fixed layout."""


class ParityError(MessageFormatError):
    """Frame parity check failed; the receiver must not act on the frame."""

    def __init__(self, payload_bits=None):
        super().__init__("frame parity mismatch")
        self.payload_bits = payload_bits


def crc32(data: bytes) -> int:
    """IEEE 802.3 CRC-32 (reflected, init and final XOR all-ones)."""
    return zlib.crc32(data) & 0xFFFFFFFF


def _even_parity(payload: BitArray) -> int:
    return int(np.bitwise_xor.reduce(payload))


def _frame(payload: BitArray) -> BitArray:
    return np.concatenate([as_bits([1]), payload, as_bits([_even_parity(payload)])])


def _unframe(bits, expected_len: int) -> BitArray:
    bits = as_bits(bits)
    if len(bits) != expected_len:
        raise MessageFormatError(f"frame is {len(bits)} bits, expected {expected_len}")
    if bits[0] != 1:
        raise MessageFormatError("missing start bit")
    return bits[1:-1], int(bits[-1])


# ---------------------------------------------------------------------------
# Channel A: synchronous trigger traffic


@dataclass(frozen=True)
class ChannelAMessageDown:
    sampling_stop: bool = False  # the trigger
    event_type: int = 0  # 0..3
    sampling_start: bool = False
    clear_event_counter: bool = False
    clear_timestamp: bool = False
    sync_sampling_clock: bool = False

    def __post_init__(self):
        if not 0 <= self.event_type <= 3:
            raise MessageFormatError("event_type outside 0..3")
        if self.sampling_stop and self.sampling_start:
            raise MessageFormatError("sampling_stop and sampling_start both set")


@dataclass(frozen=True)
class ChannelAMessageUp:
    set_busy: bool = False
    clear_busy: bool = False
    trigger_primitives: int = 0  # 4 bits

    def __post_init__(self):
        if not 0 <= self.trigger_primitives <= 0xF:
            raise MessageFormatError("trigger_primitives outside 4 bits")
        if self.set_busy and self.clear_busy:
            raise MessageFormatError("set_busy and clear_busy both set")


def encode_channel_a(msg) -> BitArray:
    """10-bit frame for either direction of channel A."""
    if isinstance(msg, ChannelAMessageDown):
        payload = np.concatenate(
            [
                as_bits([int(msg.sampling_stop)]),
                bits_from_int(msg.event_type, 2),
                as_bits(
                    [
                        int(msg.sampling_start),
                        int(msg.clear_event_counter),
                        int(msg.clear_timestamp),
                        int(msg.sync_sampling_clock),
                        0,  # spare
                    ]
                ),
            ]
        )
    elif isinstance(msg, ChannelAMessageUp):
        payload = np.concatenate(
            [
                as_bits([int(msg.set_busy), int(msg.clear_busy)]),
                bits_from_int(msg.trigger_primitives, 4),
                as_bits([0, 0]),  # spare
            ]
        )
    else:
        raise TypeError(f"not a channel A message: {type(msg).__name__}")
    return _frame(payload)


def decode_channel_a_down(bits) -> ChannelAMessageDown:
    payload, parity = _unframe(bits, CHANNEL_A_FRAME_BITS)
    if parity != _even_parity(payload):
        raise ParityError(payload)
    return ChannelAMessageDown(
        sampling_stop=bool(payload[0]),
        event_type=bits_to_int(payload[1:3]),
        sampling_start=bool(payload[3]),
        clear_event_counter=bool(payload[4]),
        clear_timestamp=bool(payload[5]),
        sync_sampling_clock=bool(payload[6]),
    )


def decode_channel_a_up(bits) -> ChannelAMessageUp:
    payload, parity = _unframe(bits, CHANNEL_A_FRAME_BITS)
    if parity != _even_parity(payload):
        raise ParityError(payload)
    return ChannelAMessageUp(
        set_busy=bool(payload[0]),
        clear_busy=bool(payload[1]),
        trigger_primitives=bits_to_int(payload[2:6]),
    )


# ---------------------------------------------------------------------------
# Channel B: register transactions


@dataclass(frozen=True)
class ChannelBTransaction:
    broadcast: bool = False
    target_id: int = 0  # 5-bit port number, ignored when broadcast
    read: bool = False
    write: bool = False
    byte_enable: int = 0xF  # byte 0 is the least significant
    address: int = 0
    data: int = 0
    parity_error: bool = False  # response only
    bus_error: bool = False  # response only

    def __post_init__(self):
        if not 0 <= self.target_id <= 31:
            raise MessageFormatError("target_id outside 0..31")
        if not 0 <= self.byte_enable <= 0xF:
            raise MessageFormatError("byte_enable outside 4 bits")
        if not 0 <= self.address <= 0xFFFF:
            raise MessageFormatError("address outside 16 bits")
        if not 0 <= self.data <= 0xFFFFFFFF:
            raise MessageFormatError("data outside 32 bits")

    def require_request(self):
        if self.read == self.write:
            raise MessageFormatError("request needs exactly one of read/write")
        return self


def encode_channel_b(txn: ChannelBTransaction) -> BitArray:
    """64-bit frame: ST + BC TID RD WR BE PE FE ADDR DATA + PA."""
    payload = np.concatenate(
        [
            as_bits([int(txn.broadcast)]),
            bits_from_int(txn.target_id, 5),
            as_bits([int(txn.read), int(txn.write)]),
            bits_from_int(txn.byte_enable, 4),
            as_bits([int(txn.parity_error), int(txn.bus_error)]),
            bits_from_int(txn.address, 16),
            bits_from_int(txn.data, 32),
        ]
    )
    return _frame(payload)


def decode_channel_b(bits) -> ChannelBTransaction:
    payload, parity = _unframe(bits, CHANNEL_B_FRAME_BITS)
    if parity != _even_parity(payload):
        raise ParityError(payload)
    return ChannelBTransaction(
        broadcast=bool(payload[0]),
        target_id=bits_to_int(payload[1:6]),
        read=bool(payload[6]),
        write=bool(payload[7]),
        byte_enable=bits_to_int(payload[8:12]),
        parity_error=bool(payload[12]),
        bus_error=bool(payload[13]),
        address=bits_to_int(payload[14:30]),
        data=bits_to_int(payload[30:62]),
    )


# ---------------------------------------------------------------------------
# Channel C: data requests (downstream)


@dataclass(frozen=True)
class ChannelCRequest:
    opcode: int = OPCODE_SEND_NEXT_PACKET
    target_mask: int = 0  # bit i set: front-end with ID i executes

    def __post_init__(self):
        if not 0 <= self.opcode <= 0xFF:
            raise MessageFormatError("opcode outside 8 bits")
        if not 0 <= self.target_mask <= 0xFFFFFFFF:
            raise MessageFormatError("target_mask outside 32 bits")


def encode_channel_c_request(req: ChannelCRequest) -> BitArray:
    if req.target_mask == 0:
        raise MessageFormatError("request addresses no front-end")
    payload = np.concatenate(
        [bits_from_int(req.opcode, 8), bits_from_int(req.target_mask, 32)]
    )
    return _frame(payload)


def decode_channel_c_request(bits) -> ChannelCRequest:
    payload, parity = _unframe(bits, CHANNEL_C_REQUEST_BITS)
    if parity != _even_parity(payload):
        raise ParityError(payload)
    return ChannelCRequest(
        opcode=bits_to_int(payload[0:8]),
        target_mask=bits_to_int(payload[8:40]),
    )


# ---------------------------------------------------------------------------
# Event fragment packets (upstream channel C)


@dataclass
class FragmentPacket:
    soe: bool
    eoe: bool
    payload_words: tuple[int, ...]
    crc_ok: bool = True
    crc: int = field(default=0)

    def __post_init__(self):
        if len(self.payload_words) % 2:
            raise MessageFormatError("payload word count must be even")
        if len(self.payload_words) > MAX_PAYLOAD_WORDS:
            raise MessageFormatError(
                f"packet exceeds {MAX_PACKET_BYTES} bytes on the wire"
            )
        if self.soe and len(self.payload_words) < EVENT_HEADER_WORDS:
            raise MessageFormatError("SOE packet too short for event header")
        for w in self.payload_words:
            if not 0 <= w <= 0xFFFF:
                raise MessageFormatError("payload word outside 16 bits")
        self.payload_words = tuple(int(w) for w in self.payload_words)
        if self.crc == 0 and self.crc_ok:
            self.crc = crc32(self._body_bytes())

    @property
    def size_bytes(self) -> int:
        return 2 * len(self.payload_words)

    @property
    def header_word(self) -> int:
        return (int(self.soe) << 15) | (int(self.eoe) << 14) | self.size_bytes

    def _body_bytes(self) -> bytes:
        body = bytearray(self.header_word.to_bytes(2, "big"))
        for w in self.payload_words:
            body += w.to_bytes(2, "big")
        return bytes(body)

    def serialize(self) -> bytes:
        return self._body_bytes() + self.crc.to_bytes(4, "big")

    @classmethod
    def build(cls, soe: bool, eoe: bool, payload_words) -> "FragmentPacket":
        return cls(soe=soe, eoe=eoe, payload_words=tuple(int(w) for w in payload_words))

    @classmethod
    def event_header_payload(cls, event_number: int, timestamp: int) -> tuple[int, ...]:
        """Leading payload words of a SOE packet: 32-bit event number,
        48-bit timestamp, one reserved word."""
        if not 0 <= event_number <= 0xFFFFFFFF:
            raise MessageFormatError("event number outside 32 bits")
        if not 0 <= timestamp <= 0xFFFFFFFFFFFF:
            raise MessageFormatError("timestamp outside 48 bits")
        return (
            (event_number >> 16) & 0xFFFF,
            event_number & 0xFFFF,
            (timestamp >> 32) & 0xFFFF,
            (timestamp >> 16) & 0xFFFF,
            timestamp & 0xFFFF,
            0,
        )

    @property
    def event_number(self) -> int:
        if not self.soe:
            raise MessageFormatError("event number only present in SOE packets")
        return (self.payload_words[0] << 16) | self.payload_words[1]

    @property
    def timestamp(self) -> int:
        if not self.soe:
            raise MessageFormatError("timestamp only present in SOE packets")
        return (
            (self.payload_words[2] << 32)
            | (self.payload_words[3] << 16)
            | self.payload_words[4]
        )

    @property
    def data_words(self) -> tuple[int, ...]:
        """Payload without the SOE event-header prefix."""
        return self.payload_words[EVENT_HEADER_WORDS:] if self.soe else self.payload_words

    @classmethod
    def deserialize(cls, data: bytes) -> "FragmentPacket":
        """Parse wire bytes; a CRC mismatch yields crc_ok=False, the receiver
        is expected to delete such packets (no retransmission)."""
        if len(data) < 6:
            raise MessageFormatError("packet shorter than header plus CRC")
        header = int.from_bytes(data[0:2], "big")
        size = header & 0x3FFF
        if len(data) != 2 + size + 4:
            raise MessageFormatError(
                f"packet length {len(data)} does not match size field {size}"
            )
        words = tuple(
            int.from_bytes(data[2 + 2 * i : 4 + 2 * i], "big") for i in range(size // 2)
        )
        received_crc = int.from_bytes(data[-4:], "big")
        ok = received_crc == crc32(data[:-4])
        pkt = cls(
            soe=bool(header & 0x8000),
            eoe=bool(header & 0x4000),
            payload_words=words,
            crc_ok=ok,
            crc=received_crc,
        )
        return pkt

    def to_wire_bits(self) -> BitArray:
        """Channel C link framing: one start bit, then the packet bytes."""
        return np.concatenate([as_bits([1]), bits_from_bytes(self.serialize())])
