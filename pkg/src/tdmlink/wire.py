"""Line encodings and synchronization for both link directions.

Downstream (fanout, 100 Mbps logical / 200 Mbaud on the line):
interleave the three virtual channels A, B, A, C; invert channel B;
Manchester-encode. An idle link therefore carries the constant 8-symbol
pattern "01100101", which receivers use for bit-slip lock, optimal-phase
selection and channel delineation.

Upstream (point-to-point, 400 Mbps, zero coding overhead): interleave
A, B, C, C; invert channel B; pass through the x^43+1 self-synchronizing
scrambler.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bits import BitArray, as_bits, bits_from_int, bits_from_str

__all__ = [
    "Direction",
    "TdmSchedule",
    "DOWNSTREAM_SCHEDULE",
    "UPSTREAM_SCHEDULE",
    "DOWNSTREAM_IDLE_SYMBOLS",
    "IDLE_CYCLE_BITS",
    "B_SLOT_INDEX",
    "SCRAMBLER_ORDER",
    "DEFAULT_LOCK_THRESHOLD",
    "WireFormatError",
    "CodingViolationError",
    "SyncError",
    "tdm_interleave",
    "tdm_deinterleave",
    "invert_channel_b",
    "infer_slot_offset_from_idle",
    "manchester_encode",
    "manchester_decode",
    "resolve_phase",
    "bit_slip_sync",
    "LineSyncState",
    "Scrambler",
    "Descrambler",
    "PRBS_TAPS",
    "PrbsGenerator",
    "prbs_verify",
    "inject_bit_error",
    "downstream_tx",
    "downstream_rx",
    "downstream_idle_symbols",
    "upstream_tx",
    "upstream_rx",
    "training_pattern",
]


class WireFormatError(ValueError):
    """Malformed input to a line codec."""


class CodingViolationError(WireFormatError):
    """Manchester pair (0,0) or (1,1) seen on the line."""

    def __init__(self, position: int):
        super().__init__(f"Manchester coding violation at symbol {position}")
        self.position = position


class SyncError(RuntimeError):
    """Receiver could not achieve or keep synchronization."""


class Direction(Enum):
    DOWNSTREAM = "down"
    UPSTREAM = "up"


@dataclass(frozen=True)
class TdmSchedule:
    """Fixed cyclic slot assignment of one link direction."""

    direction: Direction
    slot_sequence: tuple[str, ...]

    def slots_of(self, tag: str) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.slot_sequence) if t == tag)


DOWNSTREAM_SCHEDULE = TdmSchedule(Direction.DOWNSTREAM, ("A", "B", "A", "C"))
UPSTREAM_SCHEDULE = TdmSchedule(Direction.UPSTREAM, ("A", "B", "C", "C"))

# Channel B occupies slot 1 in both directions; its inversion makes the
# idle cycle 0100 instead of 0000, which is what delineation keys on.
B_SLOT_INDEX = 1
IDLE_CYCLE_BITS = as_bits([0, 1, 0, 0])
DOWNSTREAM_IDLE_SYMBOLS = bits_from_str("01100101")

DEFAULT_LOCK_THRESHOLD = 4


# ---------------------------------------------------------------------------
# Time-division multiplexing


def _channel_cycles(schedule: TdmSchedule, a: BitArray, b: BitArray, c: BitArray) -> int:
    streams = {"A": a, "B": b, "C": c}
    cycles = None
    for tag, stream in streams.items():
        per_cycle = len(schedule.slots_of(tag))
        if len(stream) % per_cycle:
            raise WireFormatError(
                f"channel {tag} supplies {len(stream)} bits, not a multiple of "
                f"{per_cycle} per cycle"
            )
        n = len(stream) // per_cycle
        if cycles is None:
            cycles = n
        elif n != cycles:
            raise WireFormatError(
                f"channel {tag} supplies {n} cycles worth of bits, expected {cycles}"
            )
    return cycles or 0


def tdm_interleave(schedule: TdmSchedule, a, b, c) -> BitArray:
    """Merge per-channel bit streams into the line order of the schedule.

    Each channel must supply exactly as many bits as it has slots per cycle
    times the common cycle count; idle channels supply zeros.
    """
    a, b, c = as_bits(a), as_bits(b), as_bits(c)
    cycles = _channel_cycles(schedule, a, b, c)
    out = np.empty(4 * cycles, dtype=np.uint8)
    for tag, stream in (("A", a), ("B", b), ("C", c)):
        positions = schedule.slots_of(tag)
        for i, slot in enumerate(positions):
            out[slot::4] = stream[i :: len(positions)]
    return out


def tdm_deinterleave(schedule: TdmSchedule, line, offset: int = 0):
    """Split a line stream back into (a, b, c); line[i] sits in slot (offset+i) mod 4."""
    line = as_bits(line)
    if len(line) % 4:
        raise WireFormatError(f"trailing partial cycle of {len(line) % 4} symbols")
    if not 0 <= offset <= 3:
        raise WireFormatError(f"slot offset {offset} outside 0..3")
    slots = (offset + np.arange(len(line))) % 4
    out = []
    for tag in ("A", "B", "C"):
        mask = np.isin(slots, schedule.slots_of(tag))
        out.append(line[mask])
    return tuple(out)


def invert_channel_b(bits) -> BitArray:
    """Complement every bit; applied to the channel B stream before interleaving."""
    return (1 - as_bits(bits)).astype(np.uint8)


def infer_slot_offset_from_idle(line) -> int:
    """Recover the slot offset of an idle line segment (post B-inversion).

    During idle the only 1-bits are channel B's inverted zeros, so their
    position mod 4 pins down the cycle alignment.
    """
    line = as_bits(line)
    ones = np.flatnonzero(line)
    if len(ones) == 0:
        raise SyncError("no B-channel marker bit in window")
    residues = np.unique(ones % 4)
    if len(residues) != 1:
        raise SyncError("window is not idle traffic: 1-bits in several slots")
    return (B_SLOT_INDEX - int(residues[0])) % 4


# ---------------------------------------------------------------------------
# Manchester coding and receiver synchronization


def manchester_encode(bits) -> BitArray:
    """Each bit b becomes the symbol pair (b, not b); doubles the baud rate."""
    bits = as_bits(bits)
    out = np.empty(2 * len(bits), dtype=np.uint8)
    out[0::2] = bits
    out[1::2] = 1 - bits
    return out


def manchester_decode(symbols, half_bit_phase: int, check: bool = True) -> BitArray:
    """Recover bits by sampling one symbol of every pair.

    half_bit_phase selects which half-symbol carries the bit value: 0 samples
    the first of each pair (the encoder convention), 1 samples the second
    (what a receiver clocked 180 degrees off would capture, turning the idle
    bits 0100 into 1011). With check=True, symbol pairs at even boundaries
    must be complementary; (0,0) or (1,1) raises with the offending position.
    """
    symbols = as_bits(symbols)
    if half_bit_phase not in (0, 1):
        raise WireFormatError(f"half-bit phase {half_bit_phase} outside 0..1")
    if len(symbols) % 2:
        raise WireFormatError("symbol count must be even")
    firsts = symbols[0::2]
    seconds = symbols[1::2]
    if check:
        bad = np.flatnonzero(firsts == seconds)
        if len(bad):
            raise CodingViolationError(2 * int(bad[0]))
    return (firsts if half_bit_phase == 0 else seconds).copy()


def _matches_idle_rotation(decoded: BitArray) -> bool:
    """True when `decoded` repeats some cyclic rotation of the idle cycle 0100."""
    if len(decoded) < 4:
        return False
    for r in range(4):
        ref = np.roll(IDLE_CYCLE_BITS, -r)
        reps = int(np.ceil(len(decoded) / 4))
        if np.array_equal(decoded, np.tile(ref, reps)[: len(decoded)]):
            return True
    return False


def resolve_phase(idle_window) -> int:
    """Pick the sampling phase whose decode of idle traffic repeats 0100.

    The out-of-phase sampling of an idle downstream line yields the inverted
    pattern 1011 and is rejected.
    """
    idle_window = as_bits(idle_window)
    if len(idle_window) < 16:
        raise SyncError("idle window too short to resolve phase")
    usable = idle_window[: len(idle_window) - (len(idle_window) % 2)]
    for phase in (0, 1):
        sampled = usable[phase::2]
        if _matches_idle_rotation(sampled):
            return phase
    raise SyncError("no sampling phase reproduces the idle pattern")


@dataclass
class LineSyncState:
    """Receiver alignment onto the repeating 8-symbol idle pattern."""

    locked: bool
    bit_slip_offset: int = 0
    half_bit_phase: int = 0
    consecutive_matches: int = 0
    # Index into the scanned stream of the first symbol that starts a full
    # cycle (idle-pattern position 0); decoding proceeds from here.
    aligned_index: int = 0


def bit_slip_sync(line, lock_threshold: int = DEFAULT_LOCK_THRESHOLD) -> LineSyncState:
    """Slip one symbol at a time until the idle pattern repeats.

    Returns a locked state once `lock_threshold` consecutive 8-symbol windows
    match a single rotation of the idle pattern. The transmitter keeps
    running throughout; reception may start at any symbol offset.
    """
    line = as_bits(line)
    pattern = DOWNSTREAM_IDLE_SYMBOLS
    rotations = [np.roll(pattern, -k) for k in range(8)]
    p = 0
    hypothesis = None
    consecutive = 0
    while p + 8 <= len(line):
        window = line[p : p + 8]
        match = None
        for k in range(8):
            if np.array_equal(window, rotations[k]):
                match = (k - p) % 8  # pattern position of line[0]
                break
        if match is None:
            p += 1  # bit slip
            hypothesis = None
            consecutive = 0
            continue
        if match == hypothesis:
            consecutive += 1
        else:
            hypothesis = match
            consecutive = 1
        p += 8
        if consecutive >= lock_threshold:
            offset = hypothesis
            base = (8 - offset) % 8
            aligned = base + 8 * ((p - base + 7) // 8)
            return LineSyncState(
                locked=True,
                bit_slip_offset=offset,
                half_bit_phase=offset % 2,
                consecutive_matches=consecutive,
                aligned_index=aligned,
            )
    return LineSyncState(locked=False, consecutive_matches=consecutive)


# ---------------------------------------------------------------------------
# Self-synchronizing scrambler, x^43 + 1

SCRAMBLER_ORDER = 43


def _seed_register(state) -> BitArray:
    if isinstance(state, (int, np.integer)):
        return bits_from_int(int(state), SCRAMBLER_ORDER)
    reg = as_bits(state)
    if len(reg) != SCRAMBLER_ORDER:
        raise WireFormatError(f"scrambler register needs {SCRAMBLER_ORDER} bits")
    return reg.copy()


class Scrambler:
    """Encoder: out[i] = in[i] xor out[i-43], fed back from its own output."""

    def __init__(self, state=0):
        self.register = _seed_register(state)  # register[0] is the oldest bit

    def scramble(self, bits) -> BitArray:
        bits = as_bits(bits)
        n = len(bits)
        out = bits.copy()
        if n == 0:
            return out
        # Within each residue class mod 43 the recurrence is a running XOR.
        k = SCRAMBLER_ORDER
        for r in range(min(k, n)):
            seq = out[r::k]
            seq[0] ^= self.register[r]
            np.bitwise_xor.accumulate(seq, out=seq)
        if n >= k:
            self.register = out[-k:].copy()
        else:
            self.register = np.concatenate([self.register[n:], out])
        return out


class Descrambler:
    """Decoder: out[i] = in[i] xor in[i-43]; correct after 43 received bits
    regardless of the initial register (self-synchronization)."""

    def __init__(self, state=0):
        self.register = _seed_register(state)  # register[0] is the oldest bit

    def descramble(self, bits) -> BitArray:
        bits = as_bits(bits)
        n = len(bits)
        if n == 0:
            return bits.copy()
        hist = np.concatenate([self.register, bits])
        out = bits ^ hist[:n]
        self.register = hist[n : n + SCRAMBLER_ORDER].copy()
        return out


# ---------------------------------------------------------------------------
# PRBS generation and verification

# Fibonacci LFSR recurrence s[i] = s[i - order] xor s[i - tap] (ITU-T taps).
PRBS_TAPS = {7: 6, 15: 14, 23: 18, 31: 28}


def _prbs_forward(history: BitArray, order: int, count: int) -> BitArray:
    """Extend a PRBS sequence by `count` bits past the given `order`-bit history."""
    tap = PRBS_TAPS[order]
    seq = np.empty(order + count, dtype=np.uint8)
    seq[:order] = history
    pos = order
    end = order + count
    while pos < end:
        step = min(tap, end - pos)
        np.bitwise_xor(
            seq[pos - order : pos - order + step],
            seq[pos - tap : pos - tap + step],
            out=seq[pos : pos + step],
        )
        pos += step
    return seq


class PrbsGenerator:
    """Maximal-length pseudo-random bit source of order 7, 15, 23 or 31."""

    def __init__(self, order: int, seed: int = 1):
        if order not in PRBS_TAPS:
            raise ValueError(f"PRBS order must be one of {sorted(PRBS_TAPS)}")
        if not 0 < seed < (1 << order):
            raise ValueError("PRBS seed must be nonzero and fit the register")
        self.order = order
        # The next `order` bits to be emitted; never all-zero.
        self._window = bits_from_int(seed, order)

    def stream(self, n: int) -> BitArray:
        if n < 1:
            raise ValueError("bit count must be >= 1")
        ext = _prbs_forward(self._window, self.order, n)
        self._window = ext[n : n + self.order].copy()
        return ext[:n]


def prbs_verify(order: int, bits) -> np.ndarray:
    """Self-seed from the first `order` received bits, then free-run and
    return the exact positions that disagree with the expected sequence."""
    if order not in PRBS_TAPS:
        raise ValueError(f"PRBS order must be one of {sorted(PRBS_TAPS)}")
    bits = as_bits(bits)
    if len(bits) <= order:
        raise ValueError(f"need more than {order} bits to verify")
    seed = bits[:order]
    if not seed.any():
        raise ValueError("all-zero verifier seed")
    expected = _prbs_forward(seed, order, len(bits) - order)
    return order + np.flatnonzero(bits[order:] != expected[order:])


def inject_bit_error(bits, position: int) -> BitArray:
    """Copy of the stream with one chosen bit flipped."""
    out = as_bits(bits).copy()
    out[position] ^= 1
    return out


# ---------------------------------------------------------------------------
# Whole-direction coding chains


def downstream_tx(a, b, c) -> BitArray:
    """Interleave A,B,A,C; invert B; Manchester-encode."""
    line = tdm_interleave(DOWNSTREAM_SCHEDULE, a, invert_channel_b(b), c)
    return manchester_encode(line)


def downstream_rx(symbols, half_bit_phase: int = 0, slot_offset: int = 0):
    """Inverse of downstream_tx for an aligned symbol stream."""
    line = manchester_decode(symbols, half_bit_phase)
    a, b_inv, c = tdm_deinterleave(DOWNSTREAM_SCHEDULE, line, slot_offset)
    return a, invert_channel_b(b_inv), c


def downstream_idle_symbols(cycles: int) -> BitArray:
    return np.tile(DOWNSTREAM_IDLE_SYMBOLS, cycles)


def upstream_tx(a, b, c, scrambler: Scrambler) -> BitArray:
    """Interleave A,B,C,C; invert B; scramble. Zero coding overhead."""
    line = tdm_interleave(UPSTREAM_SCHEDULE, a, invert_channel_b(b), c)
    return scrambler.scramble(line)


def upstream_rx(line, descrambler: Descrambler, slot_offset: int = 0):
    """Inverse of upstream_tx."""
    bits = descrambler.descramble(line)
    a, b_inv, c = tdm_deinterleave(UPSTREAM_SCHEDULE, bits, slot_offset)
    return a, invert_channel_b(b_inv), c


def training_pattern(n: int) -> BitArray:
    """Alternating 1,0 sent by a freshly reset upstream transmitter."""
    out = np.zeros(n, dtype=np.uint8)
    out[0::2] = 1
    return out
