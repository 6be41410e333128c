"""Back-end data path: per-link DataPumps with request tokens, the
round-robin EventBuilder with consistency checks, the PacketMover writing
into pooled 8 KB buffers, the bootstrap sequencer and trigger control.

Buffer contents are framed as records so the DAQ client can recover event
boundaries and per-link provenance: each record is a 16-bit tag word
(big-endian) followed by one fragment packet in wire format. Tags:

    0xE501          event header emitted by the builder (SOE packet with
                    the agreed event number and timestamp)
    0xE503          global end-of-event (zero-payload EOE packet)
    0xE507          global end-of-event of an event flagged incomplete
    0xE520 | link   fragment forwarded unmodified from that link (0..31)

Records are never split across buffers.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .messages import FragmentPacket

__all__ = [
    "FE_FIFO_BYTES",
    "RECORD_EVENT_HEADER",
    "RECORD_GLOBAL_EOE",
    "RECORD_GLOBAL_EOE_INCOMPLETE",
    "RECORD_FRAGMENT_BASE",
    "record_tag_link",
    "DataPump",
    "BufferDescriptor",
    "BufferPool",
    "PacketMover",
    "EventBuilder",
    "TriggerUnit",
    "LinkCounters",
]

FE_FIFO_BYTES = 2048

RECORD_EVENT_HEADER = 0xE501
RECORD_GLOBAL_EOE = 0xE503
RECORD_GLOBAL_EOE_INCOMPLETE = 0xE507
RECORD_FRAGMENT_BASE = 0xE520


def record_tag_link(tag: int) -> int | None:
    """Link ID of a fragment record tag, else None."""
    if RECORD_FRAGMENT_BASE <= tag < RECORD_FRAGMENT_BASE + 32:
        return tag - RECORD_FRAGMENT_BASE
    return None


@dataclass
class LinkCounters:
    packets: int = 0
    payload_bytes: int = 0
    crc_drops: int = 0
    lost_tokens: int = 0
    faults: int = 0


class DataPump:
    """Per-link request-token state machine feeding a 2 KB FE-FIFO.

    A data request is posted only while the FIFO has room for a complete
    maximum-size packet; with a 2 KB FIFO that means the FIFO is empty, so
    at most one packet is in flight per link and overflow is impossible.
    """

    def __init__(self, link_id: int):
        self.link_id = link_id
        self.enabled = False
        self.request_outstanding = False
        self.fault: str | None = None
        self.fifo: deque[bytes] = deque()
        self.fifo_used = 0
        self.counters = LinkCounters()

    @property
    def free_bytes(self) -> int:
        return FE_FIFO_BYTES - self.fifo_used

    def wants_request(self) -> bool:
        return (
            self.enabled
            and self.fault is None
            and not self.request_outstanding
            and self.free_bytes >= FE_FIFO_BYTES
        )

    def request_posted(self):
        self.request_outstanding = True

    def on_packet(self, data: bytes):
        if not self.enabled:
            self.counters.lost_tokens += 1
            return
        if len(data) > FE_FIFO_BYTES:
            self.fault = f"packet of {len(data)} bytes exceeds the FE-FIFO"
            self.enabled = False
            self.counters.faults += 1
            return
        if len(data) > self.free_bytes:
            raise AssertionError("FE-FIFO overflow: request-token discipline broken")
        self.fifo.append(data)
        self.fifo_used += len(data)
        self.request_outstanding = False
        self.counters.packets += 1

    def peek(self) -> bytes | None:
        return self.fifo[0] if self.fifo else None

    def unload(self) -> bytes:
        data = self.fifo.popleft()
        self.fifo_used -= len(data)
        return data


# ---------------------------------------------------------------------------
# Output buffers


@dataclass
class BufferDescriptor:
    buffer_id: int
    capacity: int = 8192
    header_reserve: int = 66
    fill_level: int = 0
    payload: bytearray = field(default_factory=bytearray)
    incomplete_event: bool = False
    has_event_end: bool = False

    @property
    def usable(self) -> int:
        return self.capacity - self.header_reserve

    @property
    def free(self) -> int:
        return self.usable - self.fill_level

    def reset(self):
        self.fill_level = 0
        self.payload = bytearray()
        self.incomplete_event = False
        self.has_event_end = False


class BufferPool:
    """Free descriptors (O_FIFO) and filled descriptors (I_FIFO).

    Every descriptor is in exactly one place: the free pool, the filled
    queue, held by the mover, or in flight at the transport sender.
    """

    def __init__(self, size: int = 64, capacity: int = 8192, header_reserve: int = 66):
        self.size = size
        self.o_fifo: deque[BufferDescriptor] = deque(
            BufferDescriptor(i, capacity, header_reserve) for i in range(size)
        )
        self.i_fifo: deque[BufferDescriptor] = deque()
        self.held = 0  # by the mover
        self.in_flight = 0  # at the transport sender

    def fetch_free(self) -> BufferDescriptor | None:
        if not self.o_fifo:
            return None
        self.held += 1
        return self.o_fifo.popleft()

    def push_filled(self, desc: BufferDescriptor):
        self.held -= 1
        self.i_fifo.append(desc)

    def pop_filled(self) -> BufferDescriptor | None:
        if not self.i_fifo:
            return None
        self.in_flight += 1
        return self.i_fifo.popleft()

    def release(self, desc: BufferDescriptor):
        desc.reset()
        self.in_flight -= 1
        self.o_fifo.append(desc)

    def audit(self) -> bool:
        return len(self.o_fifo) + len(self.i_fifo) + self.held + self.in_flight == self.size


class PacketMover:
    """Places records into pooled buffers, never splitting a record.

    The record size is known before any byte is unloaded, so the fit check
    happens first; when the current buffer is too full it rotates to the
    filled queue and a fresh descriptor is fetched. With the free pool
    exhausted the mover stalls, pushing backpressure up through the FE-FIFOs.
    """

    def __init__(self, pool: BufferPool):
        self.pool = pool
        self.current: BufferDescriptor | None = None
        self.stalls = 0
        self.records_written = 0

    def write_record(self, tag: int, packet_bytes: bytes, incomplete: bool = False) -> bool:
        """True when the record was written; False when stalled (retry later,
        nothing is consumed or lost)."""
        record = tag.to_bytes(2, "big") + packet_bytes
        if self.current is None:
            self.current = self.pool.fetch_free()
            if self.current is None:
                self.stalls += 1
                return False
        if len(record) > self.current.usable:
            raise AssertionError("record larger than a whole buffer")
        if len(record) > self.current.free:
            self.pool.push_filled(self.current)
            self.current = self.pool.fetch_free()
            if self.current is None:
                self.stalls += 1
                return False
        self.current.payload += record
        self.current.fill_level += len(record)
        self.current.incomplete_event |= incomplete
        if tag in (RECORD_GLOBAL_EOE, RECORD_GLOBAL_EOE_INCOMPLETE):
            self.current.has_event_end = True
        self.records_written += 1
        return True

    def flush(self):
        """Push a partially filled buffer out (end of run)."""
        if self.current is not None and self.current.fill_level > 0:
            self.pool.push_filled(self.current)
            self.current = None


# ---------------------------------------------------------------------------
# Event builder


class EventBuilder:
    """Assembles one event at a time from all active links.

    The first packet of each link must carry SOE; event number and timestamp
    must agree across links or the builder halts (terminal until operator
    reset). Fragments are CRC-checked on unload: valid ones are forwarded
    unmodified, corrupt ones are deleted and the event is flagged incomplete.
    Links are served in a fixed round-robin order (the builder waits for the
    link whose turn it is), which makes the output byte stream a pure
    function of the packet contents.
    """

    AWAIT_SOE = "await_soe"
    BODY = "body"
    HALTED = "halted"

    def __init__(self, active_links: list[int], mover: PacketMover):
        self.active_links = sorted(active_links)
        self.mover = mover
        self.phase = self.AWAIT_SOE
        self.halt_reason: str | None = None
        self.current_event_number: int | None = None
        self.current_timestamp: int | None = None
        self.events_built = 0
        self.events_incomplete = 0
        self.counters: dict[int, LinkCounters] = {l: LinkCounters() for l in self.active_links}
        self._turn = 0
        self._soe_records: list[tuple[int, bytes]] = []
        self._event_incomplete = False
        self._eoe_done: set[int] = set()
        # Records accepted but not yet written to a buffer (mover stalled).
        self._pending: deque[tuple[int, bytes, bool]] = deque()

    def _halt(self, reason: str):
        self.phase = self.HALTED
        self.halt_reason = reason

    def _emit(self, tag: int, data: bytes):
        self._pending.append((tag, data, self._event_incomplete))
        self._drain()

    def _drain(self) -> bool:
        while self._pending:
            tag, data, incomplete = self._pending[0]
            if not self.mover.write_record(tag, data, incomplete=incomplete):
                return False
            self._pending.popleft()
        return True

    def step(self, pumps: dict[int, DataPump]) -> bool:
        """Advance by at most one packet; returns True on progress."""
        if self.phase == self.HALTED or not self.active_links:
            return False
        if not self._drain():
            return False  # no free buffers: backpressure, consume nothing
        if self.phase == self.AWAIT_SOE:
            return self._step_await_soe(pumps)
        return self._step_body(pumps)

    def run(self, pumps: dict[int, DataPump]):
        while self.step(pumps):
            pass

    # -- AwaitSOE phase ------------------------------------------------------

    def _step_await_soe(self, pumps: dict[int, DataPump]) -> bool:
        link = self.active_links[self._turn]
        pump = pumps[link]
        if pump.peek() is None:
            return False
        data = pump.unload()
        packet = FragmentPacket.deserialize(data)
        if not packet.crc_ok:
            # Unusable first packet: drop it, flag the event, treat the link
            # as having delivered its SOE with unknown values.
            self.counters[link].crc_drops += 1
            self._event_incomplete = True
            if packet.eoe:
                self._eoe_done.add(link)
            self._advance_await(pumps, link, None)
            return True
        if not packet.soe:
            self._halt(f"link {link}: first packet of event lacks SOE")
            return False
        if self.current_event_number is None:
            self.current_event_number = packet.event_number
            self.current_timestamp = packet.timestamp
        elif (packet.event_number, packet.timestamp) != (
            self.current_event_number,
            self.current_timestamp,
        ):
            self._halt(
                "start-of-event mismatch: "
                f"link {link} reports event {packet.event_number}/ts {packet.timestamp}, "
                f"expected {self.current_event_number}/ts {self.current_timestamp}"
            )
            return False
        if packet.eoe:
            self._eoe_done.add(link)
        self.counters[link].packets += 1
        self.counters[link].payload_bytes += packet.size_bytes
        self._advance_await(pumps, link, data)
        return True

    def _advance_await(self, pumps, link: int, soe_record: bytes | None):
        if soe_record is not None:
            self._soe_records.append((link, soe_record))
        self._turn += 1
        if self._turn < len(self.active_links):
            return
        # All active links delivered their first packet: emit the event
        # header, then the SOE packets in link order, then enter Body.
        number = self.current_event_number if self.current_event_number is not None else 0xFFFFFFFF
        ts = self.current_timestamp if self.current_timestamp is not None else 0
        header = FragmentPacket.build(
            soe=True, eoe=False,
            payload_words=FragmentPacket.event_header_payload(number, ts),
        )
        self._emit(RECORD_EVENT_HEADER, header.serialize())
        for l, rec in self._soe_records:
            self._emit(RECORD_FRAGMENT_BASE + l, rec)
        self._soe_records = []
        self.phase = self.BODY
        self._turn = 0

    # -- Body phase -----------------------------------------------------------

    def _body_links(self) -> list[int]:
        return [l for l in self.active_links if l not in self._eoe_done]

    def _step_body(self, pumps: dict[int, DataPump]) -> bool:
        remaining = self._body_links()
        if not remaining:
            return self._finish_event()
        if self._turn >= len(remaining):
            self._turn = 0
        link = remaining[self._turn]
        pump = pumps[link]
        if pump.peek() is None:
            return False
        data = pump.unload()
        packet = FragmentPacket.deserialize(data)
        if packet.eoe:
            # The link leaves the rotation; the next link slides into this
            # turn index, so only wrap-around needs handling.
            self._eoe_done.add(link)
            if self._turn >= len(remaining) - 1:
                self._turn = 0
        else:
            self._turn = (self._turn + 1) % len(remaining)
        if not packet.crc_ok:
            # Deleted, not retransmitted; the event ships incomplete.
            self.counters[link].crc_drops += 1
            self._event_incomplete = True
            return True
        self.counters[link].packets += 1
        self.counters[link].payload_bytes += packet.size_bytes
        self._emit(RECORD_FRAGMENT_BASE + link, data)
        return True

    def _finish_event(self) -> bool:
        trailer = FragmentPacket.build(soe=False, eoe=True, payload_words=())
        tag = RECORD_GLOBAL_EOE_INCOMPLETE if self._event_incomplete else RECORD_GLOBAL_EOE
        self._emit(tag, trailer.serialize())
        self.events_built += 1
        if self._event_incomplete:
            self.events_incomplete += 1
        self.phase = self.AWAIT_SOE
        self.current_event_number = None
        self.current_timestamp = None
        self._event_incomplete = False
        self._eoe_done = set()
        self._turn = 0
        return True

    def reset_after_halt(self):
        """Operator reset: drop the partial event, resume waiting for SOEs."""
        self.phase = self.AWAIT_SOE
        self.halt_reason = None
        self.current_event_number = None
        self.current_timestamp = None
        self._soe_records = []
        self._event_incomplete = False
        self._eoe_done = set()
        self._turn = 0
        self._pending.clear()


# ---------------------------------------------------------------------------
# Trigger control


class TriggerUnit:
    """Issues channel A trigger frames under a busy-throttle policy.

    Periodic mode fires at fixed absolute ticks, which keeps front-end
    timestamps identical across abstraction levels. Gated mode saturates
    the system without ever losing a trigger: a new one goes out only when
    every card acknowledged the previous one (SET_BUSY and CLEAR_BUSY both
    seen) and the events still in the pipeline stay below the front-end
    buffering depth.
    """

    def __init__(self, mode: str = "gated", count: int = 0, period_ticks: int = 0,
                 start_tick: int = 0, max_in_flight: int = 4):
        if mode not in ("gated", "periodic"):
            raise ValueError("trigger mode must be 'gated' or 'periodic'")
        self.mode = mode
        self.count = count
        self.period_ticks = period_ticks
        self.start_tick = start_tick
        self.max_in_flight = max_in_flight
        self.issued = 0
        self.set_busy_seen = 0
        self.clear_busy_seen = 0

    def next_issue_tick(self, now: int, events_built: int, num_cards: int) -> int | None:
        """Tick at which the next trigger may go out, or None when finished
        or (gated mode) while the pipeline must first drain."""
        if self.issued >= self.count:
            return None
        if self.mode == "periodic":
            return self.start_tick + self.issued * self.period_ticks
        in_flight = self.issued - events_built
        ready = (
            in_flight < self.max_in_flight
            and self.set_busy_seen >= self.issued * num_cards
            and self.clear_busy_seen >= self.issued * num_cards
        )
        return max(now, self.start_tick) if ready else None

    def on_issued(self):
        self.issued += 1

    def on_ack(self, msg):
        if msg.set_busy:
            self.set_busy_seen += 1
        if msg.clear_busy:
            self.clear_busy_seen += 1


# ---------------------------------------------------------------------------
# Bootstrap


@dataclass
class BootstrapResult:
    id_map: dict[int, int]  # port -> serial
    absent_ports: list[int]
    verified: bool


def bootstrap_sequence(broadcast_b, targeted_read, ports: list[int]) -> BootstrapResult:
    """ID assignment at system start.

    `broadcast_b(txn)` sends one broadcast transaction down the fanout and
    returns {port: response} gathered from the per-port return links;
    `targeted_read(port, address)` reads one register from one card after
    IDs exist. Step 1 learns serial <-> port from the broadcast serial reads;
    step 2 broadcasts the mapping; step 3 verifies every card's ID register.
    """
    from .frontend import REG_ASSIGNED_ID, REG_MAP_PORT, REG_MAP_SERIAL_HI, REG_MAP_SERIAL_LO
    from .frontend import REG_SERIAL_HI, REG_SERIAL_LO
    from .messages import ChannelBTransaction

    hi = broadcast_b(ChannelBTransaction(broadcast=True, read=True, address=REG_SERIAL_HI))
    lo = broadcast_b(ChannelBTransaction(broadcast=True, read=True, address=REG_SERIAL_LO))
    serials: dict[int, int] = {}
    absent = []
    for port in ports:
        if port in hi and port in lo:
            serials[port] = ((hi[port].data & 0x1FFFFF) << 32) | lo[port].data
        else:
            absent.append(port)
    values = list(serials.values())
    if len(set(values)) != len(values):
        raise RuntimeError("duplicate front-end serial numbers detected")
    for port, serial in serials.items():
        broadcast_b(ChannelBTransaction(
            broadcast=True, write=True, address=REG_MAP_SERIAL_HI, data=(serial >> 32) & 0x1FFFFF))
        broadcast_b(ChannelBTransaction(
            broadcast=True, write=True, address=REG_MAP_SERIAL_LO, data=serial & 0xFFFFFFFF))
        broadcast_b(ChannelBTransaction(
            broadcast=True, write=True, address=REG_MAP_PORT, data=port))
    verified = True
    for port in serials:
        resp = targeted_read(port, REG_ASSIGNED_ID)
        if resp is None or resp.data != port:
            verified = False
    return BootstrapResult(id_map=serials, absent_ports=absent, verified=verified)
