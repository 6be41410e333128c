"""Message-level deterministic engine.

Frames and packets move as whole units; per-channel serialization times and
the request round trip are modeled with integer-tick pacing, so bandwidth
shares and flow control behave like the symbol-level engine without paying
for per-symbol work. Channel A latency accounting is bit-exact (the same
arithmetic the symbol-level chain performs), which keeps front-end
timestamps identical across the two abstraction levels.
"""

from __future__ import annotations

import heapq

from . import timebase
from .backend import (
    BufferPool,
    DataPump,
    EventBuilder,
    PacketMover,
    TriggerUnit,
    bootstrap_sequence,
)
from .frontend import FrontEndCard
from .messages import CHANNEL_C_REQUEST_BITS, ChannelAMessageDown, ChannelCRequest
from .transport import (
    FLAG_FIRST_OF_BURST,
    FRAME_OVERHEAD_BYTES,
    CreditGrant,
    TransportClient,
    TransportServer,
)

__all__ = ["MessageEngine"]

# Serialization ticks per frame, derived from the per-channel bit periods.
# Register traffic (channel B) is exchanged untimed during bootstrap, before
# data taking, so only A, C-down and the return links need pacing here.
DOWN_C_FRAME_TICKS = CHANNEL_C_REQUEST_BITS * timebase.DOWN_TICKS_PER_CHANNEL_BIT["C"]
UP_A_FRAME_TICKS = 10 * timebase.UP_TICKS_PER_CHANNEL_BIT["A"]


def _up_c_packet_ticks(nbytes: int) -> int:
    # Start bit plus the packet bytes at 2 ticks per channel C bit.
    return (8 * nbytes + 1) * timebase.UP_TICKS_PER_CHANNEL_BIT["C"]


def _eth_wire_ticks(payload_bytes: int) -> int:
    # 1 Gbps = 2.5 bits per tick; overhead modeled per frame.
    bits = 8 * (payload_bytes + FRAME_OVERHEAD_BYTES)
    return -(-bits * 2 // 5)  # ceil(bits / 2.5)


class MessageEngine:
    def __init__(self, config, rng):
        self.config = config
        self.rng = rng
        self.now = 0
        self._heap = []
        self._seq = 0
        self._stopped = False

        gen = config.generator_config()
        self.cards = {
            port: FrontEndCard(
                serial_number=config.serial_for(port),
                generator=gen,
                buffering_depth=config.buffering_depth,
                clear_busy_on=config.clear_busy_on,
            )
            for port in range(config.num_frontends)
        }
        self.pumps = {port: DataPump(port) for port in self.cards}
        self.pool = BufferPool(
            size=config.buffer_pool,
            capacity=config.mtu,
            header_reserve=FRAME_OVERHEAD_BYTES,
        )
        self.mover = PacketMover(self.pool)
        self.builder = EventBuilder(sorted(self.cards), self.mover)
        self.server = TransportServer(self.pool)
        self.client = TransportClient(
            expected_word_fn=config.expected_word_fn(),
            keep_events=config.keep_client_events,
        )
        self.trigger_unit = TriggerUnit(
            mode=config.trigger_mode,
            count=config.trigger_count,
            period_ticks=config.trigger_period_ticks,
            start_tick=config.trigger_start_tick,
            max_in_flight=config.buffering_depth,
        )
        self.latency = config.link_latency_ticks
        self.rtt_ticks = config.request_rtt_ticks

        # Channel pacing state.
        self._next_a_bit = 0
        self._down_c_busy = 0
        self._up_a_busy = {port: 0 for port in self.cards}
        self._up_c_busy = {port: 0 for port in self.cards}
        self._eth_busy = 0

        self._token_check_scheduled = False
        self._trigger_check_scheduled = False
        self.violations: list[str] = []
        self.bootstrap_result = None
        # Scripted packet loss: {link: set of arrival indices to drop}.
        self._drop_plan: dict[int, set[int]] = {}
        self._arrival_index: dict[int, int] = {port: 0 for port in self.cards}

        # Measurement window snapshots.
        self.measure_start_tick = 0
        self._payload_snapshot = {}
        self._client_payload_snapshot = 0

    # -- scheduling -----------------------------------------------------------

    def _at(self, tick: int, fn, *args):
        self._seq += 1
        heapq.heappush(self._heap, (max(tick, self.now), self._seq, fn, args))

    def run(self):
        self._bootstrap()
        for fault in self.config.faults:
            self._apply_static_fault(fault)
        self.client_grant()
        self._schedule_trigger_check()
        if self.config.measure_warmup_ticks:
            self._at(self.config.measure_warmup_ticks, self._snapshot_measurement)
        end_tick = self.config.run_ticks
        while self._heap and not self._stopped:
            tick, _, fn, args = heapq.heappop(self._heap)
            if end_tick is not None and tick > end_tick:
                self.now = end_tick
                break
            self.now = tick
            fn(*args)
        if not self.pool.audit():
            self.violations.append("buffer descriptor conservation broken")
        if self.server.max_burst_violation:
            self.violations.append("transport server exceeded granted credit")

    def _stop_if_done(self):
        if self.config.run_ticks is not None:
            return
        if (
            self.trigger_unit.issued >= self.trigger_unit.count
            and self.client.stats.events >= self.trigger_unit.count
        ):
            self._stopped = True

    # -- bootstrap -------------------------------------------------------------

    def _bootstrap(self):
        """ID assignment runs before data taking; its register traffic is
        exchanged directly (not timed) and is not part of any measurement."""

        def broadcast_b(txn):
            out = {}
            for port, card in self.cards.items():
                resp = card.on_channel_b(txn)
                if resp is not None:
                    out[port] = resp
            return out

        def targeted_read(port, address):
            from .messages import ChannelBTransaction

            txn = ChannelBTransaction(read=True, target_id=port, address=address)
            for card in self.cards.values():
                resp = card.on_channel_b(txn)
                if resp is not None:
                    return resp
            return None

        self.bootstrap_result = bootstrap_sequence(
            broadcast_b, targeted_read, sorted(self.cards)
        )
        for port in self.bootstrap_result.id_map:
            self.pumps[port].enabled = True
        self._schedule_token_check()

    def _apply_static_fault(self, fault):
        kind = fault.get("type")
        if kind == "corrupt_fragment":
            self.cards[fault["link"]].corrupt_fragments.add(
                (fault["event"], fault["channel"])
            )
        elif kind == "soe_skew":
            self.cards[fault["link"]].event_number_offset = fault.get("delta", 1)
        elif kind == "drop_packet":
            self._drop_plan.setdefault(fault["link"], set()).add(fault["index"])
        else:
            raise ValueError(f"fault type {kind!r} not supported at message level")

    # -- triggers ---------------------------------------------------------------

    def _schedule_trigger_check(self):
        if not self._trigger_check_scheduled:
            self._trigger_check_scheduled = True
            self._at(self.now, self._trigger_check)

    def _trigger_check(self):
        self._trigger_check_scheduled = False
        tick = self.trigger_unit.next_issue_tick(
            self.now, self.builder.events_built, len(self.cards)
        )
        if tick is None:
            self._stop_if_done()
            return
        if tick > self.now:
            self._at(tick, self._schedule_trigger_check_now)
            return
        self._issue_trigger()

    def _schedule_trigger_check_now(self):
        self._schedule_trigger_check()

    def _issue_trigger(self):
        # Align to the TDM cycle; the A queue is drained cycle by cycle.
        issue = -(-self.now // timebase.TICKS_PER_DOWN_CYCLE) * timebase.TICKS_PER_DOWN_CYCLE
        k_start = max(self._next_a_bit, 2 * (issue // timebase.TICKS_PER_DOWN_CYCLE))
        self._next_a_bit = k_start + 10
        arrival = timebase.down_a_frame_arrival_tick(k_start) + self.latency
        self.trigger_unit.on_issued()
        msg = ChannelAMessageDown(sampling_stop=True)
        self._at(arrival, self._deliver_trigger, msg)
        self._schedule_trigger_check()

    def _deliver_trigger(self, msg):
        for port in sorted(self.cards):
            out = self.cards[port].on_channel_a(msg, self.now)
            self._emit_card_output(port, out)
        self._schedule_token_check()

    def _emit_card_output(self, port, out):
        for reply in out.a_replies:
            start = max(self.now, self._up_a_busy[port])
            finish = start + UP_A_FRAME_TICKS
            self._up_a_busy[port] = finish
            self._at(finish + self.latency, self._on_ack, reply)
        for data in out.packets:
            self._send_packet_up(port, data)

    def _on_ack(self, reply):
        self.trigger_unit.on_ack(reply)
        self._schedule_trigger_check()

    def _send_packet_up(self, port, data: bytes):
        start = max(self.now, self._up_c_busy[port])
        finish = start + _up_c_packet_ticks(len(data))
        self._up_c_busy[port] = finish
        self._at(finish + self.latency, self._packet_arrived, port, data)

    def _packet_arrived(self, port, data: bytes):
        index = self._arrival_index[port]
        self._arrival_index[port] = index + 1
        if index in self._drop_plan.get(port, ()):
            # Scripted transit loss. Clearing the token lets the pump request
            # again, so the builder faces the stream minus this packet.
            self.pumps[port].request_outstanding = False
            self._schedule_token_check()
            return
        self.pumps[port].on_packet(data)
        self._progress()

    # -- request tokens -----------------------------------------------------------

    def _schedule_token_check(self):
        if not self._token_check_scheduled:
            self._token_check_scheduled = True
            self._at(self.now, self._token_check)

    def _token_check(self):
        self._token_check_scheduled = False
        mask = 0
        for port in sorted(self.pumps):
            if self.pumps[port].wants_request():
                mask |= 1 << port
                self.pumps[port].request_posted()
        if mask == 0:
            return
        start = max(self.now, self._down_c_busy)
        finish = start + DOWN_C_FRAME_TICKS
        self._down_c_busy = finish
        req = ChannelCRequest(target_mask=mask)
        self._at(finish + self.latency, self._deliver_request, req)

    def _deliver_request(self, req):
        for port in sorted(self.cards):
            if not (req.target_mask >> port) & 1:
                continue
            out = self.cards[port].on_channel_c(req)
            self._emit_card_output(port, out)

    # -- builder / transport ---------------------------------------------------------

    def _progress(self):
        self.builder.run(self.pumps)
        self._maybe_flush()
        self._schedule_token_check()
        self._schedule_trigger_check()
        self._server_kick()

    def _maybe_flush(self):
        """Event-count runs push the last partially filled buffer out once
        the whole trigger plan has been built."""
        if (
            self.config.run_ticks is None
            and self.trigger_unit.issued >= self.trigger_unit.count
            and self.builder.events_built >= self.trigger_unit.count
        ):
            self.mover.flush()

    def _server_kick(self):
        if self.now < self._eth_busy:
            return
        out = self.server.next_frame()
        if out is None:
            return
        frame, desc = out
        wire = _eth_wire_ticks(len(frame.payload))
        self._eth_busy = self.now + wire
        self._at(self._eth_busy, self._send_complete, desc)
        self._at(self._eth_busy + self.rtt_ticks // 2, self._client_receive, frame)

    def _send_complete(self, desc):
        self.pool.release(desc)
        self._progress()

    def _client_receive(self, frame):
        self.client.receive(frame.serialize())
        if frame.flags & FLAG_FIRST_OF_BURST:
            # Grant renewal pipelines against the burst in flight.
            self._at(self.now + self.rtt_ticks // 2, self._grant_arrives)
        self._stop_if_done()

    def client_grant(self):
        self._at(self.now + self.rtt_ticks // 2, self._grant_arrives)

    def _grant_arrives(self):
        self.server.on_grant(CreditGrant(self.config.credit))
        self._server_kick()

    # -- measurement -----------------------------------------------------------------

    def _snapshot_measurement(self):
        self.measure_start_tick = self.now
        self._payload_snapshot = {
            port: c.payload_bytes for port, c in self.builder.counters.items()
        }
        self._client_payload_snapshot = self.client.stats.payload_bytes

    def measured_link_payload(self) -> dict[int, int]:
        return {
            port: c.payload_bytes - self._payload_snapshot.get(port, 0)
            for port, c in self.builder.counters.items()
        }

    def measured_client_payload(self) -> int:
        return self.client.stats.payload_bytes - self._client_payload_snapshot

    def measured_ticks(self) -> int:
        return max(self.now - self.measure_start_tick, 1)
