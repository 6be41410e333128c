"""Symbol-level deterministic engine.

Every line symbol is materialized: the downstream fanout runs the full
interleave / B-inversion / Manchester chain and each front-end receiver
acquires lock by bit slip; return links carry the training sequence and the
scrambled interleaved channels. Time advances in slices of whole TDM
cycles, clipped so trigger issue ticks land exactly on slice boundaries
(that keeps channel A latency accounting identical to the message-level
engine).
"""

from __future__ import annotations

import numpy as np

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
from .messages import (
    ChannelAMessageDown,
    ChannelCRequest,
    encode_channel_a,
    encode_channel_b,
    encode_channel_c_request,
)
from .streams import DownstreamReceiver, DownstreamTransmitter, UpstreamReceiver, UpstreamTransmitter
from .transport import FRAME_OVERHEAD_BYTES, CreditGrant, TransportClient, TransportServer

__all__ = ["SymbolEngine"]


class _CardLink:
    """One front-end card with its line interfaces."""

    def __init__(self, port, card, training_bits, lock_threshold):
        self.port = port
        self.card = card
        self.down_rx = DownstreamReceiver(origin_tick=0, lock_threshold=lock_threshold)
        self.up_tx = UpstreamTransmitter(training_bits=training_bits)


class SymbolEngine:
    def __init__(self, config, rng):
        if config.link_latency_ticks:
            raise ValueError("symbol-level runs model zero link latency")
        self.config = config
        self.now = 0
        self.slice_ticks = config.slice_cycles * timebase.TICKS_PER_DOWN_CYCLE

        gen = config.generator_config()
        self.links: dict[int, _CardLink] = {}
        self.backend_rx: dict[int, UpstreamReceiver] = {}
        self.pumps: dict[int, DataPump] = {}
        self._link_rngs: dict[int, tuple] = {}
        for port in range(config.num_frontends):
            card = FrontEndCard(
                serial_number=config.serial_for(port),
                generator=gen,
                buffering_depth=config.buffering_depth,
                clear_busy_on=config.clear_busy_on,
            )
            self.links[port] = _CardLink(port, card, config.training_bits, config.lock_threshold)
            self.backend_rx[port] = UpstreamReceiver(training_bits=config.training_bits)
            self.pumps[port] = DataPump(port)
            self._link_rngs[port] = (
                np.random.default_rng(rng.integers(1 << 63)),  # downstream at this card
                np.random.default_rng(rng.integers(1 << 63)),  # upstream from this card
            )

        self.down_tx = DownstreamTransmitter()
        self.pool = BufferPool(
            size=config.buffer_pool, capacity=config.mtu, header_reserve=FRAME_OVERHEAD_BYTES
        )
        self.mover = PacketMover(self.pool)
        self.builder = EventBuilder(sorted(self.links), self.mover)
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
        self._b_inbox: dict[int, list] = {port: [] for port in self.links}
        self.violations: list[str] = []
        self.bootstrap_result = None
        self._line_flips = [f for f in config.faults if f.get("type") == "line_flip"]
        self._link_resets = [f for f in config.faults if f.get("type") == "link_reset"]

    # -- slice processing -------------------------------------------------------

    def _advance_one_slice(self):
        t0 = self.now
        t1 = t0 + self.slice_ticks
        pending = self.trigger_unit.next_issue_tick(
            t0, self.builder.events_built, len(self.links)
        )
        if pending is not None and t0 < pending < t1:
            t1 = pending  # clip so issue happens exactly on a boundary
        if pending is not None and pending <= t0:
            self._issue_trigger()
        self._apply_link_resets(t0, t1)

        # Downstream: one fanout stream, per-receiver corruption.
        cycles = (t1 - t0) // timebase.TICKS_PER_DOWN_CYCLE
        symbols = self.down_tx.produce_cycles(cycles)
        for port in sorted(self.links):
            link = self.links[port]
            received = self._corrupt(symbols, self._link_rngs[port][0], port, "down", t0, 2)
            events = link.down_rx.feed(received)
            self._handle_down_events(link, events)

        # Upstream: one independent stream per link.
        for port in sorted(self.links):
            link = self.links[port]
            bits = link.up_tx.produce(t1 - t0)
            received = self._corrupt(bits, self._link_rngs[port][1], port, "up", t0, 1)
            events = self.backend_rx[port].feed(received)
            self._handle_up_events(port, events)

        self.now = t1
        self._backend_logic()

    def _corrupt(self, bits, rng, port, direction, t0, ticks_per_symbol):
        out = bits
        if self.config.ber > 0.0 and len(bits):
            mask = rng.random(len(bits)) < self.config.ber
            if mask.any():
                out = out ^ mask.astype(np.uint8)
        for fault in self._line_flips:
            if fault.get("link") == port and fault.get("direction") == direction:
                pos = (fault["tick"] - t0) // ticks_per_symbol
                if 0 <= pos < len(out):
                    out = out.copy()
                    out[pos] ^= 1
        return out

    def _apply_link_resets(self, t0, t1):
        for fault in self._link_resets:
            if t0 <= fault["tick"] < t1 and not fault.get("done"):
                port = fault["link"]
                self.links[port].up_tx.reset()
                self.backend_rx[port].reset()
                fault["done"] = True

    # -- card side ---------------------------------------------------------------

    def _handle_down_events(self, link: _CardLink, events):
        for msg, arrival_tick in events.a:
            if msg is None:
                continue
            out = link.card.on_channel_a(msg, arrival_tick)
            self._emit_card_output(link, out)
        for txn in events.b:
            if txn is None:
                resp = link.card.on_channel_b_parity_error()
            else:
                resp = link.card.on_channel_b(txn)
            if resp is not None:
                link.up_tx.enqueue("B", encode_channel_b(resp))
        for req in events.c:
            if req is None:
                continue
            out = link.card.on_channel_c(req)
            self._emit_card_output(link, out)

    def _emit_card_output(self, link: _CardLink, out):
        for reply in out.a_replies:
            link.up_tx.enqueue("A", encode_channel_a(reply))
        for data in out.packets:
            bits = np.concatenate(
                [np.ones(1, dtype=np.uint8), np.unpackbits(np.frombuffer(data, dtype=np.uint8))]
            )
            link.up_tx.enqueue("C", bits)

    # -- backend side ---------------------------------------------------------------

    def _handle_up_events(self, port, events):
        for msg in events.a:
            if msg is not None:
                self.trigger_unit.on_ack(msg)
        for txn in events.b:
            if txn is not None:
                self._b_inbox[port].append(txn)
        for data in events.packets:
            self.pumps[port].on_packet(data)

    def _backend_logic(self):
        mask = 0
        for port in sorted(self.pumps):
            if self.pumps[port].wants_request():
                mask |= 1 << port
                self.pumps[port].request_posted()
        if mask:
            self.down_tx.enqueue("C", encode_channel_c_request(ChannelCRequest(target_mask=mask)))
        self.builder.run(self.pumps)
        if (
            self.config.run_ticks is None
            and self.trigger_unit.issued >= self.trigger_unit.count
            and self.builder.events_built >= self.trigger_unit.count
        ):
            self.mover.flush()
        # Transport: the Ethernet side is not symbol-timed; frames leave as
        # soon as credit allows and grants renew immediately.
        while True:
            if self.server.credit == 0:
                self.server.on_grant(CreditGrant(self.config.credit))
            out = self.server.next_frame()
            if out is None:
                break
            frame, desc = out
            self.client.receive(frame.serialize())
            self.pool.release(desc)
            self.builder.run(self.pumps)

    def _issue_trigger(self):
        self.down_tx.enqueue("A", encode_channel_a(ChannelAMessageDown(sampling_stop=True)))
        self.trigger_unit.on_issued()

    # -- bootstrap --------------------------------------------------------------------

    def _run_slices(self, n):
        for _ in range(n):
            self._advance_one_slice()

    def _wait_links_ready(self):
        """Idle until every front-end receiver locked onto the idle pattern
        and every return link finished its training sequence (bootstrap
        precondition: links trained and locked)."""
        for _ in range(200):
            if all(l.down_rx.locked for l in self.links.values()) and all(
                rx._training_left == 0 for rx in self.backend_rx.values()
            ):
                return
            self._advance_one_slice()
        raise RuntimeError("links failed to train and lock")

    def _bootstrap(self):
        timeout_slices = 400

        def exchange(txn, expected_ports):
            start_counts = {port: len(inbox) for port, inbox in self._b_inbox.items()}
            self.down_tx.enqueue("B", encode_channel_b(txn))
            for _ in range(timeout_slices):
                self._advance_one_slice()
                if all(len(self._b_inbox[p]) > start_counts[p] for p in expected_ports):
                    break
            return {
                port: self._b_inbox[port][-1]
                for port in self._b_inbox
                if len(self._b_inbox[port]) > start_counts[port]
            }

        def broadcast_b(txn):
            return exchange(txn, list(self._b_inbox))

        def targeted_read(port, address):
            from .messages import ChannelBTransaction

            txn = ChannelBTransaction(read=True, target_id=port, address=address)
            return exchange(txn, [port]).get(port)

        self.bootstrap_result = bootstrap_sequence(broadcast_b, targeted_read, sorted(self.links))
        for port in self.bootstrap_result.id_map:
            self.pumps[port].enabled = True

    # -- run ---------------------------------------------------------------------------

    def run(self):
        self._wait_links_ready()
        self._bootstrap()
        if self.now >= self.config.trigger_start_tick:
            raise RuntimeError(
                f"bootstrap finished at tick {self.now}, after the configured "
                f"data-taking start {self.config.trigger_start_tick}"
            )
        max_ticks = self.config.run_ticks
        idle_slices = 0
        while True:
            before = (
                self.client.stats.events,
                self.trigger_unit.issued,
                self.builder.events_built,
                sum(len(p.fifo) for p in self.pumps.values()),
            )
            self._advance_one_slice()
            if max_ticks is not None and self.now >= max_ticks:
                break
            if max_ticks is None:
                if (
                    self.trigger_unit.issued >= self.trigger_unit.count
                    and self.client.stats.events >= self.trigger_unit.count
                ):
                    break
                after = (
                    self.client.stats.events,
                    self.trigger_unit.issued,
                    self.builder.events_built,
                    sum(len(p.fifo) for p in self.pumps.values()),
                )
                idle_slices = idle_slices + 1 if after == before else 0
                if idle_slices > 2000:
                    self.violations.append("symbol engine stalled before completion")
                    break
        if not self.pool.audit():
            self.violations.append("buffer descriptor conservation broken")
