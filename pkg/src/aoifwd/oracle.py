"""Deterministic discrete-event twin of the threaded pipeline.

The same sender, rings, classification, and age accounting run on a
virtual clock; every stage's per-op cost is an explicit config parameter.
Contention on the forwarding table is modeled by an admission schedule:
write-preferring grants for the RWL backend, zero reader wait for RCU
(whose write cost carries the copy surcharge). Runs are bit-reproducible
for a given config and trace.
"""

from __future__ import annotations

import heapq
from typing import Callable, List, Optional

from .core import Backend, Clock, ClockMode, Mode, PacketType, RunConfig
from .metrics import AgeLedger, Classification, FibAgeTracker, RunReport, classify, finalize
from .rings import PushPolicy, Ring, RingRole
from .workload import ControlRegister, Sender, Trace, generate_trace


class _RwlSchedule:
    """Write-preferring admission on virtual time.

    Single-writer contract: write requests are issued sequentially, so the
    previous write has always completed when the next one arrives.
    """

    __slots__ = ("_reader_ends", "_w_req", "_w_end")

    def __init__(self):
        self._reader_ends: List[int] = []
        self._w_req = -1
        self._w_end = -1

    def read_request(self, t: int, dur: int) -> int:
        # a writer waiting or active at t fences this reader out until it ends
        grant = self._w_end if (self._w_req <= t < self._w_end) else t
        ends = self._reader_ends
        if len(ends) > 32:
            self._reader_ends = ends = [e for e in ends if e > t]
        ends.append(grant + dur)
        return grant

    def write_request(self, t: int, dur: int) -> int:
        ends = [e for e in self._reader_ends if e > t]
        self._reader_ends = ends
        grant = max(ends) if ends else t
        if grant < t:
            grant = t
        self._w_req = t
        self._w_end = grant + dur
        return grant


class _RcuSchedule:
    """Readers never wait; the single writer publishes without blocking."""

    __slots__ = ()

    def read_request(self, t: int, dur: int) -> int:
        return t

    def write_request(self, t: int, dur: int) -> int:
        return t


class OraclePipeline:
    """Single-threaded event-driven execution of one run."""

    def __init__(self, config: RunConfig, trace: Optional[Trace] = None,
                 collect_receipts: bool = False):
        config.validate()
        if config.mode is not Mode.ORACLE:
            raise ValueError("OraclePipeline requires mode = oracle")
        self.config = config
        if trace is None:
            trace = generate_trace(config.seed, config.n_data_pkts,
                                   config.n_ctrl_pkts, config.n_users,
                                   config.zipf_s)
        self.trace = trace
        self.clock = Clock(ClockMode.VIRTUAL)

        self.src_tx = Ring(config.src_tx_ring, RingRole.SRC_TX)
        self.link_up = Ring(config.link_ring, RingRole.NET_LINK)
        self.ctrl_rx = Ring(config.ctrl_rx_ring, RingRole.CTRL_RX)
        self.data_rx = Ring(config.data_rx_ring, RingRole.DATA_RX)
        self.data_tx = Ring(config.data_tx_ring, RingRole.DATA_TX)
        self.link_down = Ring(config.link_ring, RingRole.NET_LINK)

        self.register = ControlRegister(config.n_users)
        self.sender = Sender(trace, config, self.src_tx, self.register)
        self.ledger = AgeLedger(config.n_users, 0)
        self.bypass = config.sync_backend is Backend.NONE
        self.tracker = None if self.bypass else FibAgeTracker(config.n_users, 0)
        self.fib_loc_ts = [0] * config.n_users

        if config.sync_backend is Backend.RWL:
            self.lock = _RwlSchedule()
            self._write_cost = config.fib_write_cost_ns
        elif config.sync_backend is Backend.RCU:
            self.lock = _RcuSchedule()
            self._write_cost = config.fib_write_cost_ns + config.rcu_copy_cost_ns
        else:
            self.lock = None
            self._write_cost = 0
        self._read_cost = config.fib_read_cost_ns
        self._tx_cost = config.tx_call_cost_ns
        self._demux_cost = config.demux_cost_ns
        self._latency = config.link_latency_ns

        self._heap: list = []
        self._seq = 0
        self._up_in_flight = 0
        self._down_in_flight = 0
        self._demux_busy = False
        self._ctrl_busy = False
        self._data_busy = False
        self._rx_closed = False
        self._data_tx_closed = False
        self._receipts = [] if collect_receipts else None
        self._deliveries = [] if collect_receipts else None
        self._end_ts = 0

    # -- engine ---------------------------------------------------------------

    def _at(self, t: int, fn: Callable[[int], None]) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn))

    def run(self) -> RunReport:
        self._at(0, self._sender_tick)
        heap = self._heap
        while heap:
            t, _, fn = heapq.heappop(heap)
            self.clock.advance_to(t)
            self._end_ts = t
            fn(t)
        return finalize(
            self.config, self.ledger, self.tracker,
            rings={"src_tx": self.src_tx, "link_up": self.link_up,
                   "ctrl_rx": self.ctrl_rx, "data_rx": self.data_rx,
                   "data_tx": self.data_tx, "link_down": self.link_down},
            sender=self.sender, start_ts=0, end_ts=self._end_ts,
            receipts=self._receipts, deliveries=self._deliveries,
        )

    # -- source sender ----------------------------------------------------------

    def _sender_tick(self, t: int) -> None:
        _, admitted = self.sender.step(t)
        if admitted:
            self._pump_up(t)
        if self.sender.done:
            self.src_tx.close()
            self._pump_up(t)
        else:
            self._at(t + self._tx_cost, self._sender_tick)

    # -- uplink NIC/wire (zero-cost mover with flow control) --------------------

    def _pump_up(self, t: int) -> None:
        while True:
            space = self.link_up.capacity - self.link_up.occupancy - self._up_in_flight
            n = min(self.src_tx.occupancy, space, self.config.rx_burst)
            if n <= 0:
                break
            pkts = self.src_tx.try_pop_burst(n)
            self._up_in_flight += len(pkts)
            self._at(t + self._latency, lambda t2, pkts=pkts: self._deliver_up(t2, pkts))
        if (self.src_tx.drained and self._up_in_flight == 0
                and not self.link_up.closed):
            self.link_up.close()
            self._demux_poll(t)

    def _deliver_up(self, t: int, pkts: list) -> None:
        pushed = self.link_up.try_push_burst(pkts, PushPolicy.ADMIT)
        assert pushed == len(pkts), "uplink delivery had reserved space"
        self._up_in_flight -= len(pkts)
        self._demux_poll(t)
        self._pump_up(t)

    # -- forwarder demux ---------------------------------------------------------

    def _demux_poll(self, t: int) -> None:
        if self._demux_busy:
            return
        pkts = self.link_up.try_pop_burst(self.config.fwd_burst)
        if pkts:
            self._demux_busy = True
            self._at(t + self._demux_cost * len(pkts),
                     lambda t2, pkts=pkts: self._demux_done(t2, pkts))
            self._pump_up(t)
        elif self.link_up.drained and not self._rx_closed:
            self._rx_closed = True
            self.ctrl_rx.close()
            self.data_rx.close()
            self._ctrl_poll(t)
            self._data_poll(t)

    def _demux_done(self, t: int, pkts: list) -> None:
        self._demux_busy = False
        ctrl = [p for p in pkts if p.ptype == PacketType.CONTROL]
        data = [p for p in pkts if p.ptype != PacketType.CONTROL]
        if ctrl:
            self.ctrl_rx.try_push_burst(ctrl, PushPolicy.TAIL_DROP)
            self._ctrl_poll(t)
        if data:
            self.data_rx.try_push_burst(data, PushPolicy.TAIL_DROP)
            self._data_poll(t)
        self._demux_poll(t)

    # -- control process (table writer) -------------------------------------------

    def _ctrl_poll(self, t: int) -> None:
        if self._ctrl_busy:
            return
        pkts = self.ctrl_rx.try_pop_burst(self.config.fwd_burst)
        if pkts:
            self._ctrl_busy = True
            self._ctrl_next(t, pkts, 0)

    def _ctrl_next(self, t: int, pkts: list, idx: int) -> None:
        if idx == len(pkts):
            self._ctrl_busy = False
            self._ctrl_poll(t)
            return
        p = pkts[idx]
        grant = self.lock.write_request(t, self._write_cost)
        self._at(grant + self._write_cost,
                 lambda t2, p=p, pkts=pkts, idx=idx: self._ctrl_publish(t2, p, pkts, idx))

    def _ctrl_publish(self, t: int, p, pkts: list, idx: int) -> None:
        self.fib_loc_ts[p.user_id] = p.gen_ts
        self.tracker.on_write(p.user_id, p.gen_ts, t)
        self._ctrl_next(t, pkts, idx + 1)

    # -- data process (table reader) -----------------------------------------------

    def _data_poll(self, t: int) -> None:
        if self._data_busy:
            return
        while True:
            pkts = self.data_rx.try_pop_burst(self.config.fwd_burst)
            if pkts:
                if self.bypass:
                    for p in pkts:
                        p.fib_ts = 0
                    self.data_tx.try_push_burst(pkts, PushPolicy.TAIL_DROP)
                    self._pump_down(t)
                    continue
                self._data_busy = True
                self._data_next(t, pkts, 0)
                return
            break
        if self.data_rx.drained and not self._data_tx_closed:
            self._data_tx_closed = True
            self.data_tx.close()
            self._pump_down(t)

    def _data_next(self, t: int, pkts: list, idx: int) -> None:
        if idx == len(pkts):
            self.data_tx.try_push_burst(pkts, PushPolicy.TAIL_DROP)
            self._pump_down(t)
            self._data_busy = False
            self._data_poll(t)
            return
        p = pkts[idx]
        grant = self.lock.read_request(t, self._read_cost)
        self._at(grant, lambda t2, p=p: self._data_sample(t2, p))
        self._at(grant + self._read_cost,
                 lambda t2, pkts=pkts, idx=idx: self._data_next(t2, pkts, idx + 1))

    def _data_sample(self, t: int, p) -> None:
        p.fib_ts = self.fib_loc_ts[p.user_id]

    # -- downlink NIC/wire ------------------------------------------------------------

    def _pump_down(self, t: int) -> None:
        while True:
            space = (self.link_down.capacity - self.link_down.occupancy
                     - self._down_in_flight)
            n = min(self.data_tx.occupancy, space, self.config.rx_burst)
            if n <= 0:
                break
            pkts = self.data_tx.try_pop_burst(n)
            self._down_in_flight += len(pkts)
            self._at(t + self._latency, lambda t2, pkts=pkts: self._deliver_down(t2, pkts))
        if (self.data_tx.drained and self._down_in_flight == 0
                and not self.link_down.closed):
            self.link_down.close()
            self._recv_poll(t)

    def _deliver_down(self, t: int, pkts: list) -> None:
        pushed = self.link_down.try_push_burst(pkts, PushPolicy.ADMIT)
        assert pushed == len(pkts), "downlink delivery had reserved space"
        self._down_in_flight -= len(pkts)
        self._recv_poll(t)
        self._pump_down(t)

    # -- source receiver -----------------------------------------------------------------

    def _recv_poll(self, t: int) -> None:
        while True:
            pkts = self.link_down.try_pop_burst(self.config.rx_burst)
            if not pkts:
                return
            ledger = self.ledger
            register = self.register
            receipts = self._receipts
            deliveries = self._deliveries
            for p in pkts:
                fresh = classify(p, register) is Classification.FRESH
                ledger.on_receipt(p.user_id, p.gen_ts, t, fresh)
                if receipts is not None:
                    if fresh:
                        receipts.append((t, p.user_id, p.gen_ts))
                    deliveries.append((p.seq, t, fresh))
            self._pump_down(t)


def run_oracle(config: RunConfig, trace: Optional[Trace] = None,
               collect_receipts: bool = False) -> RunReport:
    """Execute one fully deterministic virtual-clock run."""
    return OraclePipeline(config, trace, collect_receipts=collect_receipts).run()
