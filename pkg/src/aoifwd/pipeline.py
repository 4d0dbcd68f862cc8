"""Threaded source/forwarder topology wired by SPSC rings.

Seven long-lived threads: the source sender and receiver, two NIC/wire
movers (one per direction), and the forwarder's demux, control (table
writer), and data (table reader) processes. Consumers spin-poll their
input ring with a bounded backoff, mirroring poll-mode drivers. A
watchdog aborts the run with a diagnostic dump if no thread makes
progress for the configured interval.
"""

from __future__ import annotations

import gc
import os
import sys
import threading
import time
from typing import List, Optional

from .core import Backend, Clock, Mode, PipelineStalled, RunConfig
from .fib import FaultInjection, make_fib
from .metrics import AgeLedger, Classification, FibAgeTracker, RunReport, classify, finalize
from .rings import PushPolicy, Ring, RingRole
from .workload import ControlRegister, Sender, Trace, generate_trace

CORES_ENV = "AOIFWD_CORES"
_SWITCH_INTERVAL_S = 2e-5
_IDLE_SLEEP_S = 2e-5
_DOORBELL_WAIT_S = 0.01
_MAX_TOKEN_WAIT_S = 2e-3


def parse_core_set(spec: str) -> List[int]:
    """Parse a pinning set like '0,2,4-6' into a sorted core list."""
    cores = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, _, hi = part.partition("-")
            cores.update(range(int(lo), int(hi) + 1))
        else:
            cores.add(int(part))
    return sorted(cores)


def _pin_current_thread(core: Optional[int]) -> None:
    if core is None:
        return
    try:
        os.sched_setaffinity(0, {core})
    except (AttributeError, OSError):
        pass  # platform without per-thread pinning: degrade gracefully


def _reduce_timer_slack() -> None:
    """Ask the kernel for ~1us timer slack so short poll sleeps wake close
    to their deadline (the 50us default swamps per-hop latency)."""
    try:
        import ctypes
        libc = ctypes.CDLL(None, use_errno=True)
        PR_SET_TIMERSLACK = 29
        libc.prctl(PR_SET_TIMERSLACK, 1000, 0, 0, 0)
    except Exception:  # noqa: BLE001 - best effort, any platform quirk degrades
        pass


def _idle(n: int) -> None:
    """Bounded poll backoff: brief re-checks, then yield, then short sleeps."""
    if n < 4:
        return
    if n < 64:
        time.sleep(0)
    else:
        time.sleep(_IDLE_SLEEP_S)


def _idle_on(ring, n: int) -> None:
    """Consumer backoff: brief re-checks and yields, then block on the
    ring's doorbell (edge-triggered by the producer) so idle consumers do
    not burn scheduler time polling."""
    if n < 4:
        return
    if n < 32:
        time.sleep(0)
    else:
        ring.wait_nonempty(_DOORBELL_WAIT_S)


class ThreadedPipeline:
    def __init__(self, config: RunConfig, trace: Optional[Trace] = None,
                 faults: Optional[FaultInjection] = None,
                 collect_receipts: bool = False):
        config.validate()
        if config.mode is not Mode.THREADED:
            raise ValueError("ThreadedPipeline requires mode = threaded")
        self.config = config
        if trace is None:
            trace = generate_trace(config.seed, config.n_data_pkts,
                                   config.n_ctrl_pkts, config.n_users,
                                   config.zipf_s)
        self.trace = trace
        self.clock = Clock()

        self.src_tx = Ring(config.src_tx_ring, RingRole.SRC_TX)
        self.link_up = Ring(config.link_ring, RingRole.NET_LINK)
        self.ctrl_rx = Ring(config.ctrl_rx_ring, RingRole.CTRL_RX)
        self.data_rx = Ring(config.data_rx_ring, RingRole.DATA_RX)
        self.data_tx = Ring(config.data_tx_ring, RingRole.DATA_TX)
        self.link_down = Ring(config.link_ring, RingRole.NET_LINK)

        self.register = ControlRegister(config.n_users)
        self.sender = Sender(trace, config, self.src_tx, self.register)
        self._faults = faults or FaultInjection()
        self.fib = make_fib(
            config.n_users, config.sync_backend,
            read_cost_ns=config.fib_read_cost_ns or 0,
            write_cost_ns=config.fib_write_cost_ns or 0,
            rcu_copy_cost_ns=config.rcu_copy_cost_ns or 0,
            faults=faults,
        )
        # ledger/tracker are built in run() once the start timestamp is known
        self.tracker: Optional[FibAgeTracker] = None
        self.ledger: Optional[AgeLedger] = None
        self._receipts = [] if collect_receipts else None

        self._deliveries = [] if collect_receipts else None
        self._abort = threading.Event()
        self._stop_watchdog = threading.Event()
        self._stall_diag: Optional[str] = None
        self._errors: List[BaseException] = []
        self._latency_s = config.link_latency_ns / 1e9

    # -- thread bodies ---------------------------------------------------------

    def _sender_body(self) -> None:
        sender, clock, abort = self.sender, self.clock, self._abort
        rate = sender.rate_pps
        idle = 0
        while not sender.done:
            if abort.is_set():
                return
            offered, admitted = sender.step(clock.now())
            if admitted:
                idle = 0
            elif offered == 0 and sender.tokens < 1.0:
                # sleep until the next whole token matures (capped so the
                # abort flag stays responsive)
                wait = (1.0 - sender.tokens) / rate
                time.sleep(min(wait, _MAX_TOKEN_WAIT_S))
            else:
                idle += 1  # tokens available but the Tx ring is full
                _idle(idle)
        self.src_tx.close()

    def _mover_body(self, src: Ring, dst: Ring) -> None:
        abort = self._abort
        burst = self.config.rx_burst
        latency = self._latency_s
        idle = 0
        while True:
            pkts = src.try_pop_burst(burst)
            if pkts:
                idle = 0
                if latency:
                    time.sleep(latency)
                offset = 0
                n = len(pkts)
                while offset < n:
                    offset += dst.try_push_burst(pkts[offset:], PushPolicy.ADMIT)
                    if offset < n:
                        if abort.is_set():
                            return
                        time.sleep(0)
            elif src.drained:
                dst.close()
                return
            else:
                if abort.is_set():
                    return
                idle += 1
                _idle_on(src, idle)

    def _route(self, pkts: list) -> None:
        ctrl = []
        data = []
        for p in pkts:
            (data if p.ptype else ctrl).append(p)
        if ctrl:
            self.ctrl_rx.try_push_burst(ctrl, PushPolicy.TAIL_DROP)
        if data:
            self.data_rx.try_push_burst(data, PushPolicy.TAIL_DROP)

    def _demux_body(self) -> None:
        abort = self._abort
        link_up = self.link_up
        burst = self.config.fwd_burst
        idle = 0
        while True:
            pkts = link_up.try_pop_burst(burst)
            if pkts:
                idle = 0
                self._route(pkts)
            elif link_up.drained:
                self.ctrl_rx.close()
                self.data_rx.close()
                return
            else:
                if abort.is_set():
                    return
                idle += 1
                _idle_on(link_up, idle)

    def _demux_body_passthrough(self) -> None:
        """Zero-latency links: the demux thread itself plays NIC, pumping
        src_tx through the uplink ring before routing (still one producer
        and one consumer per ring). Yields after each burst so every stage
        moves at most one burst per scheduling slice."""
        abort = self._abort
        src_tx, link_up = self.src_tx, self.link_up
        rx_burst = self.config.rx_burst
        fwd_burst = self.config.fwd_burst
        idle = 0
        while True:
            progressed = False
            space = link_up.capacity - link_up.occupancy
            if space:
                moved = src_tx.try_pop_burst(min(rx_burst, space))
                if moved:
                    link_up.try_push_burst(moved, PushPolicy.ADMIT)
                    progressed = True
            pkts = link_up.try_pop_burst(fwd_burst)
            if pkts:
                self._route(pkts)
                progressed = True
            if progressed:
                idle = 0
                time.sleep(0)
                continue
            if src_tx.drained and link_up.occupancy == 0:
                link_up.close()
                self.ctrl_rx.close()
                self.data_rx.close()
                return
            if abort.is_set():
                return
            idle += 1
            _idle_on(src_tx, idle)

    def _ctrl_body(self) -> None:
        abort = self._abort
        ctrl_rx, fib, tracker = self.ctrl_rx, self.fib, self.tracker
        clock = self.clock
        burst = self.config.fwd_burst
        is_rcu = self.config.sync_backend is Backend.RCU
        idle = 0
        while True:
            pkts = ctrl_rx.try_pop_burst(burst)
            if pkts:
                idle = 0
                for p in pkts:
                    fib.write(p.user_id, p.gen_ts)
                    tracker.on_write(p.user_id, p.gen_ts, clock.now())
                if is_rcu:
                    fib.synchronize()
            elif ctrl_rx.drained:
                return
            else:
                if abort.is_set():
                    return
                idle += 1
                _idle_on(ctrl_rx, idle)

    def _data_body(self) -> None:
        abort = self._abort
        if self._faults.stall_data_thread:
            abort.wait()
            return
        data_rx, data_tx, fib = self.data_rx, self.data_tx, self.fib
        burst = self.config.fwd_burst
        idle = 0
        while True:
            pkts = data_rx.try_pop_burst(burst)
            if pkts:
                idle = 0
                if fib is None:
                    for p in pkts:
                        p.fib_ts = 0
                else:
                    read = fib.read
                    for p in pkts:
                        p.fib_ts = read(p.user_id).loc_ts
                data_tx.try_push_burst(pkts, PushPolicy.TAIL_DROP)
                time.sleep(0)
            elif data_rx.drained:
                data_tx.close()
                return
            else:
                if abort.is_set():
                    return
                idle += 1
                _idle_on(data_rx, idle)

    def _classify_burst(self, pkts: list) -> None:
        ledger, register = self.ledger, self.register
        receipts = self._receipts
        deliveries = self._deliveries
        now = self.clock.now()
        for p in pkts:
            fresh = classify(p, register) is Classification.FRESH
            ledger.on_receipt(p.user_id, p.gen_ts, now, fresh)
            if receipts is not None:
                if fresh:
                    receipts.append((now, p.user_id, p.gen_ts))
                deliveries.append((p.seq, now, fresh))

    def _receiver_body(self) -> None:
        abort = self._abort
        link_down = self.link_down
        burst = self.config.rx_burst
        idle = 0
        while True:
            pkts = link_down.try_pop_burst(burst)
            if pkts:
                idle = 0
                self._classify_burst(pkts)
            elif link_down.drained:
                return
            else:
                if abort.is_set():
                    return
                idle += 1
                _idle_on(link_down, idle)

    def _receiver_body_passthrough(self) -> None:
        """Zero-latency links: the receiver pumps data_tx through the
        downlink ring itself before classifying."""
        abort = self._abort
        data_tx, link_down = self.data_tx, self.link_down
        burst = self.config.rx_burst
        idle = 0
        while True:
            progressed = False
            space = link_down.capacity - link_down.occupancy
            if space:
                moved = data_tx.try_pop_burst(min(burst, space))
                if moved:
                    link_down.try_push_burst(moved, PushPolicy.ADMIT)
                    progressed = True
            pkts = link_down.try_pop_burst(burst)
            if pkts:
                self._classify_burst(pkts)
                progressed = True
            if progressed:
                idle = 0
                time.sleep(0)
                continue
            if data_tx.drained and link_down.occupancy == 0:
                link_down.close()
                return
            if abort.is_set():
                return
            idle += 1
            _idle_on(data_tx, idle)

    # -- orchestration ------------------------------------------------------------

    def _progress_snapshot(self) -> tuple:
        return (self.sender.calls, self.sender.admitted,
                self.link_up.popped, self.ctrl_rx.popped, self.data_rx.popped,
                self.data_tx.popped, self.link_down.popped)

    def _watchdog_body(self) -> None:
        limit = self.config.watchdog_s
        interval = min(0.25, limit / 4)
        last = self._progress_snapshot()
        last_change = time.monotonic()
        while not self._stop_watchdog.wait(interval):
            snap = self._progress_snapshot()
            now = time.monotonic()
            if snap != last:
                last = snap
                last_change = now
            elif now - last_change > limit:
                self._stall_diag = self._diagnostics()
                sys.stderr.write(self._stall_diag)
                self._abort.set()
                return

    def _diagnostics(self) -> str:
        lines = ["pipeline stalled: no progress within watchdog interval"]
        for name in ("src_tx", "link_up", "ctrl_rx", "data_rx", "data_tx", "link_down"):
            lines.append(f"  ring {name}: {getattr(self, name)!r}")
        lines.append(f"  sender: calls={self.sender.calls} admitted={self.sender.admitted} "
                     f"tokens={self.sender.tokens:.1f} done={self.sender.done}")
        return "\n".join(lines) + "\n"

    def run(self) -> RunReport:
        cores = []
        env = os.environ.get(CORES_ENV)
        if env:
            cores = parse_core_set(env)

        # the sender spawns last so admission timing never straddles the
        # thread-creation transient
        if self.config.link_latency_ns:
            # dedicated NIC/wire pump threads apply the link latency
            bodies = [
                ("link_up_mover", lambda: self._mover_body(self.src_tx, self.link_up)),
                ("fwd_demux", self._demux_body),
                ("fwd_ctrl", self._ctrl_body),
                ("fwd_data", self._data_body),
                ("link_down_mover", lambda: self._mover_body(self.data_tx, self.link_down)),
                ("src_receiver", self._receiver_body),
                ("src_sender", self._sender_body),
            ]
        else:
            bodies = [
                ("fwd_demux", self._demux_body_passthrough),
                ("fwd_ctrl", self._ctrl_body),
                ("fwd_data", self._data_body),
                ("src_receiver", self._receiver_body_passthrough),
                ("src_sender", self._sender_body),
            ]

        def wrap(fn, core):
            def body():
                _pin_current_thread(core)
                _reduce_timer_slack()
                try:
                    fn()
                except BaseException as exc:  # noqa: BLE001 - ferried to the caller
                    self._errors.append(exc)
                    self._abort.set()
            return body

        old_interval = sys.getswitchinterval()
        sys.setswitchinterval(_SWITCH_INTERVAL_S)
        gc_was_enabled = gc.isenabled()
        gc.disable()  # cyclic-GC pauses would show up as admission jitter
        try:
            start_ts = self.clock.now()
            self.ledger = AgeLedger(self.config.n_users, start_ts)
            if self.config.sync_backend is not Backend.NONE:
                self.tracker = FibAgeTracker(self.config.n_users, start_ts)
            threads = [
                threading.Thread(target=wrap(fn, cores[i % len(cores)] if cores else None),
                                 name=name, daemon=True)
                for i, (name, fn) in enumerate(bodies)
            ]
            watchdog = threading.Thread(target=self._watchdog_body,
                                        name="watchdog", daemon=True)
            watchdog.start()
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            self._stop_watchdog.set()
            watchdog.join()
            end_ts = self.clock.now()
        finally:
            sys.setswitchinterval(old_interval)
            if gc_was_enabled:
                gc.enable()

        if self._errors:
            raise self._errors[0]
        if self._stall_diag is not None:
            raise PipelineStalled(self._stall_diag)

        return finalize(
            self.config, self.ledger, self.tracker,
            rings={"src_tx": self.src_tx, "link_up": self.link_up,
                   "ctrl_rx": self.ctrl_rx, "data_rx": self.data_rx,
                   "data_tx": self.data_tx, "link_down": self.link_down},
            sender=self.sender, start_ts=start_ts, end_ts=end_ts,
            receipts=self._receipts, deliveries=self._deliveries,
        )


def run_threaded(config: RunConfig, trace: Optional[Trace] = None,
                 faults: Optional[FaultInjection] = None,
                 collect_receipts: bool = False) -> RunReport:
    """Execute one run on real threads; returns the finalized report."""
    return ThreadedPipeline(config, trace, faults=faults,
                            collect_receipts=collect_receipts).run()


def run(config: RunConfig, trace: Optional[Trace] = None,
        collect_receipts: bool = False) -> RunReport:
    """Dispatch on config.mode (threaded pipeline or oracle twin)."""
    if config.mode is Mode.ORACLE:
        from .oracle import run_oracle
        return run_oracle(config, trace, collect_receipts=collect_receipts)
    return run_threaded(config, trace, collect_receipts=collect_receipts)
