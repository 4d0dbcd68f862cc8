"""Field-runnable invariant suites behind `aoifwd selftest`.

Each suite returns (ok, detail). A fault can be injected to demonstrate
that the suites actually catch the defects they claim to catch: with a
fault active the corresponding suite must fail, and the selftest exits
nonzero.
"""

from __future__ import annotations

import threading
import time
from typing import List, Optional, Tuple

import numpy as np

from .core import Backend, Mode, RunConfig
from .fib import POISON, FaultInjection, RcuFib, RwlFib
from .oracle import run_oracle
from .pipeline import run_threaded
from .rings import PushPolicy, Ring
from .validation import replay_age, zipf_rank_prob
from .workload import generate_trace, sample_zipf

FAULT_NAMES = {
    "rwl-pref-off": FaultInjection(rwl_preference_off=True),
    "rcu-premature-reclaim": FaultInjection(rcu_premature_reclaim=True),
}

SuiteResult = Tuple[bool, str]


def ring_spsc_stress(n_ops: int = 1_000_000) -> SuiteResult:
    """One producer, one consumer, concurrent; every item popped exactly
    once, in push order."""
    ring = Ring(1024)
    out: List[int] = []
    errors: List[str] = []

    def producer():
        i = 0
        while i < n_ops:
            burst = list(range(i, min(i + 32, n_ops)))
            pushed = ring.try_push_burst(burst, PushPolicy.ADMIT)
            i += pushed
            if not pushed:
                time.sleep(0)
        ring.close()

    def consumer():
        expect = 0
        while True:
            got = ring.try_pop_burst(64)
            if got:
                for v in got:
                    if v != expect:
                        errors.append(f"popped {v}, expected {expect}")
                        return
                    expect += 1
                out.append(len(got))
            elif ring.drained:
                return
            else:
                time.sleep(0)

    threads = [threading.Thread(target=producer), threading.Thread(target=consumer)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    total = sum(out)
    if errors:
        return False, errors[0]
    if total != n_ops:
        return False, f"popped {total} of {n_ops}"
    if ring.drop_count:
        return False, "ADMIT ring must not drop"
    return True, f"{n_ops} items crossed in order"


def rwl_write_preference(iterations: int = 200,
                         faults: Optional[FaultInjection] = None) -> SuiteResult:
    """Barrier-controlled interleaving: with a writer queued behind an
    active reader, a later reader must not acquire before the writer."""
    for it in range(iterations):
        fib = RwlFib(4, faults=faults)
        lock = fib.lock
        order: List[str] = []
        order_mx = threading.Lock()
        r1_in = threading.Event()
        release_r1 = threading.Event()
        r2_started = threading.Event()

        def r1():
            lock.acquire_read()
            r1_in.set()
            release_r1.wait(5)
            lock.release_read()

        def w():
            lock.acquire_write()
            with order_mx:
                order.append("W")
            lock.release_write()

        def r2():
            r2_started.set()
            lock.acquire_read()
            with order_mx:
                order.append("R2")
            lock.release_read()

        t1 = threading.Thread(target=r1)
        tw = threading.Thread(target=w)
        t2 = threading.Thread(target=r2)
        t1.start()
        r1_in.wait(5)
        tw.start()
        deadline = time.monotonic() + 5
        while lock.writer_wait_count == 0 and time.monotonic() < deadline:
            time.sleep(0)  # writer must be registered as waiting first
        t2.start()
        r2_started.wait(5)
        time.sleep(0.001)  # give R2 a window to (illegally) slip past
        release_r1.set()
        for t in (t1, tw, t2):
            t.join(5)
        if order != ["W", "R2"]:
            return False, f"iteration {it}: completion order {order}"
    return True, f"{iterations}/{iterations} interleavings kept the writer first"


def rwl_mutual_exclusion(n_ops: int = 200_000,
                         faults: Optional[FaultInjection] = None) -> SuiteResult:
    """1 writer + 1 reader hammer the table; the writer must never observe
    a reader inside the critical section, and the value canary (next hop
    mirrors the timestamp) must never tear."""
    fib = RwlFib(8, faults=faults)
    n_writes = n_ops // 5
    n_reads = n_ops - n_writes
    torn: List[str] = []

    def writer():
        for i in range(1, n_writes + 1):
            fib.write(i % 8, i, next_hop=i)

    def reader():
        for _ in range(n_reads):
            t = fib.read(0)
            if t.next_hop != t.loc_ts:
                torn.append(f"torn read: {t}")
                return

    threads = [threading.Thread(target=writer), threading.Thread(target=reader)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if torn:
        return False, torn[0]
    if fib.mutex_violations:
        return False, f"writer saw {fib.mutex_violations} readers in critical section"
    return True, f"{n_ops} ops, zero overlaps, zero torn reads"


def rcu_reader_nonblocking(n_ops: int = 200_000) -> SuiteResult:
    """1 writer + 1 reader; reader wait count must be identically zero and
    no reader may ever observe a poisoned (reclaimed) version."""
    fib = RcuFib(8)
    poison_seen: List[str] = []

    def writer():
        for i in range(1, n_ops // 5 + 1):
            fib.write(i % 8, i, next_hop=i)
            if i % 32 == 0:
                fib.synchronize()
        fib.synchronize()

    def reader():
        for _ in range(n_ops - n_ops // 5):
            t = fib.read(0)
            if t.next_hop == POISON or t.loc_ts == POISON or t.next_hop != t.loc_ts:
                poison_seen.append(f"bad read: {t}")
                return

    threads = [threading.Thread(target=writer), threading.Thread(target=reader)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if poison_seen:
        return False, poison_seen[0]
    if fib.reader_wait_count != 0:
        return False, f"reader waited {fib.reader_wait_count} times"
    return True, f"{n_ops} ops, reader wait count 0, canary clean"


def rcu_canary(faults: Optional[FaultInjection] = None) -> SuiteResult:
    """A pinned reader holds a version across a write; reclamation must be
    deferred past the guard, so the held version stays un-poisoned."""
    fib = RcuFib(2, faults=faults)
    in_cs = threading.Event()
    go = threading.Event()
    result: List[str] = []

    def reader():
        with fib.reading() as g:
            v = g.lookup_version(0)
            in_cs.set()
            go.wait(5)
            if v.reclaimed or v.next_hop == POISON:
                result.append("held version was reclaimed inside the read section")
            else:
                result.append("ok")

    t = threading.Thread(target=reader)
    t.start()
    in_cs.wait(5)
    fib.write(0, 100, next_hop=100)
    reclaimed_during = fib.synchronize()
    go.set()
    t.join(5)
    if result != ["ok"]:
        return False, result[0] if result else "reader did not report"
    if reclaimed_during:
        return False, f"reclaimed {reclaimed_during} versions under a live guard"
    reclaimed_after = fib.synchronize()
    if reclaimed_after != 1:
        return False, f"expected 1 deferred reclaim after guard exit, got {reclaimed_after}"
    return True, "grace period held; deferred reclaim fired after guard exit"


def conservation_runs() -> SuiteResult:
    """Exact packet accounting on a small threaded run with drops plus an
    oracle run (finalize raises on any identity violation)."""
    cfg = RunConfig(
        rate_pps=2e5, cdr=0.1, n_users=50, n_data_pkts=20_000, n_ctrl_pkts=2_000,
        ctrl_rx_ring=64, data_rx_ring=64, data_tx_ring=1024,
        sync_backend=Backend.RCU, seed=7, mode=Mode.THREADED,
        fib_write_cost_ns=20_000,
    )
    rpt = run_threaded(cfg)
    cfg_o = cfg.with_overrides(
        mode=Mode.ORACLE, tx_call_cost_ns=1000, demux_cost_ns=150,
        fib_read_cost_ns=200, fib_write_cost_ns=2000, rcu_copy_cost_ns=500,
        link_latency_ns=0)
    rpt_o = run_oracle(cfg_o)
    return True, (f"threaded: fresh={rpt.fresh} stale={rpt.misaddressed} "
                  f"dropc={rpt.drop_ctrl_rx} dropd={rpt.drop_data_rx}; "
                  f"oracle: fresh={rpt_o.fresh} stale={rpt_o.misaddressed} "
                  f"dropc={rpt_o.drop_ctrl_rx}")


def oracle_replay_agreement(n_traces: int = 10) -> SuiteResult:
    """Independent trapezoid replay must reproduce every per-user mean age
    bit-for-bit on randomized small oracle runs."""
    rng = np.random.default_rng(2024)
    for i in range(n_traces):
        n_users = int(rng.integers(1, 8))
        n_data = int(rng.integers(1, 400))
        n_ctrl = int(rng.integers(0, 100))
        cfg = RunConfig(
            rate_pps=float(rng.choice([5e5, 2e6, 8e6])),
            cdr=0.1 if n_ctrl else 0.0, n_users=n_users,
            n_data_pkts=n_data, n_ctrl_pkts=n_ctrl,
            ctrl_rx_ring=64, data_rx_ring=64, data_tx_ring=64,
            sync_backend=Backend.RCU if i % 2 else Backend.RWL,
            seed=int(rng.integers(1 << 31)), mode=Mode.ORACLE,
            tx_call_cost_ns=int(rng.integers(200, 3000)),
            demux_cost_ns=int(rng.integers(0, 300)),
            fib_read_cost_ns=int(rng.integers(0, 500)),
            fib_write_cost_ns=int(rng.integers(0, 800)),
            rcu_copy_cost_ns=int(rng.integers(0, 300)),
            link_latency_ns=int(rng.integers(0, 200)),
        )
        rpt = run_oracle(cfg, collect_receipts=True)
        means = replay_age(rpt.receipts, rpt.duration_ns, n_users)
        if means != rpt.per_user_mean_age_ns:
            return False, f"trace {i}: replay disagrees with ledger"
    return True, f"{n_traces} randomized traces agree exactly"


def zipf_check(n_draws: int = 1_000_000, tol: float = 0.05) -> SuiteResult:
    """Empirical rank-1:rank-2 ratio near 2 and rank-1 mass near 1/H_n."""
    rng = np.random.default_rng(99)
    ids = sample_zipf(rng, n_draws, 1000, 1.0)
    counts = np.bincount(ids, minlength=1000)
    ratio = counts[0] / counts[1]
    p1 = counts[0] / n_draws
    ref = zipf_rank_prob(1, 1000, 1.0)
    if abs(ratio - 2.0) > 2.0 * tol:
        return False, f"rank1:rank2 ratio {ratio:.4f}"
    if abs(p1 - ref) / ref > tol:
        return False, f"rank-1 mass {p1:.5f} vs {ref:.5f}"
    return True, f"ratio {ratio:.3f}, rank-1 mass {p1:.4f} (ref {ref:.4f})"


def run_selftest(fault: Optional[str] = None, quick: bool = False,
                 out=print) -> int:
    """Run every suite; print one line each; nonzero exit on any failure."""
    faults = FAULT_NAMES[fault] if fault else None
    scale = 0.2 if quick else 1.0
    suites = [
        ("ring-spsc", lambda: ring_spsc_stress(int(1_000_000 * scale))),
        ("rwl-write-preference", lambda: rwl_write_preference(int(200 * scale) or 20, faults)),
        ("rwl-mutual-exclusion", lambda: rwl_mutual_exclusion(int(200_000 * scale), faults)),
        ("rcu-reader-nonblocking", lambda: rcu_reader_nonblocking(int(200_000 * scale))),
        ("rcu-grace-canary", lambda: rcu_canary(faults)),
        ("conservation", conservation_runs),
        ("oracle-replay-agreement", lambda: oracle_replay_agreement(4 if quick else 10)),
        ("zipf", lambda: zipf_check(int(1_000_000 * scale) or 100_000)),
    ]
    failed = 0
    for name, fn in suites:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - suite verdicts must not abort the rest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        if not ok:
            failed += 1
    if fault:
        out(f"fault injection active: {fault} "
            f"({'caught' if failed else 'NOT caught'} by the suites)")
    return 1 if failed else 0
