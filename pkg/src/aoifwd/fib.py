"""Forwarding table with pluggable reader/writer synchronization.

Two interchangeable backends guard the user-ID -> address-tuple table:

* `RwlFib` - one table-wide write-preferring readers-writer lock. Entries
  are mutated in place under the exclusive lock; a reader that slipped past
  a broken lock could observe a half-written entry, which is exactly what
  the value-integrity stress tests look for.

* `RcuFib` - per-entry published versions with a single global epoch
  counter and per-reader epoch slots. Readers never block; writers publish
  a fresh immutable version and retire the old one for deferred reclaim.
  Reclaimed versions are poisoned so that any reader still holding one
  past its grace period trips the canary checks.

The contract is one writer thread and N reader threads. Baseline runs
bypass the table entirely (`Backend.NONE`).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .core import AddressTuple, Backend, ContractViolation

#: Sentinel stored into reclaimed version fields. A reader that observes it
#: has outlived its grace period.
POISON = -(1 << 60)


@dataclass
class FaultInjection:
    """Deliberate defects for validating the validation suites."""

    rwl_preference_off: bool = False
    rcu_premature_reclaim: bool = False
    #: freeze the forwarder data thread (watchdog exercise)
    stall_data_thread: bool = False


def busywork(ns: int) -> None:
    """Spin for roughly `ns` wall nanoseconds (simulated per-op cost)."""
    if ns <= 0:
        return
    end = time.perf_counter_ns() + ns
    while time.perf_counter_ns() < end:
        pass


class WritePreferringRWLock:
    """Readers share; a writer is exclusive; a waiting writer fences out
    newly arriving readers until it has run."""

    def __init__(self, prefer_writers: bool = True):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0
        self._prefer = prefer_writers
        self.reader_wait_count = 0
        self.writer_wait_count = 0

    def acquire_read(self) -> None:
        cond = self._cond
        with cond:
            if self._writer or (self._prefer and self._writers_waiting):
                self.reader_wait_count += 1
                while self._writer or (self._prefer and self._writers_waiting):
                    cond.wait()
            self._readers += 1

    def release_read(self) -> None:
        cond = self._cond
        with cond:
            self._readers -= 1
            if self._readers == 0:
                cond.notify_all()

    def acquire_write(self) -> None:
        cond = self._cond
        with cond:
            self._writers_waiting += 1
            if self._writer or self._readers:
                self.writer_wait_count += 1
                while self._writer or self._readers:
                    cond.wait()
            self._writers_waiting -= 1
            self._writer = True

    def release_write(self) -> None:
        with self._cond:
            self._writer = False
            self._cond.notify_all()


class _RwlEntry:
    __slots__ = ("user_id", "next_hop", "loc_ts")

    def __init__(self, user_id: int):
        self.user_id = user_id
        self.next_hop = 0
        self.loc_ts = 0


class RcuVersion:
    """One published value. Immutable by convention until reclaimed, at
    which point its fields are poisoned."""

    __slots__ = ("next_hop", "loc_ts", "reclaimed")

    def __init__(self, next_hop: int, loc_ts: int):
        self.next_hop = next_hop
        self.loc_ts = loc_ts
        self.reclaimed = False


class _RcuEntry:
    __slots__ = ("user_id", "current")

    def __init__(self, user_id: int):
        self.user_id = user_id
        self.current = RcuVersion(0, 0)


class _ReaderSlot:
    """Per-reader epoch cell: holds the global epoch observed at critical
    section entry, or None when quiescent."""

    __slots__ = ("epoch",)

    def __init__(self):
        self.epoch: Optional[int] = None


class _FibBase:
    """Shared bucket plumbing: identity-mod hash with chaining."""

    def __init__(self, n_users: int, table_size: Optional[int], entry_cls):
        if n_users < 1:
            raise ValueError("n_users must be >= 1")
        size = table_size if table_size is not None else n_users
        if size < n_users:
            raise ValueError("table_size must be >= n_users")
        self.n_users = n_users
        self.table_size = size
        self._buckets: List[list] = [[] for _ in range(size)]
        for uid in range(n_users):
            self._buckets[uid % size].append(entry_cls(uid))
        self._writer_ident: Optional[int] = None

    def _entry(self, user_id: int):
        for e in self._buckets[user_id % self.table_size]:
            if e.user_id == user_id:
                return e
        raise KeyError(user_id)

    def _check_single_writer(self) -> None:
        ident = threading.get_ident()
        if self._writer_ident is None:
            self._writer_ident = ident
        elif self._writer_ident != ident:
            raise ContractViolation("second writer thread on single-writer FIB")


class RwlFib(_FibBase):
    backend = Backend.RWL

    def __init__(self, n_users: int, *, table_size: Optional[int] = None,
                 read_cost_ns: int = 0, write_cost_ns: int = 0,
                 faults: Optional[FaultInjection] = None):
        super().__init__(n_users, table_size, _RwlEntry)
        faults = faults or FaultInjection()
        self.lock = WritePreferringRWLock(prefer_writers=not faults.rwl_preference_off)
        self._read_cost = read_cost_ns
        self._write_cost = write_cost_ns
        # mutual-exclusion instrumentation, maintained inside the sections
        self.readers_in_cs = 0
        self.mutex_violations = 0

    @property
    def reader_wait_count(self) -> int:
        return self.lock.reader_wait_count

    def read(self, user_id: int) -> AddressTuple:
        lock = self.lock
        lock.acquire_read()
        self.readers_in_cs += 1
        e = self._entry(user_id)
        nh = e.next_hop
        if self._read_cost:
            busywork(self._read_cost)
        out = AddressTuple(nh, e.loc_ts)
        self.readers_in_cs -= 1
        lock.release_read()
        return out

    def write(self, user_id: int, loc_ts: int, next_hop: Optional[int] = None) -> None:
        if __debug__:
            self._check_single_writer()
        lock = self.lock
        lock.acquire_write()
        if self.readers_in_cs:
            self.mutex_violations += 1
        e = self._entry(user_id)
        if next_hop is not None:
            e.next_hop = next_hop
        if self._write_cost:
            busywork(self._write_cost)
        e.loc_ts = loc_ts
        lock.release_write()

    def synchronize(self) -> int:
        return 0

    def reading(self):
        """Read-side critical section holding the shared lock."""
        return _RwlGuard(self)


class _RwlGuard:
    __slots__ = ("_fib",)

    def __init__(self, fib: RwlFib):
        self._fib = fib

    def __enter__(self):
        self._fib.lock.acquire_read()
        self._fib.readers_in_cs += 1
        return self

    def __exit__(self, *exc):
        self._fib.readers_in_cs -= 1
        self._fib.lock.release_read()
        return False

    def lookup(self, user_id: int) -> AddressTuple:
        e = self._fib._entry(user_id)
        return AddressTuple(e.next_hop, e.loc_ts)


class RcuFib(_FibBase):
    backend = Backend.RCU

    #: readers never block on this backend; kept for interface parity
    reader_wait_count = 0

    def __init__(self, n_users: int, *, table_size: Optional[int] = None,
                 read_cost_ns: int = 0, write_cost_ns: int = 0,
                 copy_cost_ns: int = 0,
                 faults: Optional[FaultInjection] = None):
        super().__init__(n_users, table_size, _RcuEntry)
        self._faults = faults or FaultInjection()
        self._read_cost = read_cost_ns
        self._write_cost = write_cost_ns + copy_cost_ns
        self.global_epoch = 0
        self._slots: List[_ReaderSlot] = []
        self._slot_registry = threading.Lock()
        self._tls = threading.local()
        self._retired: List[Tuple[int, RcuVersion]] = []
        self.reclaimed_total = 0

    # -- reader side ---------------------------------------------------------

    def _my_slot(self) -> _ReaderSlot:
        slot = getattr(self._tls, "slot", None)
        if slot is None:
            slot = _ReaderSlot()
            with self._slot_registry:
                self._slots.append(slot)
            self._tls.slot = slot
        return slot

    def read(self, user_id: int) -> AddressTuple:
        slot = self._my_slot()
        slot.epoch = self.global_epoch  # pin
        v = self._entry(user_id).current
        nh = v.next_hop
        if self._read_cost:
            busywork(self._read_cost)
        out = AddressTuple(nh, v.loc_ts)
        slot.epoch = None  # quiesce
        return out

    def reading(self):
        """Pinned read-side critical section; versions observed inside it
        are not reclaimable until it exits."""
        return _RcuGuard(self)

    # -- writer side ---------------------------------------------------------

    def write(self, user_id: int, loc_ts: int, next_hop: Optional[int] = None) -> None:
        if __debug__:
            self._check_single_writer()
        e = self._entry(user_id)
        old = e.current
        nh = next_hop if next_hop is not None else old.next_hop
        if self._write_cost:
            busywork(self._write_cost)
        e.current = RcuVersion(nh, loc_ts)  # atomic publish
        self._retired.append((self.global_epoch, old))
        self.global_epoch += 1

    def synchronize(self) -> int:
        """Reclaim retired versions whose grace period has ended; returns
        the number reclaimed."""
        retired = self._retired
        if not retired:
            return 0
        if self._faults.rcu_premature_reclaim:
            horizon = None  # defect: ignore in-progress readers
        else:
            horizon = self.global_epoch
            for slot in self._slots:
                ep = slot.epoch
                if ep is not None and ep < horizon:
                    horizon = ep
        keep = []
        reclaimed = 0
        for epoch, version in retired:
            if horizon is None or epoch < horizon:
                version.next_hop = POISON
                version.loc_ts = POISON
                version.reclaimed = True
                reclaimed += 1
            else:
                keep.append((epoch, version))
        self._retired = keep
        self.reclaimed_total += reclaimed
        return reclaimed

    @property
    def retired_count(self) -> int:
        return len(self._retired)


class _RcuGuard:
    __slots__ = ("_fib", "_slot")

    def __init__(self, fib: RcuFib):
        self._fib = fib
        self._slot = None

    def __enter__(self):
        self._slot = self._fib._my_slot()
        self._slot.epoch = self._fib.global_epoch
        return self

    def __exit__(self, *exc):
        self._slot.epoch = None
        return False

    def lookup(self, user_id: int) -> AddressTuple:
        v = self._fib._entry(user_id).current
        return AddressTuple(v.next_hop, v.loc_ts)

    def lookup_version(self, user_id: int) -> RcuVersion:
        """The live published version object; for reclamation tests."""
        return self._fib._entry(user_id).current


def make_fib(n_users: int, backend: Backend, *,
             read_cost_ns: int = 0, write_cost_ns: int = 0,
             rcu_copy_cost_ns: int = 0, table_size: Optional[int] = None,
             faults: Optional[FaultInjection] = None):
    """Build the table for `backend`; None (baseline bypass) yields no table."""
    if backend is Backend.RWL:
        return RwlFib(n_users, table_size=table_size, read_cost_ns=read_cost_ns,
                      write_cost_ns=write_cost_ns, faults=faults)
    if backend is Backend.RCU:
        return RcuFib(n_users, table_size=table_size, read_cost_ns=read_cost_ns,
                      write_cost_ns=write_cost_ns, copy_cost_ns=rcu_copy_cost_ns,
                      faults=faults)
    if backend is Backend.NONE:
        return None
    raise ValueError(f"unknown backend {backend!r}")
