"""Bounded single-producer/single-consumer rings with batch push/pop.

These emulate NIC descriptor rings and the inter-thread rings of the
forwarding pipeline. The implementation is the classic two-index circular
buffer: the producer owns `tail`, the consumer owns `head`, and neither
index is ever written by the other side, so no lock is needed under the
one-producer/one-consumer contract (CPython's interpreter guarantees the
required load/store atomicity for the int fields).
"""

from __future__ import annotations

import enum
import threading
from typing import List, Sequence

from .core import ContractViolation


class PushPolicy(enum.Enum):
    #: leftovers stay with the caller; nothing is dropped
    ADMIT = "admit"
    #: leftovers are counted as drops (NIC Rx overflow behavior)
    TAIL_DROP = "tail_drop"


class RingRole(enum.Enum):
    SRC_TX = "src_tx"
    CTRL_RX = "ctrl_rx"
    DATA_RX = "data_rx"
    DATA_TX = "data_tx"
    NET_LINK = "net_link"


class Ring:
    """Bounded FIFO; batch operations; tail-drop accounting.

    `closed` is set by the producer after its final push and read by the
    consumer to terminate its drain loop.
    """

    __slots__ = (
        "capacity", "role", "_buf", "_mask", "_head", "_tail",
        "drop_count", "pushed", "popped", "closed",
        "_producer_ident", "_consumer_ident",
        "_doorbell", "_consumer_waiting",
    )

    def __init__(self, capacity: int, role: RingRole = RingRole.NET_LINK):
        if capacity < 2 or capacity & (capacity - 1):
            raise ValueError("ring capacity must be a power of two >= 2")
        self.capacity = capacity
        self.role = role
        self._buf: List[object] = [None] * capacity
        self._mask = capacity - 1
        self._head = 0  # consumer-owned
        self._tail = 0  # producer-owned
        self.drop_count = 0
        self.pushed = 0
        self.popped = 0
        self.closed = False
        self._producer_ident = None
        self._consumer_ident = None
        # edge-triggered doorbell: rung by the producer only when the
        # consumer has announced it is about to block
        self._doorbell = threading.Event()
        self._consumer_waiting = False

    # -- producer side -------------------------------------------------------

    def try_push_burst(self, pkts: Sequence, policy: PushPolicy) -> int:
        """Enqueue as many of `pkts` as fit, in order; return the count.

        Under TAIL_DROP the remainder is dropped and counted; under ADMIT
        the remainder stays with the caller.
        """
        if __debug__:
            self._check_side("_producer_ident")
        tail = self._tail
        free = self.capacity - (tail - self._head)
        n = len(pkts) if len(pkts) <= free else free
        if n:
            buf, mask = self._buf, self._mask
            for i in range(n):
                buf[(tail + i) & mask] = pkts[i]
            self._tail = tail + n
            self.pushed += n
            if self._consumer_waiting:
                self._doorbell.set()
        if policy is PushPolicy.TAIL_DROP and n < len(pkts):
            self.drop_count += len(pkts) - n
        return n

    def close(self) -> None:
        """Producer signals end of stream; must follow the final push."""
        self.closed = True
        if self._consumer_waiting:
            self._doorbell.set()

    # -- consumer side -------------------------------------------------------

    def try_pop_burst(self, max_n: int) -> list:
        """Dequeue up to `max_n` items in FIFO order (possibly none)."""
        if __debug__:
            self._check_side("_consumer_ident")
        if max_n < 1:
            raise ValueError("max_n must be >= 1")
        head = self._head
        avail = self._tail - head
        n = max_n if max_n <= avail else avail
        if not n:
            return []
        buf, mask = self._buf, self._mask
        out = [None] * n
        for i in range(n):
            j = (head + i) & mask
            out[i] = buf[j]
            buf[j] = None
        self._head = head + n
        self.popped += n
        return out

    # -- shared observers ----------------------------------------------------

    def wait_nonempty(self, timeout: float) -> None:
        """Consumer-side terminal backoff: block until the producer pushes
        or closes, or the timeout elapses. Spurious wakes are harmless; the
        caller re-polls."""
        self._consumer_waiting = True
        try:
            if self._tail == self._head and not self.closed:
                self._doorbell.wait(timeout)
        finally:
            self._consumer_waiting = False
            self._doorbell.clear()

    @property
    def occupancy(self) -> int:
        return self._tail - self._head

    @property
    def drained(self) -> bool:
        """True once the producer closed the ring and it is empty."""
        return self.closed and self._tail == self._head

    def _check_side(self, attr: str) -> None:
        ident = threading.get_ident()
        seen = getattr(self, attr)
        if seen is None:
            setattr(self, attr, ident)
        elif seen != ident:
            side = "producer" if attr == "_producer_ident" else "consumer"
            raise ContractViolation(
                f"{self.role.value} ring used by a second {side} thread"
            )

    def reset_thread_bindings(self) -> None:
        """Forget recorded producer/consumer idents (single-threaded reuse)."""
        self._producer_ident = None
        self._consumer_ident = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (f"Ring({self.role.value}, cap={self.capacity}, occ={self.occupancy}, "
                f"pushed={self.pushed}, popped={self.popped}, drops={self.drop_count}, "
                f"closed={self.closed})")
