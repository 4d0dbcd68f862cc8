"""Independent brute-force recomputation utilities used as test oracles.

These deliberately do not share code paths with the incremental metrics:
`replay_age` integrates receipt logs trapezoid by trapezoid, and
`enumerate_schedules` exhaustively lists the completion orders a lock
discipline permits for a tiny op set. They ship in the library so the
CLI self-test can run them in the field.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Set, Tuple

from .core import Backend

ReceiptEvent = Tuple[int, int, int]  # (timestamp, user_id, gen_ts)


def replay_age(event_log: Sequence[ReceiptEvent], horizon: int, n_users: int,
               start_ts: int = 0) -> List[float]:
    """Per-user mean age over [start_ts, horizon] by direct piecewise-linear
    integration of the receipt log.

    Each event is a fresh receipt observed at `timestamp` carrying source
    time `gen_ts`; receipts older than the freshest already applied do not
    lower the age. Events must be time-sorted.
    """
    last_t = None
    for t, _, _ in event_log:
        if last_t is not None and t < last_t:
            raise ValueError("event log must be time-sorted")
        last_t = t
    if horizon < start_ts:
        raise ValueError("horizon precedes start")

    per_user: Dict[int, List[ReceiptEvent]] = {u: [] for u in range(n_users)}
    for ev in event_log:
        per_user[ev[1]].append(ev)

    means = []
    duration = horizon - start_ts
    for uid in range(n_users):
        area2 = 0  # doubled area, exact integer trapezoids
        seg_start = start_ts
        gen = start_ts
        for t, _, g in per_user[uid]:
            if g <= gen:
                continue  # stale generation: no reset
            a0 = seg_start - gen
            a1 = t - gen
            area2 += (a0 + a1) * (t - seg_start)
            seg_start = t
            gen = g
        a0 = seg_start - gen
        a1 = horizon - gen
        area2 += (a0 + a1) * (horizon - seg_start)
        means.append(area2 / (2 * duration) if duration else 0.0)
    return means


@dataclass(frozen=True)
class ScheduleOp:
    """One lock operation in a micro-schedule: `kind` is 'R' or 'W',
    `thread` identifies the issuing thread, `arrival` is the order in which
    the ops reached the lock (0-based), `duration` the critical-section
    length (informational; arbitrary scheduler delays make it irrelevant
    to which completion orders are legal)."""

    op_id: str
    kind: str
    thread: int
    arrival: int
    duration: int = 0


MAX_SCHEDULE_OPS = 6


def enumerate_schedules(ops: Sequence[ScheduleOp], backend: Backend) -> Set[Tuple[str, ...]]:
    """All completion orders (tuples of op_id) legal under the backend.

    Rules applied:
      * ops issued by the same thread complete in arrival order;
      * RWL write preference: a reader that arrives after a writer cannot
        complete before that writer;
      * RCU: readers never wait, writers publish concurrently, so only the
        same-thread rule constrains the order.
    """
    if len(ops) > MAX_SCHEDULE_OPS:
        raise ValueError(f"at most {MAX_SCHEDULE_OPS} ops supported")
    kinds = {op.kind for op in ops}
    if not kinds <= {"R", "W"}:
        raise ValueError("op kinds must be 'R' or 'W'")

    legal: Set[Tuple[str, ...]] = set()
    for perm in itertools.permutations(ops):
        pos = {op.op_id: i for i, op in enumerate(perm)}
        ok = True
        for a, b in itertools.combinations(ops, 2):
            first, second = (a, b) if a.arrival < b.arrival else (b, a)
            if first.thread == second.thread and pos[first.op_id] > pos[second.op_id]:
                ok = False
                break
            if (backend is Backend.RWL and first.kind == "W" and second.kind == "R"
                    and pos[first.op_id] > pos[second.op_id]):
                ok = False
                break
        if ok:
            legal.add(tuple(op.op_id for op in perm))
    return legal


def harmonic_number(n: int, s: float = 1.0) -> float:
    """Generalized harmonic number by direct summation."""
    return sum(k ** -s for k in range(1, n + 1))


def zipf_rank_prob(rank: int, n_users: int, s: float = 1.0) -> float:
    """Reference P(rank) computed independently of the sampler's CDF."""
    return rank ** -s / harmonic_number(n_users, s)
