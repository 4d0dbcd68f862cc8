"""Freshness classification, per-user age tracking, and run reports.

Ages are piecewise-linear sawtooths in integer nanoseconds. Areas are
accumulated as doubled integers (exact in Python ints), so two structurally
different integrators can be compared without floating-point slack.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .core import ContractViolation, InvariantViolation, Packet, RunConfig
from .workload import ControlRegister


class Classification(enum.Enum):
    FRESH = "fresh"
    MISADDRESSED = "misaddressed"


def classify(pkt: Packet, register: ControlRegister) -> Classification:
    """Fresh iff the FIB timestamp carried by the packet equals the latest
    control timestamp admitted for that user (0 when none was ever sent)."""
    if pkt.fib_ts is None:
        raise ContractViolation(f"data packet without fib_ts: {pkt!r}")
    if pkt.fib_ts == register.freshest(pkt.user_id):
        return Classification.FRESH
    return Classification.MISADDRESSED


class Sawtooth:
    """Per-user linear-growth/reset age integrator.

    Age starts at zero for every user at `start_ts` and grows with slope 1
    until an event carrying a newer source timestamp resets it. The area
    under each sawtooth accumulates lazily at reset points as a doubled
    integer: 2 * integral of (t - g) dt over [a, b] = (b-g)^2 - (a-g)^2.
    """

    __slots__ = ("start_ts", "n", "gen", "event", "area2")

    def __init__(self, n_users: int, start_ts: int):
        self.start_ts = start_ts
        self.n = n_users
        self.gen = [start_ts] * n_users    # source timestamp of freshest applied update
        self.event = [start_ts] * n_users  # time the current segment started
        self.area2 = [0] * n_users         # doubled accumulated area

    def reset(self, uid: int, src_ts: int, now: int) -> bool:
        """Apply an update generated at `src_ts`, observed at `now`.
        Returns True when it was fresher than the current state and the
        age dropped; older-generation updates leave the sawtooth alone."""
        g = self.gen[uid]
        if src_ts <= g:
            return False
        self.area2[uid] += (now - g) ** 2 - (self.event[uid] - g) ** 2
        self.gen[uid] = src_ts
        self.event[uid] = now
        return True

    def close(self, end_ts: int) -> None:
        gen, event, area2 = self.gen, self.event, self.area2
        for uid in range(self.n):
            g = gen[uid]
            area2[uid] += (end_ts - g) ** 2 - (event[uid] - g) ** 2
            event[uid] = end_ts

    def mean_ages(self, end_ts: int) -> List[float]:
        dur = end_ts - self.start_ts
        if dur <= 0:
            return [0.0] * self.n
        return [a / (2 * dur) for a in self.area2]


class AgeLedger:
    """Receiver-side sawtooth of app-update age plus fresh/stale counters.
    Owned exclusively by the source receiver thread."""

    __slots__ = ("saw", "fresh_count", "stale_count", "user_fresh", "user_stale")

    def __init__(self, n_users: int, start_ts: int):
        self.saw = Sawtooth(n_users, start_ts)
        self.fresh_count = 0
        self.stale_count = 0
        self.user_fresh = [0] * n_users
        self.user_stale = [0] * n_users

    def on_receipt(self, uid: int, gen_ts: int, now: int, fresh: bool) -> None:
        if fresh:
            self.fresh_count += 1
            self.user_fresh[uid] += 1
            self.saw.reset(uid, gen_ts, now)
        else:
            self.stale_count += 1
            self.user_stale[uid] += 1

    @property
    def received(self) -> int:
        return self.fresh_count + self.stale_count


class FibAgeTracker:
    """Control-side sawtooth of location-update age, sampled at the instant
    each write is applied to the table. Owned by the control thread."""

    __slots__ = ("saw", "writes")

    def __init__(self, n_users: int, start_ts: int):
        self.saw = Sawtooth(n_users, start_ts)
        self.writes = 0

    def on_write(self, uid: int, loc_ts: int, now: int) -> None:
        self.writes += 1
        self.saw.reset(uid, loc_ts, now)


#: Threshold above which misaddress statistics are flagged low-confidence.
DROP_CONFIDENCE_FRACTION = 0.10

CSV_HEADER = ("backend,cdr,rate_pps,mean_app_age_ns,mean_fib_age_ns,fresh,"
              "misaddressed,drop_ctrl_rx,drop_data_rx,drop_data_tx,"
              "mean_batch_size,duration_ns,seed,flags")

PER_USER_CSV_HEADER = "user_id,mean_app_age_ns,fresh,misaddressed"


@dataclass
class RunReport:
    """Everything a run produces; one CSV row plus optional per-user rows."""

    config_hash: str
    backend: str
    mode: str
    cdr: float
    rate_pps: float
    seed: int
    n_data: int
    n_ctrl: int
    mean_app_age_ns: float
    mean_fib_age_ns: float
    per_user_mean_age_ns: List[float]
    per_user_fresh: List[int]
    per_user_stale: List[int]
    fresh: int
    misaddressed: int
    fib_writes: int
    drop_ctrl_rx: int
    drop_data_rx: int
    drop_data_tx: int
    mean_batch_size: float
    batch_hist: Dict[int, int]
    sender_calls: int
    duration_ns: int
    flags: List[str] = field(default_factory=list)
    #: fresh receipts as (timestamp, user_id, gen_ts); for replay validation
    receipts: Optional[list] = None
    #: every delivery as (seq, timestamp, fresh); for ordering/schedule checks
    deliveries: Optional[list] = None

    def csv_row(self) -> str:
        return ",".join([
            self.backend,
            repr(self.cdr),
            repr(self.rate_pps),
            repr(self.mean_app_age_ns),
            repr(self.mean_fib_age_ns),
            str(self.fresh),
            str(self.misaddressed),
            str(self.drop_ctrl_rx),
            str(self.drop_data_rx),
            str(self.drop_data_tx),
            repr(self.mean_batch_size),
            str(self.duration_ns),
            str(self.seed),
            ";".join(self.flags),
        ])

    def per_user_rows(self) -> List[str]:
        return [
            f"{uid},{self.per_user_mean_age_ns[uid]!r},{self.per_user_fresh[uid]},{self.per_user_stale[uid]}"
            for uid in range(len(self.per_user_mean_age_ns))
        ]


def finalize(config: RunConfig, ledger: AgeLedger, tracker: Optional[FibAgeTracker],
             rings: dict, sender, start_ts: int, end_ts: int,
             extra_flags: Optional[List[str]] = None,
             receipts: Optional[list] = None,
             deliveries: Optional[list] = None) -> RunReport:
    """Close every sawtooth at `end_ts`, verify the conservation identities,
    and assemble the report. `rings` maps role names to Ring objects."""
    n_data = config.n_data_pkts
    n_ctrl = config.n_ctrl_pkts

    ledger.saw.close(end_ts)
    per_user = ledger.saw.mean_ages(end_ts)
    duration = end_ts - start_ts
    mean_app = sum(per_user) / len(per_user) if per_user else 0.0

    if tracker is not None:
        tracker.saw.close(end_ts)
        fib_means = tracker.saw.mean_ages(end_ts)
        mean_fib = sum(fib_means) / len(fib_means) if fib_means else 0.0
        writes = tracker.writes
    else:
        mean_fib = 0.0
        writes = 0

    drop_ctrl = rings["ctrl_rx"].drop_count
    drop_data_rx = rings["data_rx"].drop_count
    drop_data_tx = rings["data_tx"].drop_count

    # conservation identities, exact
    got_data = ledger.received + drop_data_rx + drop_data_tx
    if got_data != n_data:
        raise InvariantViolation(
            f"data conservation: {n_data} sent != {ledger.received} received "
            f"+ {drop_data_rx} drop_data_rx + {drop_data_tx} drop_data_tx")
    if writes + drop_ctrl != n_ctrl:
        raise InvariantViolation(
            f"control conservation: {n_ctrl} sent != {writes} applied + {drop_ctrl} dropped")
    for name in ("src_tx", "link_up", "link_down"):
        if rings[name].drop_count:
            raise InvariantViolation(f"{name} ring must never drop")

    flags = list(extra_flags or [])
    if n_data and (drop_data_rx + drop_data_tx) > DROP_CONFIDENCE_FRACTION * n_data:
        flags.append("low_conf_misaddr")

    return RunReport(
        config_hash=config.config_hash(),
        backend=config.sync_backend.value,
        mode=config.mode.value,
        cdr=config.cdr,
        rate_pps=config.rate_pps,
        seed=config.seed,
        n_data=n_data,
        n_ctrl=n_ctrl,
        mean_app_age_ns=mean_app,
        mean_fib_age_ns=mean_fib,
        per_user_mean_age_ns=per_user,
        per_user_fresh=ledger.user_fresh,
        per_user_stale=ledger.user_stale,
        fresh=ledger.fresh_count,
        misaddressed=ledger.stale_count,
        fib_writes=writes,
        drop_ctrl_rx=drop_ctrl,
        drop_data_rx=drop_data_rx,
        drop_data_tx=drop_data_tx,
        mean_batch_size=sender.mean_batch_size(),
        batch_hist=dict(sender.batch_hist),
        sender_calls=sender.calls,
        duration_ns=duration,
        flags=flags,
        receipts=receipts,
        deliveries=deliveries,
    )
