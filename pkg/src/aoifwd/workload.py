"""Trace generation and the token-bucket batch sender.

Traces are generated fully in memory before a run: a seeded coin-flip
stream decides control vs data (with exact per-type counts enforced) and
a Zipf rank distribution selects user IDs. The sender offers the trace to
the source Tx ring in timestamp-shared batches governed by the token
recurrence  N' = N - L + dt * R.
"""

from __future__ import annotations

from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .core import ConfigError, Packet, PacketType, RunConfig
from .rings import PushPolicy, Ring

#: Recorded in run metadata; traces are reproducible across machines only
#: for this generator algorithm.
PRNG_ID = "numpy-pcg64"


class TraceEntry(NamedTuple):
    ptype: PacketType
    user_id: int


class Trace:
    """Immutable pre-generated packet trace backed by numpy arrays."""

    __slots__ = ("ptypes", "user_ids")

    def __init__(self, ptypes: np.ndarray, user_ids: np.ndarray):
        if len(ptypes) != len(user_ids):
            raise ValueError("ptype/user arrays must have equal length")
        self.ptypes = ptypes
        self.user_ids = user_ids

    def __len__(self) -> int:
        return len(self.ptypes)

    def __getitem__(self, i: int) -> TraceEntry:
        return TraceEntry(PacketType(int(self.ptypes[i])), int(self.user_ids[i]))

    def __eq__(self, other) -> bool:
        return (isinstance(other, Trace)
                and np.array_equal(self.ptypes, other.ptypes)
                and np.array_equal(self.user_ids, other.user_ids))

    @property
    def n_ctrl(self) -> int:
        return int(np.count_nonzero(self.ptypes == PacketType.CONTROL))

    @property
    def n_data(self) -> int:
        return len(self) - self.n_ctrl

    @classmethod
    def from_entries(cls, entries: Sequence[Tuple[PacketType, int]]) -> "Trace":
        """Build a hand-written trace (tests, tiny scenarios)."""
        pt = np.array([int(p) for p, _ in entries], dtype=np.uint8)
        ui = np.array([u for _, u in entries], dtype=np.int64)
        return cls(pt, ui)


def zipf_pmf(n_users: int, s: float) -> np.ndarray:
    """Rank probabilities P(rank k) = k^-s / H for ranks 1..n_users."""
    if n_users < 1:
        raise ConfigError("n_users must be >= 1")
    ranks = np.arange(1, n_users + 1, dtype=np.float64)
    weights = ranks ** -float(s)
    return weights / weights.sum()


def sample_zipf(rng: np.random.Generator, n: int, n_users: int, s: float) -> np.ndarray:
    """Inverse-CDF sampling over the precomputed rank CDF; rank k maps to
    user ID k-1, so lower IDs are the popular users."""
    cdf = np.cumsum(zipf_pmf(n_users, s))
    cdf[-1] = 1.0
    u = rng.random(n)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def generate_trace(seed: int, n_data: int, n_ctrl: int, n_users: int,
                   zipf_s: float) -> Trace:
    """Deterministic trace: seeded coin flips pick the packet type with
    p(control) = n_ctrl / (n_data + n_ctrl) until one type's budget is
    exhausted, after which the remainder is the other type; user IDs are
    Zipf-distributed across both types.
    """
    if n_users < 1:
        raise ConfigError("n_users must be >= 1")
    if n_data < 0 or n_ctrl < 0:
        raise ConfigError("packet counts must be >= 0")
    total = n_data + n_ctrl
    rng = np.random.default_rng(seed)
    ptypes = np.full(total, int(PacketType.DATA), dtype=np.uint8)
    if total and n_ctrl and n_data:
        p_ctrl = n_ctrl / total
        coins = rng.random(total) < p_ctrl
        cum_c = np.cumsum(coins)
        cum_d = np.arange(1, total + 1) - cum_c
        # first position after which a budget is exhausted
        idx_c = int(np.searchsorted(cum_c, n_ctrl))
        idx_d = int(np.searchsorted(cum_d, n_data))
        if idx_c <= idx_d:
            ptypes[:idx_c + 1][coins[:idx_c + 1]] = int(PacketType.CONTROL)
            # remainder already DATA
        else:
            ptypes[:idx_d + 1][coins[:idx_d + 1]] = int(PacketType.CONTROL)
            ptypes[idx_d + 1:] = int(PacketType.CONTROL)
    elif n_ctrl and not n_data:
        ptypes[:] = int(PacketType.CONTROL)
        rng.random(0)
    user_ids = sample_zipf(rng, total, n_users, zipf_s)
    trace = Trace(ptypes, user_ids)
    assert trace.n_ctrl == n_ctrl and trace.n_data == n_data
    return trace


def write_trace(trace: Trace, path: str) -> None:
    """One entry per line: `C <user_id>` or `D <user_id>`."""
    with open(path, "w") as f:
        ctrl = int(PacketType.CONTROL)
        for pt, uid in zip(trace.ptypes.tolist(), trace.user_ids.tolist()):
            f.write(("C " if pt == ctrl else "D ") + str(uid) + "\n")


def read_trace(path: str) -> Trace:
    ptypes: List[int] = []
    users: List[int] = []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line:
                continue
            kind, _, uid = line.partition(" ")
            if kind not in ("C", "D") or not uid.strip().isdigit():
                raise ConfigError(f"trace line {lineno}: expected 'C|D <user_id>', got {raw!r}")
            ptypes.append(int(PacketType.CONTROL) if kind == "C" else int(PacketType.DATA))
            users.append(int(uid))
    return Trace(np.array(ptypes, dtype=np.uint8), np.array(users, dtype=np.int64))


class ControlRegister:
    """Per-user latest-admitted-control timestamp; written by the sender,
    read by the freshness classifier."""

    __slots__ = ("_latest",)

    def __init__(self, n_users: int):
        self._latest = [0] * n_users

    def record(self, user_id: int, gen_ts: int) -> None:
        self._latest[user_id] = gen_ts

    def freshest(self, user_id: int) -> int:
        return self._latest[user_id]


class Sender:
    """Token-bucket batch admission onto the source Tx ring.

    Each `step(now)` call is one tx-burst attempt: accrue dt * R tokens,
    offer K = min(B, floor(N)) packets (retries first), stamp the whole
    offered batch with `now`, and spend one token per admitted packet.
    Admitted control packets update the control register at that instant.
    """

    #: packets are materialized from the numpy trace in chunks of this size
    CHUNK = 4096

    def __init__(self, trace: Trace, config: RunConfig, src_tx: Ring,
                 register: ControlRegister):
        self._ptypes = trace.ptypes
        self._users = trace.user_ids
        self._total = len(trace)
        self._ring = src_tx
        self._register = register
        self.rate_pps = float(config.rate_pps)
        self._burst_cap = config.burst_cap
        self.tokens = 0.0
        self._last_ts: Optional[int] = None
        self._cursor = 0
        self._retry: List[Packet] = []
        self._chunk_pt: List[int] = []
        self._chunk_uid: List[int] = []
        self._chunk_pos = 0
        self.calls = 0
        self.admitted = 0
        self.ctrl_admitted = 0
        self.batch_hist: dict = {}

    @property
    def done(self) -> bool:
        return self._cursor >= self._total and not self._retry

    def _take(self, need: int) -> List[Packet]:
        out = []
        pos = self._chunk_pos
        pt, uid = self._chunk_pt, self._chunk_uid
        cursor = self._cursor
        while need:
            if pos == len(pt):
                base = cursor
                pt = self._chunk_pt = self._ptypes[base:base + self.CHUNK].tolist()
                uid = self._chunk_uid = self._users[base:base + self.CHUNK].tolist()
                pos = 0
            out.append(Packet(pt[pos], uid[pos], cursor))
            pos += 1
            cursor += 1
            need -= 1
        self._chunk_pos = pos
        self._cursor = cursor
        return out

    def step(self, now: int) -> Tuple[int, int]:
        """One admission call at time `now`; returns (offered, admitted)."""
        self.calls += 1
        if self._last_ts is None:
            self._last_ts = now  # bucket starts empty at t0
        dt = now - self._last_ts
        if dt:
            self.tokens += (dt * self.rate_pps) / 1e9
            self._last_ts = now
        k = int(self.tokens)
        if k > self._burst_cap:
            k = self._burst_cap
        remaining = len(self._retry) + (self._total - self._cursor)
        if k > remaining:
            k = remaining
        if k == 0:
            return 0, 0
        batch = self._retry[:k]
        need = k - len(batch)
        if need:
            batch.extend(self._take(need))
        for p in batch:
            p.gen_ts = now
        admitted = self._ring.try_push_burst(batch, PushPolicy.ADMIT)
        if admitted:
            ctrl = int(PacketType.CONTROL)
            record = self._register.record
            n_ctrl = 0
            for i in range(admitted):
                p = batch[i]
                if p.ptype == ctrl:
                    record(p.user_id, now)
                    n_ctrl += 1
            self.ctrl_admitted += n_ctrl
            self.admitted += admitted
            self.tokens -= admitted
            hist = self.batch_hist
            hist[admitted] = hist.get(admitted, 0) + 1
        self._retry = batch[admitted:]
        return k, admitted

    def mean_batch_size(self) -> float:
        """Average admitted batch size over nonzero batches."""
        total = sum(self.batch_hist.values())
        if not total:
            return 0.0
        return sum(k * v for k, v in self.batch_hist.items()) / total
