"""Shared domain types, the experiment clock, and run configuration."""

from __future__ import annotations

import enum
import hashlib
import time
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple, Optional


class ConfigError(ValueError):
    """Raised for invalid or malformed run configuration."""


class ContractViolation(RuntimeError):
    """A runtime contract of the pipeline was broken (bug, not user error)."""


class InvariantViolation(RuntimeError):
    """A conservation or accounting identity failed at finalize."""


class PipelineStalled(RuntimeError):
    """Watchdog detected no global progress for the configured interval."""


class PacketType(enum.IntEnum):
    """Control (location update) or data (app update). One byte on the wire."""

    CONTROL = 0
    DATA = 1


class Packet:
    """A single in-flight update.

    `gen_ts` is stamped once, at batch admission, and is shared by every
    packet admitted in the same call. `fib_ts` is absent until the data
    path copies it out of the forwarding table.
    """

    __slots__ = ("ptype", "user_id", "gen_ts", "fib_ts", "seq")

    def __init__(self, ptype: int, user_id: int, seq: int):
        self.ptype = ptype
        self.user_id = user_id
        self.gen_ts = 0
        self.fib_ts: Optional[int] = None
        self.seq = seq

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        kind = "C" if self.ptype == PacketType.CONTROL else "D"
        return f"Packet({kind} u{self.user_id} seq={self.seq} gen={self.gen_ts} fib={self.fib_ts})"


class AddressTuple(NamedTuple):
    """Forwarding-table value: opaque next hop plus the timestamp of the
    location update that last wrote it."""

    next_hop: int
    loc_ts: int


class ClockMode(enum.Enum):
    MONOTONIC = "monotonic"
    VIRTUAL = "virtual"


class Clock:
    """Process-wide experiment clock, nanosecond resolution.

    Monotonic mode is safe for concurrent callers. Virtual mode advances
    only through explicit `advance_to` calls by the event engine and must
    never move backwards.
    """

    __slots__ = ("mode", "_virtual_now")

    def __init__(self, mode: ClockMode = ClockMode.MONOTONIC):
        self.mode = mode
        self._virtual_now = 0

    def now(self) -> int:
        if self.mode is ClockMode.MONOTONIC:
            return time.monotonic_ns()
        return self._virtual_now

    def advance_to(self, t: int) -> None:
        if self.mode is not ClockMode.VIRTUAL:
            raise ContractViolation("advance_to is only valid on a virtual clock")
        if t < self._virtual_now:
            raise ContractViolation(
                f"virtual clock moved backwards: {t} < {self._virtual_now}"
            )
        self._virtual_now = t


class Backend(enum.Enum):
    """Synchronization discipline guarding the forwarding table."""

    RWL = "rwl"
    RCU = "rcu"
    NONE = "none"


class Mode(enum.Enum):
    THREADED = "threaded"
    ORACLE = "oracle"


class Experiment(enum.Enum):
    BASELINE = "baseline"
    ROUTING_CDR_001 = "routing-cdr001"
    ROUTING_CDR_01 = "routing-cdr01"


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


# Fields whose value is an oracle service time (ns). In threaded mode the
# FIB costs double as busy-work injected inside the critical sections.
SERVICE_TIME_FIELDS = (
    "tx_call_cost_ns",
    "demux_cost_ns",
    "fib_read_cost_ns",
    "fib_write_cost_ns",
    "rcu_copy_cost_ns",
    "link_latency_ns",
)


@dataclass
class RunConfig:
    """Everything needed to execute one run.

    Ring capacities are powers of two. `link_ring` is the capacity of the
    two NIC-emulating link rings between the source and forwarder halves.
    """

    rate_pps: float = 1e6
    burst_cap: int = 32
    cdr: float = 0.0
    n_users: int = 1
    zipf_s: float = 1.0
    n_data_pkts: int = 0
    n_ctrl_pkts: int = 0
    src_tx_ring: int = 64
    ctrl_rx_ring: int = 4096
    data_rx_ring: int = 4096
    data_tx_ring: int = 4096
    link_ring: int = 4096
    rx_burst: int = 64
    fwd_burst: int = 64
    sync_backend: Backend = Backend.RWL
    seed: int = 1
    mode: Mode = Mode.THREADED
    tx_call_cost_ns: Optional[int] = None
    demux_cost_ns: Optional[int] = None
    fib_read_cost_ns: Optional[int] = None
    fib_write_cost_ns: Optional[int] = None
    rcu_copy_cost_ns: Optional[int] = None
    link_latency_ns: int = 0
    watchdog_s: float = 10.0

    def validate(self) -> "RunConfig":
        if self.rate_pps <= 0:
            raise ConfigError("rate_pps must be > 0")
        if self.burst_cap < 1:
            raise ConfigError("burst_cap must be >= 1")
        if self.cdr < 0:
            raise ConfigError("cdr must be >= 0")
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if self.zipf_s < 0:
            raise ConfigError("zipf_s must be >= 0")
        if self.n_data_pkts < 0 or self.n_ctrl_pkts < 0:
            raise ConfigError("packet counts must be >= 0")
        if self.cdr == 0 and self.n_ctrl_pkts != 0:
            raise ConfigError("cdr = 0 requires n_ctrl_pkts = 0")
        for name in ("src_tx_ring", "ctrl_rx_ring", "data_rx_ring",
                     "data_tx_ring", "link_ring"):
            if not _is_pow2(getattr(self, name)):
                raise ConfigError(f"{name} must be a power of two >= 2")
        if self.rx_burst < 1 or self.fwd_burst < 1:
            raise ConfigError("burst sizes must be >= 1")
        if self.sync_backend is Backend.NONE and self.n_ctrl_pkts != 0:
            raise ConfigError("sync_backend none is only valid for control-free baseline runs")
        if self.mode is Mode.ORACLE:
            missing = [n for n in SERVICE_TIME_FIELDS if getattr(self, n) is None]
            if missing:
                raise ConfigError("oracle mode requires service times: " + ", ".join(missing))
            if self.tx_call_cost_ns <= 0:
                raise ConfigError("tx_call_cost_ns must be > 0 in oracle mode")
            for n in SERVICE_TIME_FIELDS:
                if getattr(self, n) < 0:
                    raise ConfigError(f"{n} must be >= 0")
        if self.link_latency_ns < 0:
            raise ConfigError("link_latency_ns must be >= 0")
        if self.watchdog_s <= 0:
            raise ConfigError("watchdog_s must be > 0")
        return self

    # -- flat `key = value` config file format ------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, enum.Enum):
                v = v.value
            lines.append(f"{f.name} = {v!r}" if isinstance(v, str) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, validate: bool = True) -> "RunConfig":
        """Parse the flat config format. `validate=False` defers semantic
        checks for callers that fill defaults afterwards (the CLI)."""
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(key, value)
        cfg = cls(**kwargs)
        return cfg.validate() if validate else cfg

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw).validate()


_ENUM_FIELDS = {"sync_backend": Backend, "mode": Mode}
_FLOAT_FIELDS = {"rate_pps", "cdr", "zipf_s", "watchdog_s"}


def _parse_value(key: str, value: str):
    if key in _ENUM_FIELDS:
        try:
            return _ENUM_FIELDS[key](value.strip("'\""))
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    try:
        if key in _FLOAT_FIELDS:
            return float(value)
        return int(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


# Packet counts and table sizes of the three stock experiments.
_EXPERIMENT_DEFAULTS = {
    Experiment.BASELINE: dict(
        n_data_pkts=47_996_440,
        n_ctrl_pkts=0,
        n_users=1,
        cdr=0.0,
        sync_backend=Backend.NONE,
        ctrl_rx_ring=4096,
        data_rx_ring=4096,
        data_tx_ring=4096,
    ),
    Experiment.ROUTING_CDR_001: dict(
        n_data_pkts=39_996_600,
        n_ctrl_pkts=400_000,
        n_users=1000,
        cdr=0.01,
        sync_backend=Backend.RCU,
        ctrl_rx_ring=64,
        data_rx_ring=64,
        data_tx_ring=1024,
    ),
    Experiment.ROUTING_CDR_01: dict(
        n_data_pkts=39_996_600,
        n_ctrl_pkts=3_999_800,
        n_users=1000,
        cdr=0.1,
        sync_backend=Backend.RCU,
        ctrl_rx_ring=64,
        data_rx_ring=64,
        data_tx_ring=1024,
    ),
}


def default_config(experiment: Experiment) -> RunConfig:
    """Stock configuration for one of the three named experiments,
    including exact packet counts and ring/burst sizes."""
    return RunConfig(**_EXPERIMENT_DEFAULTS[experiment]).validate()
