"""In-process packet-forwarding emulator: app-update and location-update
freshness under RWL and RCU forwarding-table synchronization."""

__version__ = "0.1.0"

from .core import (AddressTuple, Backend, Clock, ClockMode, ConfigError,
                   ContractViolation, Experiment, InvariantViolation, Mode,
                   Packet, PacketType, PipelineStalled, RunConfig,
                   default_config)
from .fib import FaultInjection, RcuFib, RwlFib, make_fib
from .metrics import (AgeLedger, Classification, FibAgeTracker, RunReport,
                      classify, finalize)
from .oracle import OraclePipeline, run_oracle
from .pipeline import ThreadedPipeline, run, run_threaded
from .rings import PushPolicy, Ring, RingRole
from .validation import ScheduleOp, enumerate_schedules, replay_age
from .workload import (ControlRegister, Sender, Trace, TraceEntry,
                       generate_trace, read_trace, sample_zipf, write_trace)

__all__ = [
    "AddressTuple", "AgeLedger", "Backend", "Classification", "Clock",
    "ClockMode", "ConfigError", "ContractViolation", "ControlRegister",
    "Experiment", "FaultInjection", "FibAgeTracker", "InvariantViolation",
    "Mode", "OraclePipeline", "Packet", "PacketType", "PipelineStalled",
    "PushPolicy", "RcuFib", "Ring", "RingRole", "RunConfig", "RunReport",
    "RwlFib", "ScheduleOp", "Sender", "ThreadedPipeline", "Trace",
    "TraceEntry", "classify", "default_config", "enumerate_schedules",
    "finalize", "generate_trace", "make_fib", "read_trace", "replay_age",
    "run", "run_oracle", "run_threaded", "sample_zipf", "write_trace",
]
