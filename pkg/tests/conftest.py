"""Shared fixtures and config helpers."""

from __future__ import annotations

import pytest

from aoifwd import Backend, Mode, RunConfig

ORACLE_COSTS = dict(
    tx_call_cost_ns=1000,
    demux_cost_ns=100,
    fib_read_cost_ns=150,
    fib_write_cost_ns=300,
    rcu_copy_cost_ns=50,
    link_latency_ns=50,
)


def oracle_config(**overrides) -> RunConfig:
    base = dict(
        rate_pps=2e6, cdr=0.0, n_users=1, n_data_pkts=100, n_ctrl_pkts=0,
        sync_backend=Backend.RCU, seed=1, mode=Mode.ORACLE,
    )
    base.update(ORACLE_COSTS)
    base.update(overrides)
    return RunConfig(**base).validate()


def threaded_config(**overrides) -> RunConfig:
    base = dict(
        rate_pps=1e5, cdr=0.0, n_users=1, n_data_pkts=2000, n_ctrl_pkts=0,
        sync_backend=Backend.NONE, seed=1, mode=Mode.THREADED,
    )
    base.update(overrides)
    return RunConfig(**base).validate()


@pytest.fixture(scope="session")
def measured_rmax():
    """Peak sustainable baseline admission rate on this machine (pps):
    median of three saturated probes after a discarded warmup run."""
    import statistics

    from aoifwd import run_threaded

    run_threaded(threaded_config(rate_pps=1e8, n_data_pkts=15_000))  # warmup
    rates = []
    for _ in range(3):
        rpt = run_threaded(threaded_config(rate_pps=1e8, n_data_pkts=50_000))
        rates.append(rpt.n_data / (rpt.duration_ns / 1e9))
    return statistics.median(rates)
