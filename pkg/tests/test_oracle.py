import pytest

from aoifwd import Backend, Mode, PacketType, RunConfig, Trace, run_oracle
from aoifwd.oracle import _RcuSchedule, _RwlSchedule
from aoifwd.validation import replay_age
from conftest import oracle_config

C = PacketType.CONTROL
D = PacketType.DATA

# ---------------------------------------------------------------------------
# Hand-scheduled 20-packet trace.
#
# Costs: tx call 1000 ns, demux 100 ns/pkt, read 150 ns, write 300 ns,
# rcu copy 50 ns (effective write 350 ns), link latency 50 ns each way.
# Rate 2 Mpps with 1000 ns calls -> exactly 2 tokens per call, so batch i
# (packets 2i, 2i+1) is admitted at T = 1000 * (i + 1), both stamped T.
#
# Per batch (admitted at T):
#   uplink delivery  T + 50
#   demux done       T + 50 + 100 * 2           = T + 250
#   RCU read k of a 2-data batch starts at T + 250 + 150 * k
#   data-data batch:   both pushed at T + 550, delivered/classified T + 600
#   single-data batch: pushed at T + 400, delivered/classified T + 450
#   control write:     starts T + 250, applied (published) T + 600;
#                      a second queued write is applied at T + 950
#   control register:  updated already at admission time T
#
# A data packet sharing its batch with a control for the same user reads
# the pre-write table value but is classified against the already-updated
# register -> misaddressed.
# ---------------------------------------------------------------------------
HAND_TRACE = [
    (D, 0), (D, 0),  # batch 1, T=1000
    (D, 1), (C, 0),  # batch 2, T=2000
    (D, 0), (D, 2),  # batch 3, T=3000
    (D, 0), (C, 0),  # batch 4, T=4000  <- data misaddressed (register jumps to 4000)
    (D, 0), (D, 1),  # batch 5, T=5000
    (C, 1), (C, 1),  # batch 6, T=6000
    (D, 1), (D, 1),  # batch 7, T=7000
    (D, 2), (C, 2),  # batch 8, T=8000  <- data misaddressed
    (D, 2), (D, 0),  # batch 9, T=9000
    (D, 0), (D, 1),  # batch 10, T=10000
]

# seq -> (delivery time ns, fresh?)
HAND_EXPECTED = {
    0: (1600, True),
    1: (1600, True),
    2: (2450, True),
    4: (3600, True),
    5: (3600, True),
    6: (4450, False),
    8: (5600, True),
    9: (5600, True),
    12: (7600, True),
    13: (7600, True),
    14: (8450, False),
    16: (9600, True),
    17: (9600, True),
    18: (10600, True),
    19: (10600, True),
}


def hand_config() -> RunConfig:
    return RunConfig(
        rate_pps=2e6, burst_cap=32, cdr=5 / 15, n_users=3,
        n_data_pkts=15, n_ctrl_pkts=5,
        ctrl_rx_ring=64, data_rx_ring=64, data_tx_ring=64,
        sync_backend=Backend.RCU, seed=1, mode=Mode.ORACLE,
        tx_call_cost_ns=1000, demux_cost_ns=100, fib_read_cost_ns=150,
        fib_write_cost_ns=300, rcu_copy_cost_ns=50, link_latency_ns=50,
    ).validate()


class TestHandTrace:
    def test_per_packet_delivery_times_and_classifications(self):
        rpt = run_oracle(hand_config(), Trace.from_entries(HAND_TRACE),
                         collect_receipts=True)
        observed = {seq: (t, fresh) for seq, t, fresh in rpt.deliveries}
        assert observed == HAND_EXPECTED

    def test_aggregate_counters(self):
        rpt = run_oracle(hand_config(), Trace.from_entries(HAND_TRACE))
        assert rpt.fresh == 13
        assert rpt.misaddressed == 2
        assert rpt.fib_writes == 5
        assert (rpt.drop_ctrl_rx, rpt.drop_data_rx, rpt.drop_data_tx) == (0, 0, 0)
        assert rpt.duration_ns == 10600
        assert rpt.batch_hist == {2: 10}

    def test_user2_mean_age_hand_value(self):
        # fresh resets for user 2: (3600, gen 3000), (9600, gen 9000);
        # doubled area = 3600^2 + (6600^2 - 600^2) + (1600^2 - 600^2)
        rpt = run_oracle(hand_config(), Trace.from_entries(HAND_TRACE))
        assert rpt.per_user_mean_age_ns[2] == 58_360_000 / (2 * 10_600)


class TestClosedFormSinglePacket:
    def test_delivery_age_is_two_lambda_plus_costs(self):
        cfg = oracle_config(rate_pps=1e6, n_data_pkts=1, tx_call_cost_ns=1000,
                            demux_cost_ns=100, fib_read_cost_ns=150,
                            link_latency_ns=50, sync_backend=Backend.RWL)
        rpt = run_oracle(cfg, collect_receipts=True)
        (t, uid, gen), = rpt.receipts
        assert gen == 1000  # one token after the first 1000 ns call
        assert t - gen == 2 * 50 + 100 + 150

    def test_bypass_baseline_has_no_read_cost(self):
        cfg = oracle_config(rate_pps=1e6, n_data_pkts=1, sync_backend=Backend.NONE,
                            tx_call_cost_ns=1000, demux_cost_ns=100,
                            fib_read_cost_ns=150, link_latency_ns=50)
        rpt = run_oracle(cfg, collect_receipts=True)
        (t, _, gen), = rpt.receipts
        assert t - gen == 2 * 50 + 100


class TestDeterminism:
    def test_bit_identical_reports(self):
        cfg = oracle_config(rate_pps=3e6, cdr=0.1, n_users=20,
                            n_data_pkts=3000, n_ctrl_pkts=300,
                            ctrl_rx_ring=64, data_rx_ring=64, data_tx_ring=64,
                            sync_backend=Backend.RWL, seed=11)
        a = run_oracle(cfg, collect_receipts=True)
        b = run_oracle(cfg, collect_receipts=True)
        assert a.csv_row() == b.csv_row()
        assert a.per_user_mean_age_ns == b.per_user_mean_age_ns
        assert a.receipts == b.receipts
        assert a.deliveries == b.deliveries

    def test_seed_changes_results(self):
        cfg = oracle_config(rate_pps=3e6, cdr=0.1, n_users=20,
                            n_data_pkts=3000, n_ctrl_pkts=300,
                            sync_backend=Backend.RWL, seed=11)
        a = run_oracle(cfg)
        b = run_oracle(cfg.with_overrides(seed=12))
        assert a.csv_row() != b.csv_row()


class TestRwlAdmissionModel:
    def test_reader_waits_for_active_and_queued_writer(self):
        lock = _RwlSchedule()
        assert lock.read_request(0, 100) == 0          # holds [0, 100)
        assert lock.write_request(50, 200) == 100      # queued behind reader
        # reader arriving while the writer is queued starts after it ends
        assert lock.read_request(60, 100) == 300

    def test_reader_after_writer_done_is_immediate(self):
        lock = _RwlSchedule()
        lock.write_request(0, 100)
        assert lock.read_request(200, 50) == 200

    def test_writer_waits_for_all_active_readers(self):
        lock = _RwlSchedule()
        lock.read_request(0, 100)
        lock.read_request(10, 300)
        assert lock.write_request(50, 10) == 310

    def test_rcu_never_waits(self):
        lock = _RcuSchedule()
        assert lock.read_request(5, 100) == 5
        assert lock.write_request(5, 100) == 5
        assert lock.read_request(6, 100) == 6


class TestOracleDrops:
    def test_tiny_ctrl_ring_drops_and_conserves(self):
        cfg = oracle_config(rate_pps=8e6, cdr=1.0, n_users=4,
                            n_data_pkts=500, n_ctrl_pkts=500,
                            ctrl_rx_ring=2, data_rx_ring=4096,
                            fib_write_cost_ns=5000, sync_backend=Backend.RWL)
        rpt = run_oracle(cfg)
        assert rpt.drop_ctrl_rx > 0
        assert rpt.fib_writes + rpt.drop_ctrl_rx == 500
        assert rpt.fresh + rpt.misaddressed + rpt.drop_data_rx + rpt.drop_data_tx == 500

    def test_dropped_controls_cause_misaddressing(self):
        cfg = oracle_config(rate_pps=8e6, cdr=0.5, n_users=4,
                            n_data_pkts=1000, n_ctrl_pkts=500,
                            ctrl_rx_ring=2, data_rx_ring=4096,
                            fib_write_cost_ns=5000, sync_backend=Backend.RWL)
        rpt = run_oracle(cfg)
        assert rpt.drop_ctrl_rx > 0
        assert rpt.misaddressed > 0


class TestReplayAgreement:
    def test_replay_matches_ledger_exactly(self):
        cfg = oracle_config(rate_pps=4e6, cdr=0.2, n_users=10,
                            n_data_pkts=2000, n_ctrl_pkts=400,
                            ctrl_rx_ring=64, data_rx_ring=64, data_tx_ring=64,
                            sync_backend=Backend.RCU, seed=5)
        rpt = run_oracle(cfg, collect_receipts=True)
        assert replay_age(rpt.receipts, rpt.duration_ns, 10) == rpt.per_user_mean_age_ns
