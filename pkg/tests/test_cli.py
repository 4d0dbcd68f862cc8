import subprocess
import sys

import pytest

from aoifwd.cli import derive_seed, main
from aoifwd.metrics import CSV_HEADER, PER_USER_CSV_HEADER
from aoifwd.selftest import run_selftest


def run_cli(*argv):
    return main(list(argv))


SMALL = ["--rate", "2e6", "--mode", "oracle", "--seed", "9"]


def small_run_args(tmp_path, *extra):
    return (["run", "--experiment", "baseline", "--out", str(tmp_path)]
            + SMALL + list(extra))


@pytest.fixture()
def tiny_baseline(monkeypatch):
    # desk scale is still 10^6 packets; shrink further for CLI tests
    monkeypatch.setattr("aoifwd.cli.DESK_SCALE_DATA_PKTS", 2000)


class TestRun:
    def test_baseline_oracle_run_writes_outputs(self, tmp_path, tiny_baseline):
        assert run_cli(*small_run_args(tmp_path)) == 0
        csv = (tmp_path / "runs.csv").read_text().splitlines()
        assert csv[0] == CSV_HEADER
        assert len(csv) == 2
        assert csv[1].startswith("none,")  # baseline bypasses the table
        metas = list(tmp_path.glob("run_*.meta"))
        assert len(metas) == 1
        assert "prng = numpy-pcg64" in metas[0].read_text()

    def test_header_written_once_across_runs(self, tmp_path, tiny_baseline):
        run_cli(*small_run_args(tmp_path))
        run_cli(*small_run_args(tmp_path, "--seed", "10"))
        csv = (tmp_path / "runs.csv").read_text().splitlines()
        assert csv.count(CSV_HEADER) == 1
        assert len(csv) == 3

    def test_per_user_csv(self, tmp_path, tiny_baseline):
        run_cli(*small_run_args(tmp_path, "--per-user-csv"))
        pu = list(tmp_path.glob("per_user_*.csv"))
        assert len(pu) == 1
        lines = pu[0].read_text().splitlines()
        assert lines[0] == PER_USER_CSV_HEADER
        assert len(lines) == 2  # baseline has one user

    def test_config_file_run(self, tmp_path):
        cfg_path = tmp_path / "cfg.txt"
        cfg_path.write_text(
            "rate_pps = 2000000.0\nn_data_pkts = 500\nn_users = 1\n"
            "sync_backend = none\nmode = oracle\n"
            "tx_call_cost_ns = 1000\ndemux_cost_ns = 100\n"
            "fib_read_cost_ns = 150\nfib_write_cost_ns = 300\n"
            "rcu_copy_cost_ns = 50\nlink_latency_ns = 0\n")
        assert run_cli("run", "--config", str(cfg_path), "--out", str(tmp_path)) == 0

    def test_metadata_reproduces_oracle_run(self, tmp_path, tiny_baseline):
        run_cli(*small_run_args(tmp_path))
        meta = next(tmp_path.glob("run_*.meta")).read_text()
        cfg_text = meta.split("# full configuration\n", 1)[1].split("\n\n")[0]
        cfg_path = tmp_path / "repro.txt"
        cfg_path.write_text(cfg_text)
        out2 = tmp_path / "repro_out"
        assert run_cli("run", "--config", str(cfg_path), "--out", str(out2)) == 0
        row1 = (tmp_path / "runs.csv").read_text().splitlines()[1]
        row2 = (out2 / "runs.csv").read_text().splitlines()[1]
        assert row1 == row2

    def test_missing_experiment_and_config_is_usage_error(self, tmp_path):
        assert run_cli("run", "--out", str(tmp_path)) == 2

    def test_unknown_flag_exits_2_without_outputs(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "aoifwd.cli", "run", "--experiment",
             "baseline", "--bogus-flag", "--out", str(tmp_path / "o")],
            capture_output=True)
        assert proc.returncode == 2
        assert not (tmp_path / "o").exists()

    def test_watchdog_abort_maps_to_exit_3(self, tmp_path, tiny_baseline, monkeypatch):
        from aoifwd import PipelineStalled

        def boom(cfg, collect_receipts=False):
            raise PipelineStalled("stall")

        monkeypatch.setattr("aoifwd.cli.execute", boom)
        assert run_cli(*small_run_args(tmp_path)) == 3


SWEEP_TEXT = """\
rates = 1e6, 2e6
backends = rwl, rcu
cdrs = 0.1
reps = 2
n_data_pkts = 400
n_users = 8
mode = oracle
seed = 77
tx_call_cost_ns = 1000
demux_cost_ns = 100
fib_read_cost_ns = 150
fib_write_cost_ns = 300
rcu_copy_cost_ns = 50
link_latency_ns = 0
"""


class TestSweep:
    def test_cross_product_rows(self, tmp_path):
        spec = tmp_path / "sweep.txt"
        spec.write_text(SWEEP_TEXT)
        assert run_cli("sweep", str(spec), "--out", str(tmp_path / "s")) == 0
        lines = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
        assert lines[0] == CSV_HEADER
        assert len(lines) == 1 + 2 * 2 * 1 * 2  # rates x backends x cdrs x reps

    def test_deterministic_oracle_rows(self, tmp_path):
        spec = tmp_path / "sweep.txt"
        spec.write_text(SWEEP_TEXT)
        run_cli("sweep", str(spec), "--out", str(tmp_path / "a"))
        run_cli("sweep", str(spec), "--out", str(tmp_path / "b"))
        rows_a = (tmp_path / "a" / "sweep.csv").read_text()
        rows_b = (tmp_path / "b" / "sweep.csv").read_text()
        assert rows_a == rows_b

    def test_reps_have_distinct_seeds(self, tmp_path):
        spec = tmp_path / "sweep.txt"
        spec.write_text(SWEEP_TEXT)
        run_cli("sweep", str(spec), "--out", str(tmp_path / "s"))
        lines = (tmp_path / "s" / "sweep.csv").read_text().splitlines()[1:]
        seeds = [line.split(",")[-2] for line in lines]
        assert len(set(seeds)) == len(seeds)

    def test_bad_sweep_is_usage_error(self, tmp_path):
        spec = tmp_path / "sweep.txt"
        spec.write_text("rates = \nbackends = rwl\ncdrs = 0.1\n")
        assert run_cli("sweep", str(spec)) == 2


class TestSeedDerivation:
    def test_stable_and_distinct(self):
        a = derive_seed(1, 0, 0)
        assert a == derive_seed(1, 0, 0)
        assert len({derive_seed(1, i, r) for i in range(5) for r in range(3)}) == 15


class TestSelftest:
    def test_quick_selftest_passes(self):
        assert run_selftest(quick=True, out=lambda *_: None) == 0

    def test_fault_injection_fails_selftest(self):
        assert run_selftest(fault="rwl-pref-off", quick=True,
                            out=lambda *_: None) == 1
