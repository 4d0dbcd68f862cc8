"""Experiment runner: single runs, rate/CDR sweeps, and the self-test.

Runs append one row to a CSV (schema in metrics.CSV_HEADER) and write one
metadata text file each; sweeps derive a deterministic seed per point and
keep going past per-point failures, recording them in the row's flags.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .core import (Backend, ConfigError, Experiment, InvariantViolation, Mode,
                   PipelineStalled, RunConfig, default_config)
from .metrics import CSV_HEADER, PER_USER_CSV_HEADER, RunReport
from .oracle import run_oracle
from .pipeline import run_threaded
from .selftest import FAULT_NAMES, run_selftest
from .workload import PRNG_ID

#: Desk-scale trace size used when --paper-scale is not given.
DESK_SCALE_DATA_PKTS = 1_000_000

#: Service times applied when oracle mode is requested without explicit ones.
DEFAULT_ORACLE_COSTS = dict(
    tx_call_cost_ns=1000,
    demux_cost_ns=100,
    fib_read_cost_ns=150,
    fib_write_cost_ns=300,
    rcu_copy_cost_ns=100,
    link_latency_ns=50,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STALLED = 3
EXIT_INVARIANT = 4


def derive_seed(base_seed: int, point_index: int, repetition: int) -> int:
    """Stable per-point seed: sha256 over (base, point, rep)."""
    digest = hashlib.sha256(f"{base_seed}:{point_index}:{repetition}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & (1 << 63) - 1


def append_csv_row(path: Path, header: str, row: str) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a") as f:
        if new:
            f.write(header + "\n")
        f.write(row + "\n")


def write_metadata(path: Path, config: RunConfig, report: Optional[RunReport]) -> None:
    lines = [
        f"build = aoifwd-{__version__}",
        f"prng = {PRNG_ID}",
        f"seed = {config.seed}",
        f"config_hash = {config.config_hash()}",
        "",
        "# full configuration",
        config.to_text().rstrip("\n"),
    ]
    if report is not None:
        lines += ["", f"# flags: {';'.join(report.flags) or '-'}"]
    path.write_text("\n".join(lines) + "\n")


def execute(config: RunConfig, collect_receipts: bool = False) -> RunReport:
    if config.mode is Mode.ORACLE:
        return run_oracle(config, collect_receipts=collect_receipts)
    return run_threaded(config, collect_receipts=collect_receipts)


def _apply_oracle_defaults(config: RunConfig) -> RunConfig:
    fills = {k: v for k, v in DEFAULT_ORACLE_COSTS.items()
             if getattr(config, k) is None}
    return replace(config, **fills) if fills else config


def _base_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_text(Path(args.config).read_text(), validate=False)
    elif args.experiment:
        cfg = default_config(Experiment(args.experiment))
        if not args.paper_scale:
            scale = DESK_SCALE_DATA_PKTS / cfg.n_data_pkts
            cfg = cfg.with_overrides(
                n_data_pkts=DESK_SCALE_DATA_PKTS,
                n_ctrl_pkts=round(cfg.n_ctrl_pkts * scale),
            )
    else:
        raise ConfigError("one of --experiment or --config is required")
    overrides = {}
    if args.backend:
        overrides["sync_backend"] = Backend(args.backend)
    if args.rate is not None:
        overrides["rate_pps"] = args.rate
    if args.cdr is not None:
        overrides["cdr"] = args.cdr
        overrides["n_ctrl_pkts"] = round(cfg.n_data_pkts * args.cdr)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode:
        overrides["mode"] = Mode(args.mode)
    if overrides:
        cfg = replace(cfg, **overrides)
    if cfg.mode is Mode.ORACLE:
        cfg = _apply_oracle_defaults(cfg)
    return cfg.validate()


def cmd_run(args) -> int:
    try:
        cfg = _base_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = f"{cfg.config_hash()}_{cfg.seed}"
    try:
        report = execute(cfg)
    except PipelineStalled as exc:
        print(f"watchdog abort: {exc}", file=sys.stderr)
        write_metadata(out_dir / f"run_{run_id}.meta", cfg, None)
        return EXIT_STALLED
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    append_csv_row(out_dir / "runs.csv", CSV_HEADER, report.csv_row())
    write_metadata(out_dir / f"run_{run_id}.meta", cfg, report)
    if args.per_user_csv:
        pu = out_dir / f"per_user_{run_id}.csv"
        with open(pu, "w") as f:
            f.write(PER_USER_CSV_HEADER + "\n")
            f.write("\n".join(report.per_user_rows()) + "\n")
    print(f"run {run_id}: mean_app_age={report.mean_app_age_ns / 1e6:.3f} ms "
          f"fresh={report.fresh} misaddressed={report.misaddressed} "
          f"drops=({report.drop_ctrl_rx},{report.drop_data_rx},{report.drop_data_tx}) "
          f"flags={';'.join(report.flags) or '-'}")
    return EXIT_OK


@dataclass
class SweepSpec:
    base: RunConfig
    rates: List[float]
    backends: List[Backend]
    cdrs: List[float]
    reps: int
    out: str

    @classmethod
    def from_text(cls, text: str) -> "SweepSpec":
        sweep_keys = {"rates", "backends", "cdrs", "reps", "out"}
        sweep_raw = {}
        base_lines = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key = line.partition("=")[0].strip()
            if key in sweep_keys:
                sweep_raw[key] = line.partition("=")[2].strip()
            else:
                base_lines.append(line)
        base = (RunConfig.from_text("\n".join(base_lines), validate=False)
                if base_lines else RunConfig())
        try:
            rates = [float(x) for x in sweep_raw.get("rates", "").split(",") if x.strip()]
            backends = [Backend(x.strip()) for x in sweep_raw.get("backends", "").split(",")
                        if x.strip()]
            cdrs = [float(x) for x in sweep_raw.get("cdrs", "").split(",") if x.strip()]
            reps = int(sweep_raw.get("reps", "1"))
        except ValueError as exc:
            raise ConfigError(f"bad sweep value: {exc}") from None
        if not rates or not backends or not cdrs:
            raise ConfigError("sweep needs non-empty rates, backends, and cdrs lists")
        if reps < 1:
            raise ConfigError("reps must be >= 1")
        return cls(base=base, rates=rates, backends=backends, cdrs=cdrs,
                   reps=reps, out=sweep_raw.get("out", "results"))


def cmd_sweep(args) -> int:
    try:
        spec = SweepSpec.from_text(Path(args.sweep_path).read_text())
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out or spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    points = list(itertools.product(spec.rates, spec.backends, spec.cdrs))
    n_rows = 0
    for idx, (rate, backend, cdr) in enumerate(points):
        for rep in range(spec.reps):
            seed = derive_seed(spec.base.seed, idx, rep)
            flags = []
            report = None
            try:
                cfg = replace(
                    spec.base, rate_pps=rate, sync_backend=backend, cdr=cdr,
                    n_ctrl_pkts=round(spec.base.n_data_pkts * cdr), seed=seed)
                if cfg.mode is Mode.ORACLE:
                    cfg = _apply_oracle_defaults(cfg)
                report = execute(cfg.validate())
            except PipelineStalled:
                flags.append("error:stalled")
            except (ConfigError, InvariantViolation) as exc:
                flags.append(f"error:{type(exc).__name__}")
            if report is not None:
                row = report.csv_row()
                write_metadata(out_dir / f"run_{idx}_{rep}.meta", cfg, report)
            else:
                row = ",".join([backend.value, repr(cdr), repr(rate)] + [""] * 9 +
                               [str(seed), ";".join(flags)])
            append_csv_row(csv_path, CSV_HEADER, row)
            n_rows += 1
    print(f"sweep complete: {n_rows} rows -> {csv_path}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    return run_selftest(fault=args.inject_fault, quick=args.quick)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aoifwd",
        description="Forwarding-pipeline freshness experiments (RWL vs RCU)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a single run")
    p_run.add_argument("--experiment",
                       choices=[e.value for e in Experiment])
    p_run.add_argument("--config", help="flat key=value config file")
    p_run.add_argument("--backend", choices=[b.value for b in Backend])
    p_run.add_argument("--rate", type=float, help="offered rate, pps")
    p_run.add_argument("--cdr", type=float, help="control/data ratio override")
    p_run.add_argument("--mode", choices=[m.value for m in Mode])
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.add_argument("--paper-scale", action="store_true",
                       help="full published trace sizes instead of desk scale")
    p_run.add_argument("--per-user-csv", action="store_true")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a rate x backend x cdr sweep")
    p_sweep.add_argument("sweep_path", help="sweep spec file")
    p_sweep.add_argument("--out", help="override output directory")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_self = sub.add_parser("selftest", help="run the invariant suites")
    p_self.add_argument("--inject-fault", choices=sorted(FAULT_NAMES),
                        help="run with a deliberate defect; suites must fail")
    p_self.add_argument("--quick", action="store_true")
    p_self.set_defaults(fn=cmd_selftest)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
