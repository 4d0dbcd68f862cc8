"""Render the experiment figures from sweep and per-user CSVs.

Inputs are the runner's delimited outputs and are never modified. Every
figure overlays the synchronization backends as separate series, shows
individual repetitions as scatter points with a median line through them,
and renders rows flagged low-confidence as hollow markers (shown, never
suppressed). One image is produced per (figure kind, CDR) present in the
data. Styles are pinned so identical inputs reproduce identical images.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be set first
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

SWEEP_COLUMNS = [
    "backend", "cdr", "rate_pps", "mean_app_age_ns", "mean_fib_age_ns",
    "fresh", "misaddressed", "drop_ctrl_rx", "drop_data_rx", "drop_data_tx",
    "mean_batch_size", "duration_ns", "seed", "flags",
]

PER_USER_COLUMNS = ["user_id", "mean_app_age_ns", "fresh", "misaddressed"]

SWEEP_FIGURES = ("age", "drops", "misaddr", "batch")
FIGURES = SWEEP_FIGURES + ("per_user",)

LOW_CONFIDENCE_FLAG = "low_conf_misaddr"

BACKEND_COLORS = {"rwl": "tab:orange", "rcu": "tab:blue", "none": "tab:green"}

_STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
}


class SchemaError(ValueError):
    """Input CSV does not match the expected schema."""


def _require_columns(df: pd.DataFrame, required: Iterable[str], path) -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(
            f"{path}: missing required columns: {', '.join(missing)}; "
            f"found: {', '.join(df.columns)}")


def load_sweep(csv_path) -> pd.DataFrame:
    df = pd.read_csv(csv_path, dtype={"flags": "string"})
    _require_columns(df, SWEEP_COLUMNS, csv_path)
    if df.empty:
        raise SchemaError(f"{csv_path}: no data rows")
    df = df.copy()
    df["flags"] = df["flags"].fillna("")
    # rows from failed sweep points have empty metric cells; keep them out
    # of the curves but do not touch the input file
    df = df.dropna(subset=["rate_pps", "cdr"])
    return df


def _age_unit(cdr: float):
    # baseline runs live at microsecond scale, routing runs at milliseconds
    return (1e3, "us") if cdr == 0 else (1e6, "ms")


def _metric(df: pd.DataFrame, figure: str, cdr: float):
    if figure == "age":
        scale, unit = _age_unit(cdr)
        return df["mean_app_age_ns"] / scale, f"mean app update age ({unit})"
    if figure == "drops":
        return (df["drop_data_rx"] + df["drop_data_tx"],
                "dropped data packets")
    if figure == "misaddr":
        return df["misaddressed"], "misaddressed packets"
    if figure == "batch":
        return df["mean_batch_size"], "mean admitted batch size"
    raise ValueError(f"unknown sweep figure {figure!r}")


def _render_sweep_figure(df: pd.DataFrame, figure: str, cdr: float,
                         out_path: Path) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for backend, group in sorted(df.groupby("backend")):
            color = BACKEND_COLORS.get(backend, "tab:gray")
            rate_mpps = group["rate_pps"] / 1e6
            values, ylabel = _metric(group, figure, cdr)
            hollow = group["flags"].str.contains(LOW_CONFIDENCE_FLAG)
            solid = ~hollow
            if solid.any():
                ax.scatter(rate_mpps[solid], values[solid], s=18, color=color,
                           label=f"{backend}")
            if hollow.any():
                ax.scatter(rate_mpps[hollow], values[hollow], s=26,
                           facecolors="none", edgecolors=color,
                           label=f"{backend} (low confidence)")
            medians = (pd.DataFrame({"rate": rate_mpps, "v": values})
                       .groupby("rate")["v"].median().sort_index())
            ax.plot(medians.index, medians.values, color=color, lw=1.4)
            ax.set_ylabel(ylabel)
        ax.set_xlabel("sending rate (Mpps)")
        ax.set_title(f"{figure} vs rate, CDR = {cdr:g}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, metadata={"Software": "fwdplots"})
        plt.close(fig)


def plot_sweep(csv_path, out_dir, figure: str) -> List[Path]:
    """Render `figure` (one of SWEEP_FIGURES) from a sweep CSV; returns the
    written image paths, one per CDR present."""
    if figure not in SWEEP_FIGURES:
        raise ValueError(f"figure must be one of {SWEEP_FIGURES}, got {figure!r}")
    df = load_sweep(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for cdr, group in sorted(df.groupby("cdr")):
        out_path = out_dir / f"{figure}_cdr{cdr:g}.png"
        _render_sweep_figure(group, figure, float(cdr), out_path)
        written.append(out_path)
    return written


def plot_per_user(csv_path, out_dir, label: Optional[str] = None) -> List[Path]:
    """Rank-ordered per-user age scatter from a per-user CSV (user IDs are
    popularity-ordered, so the x axis is the Zipf rank)."""
    df = pd.read_csv(csv_path)
    _require_columns(df, PER_USER_COLUMNS, csv_path)
    if df.empty:
        raise SchemaError(f"{csv_path}: no data rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = label or Path(csv_path).stem
    out_path = out_dir / f"per_user_{stem}.png"
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.scatter(df["user_id"], df["mean_app_age_ns"] / 1e6, s=10,
                   color="tab:blue")
        ax.set_xlabel("user (popularity rank order)")
        ax.set_ylabel("mean app update age (ms)")
        ax.set_title(f"per-user age: {stem}")
        fig.tight_layout()
        fig.savefig(out_path, metadata={"Software": "fwdplots"})
        plt.close(fig)
    return [out_path]


def plot_all(csv_path, out_dir, per_user_csvs: Iterable = ()) -> List[Path]:
    """Every sweep figure for every CDR, plus one per-user figure per
    supplied per-user CSV."""
    written = []
    for figure in SWEEP_FIGURES:
        written.extend(plot_sweep(csv_path, out_dir, figure))
    for pu in per_user_csvs:
        written.extend(plot_per_user(pu, out_dir))
    return written
