#!/usr/bin/env python3
"""Render experiment figures from sweep / per-user CSVs.

Usage:
    plot_sweep.py --csv sweep.csv --fig age --out figures/
    plot_sweep.py --csv sweep.csv --fig all --per-user-csv pu_run1.csv --out figures/
    plot_sweep.py --csv per_user_run1.csv --fig per_user --out figures/
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

try:
    from fwdplots.figures import (FIGURES, SchemaError, plot_all,
                                  plot_per_user, plot_sweep)
except ImportError:  # runnable straight from a checkout
    sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))
    from fwdplots.figures import (FIGURES, SchemaError, plot_all,
                                  plot_per_user, plot_sweep)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--csv", required=True, help="sweep CSV (or per-user CSV for --fig per_user)")
    parser.add_argument("--fig", required=True, choices=FIGURES + ("all",))
    parser.add_argument("--out", required=True, help="output directory for images")
    parser.add_argument("--per-user-csv", action="append", default=[],
                        help="per-user CSV rendered alongside --fig all (repeatable)")
    args = parser.parse_args(argv)

    try:
        if args.fig == "per_user":
            written = plot_per_user(args.csv, args.out)
        elif args.fig == "all":
            written = plot_all(args.csv, args.out, args.per_user_csv)
        else:
            written = plot_sweep(args.csv, args.out, args.fig)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
