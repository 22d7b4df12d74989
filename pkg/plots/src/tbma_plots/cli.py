"""Command line: tbma-plot CSV [CSV ...] --axis-label L --out FILE"""

from __future__ import annotations

import argparse
import sys

from .figures import SchemaError, plot_error_vs_axis


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tbma-plot",
        description="Draw an error-rate figure from simulator sweep CSVs.",
    )
    parser.add_argument("csvs", nargs="+", metavar="CSV", help="harness result CSVs")
    parser.add_argument("--axis-label", required=True, help="x-axis label")
    parser.add_argument("--out", required=True,
                        help="output image; extension selects the format")
    parser.add_argument("--log-y", action="store_true", default=True,
                        help="log-scale the error axis (default on)")
    parser.add_argument("--linear-y", dest="log_y", action="store_false")
    parser.add_argument("--param-col", action="append", default=None,
                        help="force the per-line parameter column(s)")
    parser.add_argument("--title", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        plot_error_vs_axis(
            args.csvs,
            axis_label=args.axis_label,
            log_y=args.log_y,
            out=args.out,
            param_cols=args.param_col,
            title=args.title,
        )
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
