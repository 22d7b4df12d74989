"""Figure construction from harness result CSVs.

The input schema is the simulator's sweep output: one row per operating
point with the columns in ``RESULT_COLUMNS``. Values are plotted exactly
as read; no smoothing or resampling.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

# Contract with the simulator's sweep CSVs (column order not enforced,
# presence is).
RESULT_COLUMNS = [
    "axis_value", "coding", "M", "R", "N", "G", "rho", "snr_db",
    "error_rate", "trials", "event_decisions", "ci95_halfwidth",
    "mean_amp_iters", "error_rate_active", "error_rate_inactive",
    "divergent_redraws",
]

# Config-echo columns that may act as the per-line parameter.
PARAMETER_COLUMNS = ["M", "R", "N", "G", "rho", "snr_db"]

_LINESTYLES = {"JSC": "-", "SSC": "--"}
_MARKERS = ["o", "s", "^", "v", "D", "P", "X", "*"]
_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


class SchemaError(ValueError):
    """A CSV does not conform to the harness result schema."""


def load_result_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in RESULT_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _line_key(row: dict, param_cols: list[str]):
    return (row["coding"],) + tuple(row[c] for c in param_cols)


def _is_axis_echo(rows: list[dict], col: str) -> bool:
    """True when a config column just mirrors the sweep axis value."""
    try:
        return all(float(r[col]) == float(r["axis_value"]) for r in rows)
    except (TypeError, ValueError):
        return False


def _detect_param_cols(rows: list[dict]) -> list[str]:
    """Columns (besides the axis itself) that vary across rows define the
    lines of the figure."""
    return [
        c
        for c in PARAMETER_COLUMNS
        if len({r[c] for r in rows}) > 1 and not _is_axis_echo(rows, c)
    ]


def plot_error_vs_axis(
    csv_paths,
    axis_label: str,
    log_y: bool = True,
    out=None,
    param_cols: list[str] | None = None,
    title: str | None = None,
):
    """One figure: error rate vs the sweep axis, one marker-line per
    (coding, parameter) combination found across all input CSVs.

    Returns the matplotlib Figure; when ``out`` is given the image is also
    written there, with the format chosen by the file extension.
    """
    rows = []
    for path in csv_paths:
        rows.extend(load_result_rows(path))
    if param_cols is None:
        param_cols = _detect_param_cols(rows)

    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(_line_key(row, param_cols), []).append(row)

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    # Sort keys so colors and markers are reproducible run to run.
    for idx, key in enumerate(sorted(groups)):
        coding, *params = key
        pts = groups[key]
        x = [float(r["axis_value"]) for r in pts]
        y = [float(r["error_rate"]) for r in pts]
        order = sorted(range(len(x)), key=x.__getitem__)
        label = coding
        if params:
            label += ", " + ", ".join(
                f"{c}={v}" for c, v in zip(param_cols, params)
            )
        ax.plot(
            [x[i] for i in order],
            [y[i] for i in order],
            linestyle=_LINESTYLES.get(coding, "-."),
            marker=_MARKERS[idx % len(_MARKERS)],
            color=_COLORS[idx % len(_COLORS)],
            label=label,
        )
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel(axis_label)
    ax.set_ylabel("error rate")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    if out is not None:
        fig.savefig(out)
    return fig
