"""Render experiment sweep CSVs as multi-panel log-log error curves.

Input is the sweep CSV contract: one row per (grid point, method) with
columns method, K, N, M, T, gamma, eps_total, delta_total, sigma,
analytic_mse, mc_mse, mc_stderr, trials, seed. Output is one panel per
grouping-key combination (default K, T, gamma), x = M against
y = analytic_mse on log-log axes, one labeled curve per method, and Monte
Carlo points with error bars wherever trials > 0.

The renderer reorganizes and plots; it never computes. The intermediate
panel structure returned by extract_panels holds exactly the values read
from the CSV, which the round-trip test relies on.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

REQUIRED_COLUMNS = ("method", "M", "analytic_mse", "mc_mse", "mc_stderr", "trials")


class SchemaError(Exception):
    """CSV does not match the sweep contract; message names the column."""


@dataclass(frozen=True)
class FigureSpec:
    csv_paths: tuple
    group_keys: tuple = ("K", "T", "gamma")
    x_key: str = "M"
    y_key: str = "analytic_mse"
    log_x: bool = True
    log_y: bool = True
    out_path: str = "figure.png"


def read_rows(csv_paths, needed_columns) -> list[dict]:
    """Read and concatenate sweep CSVs, validating the header up front."""
    rows: list[dict] = []
    for path in csv_paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for column in needed_columns:
                if column not in header:
                    raise SchemaError(f"missing column '{column}' in {path}")
            rows.extend(reader)
    if not rows:
        raise SchemaError("no data rows in input")
    return rows


def extract_panels(spec: FigureSpec) -> dict:
    """Group rows into {group values: {method: {x, y, mc}}} with x sorted.

    Values are parsed floats straight from the CSV cells; mc holds
    (x, mc_mse, mc_stderr) triples only for rows with trials > 0.
    """
    needed = set(REQUIRED_COLUMNS) | set(spec.group_keys) | {spec.x_key, spec.y_key}
    rows = read_rows(spec.csv_paths, sorted(needed))
    panels: dict = {}
    for row in rows:
        group = tuple(row[key] for key in spec.group_keys)
        series = panels.setdefault(group, {}).setdefault(
            row["method"], {"x": [], "y": [], "mc": []}
        )
        x = float(row[spec.x_key])
        series["x"].append(x)
        series["y"].append(float(row[spec.y_key]))
        if row["trials"] and int(row["trials"]) > 0 and row["mc_mse"] != "":
            series["mc"].append((x, float(row["mc_mse"]), float(row["mc_stderr"])))
    for group in panels.values():
        for series in group.values():
            order = sorted(range(len(series["x"])), key=series["x"].__getitem__)
            series["x"] = [series["x"][i] for i in order]
            series["y"] = [series["y"][i] for i in order]
            series["mc"].sort()
    return panels


def build_figure(panels: dict, spec: FigureSpec):
    """Lay the panels out on a grid; one labeled curve per method."""
    groups = sorted(panels)
    ncols = min(3, len(groups))
    nrows = (len(groups) + ncols - 1) // ncols
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(4.2 * ncols, 3.4 * nrows), squeeze=False
    )
    for ax in axes.flat[len(groups):]:
        ax.set_visible(False)
    for ax, group in zip(axes.flat, groups):
        for method in sorted(panels[group]):
            series = panels[group][method]
            ax.plot(series["x"], series["y"], marker="o", markersize=3, label=method)
            if series["mc"]:
                xs, ys, errs = zip(*series["mc"])
                ax.errorbar(
                    xs, ys, yerr=errs, fmt="x", capsize=2.5, linestyle="none",
                    color=ax.lines[-1].get_color(),
                )
        if spec.log_x:
            ax.set_xscale("log")
        if spec.log_y:
            ax.set_yscale("log")
        title = ", ".join(f"{k}={v}" for k, v in zip(spec.group_keys, group))
        ax.set_title(title, fontsize=9)
        ax.set_xlabel(spec.x_key)
        ax.set_ylabel(spec.y_key)
        ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> str:
    """Extract, plot, and write the image. Nothing is written on error."""
    panels = extract_panels(spec)
    fig = build_figure(panels, spec)
    try:
        fig.savefig(spec.out_path, dpi=120, metadata={"Software": None})
    finally:
        plt.close(fig)
    return spec.out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render", description="multi-panel log-log figures from sweep CSVs"
    )
    parser.add_argument("--csv", action="append", required=True, help="input CSV (repeatable)")
    parser.add_argument("--group", default="K,T,gamma", help="comma-separated panel keys")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--linear", action="store_true", help="linear axes instead of log-log")
    args = parser.parse_args(argv)
    spec = FigureSpec(
        csv_paths=tuple(args.csv),
        group_keys=tuple(k for k in args.group.split(",") if k),
        log_x=not args.linear,
        log_y=not args.linear,
        out_path=args.out,
    )
    try:
        render(spec)
    except (SchemaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
