"""Acceptance for the renderer: consumes a sweep CSV (the fixture is a
reduced cut of the default experiment grid with Monte Carlo columns) and
produces a correctly grouped multi-panel log-log figure; extracted plot data
equals the CSV values."""

import csv
from pathlib import Path

from figrender import FigureSpec, build_figure, extract_panels, render

DATA = Path(__file__).parent / "data"


def report(ok: bool, detail: str):
    print(f"[criterion 11] {'PASS' if ok else 'FAIL'}: figure renderer ({detail})")
    assert ok


def test_criterion_11_render_sweep_csv(tmp_path):
    paths = (str(DATA / "sample_histogram.csv"), str(DATA / "sample_needles.csv"))
    out = tmp_path / "panels.png"
    spec = FigureSpec(paths, out_path=str(out))

    panels = extract_panels(spec)
    raw = [r for p in paths for r in csv.DictReader(open(p))]
    groups = {(r["K"], r["T"], r["gamma"]) for r in raw}

    # panel grouping matches the CSV exactly
    grouping_ok = set(panels) == groups

    # round trip: every plotted value equals a CSV cell
    round_trip_ok = True
    for r in raw:
        series = panels[(r["K"], r["T"], r["gamma"])][r["method"]]
        i = series["x"].index(float(r["M"]))
        round_trip_ok = round_trip_ok and series["y"][i] == float(r["analytic_mse"])

    # one labeled curve per method on each panel, log-log axes
    fig = build_figure(panels, spec)
    axes = [a for a in fig.axes if a.get_visible()]
    curves_ok = len(axes) == len(groups)
    for ax, group in zip(axes, sorted(panels)):
        labels = sorted(t.get_text() for t in ax.get_legend().get_texts())
        curves_ok = curves_ok and labels == sorted(panels[group])
        curves_ok = curves_ok and ax.get_xscale() == "log" and ax.get_yscale() == "log"

    render(spec)
    file_ok = out.exists() and out.stat().st_size > 0

    report(
        grouping_ok and round_trip_ok and curves_ok and file_ok,
        f"{len(groups)} panels, {len(raw)} rows round-tripped",
    )
