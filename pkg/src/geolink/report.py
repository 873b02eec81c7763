"""Figure rendering for the CLI report path.

Reads the delimited outputs a run leaves in its working directory (metrics
key=value file, k-l histogram, any curve CSVs) and renders PNG figures next
to them. Kept separate from metric computation on purpose: everything here
is presentation.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_kl_histogram", "render_funnel", "render_curve", "render_workdir"]

_FIG_DPI = 120


def render_kl_histogram(csv_path: str | Path, out_path: str | Path) -> Path:
    """Bubble chart of pair counts over the (floor k, l) plane."""
    ks, ls, ns = [], [], []
    with open(csv_path) as fh:
        for row in csv.DictReader(fh):
            ks.append(int(row["k_floor"]))
            ls.append(int(row["l_value"]))
            ns.append(int(row["pairs"]))
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if ns:
        top = max(ns)
        sizes = [40 + 900 * n / top for n in ns]
        ax.scatter(ks, ls, s=sizes, alpha=0.55, edgecolors="black", linewidths=0.5)
        for k, l, n in zip(ks, ls, ns):
            ax.annotate(str(n), (k, l), ha="center", va="center", fontsize=7)
    ax.set_xlabel("total matched weight (floor)")
    ax.set_ylabel("distinct places with weight >= 1")
    ax.set_title("candidate pairs by evidence strength")
    ax.grid(True, alpha=0.3)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=_FIG_DPI, bbox_inches="tight")
    plt.close(fig)
    return out_path


def render_funnel(metrics_kv_path: str | Path, out_path: str | Path) -> Path:
    """Log-scale bar chart of surviving pair counts per pruning stage."""
    stages, counts = [], []
    with open(metrics_kv_path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("funnel."):
                key, value = line.split("=", 1)
                stages.append(key[len("funnel."):])
                counts.append(int(value))
    order = ["pairs_unfiltered", "pairs_after_spatial", "pairs_after_temporal", "pairs_passing_kl", "pairs_linked"]
    pairs = sorted(zip(stages, counts), key=lambda sc: order.index(sc[0]) if sc[0] in order else 99)
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [s.replace("pairs_", "").replace("_", " ") for s, _ in pairs]
    values = [max(c, 0) for _, c in pairs]
    ax.bar(labels, [max(v, 0.5) for v in values], color="#4878a8")
    ax.set_yscale("log")
    for i, v in enumerate(values):
        ax.annotate(str(v), (i, max(v, 0.5)), ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("user pairs (log scale)")
    ax.set_title("pruning funnel")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=_FIG_DPI, bbox_inches="tight")
    plt.close(fig)
    return out_path


def render_curve(csv_path: str | Path, out_path: str | Path) -> Path:
    """Line chart of any curve CSV (first column x, the rest series)."""
    with open(csv_path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    x = [float(r[0]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in range(1, len(header)):
        ys, xs = [], []
        for xi, row in zip(x, rows):
            if col < len(row) and row[col] not in ("", "n/a"):
                xs.append(xi)
                ys.append(float(row[col]))
        if xs:
            ax.plot(xs, ys, marker="o", label=header[col])
    ax.set_xlabel(header[0])
    ax.legend()
    ax.grid(True, alpha=0.3)
    ax.set_title(Path(csv_path).stem.replace("_", " "))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=_FIG_DPI, bbox_inches="tight")
    plt.close(fig)
    return out_path


def render_workdir(workdir: str | Path) -> list[Path]:
    """Render every figure the working directory has data for."""
    workdir = Path(workdir)
    figures = workdir / "figures"
    rendered: list[Path] = []
    hist = workdir / "curves" / "kl_histogram.csv"
    if hist.exists():
        rendered.append(render_kl_histogram(hist, figures / "kl_histogram.png"))
    metrics_kv = workdir / "metrics.kv"
    if metrics_kv.exists():
        rendered.append(render_funnel(metrics_kv, figures / "funnel.png"))
    curves_dir = workdir / "curves"
    if curves_dir.exists():
        for csv_path in sorted(curves_dir.glob("*.csv")):
            if csv_path.name == "kl_histogram.csv":
                continue
            rendered.append(render_curve(csv_path, figures / (csv_path.stem + ".png")))
    return rendered
