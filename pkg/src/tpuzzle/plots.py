"""SVG charts for the CSV tables written by the command-line runner."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .optimize import adaptive_reference, exhaustive_reference  # noqa: E402
from .results import ResultTable  # noqa: E402

plt.rcParams["svg.hashsalt"] = "tpuzzle"
_SVG_META = {"Date": None, "Creator": None}


class SchemaError(ValueError):
    """The table does not have columns any chart understands."""


def detect_schema(table: ResultTable) -> str:
    cols = set(table.columns)
    if not table.rows:
        raise SchemaError("table has no rows")
    if {"n", "method", "mean_f_evals"} <= cols:
        return "scaling"
    if {"beta", "non_unimodal_fraction"} <= cols:
        return "heatmap"
    if {"sigma", "success_rate"} <= cols:
        return "noisy"
    if {"sweep", "current_loss"} <= cols:
        return "trace"
    if {"n", "mean_delta_s", "mean_delta_gap"} <= cols:
        return "concentration"
    if {"n", "mean_purity_excess", "mean_stabilizer_norm"} <= cols:
        return "hardness"
    if {"beta_eff", "mean_loss"} <= cols:
        return "single_block"
    raise SchemaError(f"no chart for columns {sorted(cols)}")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def _groups(rows, key):
    out: dict = {}
    for r in rows:
        out.setdefault(r[key], []).append(r)
    return out


def plot_scaling(table: ResultTable, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ns = sorted({r["n"] for r in table.rows})
    for method, rows in _groups(table.rows, "method").items():
        rows = sorted(rows, key=lambda r: r["n"])
        x = [r["n"] for r in rows]
        y = [r["mean_f_evals"] for r in rows]
        lo = [r["mean_f_evals"] - r.get("q25_f_evals", r["mean_f_evals"]) for r in rows]
        hi = [r.get("q75_f_evals", r["mean_f_evals"]) - r["mean_f_evals"] for r in rows]
        ax.errorbar(x, y, yerr=[np.maximum(lo, 0), np.maximum(hi, 0)], marker="o", capsize=3, label=method)
    grid = np.linspace(min(ns), max(ns), 100)
    ax.plot(grid, adaptive_reference(grid), "k--", lw=1, label="n^2/2 - n/4")
    ax.plot(grid, exhaustive_reference(grid), "k:", lw=1, label="2^n/2")
    ax.set_yscale("log")
    ax.set_xlabel("n = D")
    ax.set_ylabel("function evaluations")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_heatmap(table: ResultTable, path) -> Path:
    metrics = [c for c in ("non_unimodal_fraction", "non_separable_fraction", "non_monotonic_fraction")
               if c in table.columns]
    rows = sorted(table.rows, key=lambda r: r["beta"])
    grid = np.array([[r[m] for r in rows] for m in metrics], dtype=float)
    fig, ax = plt.subplots(figsize=(max(4.0, 2 + 0.6 * len(rows)), max(2.5, 1 + 0.6 * len(metrics))))
    im = ax.imshow(grid, cmap="viridis", vmin=0, vmax=1, aspect="auto")
    ax.set_xticks(range(len(rows)), [f"{r['beta']:g}" for r in rows], rotation=45)
    ax.set_yticks(range(len(metrics)), [m.replace("_fraction", "").replace("_", "-") for m in metrics])
    ax.set_xlabel("beta")
    fig.colorbar(im, ax=ax, label="fraction of instances")
    fig.tight_layout()
    return _save(fig, path)


def _lines(table: ResultTable, path, x, ys, group=None, logy=False, xlabel=None, ylabel=None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    groups = _groups(table.rows, group) if group else {None: table.rows}
    for key, rows in groups.items():
        rows = sorted(rows, key=lambda r: r[x])
        for y in ys:
            label = y if key is None else f"{group}={key}" + ("" if len(ys) == 1 else f" {y}")
            ax.plot([r[x] for r in rows], [r[y] for r in rows], marker="o", label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel or x)
    ax.set_ylabel(ylabel or ", ".join(ys))
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_table(table: ResultTable, path) -> Path:
    kind = detect_schema(table)
    if kind == "scaling":
        return plot_scaling(table, path)
    if kind == "heatmap":
        return plot_heatmap(table, path)
    if kind == "noisy":
        return _lines(table, path, "sigma", ["success_rate"], group="n")
    if kind == "trace":
        group = "cz_enabled" if "cz_enabled" in table.columns else None
        if "instance" in table.columns:
            first = table.rows[0]["instance"]
            table = ResultTable(table.columns, [r for r in table.rows if r["instance"] == first])
        return _lines(table, path, "sweep", ["current_loss"], group=group, logy=True)
    if kind == "concentration":
        return _lines(table, path, "n", ["mean_delta_s", "mean_delta_gap"], logy=True)
    if kind == "hardness":
        return _lines(table, path, "n", ["mean_purity_excess", "mean_stabilizer_norm"], logy=True)
    return _lines(table, path, "beta_eff", ["mean_loss", "closed_form"])
