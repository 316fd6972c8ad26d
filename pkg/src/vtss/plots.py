"""SVG figures rendered from result CSV files."""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError  # noqa: E402

FIGURES = ("exp1", "exp2", "ablate-range", "ablate-samples", "ablate-classes")
STEMS = {"exp1": "exp1", "exp2": "exp2", "ablate-range": "ablate_range",
         "ablate-samples": "ablate_samples", "ablate-classes": "ablate_classes"}


def _num(text):
    return float(text) if text not in ("", None) else math.nan


def _mean_by(rows, key, value):
    groups = {}
    for r in rows:
        groups.setdefault(r[key], []).append(_num(r[value]))
    return {k: sum(v) / len(v) for k, v in groups.items()}


def _save(fig, path):
    plt.rcParams["svg.hashsalt"] = "vtss"
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_exp1(rows, path):
    """C and pretext accuracy against the number of injected instantiations."""
    runs = [r for r in rows if r["row-id"].startswith("run")]
    by_count = {}
    for r in runs:
        n = len([p for p in r["injection"].split("+") if p and p != "id"])
        by_count.setdefault(n, []).append(r)
    xs = sorted(by_count)
    c = [sum(_num(r["semisup_acc"]) for r in by_count[x]) / len(by_count[x]) for x in xs]
    p = [sum(_num(r["pretext_acc"]) for r in by_count[x]) / len(by_count[x]) for x in xs]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, c, "o-", label="semi-supervised accuracy")
    ax.plot(xs, p, "s--", label="pretext accuracy")
    for r in rows:
        if r["row-id"].startswith("FS"):
            ax.axhline(_num(r["semisup_acc"]), ls=":", lw=1, color="gray")
    ax.set_xticks(xs)
    ax.set_xlabel("injected instantiations")
    ax.set_ylabel("test accuracy (%)")
    ax.legend(frameon=False)
    return _save(fig, path)


def _bars(rows, key, path, xlabel):
    means = _mean_by(rows, key, "semisup_acc")
    names = list(dict.fromkeys(r[key] for r in rows))
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 1), 3.5))
    ax.bar(range(len(names)), [means[n] for n in names])
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("semi-supervised accuracy (%)")
    return _save(fig, path)


def plot_samples(rows, path):
    pairs = {}
    for r in rows:
        v, s = r["row-id"].split("-")
        pairs[(int(v[1:]), int(s[1:]))] = _num(r["semisup_acc"])
    vs = sorted({k[0] for k in pairs})
    ss = sorted({k[1] for k in pairs})
    grid = [[pairs.get((v, s), math.nan) for s in ss] for v in vs]
    fig, ax = plt.subplots(figsize=(4.5, 3.8))
    im = ax.imshow(grid, origin="lower", cmap="viridis")
    ax.set_xticks(range(len(ss)))
    ax.set_xticklabels(ss)
    ax.set_yticks(range(len(vs)))
    ax.set_yticklabels(vs)
    ax.set_xlabel("labeled samples per class")
    ax.set_ylabel("pretext samples per class")
    fig.colorbar(im, ax=ax, label="accuracy (%)")
    return _save(fig, path)


def plot_classes(rows, path):
    pts = sorted((int(r["row-id"].removeprefix("classes")), _num(r["semisup_acc"])) for r in rows)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-")
    ax.set_xlabel("classes seen by the pretext task")
    ax.set_ylabel("semi-supervised accuracy (%)")
    return _save(fig, path)


def render(fig_name, rows, out_path):
    if fig_name == "exp1":
        return plot_exp1(rows, out_path)
    if fig_name == "exp2":
        return _bars(rows, "row-id", out_path, "task")
    if fig_name == "ablate-range":
        return _bars(rows, "row-id", out_path, "task")
    if fig_name == "ablate-samples":
        return plot_samples(rows, out_path)
    if fig_name == "ablate-classes":
        return plot_classes(rows, out_path)
    raise ConfigError(f"unknown figure {fig_name!r}; choose from {', '.join(FIGURES)}")


def csv_for(fig_name, in_dir):
    return Path(in_dir) / f"{STEMS[fig_name]}.csv"
