"""Figures for the stats, train and bench reports (matplotlib, file output only)."""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .frames import linearize, to_form  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "savefig.bbox": "tight",
}

FORM_COLORS = {"canonical": "tab:orange", "index": "tab:green", "span": "tab:blue"}


def _save(fig, out_dir, name: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    # fixed metadata keeps identical runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_length_histograms(corpus, forms: Sequence[str], out_dir) -> Path:
    """Overlaid target-length histograms, one series per frame form."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for form in forms:
            counts = Counter(len(linearize(to_form(ex.gold, ex.utterance, form))) for ex in corpus)
            xs = sorted(counts)
            ax.bar(xs, [counts[x] for x in xs], width=0.9, alpha=0.55, label=form,
                   color=FORM_COLORS.get(form))
        ax.set_xlabel("linearized target length (tokens)")
        ax.set_ylabel("examples")
        ax.set_title(f"Target lengths ({len(corpus)} examples)")
        ax.legend()
        return _save(fig, out_dir, "length_histogram.png")


def plot_training_curves(report, out_dir) -> Path:
    """Loss per epoch (left) and EM at evaluation epochs (right)."""
    epochs = [r.epoch for r in report.epochs]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_em) = plt.subplots(1, 2, figsize=(10, 3.8))
        ax_loss.plot(epochs, [r.loss for r in report.epochs], color="tab:red")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("training loss")
        ax_loss.set_yscale("log")
        evals = [r for r in report.epochs if r.dev_em is not None]
        if evals:
            ax_em.plot([r.epoch for r in evals], [r.train_em for r in evals], marker=".", label="train EM")
            ax_em.plot([r.epoch for r in evals], [r.dev_em for r in evals], marker=".", label="watched EM")
            if any(r.dev_length_acc is not None for r in evals):
                ax_em.plot([r.epoch for r in evals], [r.dev_length_acc for r in evals], ls="--",
                           label="length acc.")
            ax_em.legend()
        ax_em.set_xlabel("epoch")
        ax_em.set_ylabel("percent")
        ax_em.set_ylim(-2, 102)
        return _save(fig, out_dir, "training_curves.png")


def plot_bench(report, out_dir) -> Path:
    """Grouped bars: p50/p99 latency and peak allocation per regime and beam."""
    rows = report.rows
    labels = [f"{r.regime}/{r.form}\nk={r.k}" for r in rows]
    xs = range(len(rows))
    with plt.rc_context(STYLE):
        fig, (ax_t, ax_m) = plt.subplots(1, 2, figsize=(10, 3.8))
        ax_t.bar([x - 0.2 for x in xs], [r.p50_ms for r in rows], width=0.4, label="p50")
        ax_t.bar([x + 0.2 for x in xs], [r.p99_ms for r in rows], width=0.4, label="p99")
        ax_t.set_xticks(list(xs), labels)
        ax_t.set_ylabel("latency (ms)")
        ax_t.legend()
        peaks = [(r.peak_alloc_bytes or 0) / 1024 for r in rows]
        ax_m.bar(list(xs), peaks, width=0.6, color="tab:purple")
        ax_m.set_xticks(list(xs), labels)
        ax_m.set_ylabel("peak allocation (KiB)")
        fig.suptitle(f"threads={report.threads}")
        return _save(fig, out_dir, "bench.png")
