"""Report rendering: delimited outputs plus matplotlib figures saved next to
them. Every CLI phase that reports numbers goes through here."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FIG_DPI = 120


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def save_csv(path, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def report_to_csv(path, report: dict):
    save_csv(path, ["metric", "value"], [[k, report[k]] for k in sorted(report)])


def fig_metric_bars(report: dict, path, title: str = "evaluation metrics"):
    keys = ["fid", "r_precision_top1", "r_precision_top2", "r_precision_top3",
            "mmd", "diversity", "contact_mean", "boundary_jerk"]
    keys = [k for k in keys if k in report]
    vals = [report[k] for k in keys]
    errs = [report.get(f"{k}_std", 0.0) for k in keys]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(range(len(keys)), vals, yerr=errs, capsize=3, color="#4878a8")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=30, ha="right", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def fig_loss_curves(history: list[dict] | list[float], path,
                    title: str = "training loss"):
    fig, ax = plt.subplots(figsize=(7, 4))
    if history and isinstance(history[0], dict):
        keys = sorted(history[0])
        for k in keys:
            ax.plot([h[k] for h in history], label=k)
        ax.legend(fontsize=8)
        ax.set_yscale("log")
    else:
        ax.plot(list(history))
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def fig_latent_scatter(tok, triples: np.ndarray, path,
                       title: str = "token space: anchors / positives / negatives"):
    """PCA view of anchor, positive and negative latents."""
    if len(triples) == 0:
        return
    m = triples.shape[0]
    with ad.no_grad():
        mu, _ = tok.encode_tensor(Tensor(triples.reshape(m * 3, -1)))
    lat = mu.data.reshape(m, 3, -1)
    flat = lat.reshape(m * 3, -1)
    flat = flat - flat.mean(axis=0)
    _, _, vt = np.linalg.svd(flat, full_matrices=False)
    proj = flat @ vt[:2].T
    proj = proj.reshape(m, 3, 2)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for i, (label, color, marker) in enumerate(
            [("anchor", "#333333", "o"), ("positive", "#2a9d48", "^"),
             ("negative", "#c23b3b", "x")]):
        ax.scatter(proj[:, i, 0], proj[:, i, 1], s=18, c=color, marker=marker,
                   label=label, alpha=0.7)
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def fig_ablation(rows: list[dict], path, metric: str = "fid",
                 title: str = "ablation comparison"):
    names = [r["variant"] for r in rows]
    vals = [r[metric] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(names)), vals, color="#8a5fa8")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(metric)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def fig_corpus_stats(corpus, path):
    from collections import Counter
    verbs = Counter(s.text.split()[0] for s in corpus)
    lengths = [len(s) for s in corpus]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.bar(list(verbs.keys()), list(verbs.values()), color="#4878a8")
    ax1.set_title("verb counts")
    ax1.tick_params(axis="x", rotation=30)
    ax2.hist(lengths, bins=16, color="#4878a8")
    ax2.set_title("sequence lengths (frames)")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
