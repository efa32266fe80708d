"""Render coverage/length summaries and diagnostic ECDF curves to files.

Figures are written next to the delimited output with deterministic
content (fixed ordering, no embedded timestamps or version strings).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_coverage_figure", "save_length_figure", "save_ecdf_figure"]

_FIGSIZE = (6.0, 3.6)
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_PNG_META)
    plt.close(fig)


def save_coverage_figure(results, path, target: float | None = None) -> None:
    """Per-method coverage with bootstrap error bars; dashed line at target."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    methods = [r.method for r in results]
    xs = np.arange(len(methods))
    cov = np.array([r.coverage for r in results])
    lo = cov - np.array([r.coverage_lo for r in results])
    hi = np.array([r.coverage_hi for r in results]) - cov
    ax.errorbar(xs, cov, yerr=[lo, hi], fmt="o", capsize=4, color="tab:orange")
    if target is not None:
        ax.axhline(target, linestyle="--", color="gray", linewidth=1)
    ax.set_xticks(xs)
    ax.set_xticklabels(methods, rotation=20, ha="right")
    ax.set_ylabel("coverage")
    ax.set_ylim(0.0, 1.05)
    _save(fig, path)


def save_length_figure(results, path) -> None:
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    finite = [r for r in results if np.isfinite(r.mean_length)]
    methods = [r.method for r in finite]
    xs = np.arange(len(methods))
    mean = np.array([r.mean_length for r in finite])
    lo = mean - np.array([r.length_lo for r in finite])
    hi = np.array([r.length_hi for r in finite]) - mean
    ax.errorbar(xs, mean, yerr=[lo, hi], fmt="s", capsize=4, color="tab:blue")
    ax.set_xticks(xs)
    ax.set_xticklabels(methods, rotation=20, ha="right")
    ax.set_ylabel("mean interval length")
    _save(fig, path)


def save_ecdf_figure(adjusted, unadjusted, path) -> None:
    """Empirical CDFs of the pivots against the uniform diagonal."""
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    for values, label, color in (
        (adjusted, "adjusted", "tab:orange"),
        (unadjusted, "unadjusted", "tab:blue"),
    ):
        u = np.sort(np.asarray(values, dtype=float))
        ax.step(np.concatenate([[0.0], u, [1.0]]),
                np.concatenate([[0.0], np.arange(1, u.size + 1) / u.size, [1.0]]),
                where="post", label=label, color=color)
    ax.plot([0, 1], [0, 1], linestyle=":", color="black", linewidth=1, label="uniform")
    ax.set_xlabel("pivot")
    ax.set_ylabel("empirical CDF")
    ax.legend(loc="upper left")
    _save(fig, path)
