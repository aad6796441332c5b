"""Optional PNG figures for the CLI report path.

Figures are written with the Agg backend and without a software/date
stamp, so identical inputs give identical files.
"""

from __future__ import annotations

import numpy as np

_METADATA = {"Software": None}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, format="png", dpi=100, metadata=_METADATA)


def plot_trace(trace, path, title=""):
    """Loss, squared gradient norm and test accuracy against the round index."""
    plt = _pyplot()
    rounds = trace.column("round")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(rounds, trace.column("global_loss"))
    axes[0].set_ylabel("global loss")
    axes[1].semilogy(rounds, np.maximum(trace.grad_norm_sq, 1e-300))
    axes[1].set_ylabel("squared gradient norm")
    acc = trace.column("test_accuracy")
    if np.all(np.isnan(acc)):
        axes[2].set_visible(False)
    else:
        axes[2].plot(rounds, acc)
        axes[2].set_ylabel("test accuracy")
    for ax in axes:
        ax.set_xlabel("round")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_comparison(rows, path, target=None):
    """Seed-mean accuracy against cumulative normalized cost, one panel per lambda."""
    plt = _pyplot()
    lambdas = sorted({r["lambda"] for r in rows})
    fig, axes = plt.subplots(1, len(lambdas), figsize=(4.5 * len(lambdas), 3.5), squeeze=False)
    for ax, lam in zip(axes[0], lambdas):
        schemes = list(dict.fromkeys(r["scheme"] for r in rows if r["lambda"] == lam))
        for scheme in schemes:
            sel = [r for r in rows if r["lambda"] == lam and r["scheme"] == scheme]
            by_round = {}
            for r in sel:
                by_round.setdefault(r["round"], []).append(r)
            keys = sorted(by_round)
            cost = [by_round[k][0]["cost"] for k in keys]
            acc = [float(np.mean([r["accuracy"] for r in by_round[k]])) for k in keys]
            ax.plot(cost, acc, label=scheme)
        if target is not None:
            ax.axhline(target, color="grey", linestyle=":", linewidth=1)
        ax.set_title(f"pilot overhead {lam:g}")
        ax.set_xlabel("normalized communication cost")
        ax.set_ylabel("test accuracy")
        ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_power_sweep(rows, path):
    """Dynamic-device rate against budget for each (M, T_K) pair."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 4))
    pairs = list(dict.fromkeys((r["M"], r["T_K"]) for r in rows))
    for m, t_k in pairs:
        sel = [r for r in rows if r["M"] == m and r["T_K"] == t_k and r["status"] == "ok"]
        if sel:
            ax.plot([r["rho"] for r in sel], [r["dynamic_rate"] for r in sel], marker="o",
                    label=f"M={m}, T_K={t_k}")
    ax.set_xscale("log")
    ax.set_xlabel("budget rho")
    ax.set_ylabel("dynamic rate (bit/slot)")
    ax.legend(fontsize="x-small")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
