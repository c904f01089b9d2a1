"""Matplotlib figures written next to the CSV/JSON artifacts."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps PNG bytes reproducible
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def plot_hitting(path, solutions, reference=None):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for sol in solutions:
        ax.loglog(sol.radii, sol.u_values, label=f"d={sol.params.d}, eps={sol.epsilon:g}")
    if reference is not None:
        r, u = reference
        ax.loglog(r, u, "k--", lw=1, label="(8-2d)/gamma r^-2")
    ax.set_xlabel("r")
    ax.set_ylabel("u_eps(r)")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_moments(path, tables):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for t in tables:
        ax.loglog(t.nodes, t.values, label=f"p={t.p}")
    ax.axvline(tables[0].spec.epsilon, color="grey", lw=0.8, ls=":")
    ax.set_xlabel("|x|")
    ax.set_ylabel("N_x(<Z, phi_eps>^p)")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_ratio_trend(path, eps, ratios, ylabel):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for label, vals in ratios.items():
        ax.semilogx(eps, vals, "o-", label=label)
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_xlabel("eps")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_visits(path, visits, weights=None, scale=1.0):
    x = np.asarray(visits, dtype=float) / scale
    w = None if weights is None else np.asarray(weights, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4.2))
    if x.size:
        ax.hist(x, bins=min(60, max(10, int(np.sqrt(x.size)))), weights=w, density=True, alpha=0.6)
        m = np.average(x, weights=w)
        g = np.linspace(0, x.max(), 200)
        ax.plot(g, np.exp(-g / m) / m, "k-", lw=1, label=f"Exp(mean {m:.3g})")
        ax.legend(fontsize=8)
    ax.set_xlabel("visits" if scale == 1.0 else "visits / log|start|")
    ax.set_ylabel("density")
    _save(fig, path)


def plot_cdf(path, table):
    fig, ax = plt.subplots(figsize=(6, 4.2))
    ax.step(table[:, 0], table[:, 1], where="post", label="empirical")
    ax.plot(table[:, 0], table[:, 2], "k--", lw=1, label="fitted exponential")
    ax.set_xlabel("value")
    ax.set_ylabel("CDF")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_verdicts(path, results):
    fig, ax = plt.subplots(figsize=(6, 0.4 * len(results) + 1))
    ids = [r["id"] for r in results]
    colors = ["tab:green" if r["passed"] else "tab:red" for r in results]
    ax.barh(range(len(ids)), [1] * len(ids), color=colors)
    ax.set_yticks(range(len(ids)), [f"criterion {i}" for i in ids])
    ax.set_xticks([])
    ax.invert_yaxis()
    _save(fig, path)
