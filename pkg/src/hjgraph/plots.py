"""Figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def convergence_figure(eps, errors, path, title=""):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.loglog(eps, errors, "o-")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("sup error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def period_figure(profiles, path, title=""):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for p in profiles:
        ax.loglog(np.abs(p.h), p.T, label=f"edge {p.edge}")
    ax.set_xlabel("|h|")
    ax.set_ylabel("period T")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def rows_figure(table, path, picks=5):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for j in np.linspace(0, len(table.h) - 1, picks).astype(int):
        q, v = table.row(j)
        sel = np.abs(q) <= 4 * max(1.0, abs(q[np.argmin(v)]))
        ax.plot(q[sel], v[sel], label=f"h={table.h[j]:.3g}")
    ax.set_xlabel("q")
    ax.set_ylabel("averaged G")
    ax.set_title(f"edge {table.edge}")
    ax.legend(fontsize=7)
    return _save(fig, path)


def edge_solution_figure(solution, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for e in solution.edges:
        ax.plot(e.h, e.u, label=f"edge {e.edge}")
    ax.axhline(solution.d, color="k", lw=0.6, ls="--")
    ax.set_xlabel("h")
    ax.set_ylabel("u")
    ax.legend(fontsize=8)
    return _save(fig, path)


def field_figure(eps_field, path):
    g = eps_field.grid
    u = np.where(g.mask == 1, eps_field.u, np.nan)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(u, origin="lower", extent=g.box, aspect="equal")
    ax.contour(g.nodes()[..., 0], g.nodes()[..., 1], g.H, levels=[0.0], colors="w", linewidths=0.6)
    fig.colorbar(im, ax=ax)
    ax.set_title(f"epsilon = {eps_field.epsilon:g}")
    return _save(fig, path)
