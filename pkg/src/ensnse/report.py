"""Render run reports as matplotlib figures next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_energy(times, energies, path, blowup_threshold=None, title="Kinetic energy"):
    """Energy evolution per member on a log axis; flags the blow-up threshold."""
    times = np.asarray(times)
    energies = np.asarray(energies)
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for j in range(energies.shape[1]):
        e = energies[:, j]
        ax.semilogy(times, np.where(np.isfinite(e) & (e > 0), e, np.nan),
                    label=f"member {j + 1}")
    if blowup_threshold:
        ax.axhline(blowup_threshold, color="k", ls="--", lw=0.8,
                   label="blow-up threshold")
    ax.set_xlabel("t")
    ax.set_ylabel("kinetic energy")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=9)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_convergence(rows, path, title="Convergence under coupled refinement"):
    """Log-log error vs 1/h per member with a slope-2 reference line."""
    members = sorted({r["member"] for r in rows})
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.2))
    for ax, key, name in (
        (axes[0], "err_linf_l2", "max-in-time L2 error"),
        (axes[1], "err_l2_grad", "accumulated gradient error"),
    ):
        for m in members:
            pts = [(r["inv_h"], r[key]) for r in rows if r["member"] == m]
            pts.sort()
            inv_h = np.array([p[0] for p in pts], dtype=float)
            err = np.array([p[1] for p in pts], dtype=float)
            ax.loglog(inv_h, err, "o-", label=f"member {m}")
        if len(pts) >= 2 and err[0] > 0:
            ref = err[0] * (inv_h / inv_h[0]) ** -2.0
            ax.loglog(inv_h, ref, "k--", lw=0.8, label="slope -2")
        ax.set_xlabel("1/h")
        ax.set_ylabel(name)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=9)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
