"""Figure rendering for the report path (always to files, never interactive)."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def spectrum_figure(eigenvalues: np.ndarray, path: str | Path,
                    title: str = "") -> Path:
    """Eigenvalue staircase next to a density-of-states histogram."""
    path = Path(path)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(np.arange(len(eigenvalues)), eigenvalues, ".", ms=2)
    ax1.set_xlabel("state index")
    ax1.set_ylabel("energy")
    ax2.hist(eigenvalues, bins=max(20, len(eigenvalues) // 12),
             orientation="horizontal", color="tab:blue")
    ax2.set_xlabel("count")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def butterfly_figure(flux: np.ndarray, energies: np.ndarray, path: str | Path) -> Path:
    """Flux-resolved spectrum scatter (one dot per (flux, eigenvalue))."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(flux, energies, ",", color="black")
    ax.set_xlabel("flux parameter p/q")
    ax.set_ylabel("energy")
    fig.tight_layout()
    fig.savefig(path, dpi=200)
    plt.close(fig)
    return path


def sweep_figure(eps_grid, sweep, limit, path: str | Path,
                 pair: tuple[int, int] = (1, 2)) -> Path:
    """Convergence of sigma(eps) toward the adiabatic value for one (k, j) pair."""
    path = Path(path)
    k, j = pair
    fig, ax = plt.subplots(figsize=(5, 3.6))
    vals = [s[k - 1, j - 1] for s in sweep]
    ax.semilogx(eps_grid, vals, "o-", label=f"sigma({k},{j})(eps)")
    if limit is not None:
        ax.axhline(limit[k - 1, j - 1], color="tab:red", ls="--",
                   label="adiabatic value")
    ax.set_xlabel("eps")
    ax.set_ylabel("sigma")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def route_agreement_figure(routes: list[str], matrix: np.ndarray,
                           path: str | Path) -> Path:
    """Pairwise max-deviation heatmap between conductivity routes."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    with np.errstate(divide="ignore"):
        im = ax.imshow(np.log10(np.maximum(matrix, 1e-17)), cmap="viridis")
    ax.set_xticks(range(len(routes)), routes, rotation=45)
    ax.set_yticks(range(len(routes)), routes)
    fig.colorbar(im, ax=ax, label="log10 max |difference|")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
