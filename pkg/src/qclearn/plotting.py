"""PNG figures rendered next to the CSV/JSON outputs of the CLI.

Everything draws through the non-interactive Agg backend so it runs
headless. Each function writes one file and returns its path.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def scatter_plot(targets: np.ndarray, predictions: np.ndarray, path: str | Path,
                 r2: float | None = None, title: str | None = None) -> Path:
    """Predicted vs exact values with the identity line."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        y = np.asarray(targets).ravel()
        yh = np.asarray(predictions).ravel()
        ax.plot([0, 1], [0, 1], color="0.5", lw=0.8, ls="--")
        ax.scatter(y, yh, s=4, alpha=0.4, edgecolors="none")
        ax.set_xlabel("exact value")
        ax.set_ylabel("prediction")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        label = title or ""
        if r2 is not None:
            label = f"{label}  R$^2$ = {r2:.4f}".strip()
        if label:
            ax.set_title(label)
        return _save(fig, path)


def r2_vs_n_plot(rows: Sequence[tuple[int, float]], path: str | Path, trained_n: int | None = None,
                 xlabel: str = "number of qubits N") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        xs = [r[0] for r in rows]
        ys = [r[1] for r in rows]
        ax.plot(xs, ys, marker="o")
        if trained_n is not None:
            ax.axvline(trained_n, color="0.6", lw=0.8, ls=":", label=f"trained at N = {trained_n}")
            ax.legend()
        ax.set_xlabel(xlabel)
        ax.set_ylabel("R$^2$")
        return _save(fig, path)


def histogram_plot(samples: dict[str, np.ndarray], path: str | Path, bins: int = 20,
                   xlabel: str = "$z_1$") -> Path:
    """Overlaid normalized histograms, one per labelled sample set."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, values in samples.items():
            ax.hist(np.asarray(values).ravel(), bins=bins, range=(0, 1), density=True,
                    histtype="step", lw=1.2, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("density")
        ax.legend()
        return _save(fig, path)


def bv_profile_plot(z_pred: np.ndarray, path: str | Path, planted: Sequence[int] = ()) -> Path:
    """Predicted ``z_i`` for every data qubit of a BV circuit."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.0))
        z = np.asarray(z_pred).ravel()
        ax.plot(np.arange(z.size), z, lw=0.6)
        for q in planted:
            ax.axvline(q, color="C3", lw=0.8, ls=":")
        ax.axhline(0.5, color="0.5", lw=0.6, ls="--")
        ax.set_xlabel("qubit index")
        ax.set_ylabel("predicted $z_i$")
        ax.set_ylim(-0.05, 1.05)
        return _save(fig, path)


def loss_curve_plot(epochs: Sequence[int], train_loss: Sequence[float],
                    val_loss: Sequence[float | None], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, train_loss, label="train")
        pairs = [(e, v) for e, v in zip(epochs, val_loss) if v is not None]
        if pairs:
            ax.plot(*zip(*pairs), label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("binary cross-entropy")
        ax.legend()
        return _save(fig, path)


def r2_vs_measurements_plot(n_measure: Sequence[int], r2_noisy: Sequence[float], path: str | Path,
                            r2_model: Sequence[float] | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(n_measure, r2_noisy, marker="o", label="shot estimates")
        if r2_model is not None:
            ax.plot(n_measure, r2_model, marker="s", label="network trained on shot estimates")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("measurements per circuit")
        ax.set_ylabel("R$^2$ vs exact")
        ax.legend()
        return _save(fig, path)
