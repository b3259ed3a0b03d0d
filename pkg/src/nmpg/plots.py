"""Matplotlib figure rendering for the report commands.

Figures are a human-readable companion to the delimited report files, never
a replacement for them; every figure is rendered from the same arrays that
are written to disk.  The Agg backend with pinned figure geometry keeps the
PNG bytes reproducible across identical runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_FIGSIZE = (6.4, 4.2)
_DPI = 110


def _new_axes():
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    return fig, ax


def _save(fig, path) -> None:
    fig.savefig(path, format="png")
    plt.close(fig)


def plot_variance_traces(kinds, traces, errors, path) -> None:
    """Bar chart of estimator variance traces with chunked standard errors."""
    fig, ax = _new_axes()
    x = np.arange(len(kinds))
    ax.bar(x, traces, yerr=errors, capsize=4, color=["#888", "#4a7", "#27b"])
    ax.set_xticks(x)
    ax.set_xticklabels(kinds)
    ax.set_ylabel("variance trace")
    ax.set_title("gradient-estimator variance")
    _save(fig, path)


def plot_residual_curves(curves: dict[str, np.ndarray], path, window: int = 200) -> None:
    """Loss-residual training curves per estimator, rolling-mean smoothed."""
    fig, ax = _new_axes()
    for label, residuals in curves.items():
        r = np.asarray(residuals, dtype=np.float64)
        if r.size >= window:
            kernel = np.ones(window) / window
            smooth = np.convolve(r, kernel, mode="valid")
            xs = np.arange(smooth.size) + window - 1
        else:
            smooth, xs = r, np.arange(r.size)
        ax.plot(xs, smooth, label=label)
    ax.axhline(0.0, color="black", lw=0.8, ls=":")
    ax.set_xlabel("step")
    ax.set_ylabel(f"loss residual (rolling mean, w={window})")
    ax.legend()
    ax.set_title("training residuals by estimator")
    _save(fig, path)


def plot_c_sweep(c_values, match_freq, match_analytic, loss_above_frac, path) -> None:
    """Baseline-retention frequency and positive-sample balance vs init scale."""
    fig, ax = _new_axes()
    ax.plot(c_values, match_analytic, "k--", label="retention prob (exact)")
    ax.plot(c_values, match_freq, "o-", label="retention freq (sampled)")
    ax.plot(c_values, loss_above_frac, "s-", color="#b33",
            label="frac sampled losses > baseline")
    ax.set_xlabel("init magnitude C")
    ax.set_ylabel("fraction")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.set_title("effect of the logits init scale")
    _save(fig, path)
