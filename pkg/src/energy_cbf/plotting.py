"""Static figures for experiment outputs (always written next to their CSVs)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def energy_plot(traces: dict, k_max: float, path, title: str = "") -> Path:
    """Kinetic energy against time, one line per trace."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for label, tr in traces.items():
        ax.plot(tr.t, tr.K_e, lw=1.0, label=label)
    ax.axhline(k_max, color="k", ls="--", lw=0.8, label="K_max")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("K_e [J]")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def power_plot(traces: dict, path, title: str = "") -> Path:
    """Filter power ``p_safe`` and external power ``p_ext`` against time."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for label, tr in traces.items():
        line, = ax.plot(tr.t, tr.p_safe, lw=1.0, label=f"p_safe {label}")
        if np.any(tr.p_ext != 0):
            ax.plot(tr.t, tr.p_ext, lw=0.8, ls=":", color=line.get_color(), label=f"p_ext {label}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("power [W]")
    ax.set_title(title)
    ax.legend(fontsize=7)
    return _finish(fig, path)


def fit_plot(sweep, path, title: str = "") -> Path:
    """Steady-state energy error against injected power with the fitted lines."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for gamma in sorted({pt.gamma for pt in sweep.points}):
        pts = [pt for pt in sweep.points if pt.gamma == gamma and pt.error is not None]
        if not pts:
            continue
        p = np.array([pt.p_ext for pt in pts])
        e = np.array([pt.error for pt in pts])
        sc = ax.scatter(p, e, s=14, label=f"gamma={gamma:g}")
        fit = sweep.fits.get(gamma)
        if fit is not None:
            xs = np.linspace(0.0, p.max(), 20)
            ax.plot(xs, fit.slope * xs + fit.intercept, lw=0.8, color=sc.get_facecolor()[0])
    ax.set_xlabel("P_ext [W]")
    ax.set_ylabel("K_e - K_max [J]")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)
