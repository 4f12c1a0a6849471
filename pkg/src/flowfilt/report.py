"""Figure rendering for benchmark outputs.

Renders the RMSE-vs-noise summary and the convergence traces to PNG files
next to the CSV outputs. The CSVs remain the machine-readable contract;
figures are a human-readable companion.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_table_figure", "render_trace_figure"]

_COLORS = {
    "naedh-ccr": "tab:blue",
    "naedh-lin": "tab:orange",
    "edh-adaptive": "tab:green",
    "bootstrap-pf": "tab:red",
    "ekf": "tab:purple",
}


def _color(name):
    return _COLORS.get(name, "tab:gray")


def render_table_figure(rows, path) -> None:
    """RMSE (mean with std band) against bearing noise, one line per filter.

    rows are dicts with keys filter, sigma_theta_deg, rmse_mean_m, rmse_std_m.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    by_filter: dict = {}
    for r in rows:
        by_filter.setdefault(r["filter"], []).append(r)
    for name, cells in by_filter.items():
        cells = sorted(cells, key=lambda r: r["sigma_theta_deg"])
        x = [c["sigma_theta_deg"] for c in cells]
        y = [c["rmse_mean_m"] for c in cells]
        err = [c["rmse_std_m"] for c in cells]
        ax.errorbar(x, y, yerr=err, marker="o", capsize=3,
                    label=name, color=_color(name))
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"bearing noise $\sigma_\theta$ [deg]")
    ax.set_ylabel("position RMSE [m]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_trace_figure(rows, path) -> None:
    """Two panels: first-update error along lambda, and error across updates.

    rows are dicts with keys filter, axis ('lambda' or 'time'), coordinate,
    position_error_m.
    """
    fig, (ax_lam, ax_time) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for axis, ax, xlabel in (
        ("lambda", ax_lam, r"pseudo-time $\lambda$"),
        ("time", ax_time, "time [s]"),
    ):
        by_filter: dict = {}
        for r in rows:
            if r["axis"] == axis:
                by_filter.setdefault(r["filter"], []).append(r)
        for name, pts in by_filter.items():
            pts = sorted(pts, key=lambda r: r["coordinate"])
            ax.semilogy(
                [p["coordinate"] for p in pts],
                [max(p["position_error_m"], 1e-16) for p in pts],
                marker=".", label=name, color=_color(name),
            )
        ax.set_xlabel(xlabel)
        ax.set_ylabel("position error [m]")
        ax.grid(True, which="both", alpha=0.3)
        if by_filter:
            ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
