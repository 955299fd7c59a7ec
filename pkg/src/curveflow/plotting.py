"""Optional figures rendered from the CSV output of a run.

matplotlib is imported lazily so the rest of the package never depends on it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _snapshot_paths(out: Path) -> list[Path]:
    return sorted(out.glob("snap_*.csv"), key=lambda p: int(p.stem.split("_")[1]))


def plot_run(out: str | Path, max_curves: int = 6) -> list[Path]:
    """Curve snapshots, curvature profiles and the energy trace."""
    plt = _pyplot()
    out = Path(out)
    written = []
    snaps = _snapshot_paths(out)
    if snaps:
        pick = np.unique(np.linspace(0, len(snaps) - 1, min(max_curves, len(snaps))).astype(int))
        fig, (ax_c, ax_k) = plt.subplots(1, 2, figsize=(10, 4.5))
        for i in pick:
            data = np.loadtxt(snaps[i], delimiter=",", skiprows=1)
            xs = np.append(data[:, 1], data[0, 1])
            ys = np.append(data[:, 2], data[0, 2])
            ax_c.plot(xs, ys, lw=1, label=snaps[i].stem)
            ax_k.plot(data[:, 0], data[:, 3], lw=1)
        ax_c.set_aspect("equal")
        ax_c.legend(fontsize=7)
        ax_k.set_xlabel("s")
        ax_k.set_ylabel("curvature")
        fig.tight_layout()
        path = out / "snapshots.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    trace = out / "trace.csv"
    if trace.exists():
        data = np.genfromtxt(trace, delimiter=",", names=True)
        if data.size > 1:
            fig, (ax_e, ax_r) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
            ax_e.semilogx(data["t"], data["energy"])
            ax_e.set_ylabel("energy")
            ax_r.loglog(data["t"], data["r_kappa_norm"])
            ax_r.set_ylabel("max |R_kappa|")
            ax_r.set_xlabel("t")
            fig.tight_layout()
            path = out / "trace.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written


def plot_convergence(table: str | Path, target: str | Path) -> Path:
    plt = _pyplot()
    data = np.genfromtxt(table, delimiter=",", names=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(np.atleast_1d(data["n_coarse"]), np.atleast_1d(data["max_difference"]), "o-")
    ax.set_xlabel("coarse grid N")
    ax.set_ylabel("max position difference")
    fig.tight_layout()
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return Path(target)
