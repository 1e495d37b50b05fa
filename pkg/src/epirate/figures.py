"""Figure rendering for the report path (PNG files next to the CSV output).

The delimited files remain the machine-readable contract; these renderings
are for human review only.  All figures are written with fixed metadata so
reruns reproduce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .forward import Trajectory
from .grids import SpatialGrid, TemporalGrid

_SAVE_KW = {"dpi": 120, "metadata": {"Software": "epirate"}}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def _extent(sgrid: SpatialGrid):
    return (sgrid.lo, sgrid.hi, sgrid.lo, sgrid.hi)


def rate_figure(path: Path, sgrid: SpatialGrid, name: str,
                recovered: np.ndarray, true: np.ndarray | None) -> Path:
    """Recovered rate map, with truth and difference panels when available."""
    if true is None:
        fig, ax = plt.subplots(figsize=(4.2, 3.6), layout="constrained")
        im = ax.imshow(recovered.T, origin="lower", extent=_extent(sgrid))
        ax.set_title(f"recovered {name}")
        fig.colorbar(im, ax=ax)
        return _save(fig, path)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4), layout="constrained")
    lo = min(true.min(), recovered.min())
    hi = max(true.max(), recovered.max())
    for ax, (label, data) in zip(axes[:2], (("true", true),
                                            ("recovered", recovered))):
        im = ax.imshow(data.T, origin="lower", extent=_extent(sgrid),
                       vmin=lo, vmax=hi)
        ax.set_title(f"{label} {name}")
        fig.colorbar(im, ax=ax)
    diff = recovered - true
    im = axes[2].imshow(diff.T, origin="lower", extent=_extent(sgrid),
                        cmap="RdBu_r",
                        vmin=-np.max(np.abs(diff)), vmax=np.max(np.abs(diff)))
    axes[2].set_title("difference")
    fig.colorbar(im, ax=axes[2])
    for ax in axes:
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    return _save(fig, path)


def convergence_figure(path: Path, history: list[dict]) -> Path:
    it = [row["iteration"] for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.2),
                                   layout="constrained")
    ax1.semilogy(it, [row["objective"] for row in history])
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("objective")
    ax2.semilogy(it, [row["grad_norm"] for row in history])
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("gradient norm")
    return _save(fig, path)


def experiment_figures(directory: Path, sgrid: SpatialGrid,
                       beta_rec: np.ndarray, gamma_rec: np.ndarray,
                       beta_true: np.ndarray | None,
                       gamma_true: np.ndarray | None,
                       history: list[dict]) -> list[Path]:
    directory = Path(directory)
    return [
        rate_figure(directory / "beta.png", sgrid, "beta", beta_rec, beta_true),
        rate_figure(directory / "gamma.png", sgrid, "gamma", gamma_rec,
                    gamma_true),
        convergence_figure(directory / "convergence.png", history),
    ]


def forward_figures(directory: Path, sgrid: SpatialGrid, tgrid: TemporalGrid,
                    traj: Trajectory) -> list[Path]:
    directory = Path(directory)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4), layout="constrained")
    for ax, name, comp in zip(axes, ("S", "I", "R"), traj.measured):
        im = ax.imshow(comp[-1].T, origin="lower", extent=_extent(sgrid))
        ax.set_title(f"{name} at final time")
        fig.colorbar(im, ax=ax)
    p1 = _save(fig, directory / "populations.png")

    fig, ax = plt.subplots(figsize=(4.6, 3.2), layout="constrained")
    t = np.linspace(0.0, tgrid.final_time, len(traj.mass_total))
    ax.plot(t, traj.mass_total)
    ax.set_xlabel("time")
    ax.set_ylabel("total mass")
    p2 = _save(fig, directory / "mass.png")
    return [p1, p2]


def sweep_figure(directory: Path, rows: list[dict]) -> list[Path]:
    ok = [r for r in rows if r["status"] == "ok"]
    if not ok:
        return []
    fig, ax = plt.subplots(figsize=(4.8, 3.4), layout="constrained")
    lams = sorted({r["lambda"] for r in ok})
    for lam in lams:
        pts = sorted((r["delta"], r["beta_rel_err"]) for r in ok
                     if r["lambda"] == lam)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-",
                label=f"lam={lam:g}")
    ax.set_xlabel("noise level")
    ax.set_ylabel("relative error of beta")
    ax.legend()
    return [_save(fig, Path(directory) / "sweep.png")]
