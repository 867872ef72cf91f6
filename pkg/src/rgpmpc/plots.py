"""Figures rendered to files with the non-interactive backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def trajectories(results: dict, path, y_ref: float | None = None, y_box=None) -> Path:
    """Output and input traces; ``results`` maps a label to a list of loop results."""
    fig, (ax_y, ax_u) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (label, runs) in enumerate(results.items()):
        c = colors[i % len(colors)]
        for j, r in enumerate(runs):
            ax_y.plot(r.column("t"), r.column("CA_true"), color=c, alpha=0.35, lw=0.8,
                      label=label if j == 0 else None)
            ax_u.step(r.column("t"), r.column("u"), where="post", color=c, alpha=0.35, lw=0.8)
    if y_ref is not None:
        ax_y.axhline(y_ref, color="k", ls="--", lw=0.8)
    if y_box is not None:
        for b in y_box:
            ax_y.axhline(b, color="r", ls=":", lw=0.8)
    ax_y.set_ylabel("CA [mol/l]")
    ax_u.set_ylabel("Tr [K]")
    ax_u.set_xlabel("t [min]")
    ax_y.legend(loc="best", fontsize=8)
    return _save(fig, path)


def validation(rows: list, path) -> Path:
    sets = sorted({r["set"] for r in rows})
    fig, axes = plt.subplots(1, len(sets), figsize=(4 * len(sets), 3.5), squeeze=False)
    for ax, name in zip(axes[0], sets):
        sel = [r for r in rows if r["set"] == name]
        ax.scatter([r["y"] for r in sel], [r["e_p"] for r in sel], s=4)
        ax.axhline(0.02, color="r", ls=":")
        ax.axhline(-0.02, color="r", ls=":")
        ax.set_title(name)
        ax.set_xlabel("y [mol/l]")
    axes[0][0].set_ylabel("prediction error [mol/l]")
    return _save(fig, path)


def sweep(rows: list, key: str, path) -> Path:
    x = [r[key] for r in rows]
    fig, ax1 = plt.subplots(figsize=(6, 3.5))
    ax1.plot(x, [r["v_bar"] for r in rows], "o-", label="mean cost")
    ax1.set_xlabel(key)
    ax1.set_ylabel("mean cost")
    ax2 = ax1.twinx()
    ax2.plot(x, [r["added_mean"] for r in rows], "s--", color="tab:orange", label="added points")
    ax2.set_ylabel("added points")
    return _save(fig, path)


def roa(cells: list, path) -> Path:
    sigmas = sorted({c["sigma_n"] for c in cells})
    y0s = sorted({c["y0"] for c in cells})
    grid = np.zeros((len(sigmas), len(y0s)))
    for c in cells:
        grid[sigmas.index(c["sigma_n"]), y0s.index(c["y0"])] = c["feasible"]
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.imshow(grid, aspect="auto", cmap="RdYlGn", vmin=0, vmax=1, origin="lower")
    ax.set_xticks(range(len(y0s)), [f"{v:.2f}" for v in y0s])
    ax.set_yticks(range(len(sigmas)), [f"{v:.3f}" for v in sigmas])
    ax.set_xlabel("y0 [mol/l]")
    ax.set_ylabel("noise std")
    return _save(fig, path)


def bench(rows: list, path) -> Path:
    n = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.loglog(n, [r["recursive_s"] for r in rows], "o-", label="recursive")
    ax.loglog(n, [r["full_s"] for r in rows], "s-", label="full")
    ax.set_xlabel("training points")
    ax.set_ylabel("median time [s]")
    ax.legend()
    return _save(fig, path)
