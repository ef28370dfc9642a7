"""Report figures written next to the tabular stage outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .signal import fom_color  # noqa: E402

# no software/date stamps so re-runs stay byte-identical
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def phantom_figure(truth, section: int, path) -> None:
    m = truth.maps.section(section)
    fig, axs = plt.subplots(1, 3, figsize=(10, 3.4))
    im = axs[0].imshow(m.transmittance, cmap="gray")
    fig.colorbar(im, ax=axs[0], shrink=0.8)
    axs[0].set_title("transmittance")
    axs[1].imshow(fom_color(m.direction, m.inclination))
    axs[1].set_title("fiber orientation")
    lab = np.where(truth.labels[section] == 255, np.nan, truth.labels[section].astype(float))
    axs[2].imshow(lab, cmap="tab10", vmin=0, vmax=9, interpolation="nearest")
    axs[2].set_title("band labels")
    for ax in axs:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(f"section {section}")
    fig.tight_layout()
    _save(fig, path)


def maps_figure(measured, truth, path) -> None:
    fig, axs = plt.subplots(2, 3, figsize=(10, 6.5))
    for row, (m, name) in enumerate(((truth, "truth"), (measured, "fitted"))):
        axs[row, 0].imshow(m.transmittance, cmap="gray")
        axs[row, 1].imshow(m.retardation, cmap="magma", vmin=0, vmax=1)
        axs[row, 2].imshow(fom_color(m.direction, m.inclination))
        axs[row, 0].set_ylabel(name)
    for ax, t in zip(axs[0], ("I_T", "r", "FOM")):
        ax.set_title(t)
    for ax in axs.ravel():
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    _save(fig, path)


def training_curves(histories: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for i, (key, hist) in enumerate(sorted(histories.items())):
        h = np.array(hist, dtype=float)
        col = f"C{i}"
        tr = ~np.isnan(h[:, 1])
        va = ~np.isnan(h[:, 2])
        ax.plot(h[tr, 0], h[tr, 1], color=col, alpha=0.35, lw=0.8)
        ax.plot(h[va, 0], h[va, 2], "o-", color=col, ms=3, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("InfoNCE loss")
    ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    _save(fig, path)


def scree(spectra: dict, threshold: float, path) -> None:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
    for key, ratios in spectra.items():
        n = min(len(ratios), 30)
        a1.plot(np.arange(1, n + 1), ratios[:n], ".-", label=key, lw=0.8)
        a2.plot(np.arange(1, n + 1), np.cumsum(ratios)[:n], lw=0.8)
    a2.axhline(threshold, color="k", ls=":", lw=0.8)
    a1.set_yscale("log")
    a1.set_xlabel("component")
    a1.set_ylabel("explained variance ratio")
    a2.set_xlabel("component")
    a2.set_ylabel("cumulative")
    a1.legend(fontsize=6, frameon=False)
    fig.tight_layout()
    _save(fig, path)


def cluster_maps(truth_raster, rasters: dict, path) -> None:
    n = len(rasters) + 1
    fig, axs = plt.subplots(1, n, figsize=(1.3 * n, 3.2))
    items = [("labels", truth_raster)] + list(rasters.items())
    for ax, (name, img) in zip(np.atleast_1d(axs), items):
        ax.imshow(img, origin="lower", interpolation="nearest", aspect="auto")
        ax.set_title(name, fontsize=6)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    _save(fig, path)


def table1_bars(rows: list[dict], path) -> None:
    fig, axs = plt.subplots(1, 3, figsize=(11, 3.6), sharey=False)
    labels = [f"{r['method']}\n{r['input']}" for r in rows]
    x = np.arange(len(rows))
    for ax, metric in zip(axs, ("purity", "ari", "mi")):
        ax.bar(x, [r[metric] for r in rows], color=[f"C{0 if 'CL-3D' in r['method'] else 1 if 'CL-2D' in r['method'] else 2}" for r in rows])
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=6, rotation=90)
        ax.set_title(metric)
    fig.tight_layout()
    _save(fig, path)
