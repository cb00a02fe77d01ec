"""Matplotlib figures written next to the CSV/JSON outputs of the CLI."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_feature(tensor, path, title: str | None = None) -> Path:
    """One panel per channel, frequency upwards, time to the right."""
    n = tensor.channels
    fig, axes = plt.subplots(1, n, figsize=(3.8 * n, 3.2), squeeze=False, layout="constrained")
    for ax, plane in zip(axes[0], tensor.planes):
        name = plane.kind if plane.base is None else f"{plane.kind}({plane.base})"
        im = ax.imshow(plane.data, origin="lower", aspect="auto", cmap="magma")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("frame")
        fig.colorbar(im, ax=ax)
    axes[0][0].set_ylabel("bin")
    fig.suptitle(title or tensor.spec, fontsize=10)
    return _save(fig, path)


def plot_power_map(pmap, path, peaks=(), truth=()) -> Path:
    """Power map in dB relative to its maximum, with detected peaks marked."""
    plane = pmap.plane
    v = pmap.values
    ref = v.max() if v.max() > 0 else 1.0
    db = 10 * np.log10(np.maximum(v / ref, 1e-6))
    extent = (-plane.width / 2, plane.width / 2, -plane.height / 2, plane.height / 2)
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(db, origin="lower", extent=extent, cmap="inferno", vmin=max(db.min(), -20), vmax=0)
    fig.colorbar(im, ax=ax, label="dB re max")
    for p in peaks:
        ax.plot(p.position[0], p.position[1], "c+", ms=12, mew=2)
    for t in truth:
        ax.plot(t[0], t[1], "wo", ms=8, mfc="none")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"DAS power, plane at {plane.distance:g} m", fontsize=10)
    return _save(fig, path)


def plot_confusion(matrix, path, labels=("Cough", "Others")) -> Path:
    """Row-normalized confusion matrix, values printed at two decimals."""
    m = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(m, cmap="Blues", vmin=0, vmax=1)
    for i in range(2):
        for j in range(2):
            ax.text(j, i, f"{m[i, j]:.2f}", ha="center", va="center", color="white" if m[i, j] > 0.5 else "black")
    ax.set_xticks([0, 1], labels)
    ax.set_yticks([0, 1], labels)
    ax.set_xlabel("Predicted label")
    ax.set_ylabel("True label")
    ax.set_title("Normalized confusion matrix", fontsize=10)
    return _save(fig, path)


def plot_events(events, path, threshold: float = 0.5) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 2.6))
    if events:
        t = [e.window_end for e in events]
        conf = [e.confidence for e in events]
        ax.step(t, conf, where="post", color="k", lw=1)
        cough = [(e.window_end, e.confidence) for e in events if e.label == "Cough"]
        if cough:
            ax.plot(*zip(*cough), "r.", label="Cough")
            ax.legend(loc="upper right", fontsize=8)
    ax.axhline(threshold, color="0.6", ls="--", lw=0.8)
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("window end (s)")
    ax.set_ylabel("P(cough)")
    return _save(fig, path)
