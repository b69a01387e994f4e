"""Matplotlib figures written next to the pipeline's JSON/CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 110,
}

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": "gesturekit"}


def figure(nrows=1, ncols=1, width=7.0, height=None):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    height = height or width * golden
    with plt.rc_context(RC):
        fig, axes = plt.subplots(nrows, ncols, figsize=(width, height))
    return fig, axes


def save(fig, path):
    with plt.rc_context(RC):
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_speed(ax, times, speed_src, speed_gen, audio_beats, motion_beats):
    ax.plot(times, speed_src, color="0.55", lw=1.2, label="input")
    ax.plot(times, speed_gen, color="C0", lw=1.2, label="decoded")
    for b in audio_beats:
        ax.axvline(b, color="C3", lw=0.6, alpha=0.6)
    if len(motion_beats):
        ymin = np.interp(motion_beats, times, speed_gen)
        ax.plot(motion_beats, ymin, "v", color="C2", ms=4, label="motion beats")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mean speed (px/s)")
    ax.legend(frameon=False, loc="upper right")


def plot_decode_trace(ax, schedule, traces):
    steps = np.arange(len(schedule))
    ax.step(steps, schedule, where="post", color="0.3", lw=1.5, label="cosine schedule")
    for name, counts in traces.items():
        ax.plot(steps, counts, "o", ms=4, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("masked positions")
    ax.legend(frameon=False)


def plot_image(ax, pixels, title, cmap=None):
    px = np.asarray(pixels)
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[..., 0]
    ax.imshow(px, cmap=cmap or ("gray" if px.ndim == 2 else None), vmin=0, vmax=1, interpolation="nearest")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])


def pipeline_summary(path, data):
    """2x2 panel: speed curves with beats, decode trace, heatmap, warped frame."""
    fig, axes = figure(2, 2, width=8.0, height=6.5)
    plot_speed(
        axes[0, 0], data["times"], data["speed_input"], data["speed_decoded"], data["audio_beats"], data["motion_beats"]
    )
    plot_decode_trace(axes[0, 1], data["schedule"], data["traces"])
    plot_image(axes[1, 0], data["heatmap"], "edge heatmap (decoded)", cmap="magma")
    plot_image(axes[1, 1], data["warped"], "warped source")
    save(fig, path)


def metric_bars(path, metrics):
    names = sorted(metrics)
    fig, ax = figure(width=7.0, height=0.28 * len(names) + 1.2)
    vals = [metrics[n] for n in names]
    ax.barh(names, vals, color="C0")
    ax.set_xscale("symlog", linthresh=1e-3)
    ax.set_xlabel("value")
    save(fig, path)
