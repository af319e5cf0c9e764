"""Figure output: grayscale spectrogram PNGs and matplotlib report figures."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

DB_FLOOR = 80.0

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def plot_settings(fontsize=9):
    plt.rc("font", size=fontsize)
    plt.rc("axes", labelsize=fontsize, titlesize=fontsize)
    plt.rc("xtick", labelsize=fontsize - 1)
    plt.rc("ytick", labelsize=fontsize - 1)
    plt.rc("legend", fontsize=fontsize - 1)


def to_db_image(grid, floor_db=DB_FLOOR):
    """Map a (T, d) magnitude grid to uint8 rows=frequency (low at bottom), cols=time.

    Values are converted to dB relative to the grid maximum and the range
    [-floor_db, 0] is spread over 0..255.
    """
    mag = np.abs(np.asarray(grid, dtype=np.float64))
    peak = mag.max()
    if peak <= 0:
        return np.zeros(mag.shape[::-1], dtype=np.uint8)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    db = np.clip(db, -floor_db, 0.0)
    img = np.round((db + floor_db) / floor_db * 255.0).astype(np.uint8)
    return np.ascontiguousarray(img.T[::-1])


def spectrogram_png(grid, path, floor_db=DB_FLOOR):
    """Write an 8-bit grayscale PNG of ``grid``."""
    Image.fromarray(to_db_image(grid, floor_db), mode="L").save(path, format="PNG")
    return path


def enhancement_overview(noisy, mask, enhanced, path, title="", hop_s=0.01, sample_rate=16000):
    """Three stacked panels: mixture, mask, enhanced spectrogram."""
    plot_settings()
    n_frames, n_bins = np.asarray(noisy).shape
    extent = [0, n_frames * hop_s, 0, sample_rate / 2000.0]
    fig, axes = plt.subplots(3, 1, figsize=(6, 6.5), sharex=True)
    panels = (("mixture", noisy, True), ("mask", mask, False), ("enhanced", enhanced, True))
    for ax, (name, grid, as_db) in zip(axes, panels):
        if as_db:
            data = to_db_image(grid)
            im = ax.imshow(data, aspect="auto", cmap="gray", extent=extent, vmin=0, vmax=255)
        else:
            data = np.asarray(grid).T[::-1]
            im = ax.imshow(data, aspect="auto", cmap="magma", extent=extent)
            fig.colorbar(im, ax=ax, pad=0.01)
        ax.set_ylabel("kHz")
        ax.set_title(name)
    axes[-1].set_xlabel("time (s)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def sdr_summary_figure(summary, keys, path, title=""):
    """Grouped bars of mean SDR per condition (one bar per key)."""
    plot_settings()
    conds = list(summary)
    x = np.arange(len(conds))
    width = 0.8 / len(keys)
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(conds), 3))
    for k, key in enumerate(keys):
        vals = [summary[c][key] for c in conds]
        ax.bar(x + (k - (len(keys) - 1) / 2) * width, vals, width, label=key)
    ax.axhline(0, color="k", linewidth=0.6)
    ax.set_xticks(x)
    ax.set_xticklabels(conds)
    ax.set_ylabel("mean SDR (dB)")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path
