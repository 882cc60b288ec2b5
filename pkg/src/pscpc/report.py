"""CSV tables, PPM classification maps and matplotlib figures."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .cube import UNLABELED, LabelMap  # noqa: E402

METRIC_COLUMNS = ["dataset", "method", "seed", "OA", "NMI", "Kappa", "runtime_seconds"]
LOSS_COLUMNS = ["epoch", "L_S", "L_P", "L_C", "L_PLC", "L", "clean_fraction"]
SWEEP_COLUMNS = ["lambda", "M", "seed", "OA", "NMI", "Kappa"]
GRID_COLUMNS = ["lambda", "M", "n_seeds", "mean_OA"]
ABLATION_RUN_COLUMNS = ["variant", "seed", "OA", "NMI", "Kappa"]
ABLATION_COLUMNS = ["metric", "variant", "mean", "std"]

# png metadata without the matplotlib version keeps figures byte-stable
_PNG_META = {"Software": None}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def default_palette(n: int) -> list[tuple[int, int, int]]:
    """tab20 colours, then evenly spaced hues for larger n."""
    base = [tuple(int(round(255 * c)) for c in matplotlib.colormaps["tab20"](i)[:3])
            for i in range(20)]
    if n <= len(base):
        return base[:max(n, 1)]
    hsv = matplotlib.colormaps["hsv"]
    return base + [tuple(int(round(255 * c)) for c in hsv(i / (n - 20))[:3])
                   for i in range(n - 20)]


def render_map(labels: LabelMap, path, palette=None, background=(0, 0, 0)) -> None:
    """Binary PPM (P6), one colour per cluster id; unlabelled pixels get ``background``."""
    palette = default_palette(labels.K) if palette is None else list(palette)
    if len(palette) < labels.K:
        raise ValueError(f"palette has {len(palette)} colours for K={labels.K}")
    lut = np.array(list(palette[:labels.K]) + [background], dtype=np.uint8)
    ids = np.where(labels.labels == UNLABELED, labels.K, labels.labels).astype(np.int64)
    header = b"P6\n%d %d\n255\n" % (labels.width, labels.height)
    Path(path).write_bytes(header + lut[ids].tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(fields[1]), int(fields[2])
    body = raw[pos + 1:pos + 1 + w * h * 3]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


# --------------------------------------------------------------------------- figures

def plot_losses(history: list[dict], path) -> None:
    epochs = [r["epoch"] for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in ("L_S", "L_P", "L_PLC", "L"):
        ax1.plot(epochs, [r[key] for r in history], label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(frameon=False)
    ax2.plot(epochs, [r["clean_fraction"] for r in history], color="k")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("clean superpixel fraction")
    ax2.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_sweep_grid(grid: list[dict], path) -> None:
    lams = sorted({r["lambda"] for r in grid})
    Ms = sorted({r["M"] for r in grid})
    Z = np.full((len(lams), len(Ms)), np.nan)
    for r in grid:
        Z[lams.index(r["lambda"]), Ms.index(r["M"])] = r["mean_OA"]
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(Z, origin="lower", aspect="auto", vmin=0, vmax=1, cmap="viridis")
    ax.set_xticks(range(len(Ms)), [str(m) for m in Ms])
    ax.set_yticks(range(len(lams)), [f"{v:g}" for v in lams])
    ax.set_xlabel("M (sampled pixels per superpixel)")
    ax.set_ylabel("lambda")
    for i in range(len(lams)):
        for j in range(len(Ms)):
            if not np.isnan(Z[i, j]):
                ax.text(j, i, f"{Z[i, j]:.2f}", ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(im, ax=ax, label="mean OA")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_ablation(summary: list[dict], path) -> None:
    metrics = ["OA", "NMI", "Kappa"]
    variants = list(dict.fromkeys(r["variant"] for r in summary))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(variants)
    for k, variant in enumerate(variants):
        rows = [next(r for r in summary if r["variant"] == variant and r["metric"] == m)
                for m in metrics]
        xs = np.arange(len(metrics)) + (k - (len(variants) - 1) / 2) * width
        ax.bar(xs, [r["mean"] for r in rows], width, yerr=[r["std"] for r in rows],
               label=variant, capsize=3)
    ax.set_xticks(range(len(metrics)), metrics)
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
