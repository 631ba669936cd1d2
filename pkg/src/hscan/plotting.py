"""Render the sweep CSVs to PNG. Reads files only, so it can run on any output directory."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {"flat": ("k", "o"), "A": ("tab:blue", "s"), "B": ("tab:red", "^")}


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def plot_output_snr(csv_path, png_path) -> Path:
    curves = defaultdict(list)
    for row in _rows(csv_path):
        curves[row["channel"]].append((float(row["input_snr_db"]), float(row["mean_output_snr_db"])))
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    lo, hi = float("inf"), float("-inf")
    for name, pts in curves.items():
        x, y = zip(*sorted(pts))
        lo, hi = min(lo, x[0]), max(hi, x[-1])
        color, marker = _STYLE.get(name, (None, "x"))
        label = "flat" if name == "flat" else f"channel {name}"
        ax.plot(x, y, marker=marker, color=color, label=label)
    if curves:
        ax.plot([lo, hi], [lo, hi], ":", color="0.6", label="output = input")
    ax.set_xlabel("input SNR (dB)")
    ax.set_ylabel("equalizer output SNR (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)


def plot_rate(csv_path, png_path) -> Path:
    rows = _rows(csv_path)
    L = [int(r["L"]) for r in rows if int(r["L"]) > 0]
    ratio = [float(r["ratio"]) for r in rows if int(r["L"]) > 0]
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ax.semilogx(L, ratio, "o-", base=2)
    ax.axhline(5 / 6, ls=":", color="0.6", label="stuffing limit 5/6")
    ax.set_xlabel("data field length L (bits)")
    ax.set_ylabel("net data rate ratio")
    ax.set_ylim(0, 1)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)


def render(out_dir) -> list[Path]:
    """Plot whichever of fig8.csv / fig9.csv exist in ``out_dir``."""
    out = Path(out_dir)
    made = []
    if (out / "fig8.csv").exists():
        made.append(plot_output_snr(out / "fig8.csv", out / "fig8.png"))
    if (out / "fig9.csv").exists():
        made.append(plot_rate(out / "fig9.csv", out / "fig9.png"))
    return made
