"""Render paper-style figures from the emulator's CSV artifacts.

Four figure kinds:
  trace         one membrane trace (trace_*.csv)
  delay-hist    delay histogram from delays.csv (population or CAM study)
  tuning        tuning curve(s) from tuning_*.csv with error bars
  weight-tuning tuning-curve family overlaid, legend = weight fine value

The renderer never alters or reinterprets the data: no smoothing, no
normalization; only the documented column mapping.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("trace", "delay-hist", "tuning", "weight-tuning")

TRACE_COLUMNS = ("t_s", "V_volts")
DELAYS_COLUMNS = ("neuron", "exc_slot", "inh_slot", "onset_s", "peak_s", "delay_s", "spiked")
TUNING_COLUMNS = ("isi_s", "mean_spikes", "std_spikes", "n_trials")

DEFAULT_BIN_WIDTH_S = 1e-3

_FINE_RE = re.compile(r"fine(\d+)")


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    output: str
    bin_width_s: float = DEFAULT_BIN_WIDTH_S

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")
        if self.bin_width_s <= 0:
            raise ValueError("bin width must be positive")


def load_columns(path: str | Path, required: Sequence[str]) -> dict[str, np.ndarray]:
    """Read a CSV and return the required columns as float arrays.

    A missing column raises with the column named, per the artifact contract.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        for col in required:
            if col not in header:
                raise ValueError(f"{path}: missing column {col!r} (header: {header})")
        idx = {col: header.index(col) for col in required}
        rows = [row for row in reader if row]
    out = {}
    for col in required:
        out[col] = np.array([float(row[idx[col]]) for row in rows])
    return out


def histogram_edges(values: np.ndarray, bin_width: float) -> np.ndarray:
    """ceil(range / bin_width) uniform bins starting at the minimum."""
    lo, hi = float(values.min()), float(values.max())
    n_bins = max(1, math.ceil((hi - lo) / bin_width)) if hi > lo else 1
    return lo + bin_width * np.arange(n_bins + 1)


def _legend_label(path: str | Path) -> str:
    stem = Path(path).stem
    m = _FINE_RE.search(stem)
    return f"fine {int(m.group(1))}" if m else stem


def render(spec: FigureSpec) -> dict:
    """Write the image; returns render metadata (bin counts, series names)."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4), dpi=150)
    info: dict = {"kind": spec.kind, "output": spec.output}

    if spec.kind == "trace":
        data = load_columns(spec.inputs[0], TRACE_COLUMNS)
        ax.plot(data["t_s"] * 1e3, data["V_volts"], lw=0.9, color="tab:blue")
        ax.set_xlabel("time (ms)")
        ax.set_ylabel("membrane potential (V)")

    elif spec.kind == "delay-hist":
        data = load_columns(spec.inputs[0], DELAYS_COLUMNS)
        delays = data["delay_s"]
        delays = delays[np.isfinite(delays)]
        if delays.size == 0:
            raise ValueError(f"{spec.inputs[0]}: no finite delays to plot")
        edges = histogram_edges(delays, spec.bin_width_s)
        ax.hist(delays * 1e3, bins=edges * 1e3, color="tab:gray", edgecolor="black", lw=0.4)
        ax.set_xlabel("delay (ms)")
        ax.set_ylabel("count")
        info["n_bins"] = edges.size - 1
        info["n_delays"] = int(delays.size)

    elif spec.kind in ("tuning", "weight-tuning"):
        labels = []
        for path in spec.inputs:
            data = load_columns(path, TUNING_COLUMNS)
            label = _legend_label(path)
            labels.append(label)
            ax.errorbar(
                data["isi_s"] * 1e3,
                data["mean_spikes"],
                yerr=data["std_spikes"],
                marker="o",
                ms=3,
                capsize=2,
                lw=1.0,
                label=label,
            )
        ax.set_xlabel("inter-spike interval (ms)")
        ax.set_ylabel("mean output spikes per stimulus")
        if spec.kind == "weight-tuning" or len(spec.inputs) > 1:
            ax.legend(fontsize=8)
        info["series"] = labels

    fig.tight_layout()
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    return info
