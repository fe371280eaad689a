"""Static SVG rendering of spectra."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .results import SpectrumResult  # noqa: E402


def plot_spectrum(spec: SpectrumResult, path, title: str | None = None) -> Path:
    """Line plot for 1-D results, heat map for (time, field) maps."""
    path = Path(path)
    with plt.rc_context({"svg.hashsalt": "cissim", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        if spec.data.ndim == 1:
            x = spec.axes[0]
            ax.plot(x.values, spec.data, lw=1)
            ax.axhline(0, color="0.6", lw=0.5)
            ax.set_xlabel(f"{x.name} ({x.unit})")
            ax.set_ylabel("signal (arb. units)")
        else:
            t, b = spec.axes[0], spec.axes[1]
            lim = abs(spec.data).max() or 1.0
            mesh = ax.pcolormesh(b.values, t.values, spec.data, cmap="RdBu_r", vmin=-lim, vmax=lim, shading="auto")
            fig.colorbar(mesh, ax=ax, label="<S_y> (A > 0, E < 0)")
            ax.set_xlabel(f"{b.name} ({b.unit})")
            ax.set_ylabel(f"{t.name} ({t.unit})")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
