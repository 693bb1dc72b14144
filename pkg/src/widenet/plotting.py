"""Line charts and histograms rendered to reproducible SVG files."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


@dataclass
class Series:
    x: list
    y: list
    label: str
    style: str = "-"


@dataclass
class Figure:
    """A single-axes chart: line series plus an optional histogram."""

    name: str
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    histogram: tuple | None = None  # (edges, density)
    loglog: bool = False


def render_svg(fig: Figure, config_hash: str) -> str:
    with plt.rc_context({"svg.hashsalt": config_hash, "svg.fonttype": "none"}):
        f, ax = plt.subplots(figsize=(6.4, 4.2))
        if fig.histogram is not None:
            edges, dens = fig.histogram
            ax.stairs(dens, edges, fill=True, alpha=0.3, color="0.5", label="histogram")
        for s in fig.series:
            ax.plot(s.x, s.y, s.style, label=s.label, linewidth=1.2)
        if fig.loglog and all(min(s.y) > 0 for s in fig.series):
            ax.set_xscale("log", base=2)
            ax.set_yscale("log")
        ax.set_title(fig.title)
        ax.set_xlabel(fig.xlabel)
        ax.set_ylabel(fig.ylabel)
        if fig.series or fig.histogram is not None:
            ax.legend(fontsize=8)
        f.tight_layout()
        buf = io.StringIO()
        f.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(f)
    text = buf.getvalue()
    marker = f"<!-- config-sha256: {config_hash} -->\n"
    head, sep, rest = text.partition("?>\n")
    return head + sep + marker + rest if sep else marker + text


def write_svg(fig: Figure, out_dir: Path, config_hash: str) -> Path:
    path = Path(out_dir) / f"{fig.name}.svg"
    path.write_bytes(render_svg(fig, config_hash).encode())
    return path
