"""
Plot data and static figures

Each figure is written as a CSV (the data contract) and, when matplotlib is available,
as an SVG rendering of it.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from data.loader import write_table
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class Figure:
    """Data of one figure and how to draw it"""

    data: pd.DataFrame
    kind: str  # "line" | "bar" | "hist"
    x: str
    y: List[str]
    title: str


def sensitivity_figure(table: pd.DataFrame) -> Figure:
    return Figure(table.copy(), "line", "MINIMUM", ["PSU_TOTAL", "SSU_TOTAL"], "PSUs and SSUs by minimum SSUs per PSU")


def allocation_figure(alloc2: Optional[pd.DataFrame], alloc: pd.DataFrame) -> Figure:
    """Per-stratum PSU/SSU bars for two-stage results, allocation comparison otherwise"""
    if alloc2 is not None:
        columns = ["PSU_SR", "PSU_NSR", "SSU"]
        return Figure(alloc2[["STRATUM", *columns]].copy(), "bar", "STRATUM", columns, "Allocation by stratum")
    columns = ["ALLOC", "PROP", "EQUAL"]
    return Figure(alloc[["STRATUM", *columns]].copy(), "bar", "STRATUM", columns, "Allocation by stratum")


def weight_figure(weights: pd.Series) -> Figure:
    """Distribution of final weights (value, count)"""
    values = np.round(weights.to_numpy(dtype=float), 9)
    unique, counts = np.unique(values, return_counts=True)
    data = pd.DataFrame({"WEIGHT": unique, "COUNT": counts})
    return Figure(data, "hist", "WEIGHT", ["COUNT"], "Distribution of design weights")


def _render(figure: Figure, path: Path) -> bool:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False

    plt.rcParams["svg.hashsalt"] = "surveyalloc"
    fig, ax = plt.subplots(figsize=(7, 4))
    try:
        data = figure.data
        if figure.kind == "line":
            for col in figure.y:
                ax.plot(data[figure.x], data[col], marker="o", label=col)
        elif figure.kind == "bar":
            positions = np.arange(len(data))
            width = 0.8 / len(figure.y)
            for k, col in enumerate(figure.y):
                ax.bar(positions + k * width, data[col], width=width, label=col)
            ax.set_xticks(positions + 0.4 - width / 2)
            ax.set_xticklabels(data[figure.x].astype(str))
        else:
            ax.bar(data[figure.x].astype(str), data[figure.y[0]])
        ax.set_xlabel(figure.x)
        ax.set_title(figure.title)
        if figure.kind != "hist":
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return True


def emit_plots(figures: Dict[str, Figure], output_dir: Path) -> List[Path]:
    """
    Write plot_<name>.csv for every figure and a best-effort plot_<name>.svg

    Returns:
        Paths written
    """
    written = []
    for name, figure in figures.items():
        csv_path = write_table(figure.data, Path(output_dir) / f"plot_{name}.csv")
        written.append(csv_path)
        svg_path = Path(output_dir) / f"plot_{name}.svg"
        try:
            if _render(figure, svg_path):
                written.append(svg_path)
        except Exception as e:
            logger.warning(
                f"Could not render {svg_path.name}: {e}",
                extra={"extra_data": {"figure": name}},
            )
    return written
