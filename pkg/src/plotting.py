"""
Figures for PMD grids and Im t' scans, plus the standalone plot recipes
written next to every output file.
"""

import os
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from analysis import ScanCurve  # noqa: E402
from errors import DomainError  # noqa: E402
from pmd_engine import PMDGrid, normalize_log  # noqa: E402

LOG_FLOOR = 6.0
SCAN_STYLES = {"a": ("o-", "red"), "b": ("s-", "blue"), "c": ("^-", "green"), "d": ("v-", "orange")}


def plot_pmd(grid: PMDGrid, path: str, scale: str = "log10", title: Optional[str] = None,
             floor: float = LOG_FLOOR) -> str:
    """Colour map of the normalized distribution; p_z horizontal, p_x vertical"""
    view = normalize_log(grid, scale, floor)
    fig, ax = plt.subplots(figsize=(7, 6))
    extent = [grid.axes.pz_min, grid.axes.pz_max, grid.axes.px_min, grid.axes.px_max]
    vmin = -floor if scale == "log10" else 0.0
    image = ax.imshow(np.ma.masked_invalid(view.display.T), origin="lower", extent=extent,
                      aspect="auto", cmap="inferno", vmin=vmin, vmax=0.0 if scale == "log10" else 1.0)
    colorbar = fig.colorbar(image, ax=ax)
    colorbar.set_label("log10 probability" if scale == "log10" else "probability")
    ax.set_xlabel("p_z (a.u.)")
    ax.set_ylabel("p_x (a.u.)")
    ax.set_title(title or f"PMD ({grid.metadata.get('method', '')}: {'+'.join(grid.selected)})")
    plt.tight_layout()
    plt.savefig(path, dpi=300, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_scan(curves: Sequence[ScanCurve], path: str, title: Optional[str] = None) -> str:
    if not curves:
        raise DomainError("nothing to plot")
    fig, ax = plt.subplots(figsize=(7, 5))
    for curve in curves:
        marker, color = SCAN_STYLES.get(curve.orbit_label, ("o-", "black"))
        ax.plot(curve.abscissa, curve.ordinate, marker, linewidth=2, markersize=4, color=color,
                label=f"{curve.method} orbit {curve.orbit_label}")
    ax.set_xlabel("p_x (a.u.)" if curves[0].axis_kind == "final_px" else "initial p_x (a.u.)")
    ax.set_ylabel("Im t' (a.u.)")
    ax.set_title(title or "Imaginary part of the ionization time")
    ax.grid(True, alpha=0.3)
    ax.legend()
    plt.tight_layout()
    plt.savefig(path, dpi=300, bbox_inches="tight")
    plt.close(fig)
    return path


_PMD_RECIPE = '''#!/usr/bin/env python3
"""Plot {data}: rows are pz,px,prob,... with p_z fastest, '#' lines are header."""
import numpy as np
import pandas as pd
import matplotlib.pyplot as plt

FLOOR = {floor!r}
table = pd.read_csv({data!r}, comment="#", header=None)
pz, px, prob = table[0].to_numpy(), table[1].to_numpy(), table[2].to_numpy()
n_z = len(np.unique(pz))
grid = prob.reshape((n_z, -1), order="F") / np.nanmax(prob)
view = np.maximum(np.log10(grid), -FLOOR) if {scale!r} == "log10" else grid
plt.imshow(np.ma.masked_invalid(view.T), origin="lower", aspect="auto", cmap="inferno",
           extent=[pz.min(), pz.max(), px.min(), px.max()])
plt.colorbar()
plt.xlabel("p_z (a.u.)")
plt.ylabel("p_x (a.u.)")
plt.savefig({image!r}, dpi=300, bbox_inches="tight")
'''

_SCAN_RECIPE = '''#!/usr/bin/env python3
"""Plot {data}: two space-separated columns p and Im t', '#' lines are header."""
import pandas as pd
import matplotlib.pyplot as plt

table = pd.read_csv({data!r}, sep=" ", comment="#", header=None, names=["p", "im_t"])
plt.plot(table["p"], table["im_t"], "o-")
plt.xlabel("p_x (a.u.)")
plt.ylabel("Im t' (a.u.)")
plt.grid(True, alpha=0.3)
plt.savefig({image!r}, dpi=300, bbox_inches="tight")
'''


def write_plot_script(data_path: str, kind: str = "pmd", scale: str = "log10", floor: float = LOG_FLOOR) -> str:
    """Write ``<data>.plot.py`` that renders ``data_path`` to ``<data>.png``"""
    stem, _ = os.path.splitext(data_path)
    script_path = stem + ".plot.py"
    data = os.path.basename(data_path)
    image = os.path.basename(stem) + ".png"
    if kind == "pmd":
        text = _PMD_RECIPE.format(data=data, image=image, scale=scale, floor=floor)
    elif kind == "scan":
        text = _SCAN_RECIPE.format(data=data, image=image)
    else:
        raise DomainError(f"unknown plot kind {kind!r}")
    with open(script_path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    return script_path
