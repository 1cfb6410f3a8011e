from typing import Optional, Tuple

import svgwrite

from confnorm.models.schemas import ConfusionMatrix
from confnorm.utils.helpers import atomic_write

CELL = 36
MARGIN = 80
FONT = "Courier New"
# fully saturated colour of the largest entry
FULL = (8, 48, 107)


def shade(value: float, peak: float, full: Tuple[int, int, int] = FULL) -> str:
    """Linear blend from white (0) to `full` (peak)."""
    t = 0.0 if peak <= 0 else min(max(value / peak, 0.0), 1.0)
    r, g, b = (round(255 + t * (c - 255)) for c in full)
    return f"rgb({r},{g},{b})"


def render_heatmap(M: ConfusionMatrix, title: Optional[str] = None) -> svgwrite.Drawing:
    C = M.n_classes
    size = MARGIN + C * CELL + 20
    dwg = svgwrite.Drawing(size=(size, size + 20))
    dwg.add(dwg.rect((0, 0), (size, size + 20), fill="white"))
    if title:
        dwg.add(dwg.text(title, insert=(10, 18), font_size="13px", font_family=FONT, font_weight="bold"))

    peak = float(M.entries.max())
    top = MARGIN + 20
    show_values = C <= 20
    for i in range(C):
        y = top + i * CELL
        dwg.add(dwg.text(M.labels[i], insert=(10, y + CELL / 2 + 4), font_size="11px", font_family=FONT))
        for j in range(C):
            x = MARGIN + j * CELL
            g = dwg.g()
            g.add(dwg.rect((x, y), (CELL, CELL), fill=shade(M.entries[i, j], peak), stroke="#dddddd"))
            if show_values:
                ink = "white" if peak > 0 and M.entries[i, j] / peak > 0.5 else "black"
                g.add(dwg.text(f"{M.entries[i, j]:.2g}", insert=(x + 3, y + CELL / 2 + 4),
                               font_size="9px", font_family=FONT, fill=ink))
            dwg.add(g)
    for j in range(C):
        x = MARGIN + j * CELL + CELL / 2
        dwg.add(dwg.text(M.labels[j], insert=(x, top - 6), font_size="11px", font_family=FONT, text_anchor="middle"))
    return dwg


def write_heatmap(path: str, M: ConfusionMatrix, title: Optional[str] = None) -> None:
    atomic_write(path, render_heatmap(M, title).tostring())
