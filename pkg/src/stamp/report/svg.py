"""Byte-deterministic SVG rendering of percentile maps and left/right bias intervals."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .. import shotgrid as sg
from .summaries import LrBiasRow, PercentileMap, percentile_label

# 8 equal percentile bins, dark to bright
RAMP = ("#440154", "#46327e", "#365c8d", "#277f8e", "#1fa187", "#4ac16d", "#a0da39", "#fde725")
MISSING = "#d9d9d9"
N_BINS = len(RAMP)

# schematic half court (basket at the bottom, viewer's left = Left); zone id -> (x, y, width, height)
COURT_W, COURT_H = 500, 440
ZONE_TILES = {
    13: (0, 0, 500, 40),
    11: (0, 40, 170, 100),
    10: (170, 40, 160, 100),
    9: (330, 40, 170, 100),
    12: (0, 140, 60, 300),
    8: (440, 140, 60, 300),
    6: (60, 140, 130, 100),
    5: (190, 140, 120, 100),
    4: (310, 140, 130, 100),
    7: (60, 240, 90, 200),
    3: (350, 240, 90, 200),
    2: (150, 240, 200, 130),
    1: (150, 370, 200, 70),
}


def ramp_bin(percentile: float) -> int:
    """Bin ``floor(p / 12.5)`` clipped to ``0..7``."""
    return min(max(int(percentile // (100.0 / N_BINS)), 0), N_BINS - 1)


def ramp_color(percentile: float) -> str:
    return RAMP[ramp_bin(percentile)]


def _f(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if x == x else "0"


def _header(width: float, height: float) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>',
    ]


def _legend(x0: float, y0: float) -> list[str]:
    out = [f'<g id="legend"><text x="{_f(x0)}" y="{_f(y0 - 6)}" font-size="11">league percentile</text>']
    step = 100.0 / N_BINS
    for b, color in enumerate(RAMP):
        x = x0 + 40 * b
        out.append(f'<rect x="{_f(x)}" y="{_f(y0)}" width="40" height="14" fill="{color}" stroke="#333333" '
                   f'stroke-width="0.5"/>')
        out.append(f'<text x="{_f(x + 20)}" y="{_f(y0 + 27)}" font-size="9" text-anchor="middle">'
                   f'{_f(b * step)}-{_f((b + 1) * step)}</text>')
    out.append("</g>")
    return out


def render_map_svg(pmap: PercentileMap | None, title: str | None = None) -> str:
    """Court-tile map with one tile per zone, coloured by percentile bin and labelled ``pXX``.

    Merged areas are drawn as their mirrored Left and Right zones. ``None``
    (or a map with no cells) renders the legend only.
    """
    margin, top = 20, 40
    width, height = COURT_W + 2 * margin, COURT_H + top + 70
    out = _header(width, height)
    cells = pmap.as_dict() if pmap is not None else {}
    if title is None and pmap is not None:
        title = f"{pmap.team} {pmap.season} {pmap.shot_type}" + (" (side scaling)" if pmap.side_scaling else "")
    if title:
        out.append(f'<text x="{_f(margin)}" y="24" font-size="15">{escape(title)}</text>')
    if cells:
        out.append(f'<g id="court" transform="translate({margin},{top})">')
        for zone in sorted(ZONE_TILES):
            x, y, w, h = ZONE_TILES[zone]
            a, d = sg.ZONE_TO_AREA[zone] - 1, sg.SIDES.index(sg.ZONE_TO_SIDE[zone])
            cell = cells.get((a, d))
            fill = ramp_color(cell.percentile) if cell else MISSING
            out.append(f'<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="{fill}" stroke="#ffffff" '
                       f'stroke-width="2"><title>{escape(sg.ZONE_NAMES[zone])}</title></rect>')
            if cell:
                ink = "#000000" if ramp_bin(cell.percentile) >= 5 else "#ffffff"
                out.append(f'<text x="{_f(x + w / 2)}" y="{_f(y + h / 2 + 5)}" font-size="14" text-anchor="middle" '
                           f'fill="{ink}">{percentile_label(cell.percentile)}</text>')
        # basket marker
        out.append('<circle cx="250" cy="425" r="7" fill="none" stroke="#000000" stroke-width="2"/>')
        out.append("</g>")
    out += _legend(margin, top + COURT_H + 25)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_lr_svg(rows: list[LrBiasRow], title: str = "log(Right/Left), geometric mean over seasons") -> str:
    """Caterpillar plot of per-team intervals with a dashed no-bias line at zero."""
    label_w, plot_w, row_h, top, bottom = 140, 360, 18, 40, 40
    width = label_w + plot_w + 30
    height = top + row_h * max(len(rows), 1) + bottom
    out = _header(width, height)
    out.append(f'<text x="10" y="22" font-size="13">{escape(title)}</text>')
    span = max([abs(v) for r in rows for v in (r.lower, r.upper)] + [0.05]) * 1.1

    def xpos(v):
        return label_w + plot_w * (v + span) / (2 * span)

    y_end = top + row_h * max(len(rows), 1)
    out.append(f'<line x1="{_f(xpos(0))}" y1="{top - 4}" x2="{_f(xpos(0))}" y2="{_f(y_end)}" stroke="#555555" '
               f'stroke-dasharray="4,3"/>')
    for j, r in enumerate(rows):
        y = top + row_h * j + row_h / 2
        out.append(f'<text x="{label_w - 8}" y="{_f(y + 4)}" font-size="11" text-anchor="end">{escape(r.team)}</text>')
        out.append(f'<line x1="{_f(xpos(r.lower))}" y1="{_f(y)}" x2="{_f(xpos(r.upper))}" y2="{_f(y)}" '
                   f'stroke="#1f4e79" stroke-width="2"/>')
        out.append(f'<circle cx="{_f(xpos(r.point))}" cy="{_f(y)}" r="3.5" fill="#1f4e79"/>')
    for v in (-span / 1.1, 0.0, span / 1.1):
        out.append(f'<text x="{_f(xpos(v))}" y="{_f(y_end + 18)}" font-size="10" text-anchor="middle">{v:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
