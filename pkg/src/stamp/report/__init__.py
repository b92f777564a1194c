"""Post-fit summaries and their SVG / CSV renderings."""

from .summaries import (
    LrBiasRow,
    MapCell,
    PercentileMap,
    league_percentiles,
    lr_bias,
    lr_bias_from_samples,
    lr_to_csv,
    maps_to_csv,
    midrank_percentiles,
    percentile_label,
    percentile_map,
    relative_log_rates,
    swap_sides,
)
from .svg import RAMP, ZONE_TILES, ramp_bin, ramp_color, render_lr_svg, render_map_svg

__all__ = [
    "LrBiasRow",
    "MapCell",
    "PercentileMap",
    "RAMP",
    "ZONE_TILES",
    "league_percentiles",
    "lr_bias",
    "lr_bias_from_samples",
    "lr_to_csv",
    "maps_to_csv",
    "midrank_percentiles",
    "percentile_label",
    "percentile_map",
    "ramp_bin",
    "ramp_color",
    "relative_log_rates",
    "render_lr_svg",
    "render_map_svg",
    "swap_sides",
]
