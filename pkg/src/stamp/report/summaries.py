"""Posterior summaries for reporting: league percentile maps and left/right bias."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .. import shotgrid as sg
from ..errors import ComponentMissing
from ..lgm.config import AREA_SLOPES, SLOPE_SHOT_TYPE

LEFT = sg.SIDES.index("Left")
RIGHT = sg.SIDES.index("Right")


def _pos(labels, value, what: str) -> int:
    """Position of a team/season given its label or (for ints not used as labels) its position."""
    labels = tuple(labels)
    if value in labels:
        return labels.index(value)
    if isinstance(value, (int, np.integer)) and 0 <= value < len(labels):
        return int(value)
    raise KeyError(f"unknown {what} {value!r}")


def _shot_pos(shot_type) -> int:
    return _pos(sg.SHOT_TYPES, shot_type, "shot type")


def percentile_label(p: float) -> str:
    """``pXX`` label with half-up rounding (``p50``, ``p07``)."""
    return f"p{int(np.floor(p + 0.5)):02d}"


def midrank_percentiles(values, groups=None) -> np.ndarray:
    """``100 (rank - 0.5) / n`` with midranks for ties, ranked within each group if given."""
    v = np.asarray(values, dtype=float)
    out = np.empty(v.shape)
    if groups is None:
        groups = np.zeros(len(v), dtype=int)
    groups = np.asarray(groups)
    for g in np.unique(groups):
        sel = groups == g
        out[sel] = 100.0 * (stats.rankdata(v[sel], method="average") - 0.5) / sel.sum()
    return out


@dataclass
class MapCell:
    area: int
    side: int
    rate: float
    percentile: float

    @property
    def label(self) -> str:
        return percentile_label(self.percentile)


@dataclass
class PercentileMap:
    team: str
    season: str
    shot_type: str
    cells: list[MapCell]
    side_scaling: bool = True

    def as_dict(self) -> dict[tuple[int, int], MapCell]:
        return {(c.area, c.side): c for c in self.cells}


def _needed_blocks(fit, shot_type: int, side_scaling: bool) -> list[str]:
    lay = fit.layout()[0]
    shot = sg.SHOT_TYPES[shot_type]
    names = [f"r_{m}" for m, k in SLOPE_SHOT_TYPE.items() if k == shot and lay.has(f"r_{m}")]
    if lay.has("w"):
        names.append("w")
    if not names:
        raise ComponentMissing(f"the fit has no team-by-area or {shot} slope component to map")
    if side_scaling:
        if not lay.has("z"):
            raise ComponentMissing("side scaling needs the team-by-side component (use_ts)")
        names.append("z")
    return names


def relative_log_rates(fit, season, shot_type, side_scaling: bool | None = None) -> np.ndarray:
    """Per-sample team-specific log-rate contribution, shape ``(J, I, n_valid_ad)``.

    The contribution combines team-by-area effects, the slopes that apply
    to ``shot_type`` and (with side scaling) team-by-side effects; team,
    area and fixed effects are common to a slice and do not affect ranks.
    """
    s = _pos(fit.index.seasons, season, "season")
    k = _shot_pos(shot_type)
    if side_scaling is None:
        side_scaling = bool(fit.config.use_ts)
    blocks = _needed_blocks(fit, k, side_scaling)
    a_idx = np.array([a for a, _ in sg.VALID_AD])
    d_idx = np.array([d for _, d in sg.VALID_AD])
    out = np.zeros((fit.J, fit.index.n_teams, sg.N_AD))
    for name in blocks:
        x = fit.block_samples(name)
        if name == "w" or (name.startswith("r_") and name[2:] in AREA_SLOPES):
            out += x[:, :, a_idx, s]
        elif name == "z":
            out += x[:, :, d_idx, s]
        else:
            # team-level slope: constant across the map
            out += x[:, :, s][:, :, None]
    return out


def league_percentiles(fit, season, shot_type, side_scaling: bool | None = None, groups=None):
    """``(rates, percentiles)``, each ``(I, n_valid_ad)``: posterior-mean multipliers and their league ranks."""
    rates = np.exp(relative_log_rates(fit, season, shot_type, side_scaling)).mean(axis=0)
    pct = np.column_stack([midrank_percentiles(rates[:, j], groups) for j in range(rates.shape[1])])
    return rates, pct


def percentile_map(fit, team, season, shot_type, side_scaling: bool | None = None, groups=None) -> PercentileMap:
    """Map of one team's posterior-mean relative rates and league percentiles per (area, side)."""
    i = _pos(fit.index.teams, team, "team")
    s = _pos(fit.index.seasons, season, "season")
    k = _shot_pos(shot_type)
    scaling = bool(fit.config.use_ts) if side_scaling is None else side_scaling
    rates, pct = league_percentiles(fit, s, k, scaling, groups)
    cells = [MapCell(a, d, float(rates[i, j]), float(pct[i, j])) for j, (a, d) in enumerate(sg.VALID_AD)]
    return PercentileMap(str(fit.index.teams[i]), str(fit.index.seasons[s]), sg.SHOT_TYPES[k], cells, scaling)


def maps_to_csv(maps: list[PercentileMap]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("team", "season", "shot_type", "area", "side", "rate", "percentile", "label"))
    for m in maps:
        for c in m.cells:
            w.writerow((m.team, m.season, m.shot_type, sg.AREAS[c.area], sg.SIDES[c.side], repr(c.rate),
                        repr(c.percentile), c.label))
    return out.getvalue()


# -- left/right bias --------------------------------------------------------------------------


@dataclass
class LrBiasRow:
    team: str
    point: float
    lower: float
    upper: float


def swap_sides(z_samples: np.ndarray) -> np.ndarray:
    """Exchange the Left and Right entries of team-by-side samples ``(J, I, D, S)``."""
    out = np.array(z_samples, copy=True)
    out[:, :, [LEFT, RIGHT]] = z_samples[:, :, [RIGHT, LEFT]]
    return out


def lr_bias_from_samples(z_samples: np.ndarray, teams, level: float = 0.95) -> list[LrBiasRow]:
    """Log geometric-mean Right/Left ratio per team from samples ``(J, I, D, S)``.

    Point estimate is the posterior mean; the interval uses equal-tailed
    sample quantiles. Rows are sorted by point estimate (ties by team).
    """
    z = np.asarray(z_samples, dtype=float)
    diff = (z[:, :, RIGHT, :] - z[:, :, LEFT, :]).mean(axis=2)
    tail = 0.5 * (1.0 - level)
    point = diff.mean(axis=0)
    lo = np.quantile(diff, tail, axis=0)
    # upper bound from the negated draws, so relabelling Left/Right negates the interval exactly
    hi = -np.quantile(-diff, tail, axis=0)
    # the mean of a sample always lies in its range, but keep the documented ordering exact
    rows = [LrBiasRow(str(t), float(p), float(min(l_, p)), float(max(h, p))) for t, p, l_, h in zip(teams, point, lo, hi)]
    return sorted(rows, key=lambda r: (r.point, r.team))


def lr_bias(fit, level: float = 0.95) -> list[LrBiasRow]:
    if not fit.layout()[0].has("z"):
        raise ComponentMissing("left/right bias needs the team-by-side component (use_ts)")
    return lr_bias_from_samples(fit.block_samples("z"), fit.index.teams, level)


def lr_to_csv(rows: list[LrBiasRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("team", "log_ratio", "lower", "upper"))
    for r in rows:
        w.writerow((r.team, repr(r.point), repr(r.lower), repr(r.upper)))
    return out.getvalue()
