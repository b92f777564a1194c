"""Prior predictive checks for calibrating the PC-prior scales (U_sd, U_slope)."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import shotgrid as sg
from .errors import EmptyData
from .lgm.config import FULL_CORE, ModelConfig
from .lgm.layout import CORRELATED, HYPER_GROUP, assemble_layout
from .lgm.priors import pc_prec_rate, sample_pc_cor
from .lgm.simulate import ConstraintCentering, draw_latent

GRID_VALUES = (0.5, 0.8, 1.0, 1.2, 1.5)
R_DEFAULT = 800
THRESHOLD = 0.05
FIXED_BOUND = 5.0
ETA_CLIP = 30.0


def plugin_fixed_effects(data: sg.CountsAndExposure, layout) -> np.ndarray:
    """Maximum-likelihood fixed effects of the fixed-effects-only Poisson model (Newton/IRLS)."""
    fb = layout.block("fixed")
    ok = data.cell_exposure > 0
    X = layout.design[ok][:, fb.start : fb.stop].toarray()
    y, off = data.y[ok].astype(float), np.log(data.cell_exposure[ok])
    beta = np.zeros(fb.size)
    beta[0] = np.log(max(y.sum(), 0.5) / np.exp(off).sum())
    for _ in range(100):
        mu = np.exp(off + X @ beta)
        step = np.linalg.solve(X.T @ (mu[:, None] * X) + 1e-10 * np.eye(fb.size), X.T @ (y - mu))
        beta += step
        if np.max(np.abs(step)) < 1e-12:
            break
    return beta


class PriorSimulator:
    """Draws replicate count vectors from the prior predictive of one configuration.

    With ``fixed`` given, fixed effects are held at those values instead of
    being drawn from their (truncated) prior.
    """

    def __init__(self, config: ModelConfig, index: sg.CellIndex, exposures, fixed_bound: float = FIXED_BOUND,
                 fixed=None):
        self.config = config
        self.index = index
        self.E = np.asarray(exposures, dtype=float).reshape(index.n_teams, index.n_seasons)
        if np.any(self.E <= 0):
            raise EmptyData("exposures must be positive")
        self.layout, self.cons = assemble_layout(config, index)
        self.center = ConstraintCentering(self.cons)
        self.X = self.layout.design
        self.log_E = np.log(self.E[index.team, index.season])
        self.fixed_bound = fixed_bound
        self.fixed = None if fixed is None else np.asarray(fixed, dtype=float)
        sd = config.fixed_effect_sd
        self._trunc = stats.truncnorm(-fixed_bound / sd, fixed_bound / sd, loc=0.0, scale=sd)
        S = index.n_seasons
        self.groups = []
        for name in self.layout.blocks:
            if name == "fixed":
                continue
            g = HYPER_GROUP[name]
            U = config.U_slope if name.startswith("r_") else config.U_sd
            self.groups.append((g, U, name in CORRELATED and S > 1))

    def draw_latent(self, rng: np.random.Generator, zero_latent: bool = False) -> np.ndarray:
        nf = self.layout.block("fixed").size
        fixed = self._trunc.rvs(size=nf, random_state=rng) if self.fixed is None else self.fixed
        sigma, rho = {}, {}
        cfg, S = self.config, self.index.n_seasons
        for g, U, corr in self.groups:
            sigma[g] = rng.exponential(1.0 / pc_prec_rate(U, cfg.alpha_prec))
            if corr:
                rho[g] = sample_pc_cor(rng, cfg.V_cor, cfg.alpha_cor, S)
        if zero_latent:
            sigma = {g: 0.0 for g in sigma}
        return draw_latent(rng, self.layout, self.cons, sigma, rho, fixed=fixed, centering=self.center)

    def replicate(self, rng: np.random.Generator, zero_latent: bool = False) -> np.ndarray:
        x = self.draw_latent(rng, zero_latent)
        eta = np.minimum(self.X @ x, ETA_CLIP)
        return rng.poisson(np.exp(self.log_E + eta))


def simulate_prior_replicate(config: ModelConfig, U_sd: float, U_slope: float, dims: sg.CellIndex, exposures,
                             seed, zero_latent: bool = False) -> np.ndarray:
    """One replicate count vector (per cell) drawn from the prior predictive."""
    sim = PriorSimulator(config.with_priors(U_sd, U_slope), dims, exposures)
    return sim.replicate(np.random.default_rng(seed), zero_latent)


def summary_stats(counts, exposures=None, index: sg.CellIndex | None = None) -> tuple[float, float]:
    """``(T_cell95, T_tot95)``: type-7 95th percentiles of cell rates and team-season totals.

    ``counts`` is a per-cell vector with ``index``, or a ``CountsAndExposure``.
    Cells and team-seasons with zero exposure are left out.
    """
    if isinstance(counts, sg.CountsAndExposure):
        index, y, E = counts.index, counts.y, counts.E
    else:
        if index is None:
            raise ValueError("index is required with a raw count vector")
        y, E = np.asarray(counts), np.asarray(exposures, dtype=float).reshape(index.n_teams, index.n_seasons)
    if index.n_cells == 0:
        raise EmptyData("no cells")
    Ec = E[index.team, index.season]
    ok = Ec > 0
    if not np.any(ok):
        raise EmptyData("no cells with positive exposure")
    rates = y[ok] / Ec[ok]
    totals = np.zeros(E.shape)
    np.add.at(totals, (index.team, index.season), y)
    return float(np.percentile(rates, 95)), float(np.percentile(totals[E > 0], 95))


def two_sided_pvalue(rep_stats, observed: float) -> float:
    """``2 min(P(T_rep <= T_obs), P(T_rep >= T_obs))`` by empirical proportions, capped at 1."""
    rep = np.asarray(rep_stats, dtype=float)
    if rep.size == 0:
        raise EmptyData("no replicate statistics")
    R = rep.size
    lo = np.count_nonzero(rep <= observed) / R
    hi = np.count_nonzero(rep >= observed) / R
    return float(min(1.0, 2.0 * min(lo, hi)))


@dataclass
class PpcReport:
    U_sd: float
    U_slope: float
    R: int
    p_cell_95: float
    p_tot_95: float
    T_cell_95: float
    T_tot_95: float
    rep_cell: np.ndarray = field(repr=False)
    rep_tot: np.ndarray = field(repr=False)
    fixed_bound: float = FIXED_BOUND
    error: str | None = None
    fixed_mode: str = "prior"

    @property
    def passed(self) -> bool:
        return self.error is None and self.p_cell_95 > THRESHOLD and self.p_tot_95 > THRESHOLD


def check_prior(observed: sg.CountsAndExposure, U_sd: float, U_slope: float, seed, R: int = R_DEFAULT,
                config: ModelConfig = FULL_CORE, fixed_mode: str = "prior") -> PpcReport:
    """Prior predictive check of one ``(U_sd, U_slope)`` pair against observed data.

    ``fixed_mode="prior"`` draws fixed effects from their truncated prior;
    ``"plugin"`` holds them at the observed data's fixed-effects-only
    maximum-likelihood values so that only the random-effect scales vary.
    """
    if fixed_mode not in ("prior", "plugin"):
        raise ValueError(f"unknown fixed_mode {fixed_mode!r}")
    T_cell, T_tot = summary_stats(observed)
    try:
        cfg = config.with_priors(U_sd, U_slope)
        fixed = None
        if fixed_mode == "plugin":
            fixed = plugin_fixed_effects(observed, assemble_layout(cfg, observed.index)[0])
        sim = PriorSimulator(cfg, observed.index, observed.E, fixed=fixed)
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        children = ss.spawn(R)
        cell, tot = np.empty(R), np.empty(R)
        for r, ss in enumerate(children):
            y = sim.replicate(np.random.default_rng(ss))
            cell[r], tot[r] = summary_stats(y, observed.E, observed.index)
    except (ValueError, FloatingPointError) as exc:
        nan = float("nan")
        return PpcReport(U_sd, U_slope, R, nan, nan, T_cell, T_tot, np.zeros(0), np.zeros(0), error=str(exc),
                         fixed_mode=fixed_mode)
    return PpcReport(U_sd, U_slope, R, two_sided_pvalue(cell, T_cell), two_sided_pvalue(tot, T_tot), T_cell, T_tot,
                     np.sort(cell), np.sort(tot), fixed_mode=fixed_mode)


def grid_search(observed: sg.CountsAndExposure, seed, R: int = R_DEFAULT, grid=GRID_VALUES,
                config: ModelConfig = FULL_CORE, fixed_mode: str = "prior") -> list[PpcReport]:
    """Check every ``(U_sd, U_slope)`` in ``grid x grid``; each pair gets its own derived seed stream."""
    pairs = list(itertools.product(grid, grid))
    seeds = np.random.SeedSequence(seed).spawn(len(pairs))
    return [check_prior(observed, a, b, ss, R, config, fixed_mode) for (a, b), ss in zip(pairs, seeds)]


def admissible(reports: list[PpcReport]) -> list[tuple[float, float]]:
    return [(r.U_sd, r.U_slope) for r in reports if r.passed]


def reports_to_csv(reports: list[PpcReport]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("U_sd", "U_slope", "p_cell_95", "p_tot_95", "pass"))
    for r in reports:
        w.writerow((repr(r.U_sd), repr(r.U_slope), repr(r.p_cell_95), repr(r.p_tot_95), int(r.passed)))
    return out.getvalue()


def reports_to_text(reports: list[PpcReport]) -> str:
    """Pass/fail matrix with U_sd down the rows and U_slope across the columns."""
    sds = sorted({r.U_sd for r in reports})
    slopes = sorted({r.U_slope for r in reports})
    cell = {(r.U_sd, r.U_slope): r for r in reports}
    lines = ["U_sd \\ U_slope " + " ".join(f"{b:>16g}" for b in slopes)]
    for a in sds:
        row = []
        for b in slopes:
            r = cell.get((a, b))
            row.append(f"{'pass' if r.passed else 'fail'} {r.p_cell_95:.3f}/{r.p_tot_95:.3f}" if r else "")
        lines.append(f"{a:>15g} " + " ".join(f"{v:>16}" for v in row))
    mode = reports[0].fixed_mode if reports else "prior"
    fixed = f"fixed effects truncated to +-{FIXED_BOUND:g}" if mode == "prior" else "fixed effects at plug-in estimates"
    lines.append(f"entries: verdict p_cell_95/p_tot_95; R={reports[0].R if reports else 0}; {fixed}")
    return "\n".join(lines) + "\n"
