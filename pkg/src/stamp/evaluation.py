"""Predictive scoring (elpd on held-out cells, CPO/LPML) and model-comparison harnesses."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import shotgrid as sg
from .errors import DegenerateCPO, MismatchedIds, MissingSamples, StampError
from .inference.fit import PosteriorFit, fit
from .lgm.config import CORE_FLAGS, EXTENDED_FLAGS, ModelConfig, core_configs, extended_configs

log = logging.getLogger(__name__)

J_DEFAULT = 400
# log of the smallest positive double; below this a density is zero in double precision
LOG_TINY = float(np.log(np.finfo(float).tiny * np.finfo(float).eps))


def poisson_logpmf(y, log_mu):
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore"):
        # an overflowing mean is a zero density: -inf is the right answer
        return y * log_mu - np.exp(log_mu) - gammaln(y + 1.0)


def _cell_logp(fit_: PosteriorFit | np.ndarray, data: sg.CountsAndExposure, J: int):
    """Per-sample log densities (J, n_active) over cells with positive exposure."""
    E = data.cell_exposure
    active = np.flatnonzero(E > 0)
    if isinstance(fit_, PosteriorFit):
        if fit_.index != data.index:
            raise MismatchedIds("fit and data use different cell indexes")
        if fit_.J < J:
            raise MissingSamples(f"fit holds {fit_.J} samples, {J} requested")
        eta = (fit_.layout()[0].design[active] @ fit_.samples[:J].T).T
    else:
        eta = np.atleast_2d(np.asarray(fit_, dtype=float))
        if eta.shape[0] < J:
            raise MissingSamples(f"{eta.shape[0]} samples available, {J} requested")
        eta = eta[:J, active]
    log_mu = eta + np.log(E[active])[None, :]
    return poisson_logpmf(data.y[active][None, :], log_mu), active


def elpd_pointwise(fit_, post_data: sg.CountsAndExposure, J: int = J_DEFAULT):
    """``(per-cell log predictive density, active cell ids, n excluded cells)``.

    ``fit_`` is a :class:`PosteriorFit` or an array of linear-predictor draws
    with shape (J, n_cells). Cells with zero exposure are excluded.
    """
    logp, active = _cell_logp(fit_, post_data, J)
    lpd = logsumexp(logp, axis=0) - np.log(J)
    return lpd, active, post_data.index.n_cells - len(active)


def elpd_mc(fit_, post_data: sg.CountsAndExposure, J: int = J_DEFAULT) -> float:
    """Monte-Carlo expected log predictive density summed over held-out cells."""
    return float(np.sum(elpd_pointwise(fit_, post_data, J)[0]))


@dataclass
class CpoResult:
    cpo: np.ndarray  # per active cell, on the density scale
    lpml: float
    cells: np.ndarray
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    log_cpo: np.ndarray = field(default=None, repr=False)

    def __iter__(self):
        # unpacks as (cpo, lpml)
        return iter((self.cpo, self.lpml))

    @property
    def n_degenerate(self) -> int:
        return len(self.degenerate)


def cpo_lpml(fit_, reg_data: sg.CountsAndExposure, J: int = J_DEFAULT) -> CpoResult:
    """Harmonic-mean CPO per cell and LPML, accumulated in log space.

    A cell is degenerate when some draw gives it zero density in double
    precision; such cells are reported and left out of LPML.
    """
    logp, active = _cell_logp(fit_, reg_data, J)
    log_cpo = -(logsumexp(-logp, axis=0) - np.log(J))
    bad = np.any(logp < LOG_TINY, axis=0)
    degenerate = active[bad]
    if len(degenerate):
        warnings.warn(
            DegenerateCPO(f"{len(degenerate)} cells with underflowing densities left out of LPML: {degenerate[:10].tolist()}"),
            stacklevel=2,
        )
    lpml = float(np.sum(log_cpo[~bad]))
    return CpoResult(np.exp(log_cpo), lpml, active, degenerate, log_cpo)


def kendall_tau(ranking_a, ranking_b) -> float:
    """Kendall's tau-a between two orderings of the same ids."""
    a, b = list(ranking_a), list(ranking_b)
    if len(set(a)) != len(a) or len(set(b)) != len(b) or set(a) != set(b):
        raise MismatchedIds("rankings must permute the same set of distinct ids")
    n = len(a)
    if n < 2:
        return 1.0
    pos = {k: j for j, k in enumerate(b)}
    r = np.array([pos[k] for k in a])
    i, j = np.triu_indices(n, 1)
    s = np.sign(r[j] - r[i])
    return float(s.sum() / (n * (n - 1) / 2))


# -- comparison tables -------------------------------------------------------------


@dataclass
class ComparisonRow:
    config: ModelConfig
    elpd_mc: float = float("nan")
    lpml_reg: float = float("nan")
    seed: int = 0
    n_excluded: int = 0
    n_degenerate: int = 0
    error: str | None = None
    seconds: float = field(default=0.0, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None and np.isfinite(self.elpd_mc) and np.isfinite(self.lpml_reg)

    @property
    def U_sd(self) -> float:
        return self.config.U_sd

    @property
    def U_slope(self) -> float:
        return self.config.U_slope

    @property
    def key(self) -> str:
        return self.config.label()

    def sort_key(self):
        if not self.ok:
            return (1, 0.0, 0.0, self.config.flags())
        return (0, -self.elpd_mc, -self.lpml_reg, self.config.flags())


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]
    kind: str = "core"
    metadata: dict = field(default_factory=dict)

    @property
    def ranking(self) -> list[ComparisonRow]:
        return sorted(self.rows, key=ComparisonRow.sort_key)

    @property
    def best(self) -> ComparisonRow:
        return self.ranking[0]

    def ranked_keys(self) -> list[str]:
        return [r.key for r in self.ranking]

    @property
    def flag_columns(self) -> tuple[str, ...]:
        return CORE_FLAGS if self.kind == "core" else ("use_ts",) + EXTENDED_FLAGS

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        cols = CORE_FLAGS + (EXTENDED_FLAGS if self.kind != "core" else ())
        w.writerow(cols + ("elpd_post_mc", "lpml_reg", "U_sd", "U_slope", "seed", "n_excluded", "n_degenerate", "error"))
        for r in self.ranking:
            w.writerow(
                list(r.config.flags(cols))
                + [_num(r.elpd_mc), _num(r.lpml_reg), _num(r.U_sd), _num(r.U_slope), r.seed, r.n_excluded,
                   r.n_degenerate, r.error or ""]
            )
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonTable":
        """Inverse of ``to_csv`` (seconds are not stored and come back as zero)."""
        reader = csv.DictReader(io.StringIO(text))
        cols = reader.fieldnames or []
        kind = "extended" if any(c in cols for c in EXTENDED_FLAGS) else "core"
        rows = []
        for rec in reader:
            flags = {c: bool(int(rec[c])) for c in CORE_FLAGS + EXTENDED_FLAGS if c in rec}
            cfg = ModelConfig(**flags, U_sd=float(rec["U_sd"]), U_slope=float(rec["U_slope"]))

            def num(key):
                return float(rec[key]) if rec.get(key) else float("nan")

            rows.append(ComparisonRow(cfg, num("elpd_post_mc"), num("lpml_reg"), int(rec.get("seed") or 0),
                                      int(rec.get("n_excluded") or 0), int(rec.get("n_degenerate") or 0),
                                      rec.get("error") or None))
        return cls(rows, kind)

    def to_text(self, top: int | None = None) -> str:
        """Aligned table in the conventional column order; ``*`` marks the best value of each criterion."""
        ranked = self.ranking
        best_e = max((r.elpd_mc for r in ranked if r.ok), default=np.nan)
        best_l = max((r.lpml_reg for r in ranked if r.ok), default=np.nan)
        cols = self.flag_columns
        head = list(cols) + ["elpd_post_mc", "lpml_reg"]
        body = []
        for r in ranked[: top or len(ranked)]:
            flags = ["on" if v else "-" for v in r.config.flags(cols)]
            if r.ok:
                e = f"{r.elpd_mc:,.0f}" + ("*" if r.elpd_mc == best_e else " ")
                l_ = f"{r.lpml_reg:,.0f}" + ("*" if r.lpml_reg == best_l else " ")
            else:
                e, l_ = "failed", ""
            body.append(flags + [e, l_])
        widths = [max(len(h), *(len(b[j]) for b in body)) if body else len(h) for j, h in enumerate(head)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
        return "\n".join(lines) + "\n"


def _num(x) -> str:
    x = float(x)
    return "" if not np.isfinite(x) else repr(x)


def data_hash(*datasets: sg.CountsAndExposure) -> str:
    h = hashlib.sha256()
    for d in datasets:
        h.update(d.phase.encode())
        h.update(np.ascontiguousarray(d.y, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(d.E, dtype=float).tobytes())
    return h.hexdigest()[:16]


def score_config(config: ModelConfig, data_reg, data_post, seed: int = 0, J: int = J_DEFAULT,
                 **fit_kw) -> ComparisonRow:
    """Fit one configuration and score it; failures are recorded in the row."""
    try:
        f = fit(config, data_reg, J=J, seed=seed, **fit_kw)
        lpd, _, n_excl = elpd_pointwise(f, data_post, J)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateCPO)
            cpo = cpo_lpml(f, data_reg, J)
        return ComparisonRow(config, float(lpd.sum()), cpo.lpml, seed, n_excl, cpo.n_degenerate,
                             seconds=f.timing["total"])
    except (StampError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("fit of %s failed: %s", config.label(), exc)
        return ComparisonRow(config, seed=seed, error=f"{type(exc).__name__}: {exc}")


def _score_star(args):
    config, reg, post, seed, J, fit_kw = args
    return score_config(config, reg, post, seed=seed, J=J, **fit_kw)


def compare(configs, data_reg, data_post, seed: int = 0, J: int = J_DEFAULT, threads: int = 1,
            kind: str = "core", **fit_kw) -> ComparisonTable:
    """Fit and score every configuration with a shared seed."""
    jobs = [(c, data_reg, data_post, seed, J, fit_kw) for c in configs]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_score_star, jobs))
    else:
        rows = [_score_star(j) for j in jobs]
    meta = {"data_hash": data_hash(data_reg, data_post), "J": J, "seed": seed}
    return ComparisonTable(rows, kind, meta)


def compare_core(data_reg, data_post, U_sd: float = 1.5, U_slope: float = 1.0, seed: int = 0,
                 J: int = J_DEFAULT, threads: int = 1, **fit_kw) -> ComparisonTable:
    """All 16 core structures under shared prior scales."""
    return compare(core_configs(U_sd, U_slope), data_reg, data_post, seed, J, threads, "core", **fit_kw)


def compare_extended(data_reg, data_post, U_sd: float = 1.5, U_slope: float = 1.0, seed: int = 0,
                     J: int = J_DEFAULT, threads: int = 1, **fit_kw) -> ComparisonTable:
    """The 32 extended structures (team x area and jump/step slopes always on)."""
    return compare(extended_configs(U_sd, U_slope), data_reg, data_post, seed, J, threads, "extended", **fit_kw)


@dataclass
class SweepResult:
    priors: list[tuple[float, float]]
    tables: list[ComparisonTable]
    tau: np.ndarray

    def mean_elpd(self) -> dict[str, float]:
        """Mean elpd per structure across prior settings (failed fits ignored)."""
        acc: dict[str, list[float]] = {}
        for t in self.tables:
            for r in t.rows:
                if r.ok:
                    acc.setdefault(r.key, []).append(r.elpd_mc)
        return {k: float(np.mean(v)) for k, v in acc.items()}

    def pairwise_tau(self) -> np.ndarray:
        i, j = np.triu_indices(len(self.tables), 1)
        return self.tau[i, j]


def prior_sensitivity_sweep(data_reg, data_post, admissible_priors, seed: int = 0, J: int = J_DEFAULT,
                            threads: int = 1, **fit_kw) -> SweepResult:
    """Core comparison per admissible ``(U_sd, U_slope)`` and the Kendall tau between rankings."""
    priors = [(float(a), float(b)) for a, b in admissible_priors]
    if not priors:
        raise ValueError("admissible prior set is empty")
    tables = [compare_core(data_reg, data_post, a, b, seed, J, threads, **fit_kw) for a, b in priors]
    n = len(tables)
    tau = np.eye(n)
    for a, b in itertools.combinations(range(n), 2):
        tau[a, b] = tau[b, a] = kendall_tau(tables[a].ranked_keys(), tables[b].ranked_keys())
    return SweepResult(priors, tables, tau)
