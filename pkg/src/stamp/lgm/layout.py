"""Latent layout, design matrix, sum-to-zero constraints and prior precision.

Latent vector blocks, in order:

    fixed   beta_0, season (s >= 2), side (Left, Right), shot type (non-jump)
    u       team, (i,)
    v       area, (a,)
    w       team x area x season, (i, a, s)          if use_ta
    z       team x side x season, (i, d, s)          if use_ts
    r_jump  team x area x season, (i, a, s)          if use_jump
    r_step  team x area x season, (i, a, s)          if use_step
    r_lay, r_float, r_rim, r_fade   team x season, (i, s)

Reference categories are the first season, the Center side and jump_shot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .. import shotgrid as sg
from ..errors import InvalidConfig
from . import priors
from .config import AREA_SLOPES, SLOPE_SHOT_TYPE, ModelConfig

# hyperparameter group of each random-effect block
HYPER_GROUP = {"u": "team", "v": "area", "w": "ta", "z": "ts"}
HYPER_GROUP.update({f"r_{m}": m for m in SLOPE_SHOT_TYPE})
CORRELATED = {"w", "r_jump", "r_step"}


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    shape: tuple[int, ...]
    # position of the team axis inside ``shape``; None for blocks not owned by a team
    team_axis: int | None

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 0

    @property
    def stop(self) -> int:
        return self.start + self.size

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class HyperParam:
    name: str
    kind: str  # "log_tau" or "rho"
    group: str
    U: float = float("nan")


@dataclass
class ConstraintSet:
    A: sparse.csr_matrix
    labels: list[str]

    @property
    def e(self) -> np.ndarray:
        return np.zeros(self.A.shape[0])

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x


@dataclass
class LatentLayout:
    config: ModelConfig
    index: sg.CellIndex
    blocks: dict[str, Block]
    fixed_labels: list[str]
    hyper: list[HyperParam]
    _design: sparse.csr_matrix | None = field(default=None, repr=False)

    @property
    def n_latent(self) -> int:
        return sum(b.size for b in self.blocks.values())

    @property
    def n_hyper(self) -> int:
        return len(self.hyper)

    def has(self, name: str) -> bool:
        return name in self.blocks

    def block(self, name: str) -> Block:
        return self.blocks[name]

    def index_of(self, name: str, *coords) -> int:
        """Latent index of ``name`` at the given block coordinates."""
        b = self.blocks[name]
        if name == "fixed":
            (label,) = coords
            return b.start + (self.fixed_labels.index(label) if isinstance(label, str) else int(label))
        return b.start + int(np.ravel_multi_index(tuple(int(c) for c in coords), b.shape))

    def view(self, x: np.ndarray, name: str) -> np.ndarray:
        """Block of ``x`` (last axis) reshaped to its coordinates."""
        b = self.blocks[name]
        x = np.asarray(x)
        return x[..., b.start : b.stop].reshape(x.shape[:-1] + b.shape)

    def owner_team(self) -> np.ndarray:
        """Team owning each latent index, or -1 for global coordinates."""
        out = np.full(self.n_latent, -1, dtype=np.int64)
        for b in self.blocks.values():
            if b.team_axis is None:
                continue
            grid = np.indices(b.shape).reshape(len(b.shape), -1)
            out[b.start : b.stop] = grid[b.team_axis]
        return out

    def hyper_names(self) -> list[str]:
        return [h.name for h in self.hyper]

    @property
    def design(self) -> sparse.csr_matrix:
        if self._design is None:
            self._design = _build_design(self)
        return self._design

    def design_row(self, cell) -> sparse.csr_matrix:
        """Sparse design row of one cell given as ``(i, s, a, d, k)`` or a cell id."""
        c = cell if np.isscalar(cell) else self.index.lookup(*cell)
        return self.design[int(c)]


def assemble_layout(config: ModelConfig, dims: sg.CellIndex) -> tuple[LatentLayout, ConstraintSet]:
    if not isinstance(config, ModelConfig):
        raise InvalidConfig("config must be a ModelConfig")
    I, S, A, D = dims.n_teams, dims.n_seasons, sg.N_AREAS, sg.N_SIDES
    if I < 1 or S < 1:
        raise InvalidConfig("need at least one team and one season")
    fixed_labels = ["beta0"]
    fixed_labels += [f"season:{dims.seasons[s]}" for s in range(1, S)]
    fixed_labels += [f"side:{sg.SIDES[d]}" for d in range(D) if d != sg.CENTER]
    fixed_labels += [f"shot_type:{sg.SHOT_TYPES[k]}" for k in range(1, sg.N_SHOT_TYPES)]

    plan = [("fixed", (len(fixed_labels),), None), ("u", (I,), 0), ("v", (A,), None)]
    if config.use_ta:
        plan.append(("w", (I, A, S), 0))
    if config.use_ts:
        plan.append(("z", (I, D, S), 0))
    for m in config.slopes:
        plan.append((f"r_{m}", (I, A, S) if m in AREA_SLOPES else (I, S), 0))

    blocks, start = {}, 0
    for name, shape, team_axis in plan:
        blocks[name] = Block(name, start, shape, team_axis)
        start += blocks[name].size

    hyper = []
    for name in blocks:
        if name == "fixed":
            continue
        group = HYPER_GROUP[name]
        U = config.U_slope if name.startswith("r_") else config.U_sd
        hyper.append(HyperParam(f"log_tau_{group}", "log_tau", group, U))
        if name in CORRELATED and S >= 2:
            hyper.append(HyperParam(f"rho_{group}", "rho", group))

    layout = LatentLayout(config, dims, blocks, fixed_labels, hyper)
    constraints = build_constraints(layout)
    return layout, constraints


def build_constraints(layout: LatentLayout) -> ConstraintSet:
    cfg, n = layout.config, layout.n_latent
    I, S, A, D = layout.index.n_teams, layout.index.n_seasons, sg.N_AREAS, sg.N_SIDES
    rows, labels = [], []

    def add(cols, label):
        rows.append(np.asarray(cols, dtype=np.int64))
        labels.append(label)

    def add_area_block(name):
        b = layout.block(name)
        if cfg.strict_area_constraints:
            for a in range(A):
                for s in range(S):
                    add([layout.index_of(name, i, a, s) for i in range(I)], f"sum_i {name}[a={a},s={s}]")
        else:
            add(np.arange(b.start, b.stop), f"sum {name}")

    for name in ("u", "v"):
        b = layout.block(name)
        add(np.arange(b.start, b.stop), f"sum {name}")
    if layout.has("w"):
        add_area_block("w")
    if layout.has("z"):
        for i in range(I):
            for s in range(S):
                add([layout.index_of("z", i, d, s) for d in range(D)], f"sum_d z[i={i},s={s}]")
    for m in cfg.slopes:
        if m in AREA_SLOPES:
            add_area_block(f"r_{m}")
        else:
            b = layout.block(f"r_{m}")
            add(np.arange(b.start, b.stop), f"sum r_{m}")

    indptr = np.cumsum([0] + [len(r) for r in rows])
    indices = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    A_mat = sparse.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(len(rows), n))
    return ConstraintSet(A_mat, labels)


def _build_design(layout: LatentLayout) -> sparse.csr_matrix:
    idx = layout.index
    n_cells = idx.n_cells
    i, s, a, d, k = idx.team, idx.season, idx.area, idx.side, idx.shot
    cols, rows = [], []
    cell = np.arange(n_cells)

    def put(mask, col):
        rows.append(cell[mask])
        cols.append(np.asarray(col)[mask] if np.ndim(col) else np.full(int(mask.sum()), col))

    all_ = np.ones(n_cells, bool)
    fb = layout.block("fixed").start
    put(all_, fb)
    S = idx.n_seasons
    if S > 1:
        put(s > 0, fb + s)
    side_col = {0: fb + S, 2: fb + S + 1}
    put(d == 0, side_col[0])
    put(d == 2, side_col[2])
    put(k > 0, fb + S + 2 + k - 1)
    put(all_, layout.block("u").start + i)
    put(all_, layout.block("v").start + a)
    if layout.has("w"):
        b = layout.block("w")
        put(all_, b.start + np.ravel_multi_index((i, a, s), b.shape))
    if layout.has("z"):
        b = layout.block("z")
        put(all_, b.start + np.ravel_multi_index((i, d, s), b.shape))
    for m in layout.config.slopes:
        b = layout.block(f"r_{m}")
        sel = k == sg.SHOT_TYPES.index(SLOPE_SHOT_TYPE[m])
        if m in AREA_SLOPES:
            put(sel, b.start + np.ravel_multi_index((i, a, s), b.shape))
        else:
            put(sel, b.start + np.ravel_multi_index((i, s), b.shape))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    X = sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(n_cells, layout.n_latent))
    X.sum_duplicates()
    X.sort_indices()
    return X


# -- hyperparameters -------------------------------------------------------------


def unpack_theta(theta, layout: LatentLayout) -> dict[str, dict[str, float]]:
    """Internal vector -> ``{group: {"tau": ..., "rho": ...}}``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout.n_hyper,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({layout.n_hyper},)")
    S = layout.index.n_seasons
    out: dict[str, dict[str, float]] = {}
    for h, t in zip(layout.hyper, theta):
        g = out.setdefault(h.group, {"tau": 1.0, "rho": 0.0})
        if h.kind == "log_tau":
            g["tau"] = float(np.exp(t))
        else:
            g["rho"] = float(priors.rho_from_internal(t, S))
    return out


def theta_from_natural(layout: LatentLayout, sigma: dict[str, float], rho: dict[str, float] | None = None) -> np.ndarray:
    """Build the internal vector from standard deviations and correlations by group."""
    rho = rho or {}
    S = layout.index.n_seasons
    out = []
    for h in layout.hyper:
        if h.kind == "log_tau":
            out.append(-2.0 * np.log(sigma[h.group]))
        else:
            out.append(priors.rho_to_internal(rho.get(h.group, 0.0), S))
    return np.array(out, dtype=float)


def natural_from_theta(theta, layout: LatentLayout) -> dict[str, float]:
    """``{"sigma_team": ..., "rho_ta": ...}`` for reporting."""
    out = {}
    S = layout.index.n_seasons
    for h, t in zip(layout.hyper, np.asarray(theta, dtype=float)):
        if h.kind == "log_tau":
            out[f"sigma_{h.group}"] = float(np.exp(-0.5 * t))
        else:
            out[f"rho_{h.group}"] = float(priors.rho_from_internal(t, S))
    return out


def initial_theta(layout: LatentLayout) -> np.ndarray:
    """Standardized start: every sigma at U/2, every rho at 0.3."""
    S = layout.index.n_seasons
    return np.array(
        [-2.0 * np.log(h.U / 2.0) if h.kind == "log_tau" else priors.rho_to_internal(0.3, S) for h in layout.hyper]
    )


def log_hyperprior(theta, layout: LatentLayout) -> float:
    """Joint log prior density of the internal hyperparameter vector."""
    cfg = layout.config
    S = layout.index.n_seasons
    total = 0.0
    for h, t in zip(layout.hyper, np.asarray(theta, dtype=float)):
        if h.kind == "log_tau":
            total += priors.pc_prec_logpdf_logtau(t, h.U, cfg.alpha_prec)
        else:
            total += priors.pc_cor_logpdf_internal(t, cfg.V_cor, cfg.alpha_cor, S)
    return float(total)


def fixed_precision(config: ModelConfig) -> float:
    return 1.0 / config.fixed_effect_sd**2 + 1.0 / config.ridge_sd**2


def prior_precision(theta, layout: LatentLayout) -> sparse.csr_matrix:
    """Block-diagonal prior precision in latent order."""
    pars = unpack_theta(theta, layout)
    S = layout.index.n_seasons
    mats = []
    for name, b in layout.blocks.items():
        if name == "fixed":
            mats.append(sparse.identity(b.size, format="csr") * fixed_precision(layout.config))
            continue
        g = pars[HYPER_GROUP[name]]
        if name in CORRELATED:
            # coordinates (i, a, s) with s fastest: kron(I_{I*A}, tau * R^{-1})
            Rinv = priors.equicorr_precision(S, g["rho"] if S > 1 else 0.0)
            n_groups = b.size // S
            mats.append(sparse.kron(sparse.identity(n_groups, format="csr"), g["tau"] * Rinv, format="csr"))
        else:
            mats.append(sparse.identity(b.size, format="csr") * g["tau"])
    return sparse.block_diag(mats, format="csr")
