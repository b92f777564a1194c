"""Synthetic leagues drawn from a known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .. import shotgrid as sg
from ..errors import InvalidConfig
from ..lgm.config import ModelConfig, parse_kv
from ..lgm.layout import HYPER_GROUP, LatentLayout, assemble_layout
from ..lgm.simulate import ConstraintCentering, draw_block

# league-wide attempt counts by merged shot type (jump, step/pull, layup, floater, rim, fade/turn)
SHOT_COUNTS = (156423, 50454, 48550, 19000, 17819, 14198)
TARGET_FGA_MEAN = 4032.16
POST_FRACTION = 9676 / 296768

# every block switched on so any truth can be expressed; zero sigma silences a block
_ALL_BLOCKS = ModelConfig(use_lay=True, use_float=True, use_rim=True, use_fade=True)


@dataclass
class GroundTruth:
    n_teams: int = 20
    n_seasons: int = 2
    sigma_team: float = 0.03
    sigma_area: float = 1.0
    sigma_ta: float = 0.3
    sigma_ts: float = 0.1
    sigma_jump: float = 0.3
    sigma_step: float = 0.3
    sigma_lay: float = 0.0
    sigma_float: float = 0.0
    sigma_rim: float = 0.0
    sigma_fade: float = 0.0
    rho_ta: float = 0.7
    rho_jump: float = 0.7
    rho_step: float = 0.7
    # nan means: solve for the intercept that hits ``target_fga_mean``
    beta0: float = float("nan")
    beta_season: tuple = ()
    beta_left: float = 0.0
    beta_right: float = 0.0
    shot_shares: tuple = tuple(c / sum(SHOT_COUNTS) for c in SHOT_COUNTS)
    target_fga_mean: float = TARGET_FGA_MEAN
    exposure_mean: float = 4800.0
    exposure_sd: float = 240.0
    post_fraction: float = POST_FRACTION
    # explicit latent blocks by name ("u", "v", "w", "z", "r_jump", ...); missing blocks are drawn
    latent: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_teams < 1 or self.n_seasons < 1:
            raise InvalidConfig("need at least one team and one season")
        if len(self.shot_shares) != sg.N_SHOT_TYPES or min(self.shot_shares) <= 0:
            raise InvalidConfig("shot_shares needs six positive entries")
        if len(self.beta_season) not in (0, self.n_seasons - 1):
            raise InvalidConfig("beta_season needs one entry per non-reference season")
        for name in ("exposure_mean", "post_fraction"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")

    @property
    def index(self) -> sg.CellIndex:
        return sg.CellIndex.from_dims(self.n_teams, self.n_seasons)

    def sigma(self, group: str) -> float:
        return float(getattr(self, f"sigma_{group}"))

    def rho(self, group: str) -> float:
        return float(getattr(self, f"rho_{group}", 0.0))

    def active_config(self, **priors) -> ModelConfig:
        """Configuration whose random-effect blocks match the nonzero truth components."""
        on = {g: self.sigma(g) > 0 for g in ("ta", "ts", "jump", "step", "lay", "float", "rim", "fade")}
        return ModelConfig(**{f"use_{g}": v for g, v in on.items()}, **priors)

    # -- key=value format ----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "latent":
                for name in sorted(v):
                    arr = np.asarray(v[name], dtype=float)
                    shape = "x".join(str(n) for n in arr.shape)
                    lines.append(f"latent.{name}={shape}:" + ",".join(repr(float(t)) for t in arr.ravel()))
            elif isinstance(v, tuple):
                lines.append(f"{f.name}=" + ",".join(repr(float(t)) for t in v))
            elif isinstance(v, int):
                lines.append(f"{f.name}={v}")
            else:
                lines.append(f"{f.name}={float(v)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GroundTruth":
        kv = parse_kv(text)
        types = {f.name: f for f in fields(cls)}
        kwargs, latent = {}, {}
        for key, raw in kv.items():
            if key.startswith("latent."):
                shape, _, vals = raw.partition(":")
                dims = tuple(int(n) for n in shape.split("x")) if shape else ()
                arr = np.array([float(t) for t in vals.split(",") if t], dtype=float)
                latent[key[len("latent."):]] = arr.reshape(dims)
                continue
            if key not in types:
                raise InvalidConfig(f"unknown ground-truth key {key!r}")
            default = types[key].default
            if key in ("n_teams", "n_seasons"):
                kwargs[key] = int(raw)
            elif isinstance(default, tuple):
                kwargs[key] = tuple(float(t) for t in raw.split(",") if t.strip())
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs, latent=latent)


@dataclass
class Realization:
    """Everything drawn for one synthetic league."""

    truth: GroundTruth
    layout: LatentLayout
    x: np.ndarray
    eta: np.ndarray
    E_reg: np.ndarray
    E_post: np.ndarray
    regular: sg.CountsAndExposure
    post: sg.CountsAndExposure

    def block(self, name: str) -> np.ndarray:
        return self.layout.view(self.x, name)


def fixed_effects(truth: GroundTruth, layout: LatentLayout) -> np.ndarray:
    """Fixed-effect vector without the intercept (which is calibrated separately)."""
    beta = np.zeros(len(layout.fixed_labels))
    S = truth.n_seasons
    if truth.beta_season:
        beta[1:S] = truth.beta_season
    beta[S] = truth.beta_left
    beta[S + 1] = truth.beta_right
    shares = np.asarray(truth.shot_shares, dtype=float)
    beta[S + 2 :] = np.log(shares[1:] / shares[0])
    return beta


def realize(truth: GroundTruth, seed, count_seed=None) -> Realization:
    """Draw exposures, latent effects and both phases of counts.

    Effects and exposures use one stream, Poisson counts another, so a
    fixed ``seed`` with a different ``count_seed`` redraws only the counts.
    """
    effect_ss, count_ss = np.random.SeedSequence(seed).spawn(2)
    if count_seed is not None:
        count_ss = np.random.SeedSequence(count_seed)
    rng = np.random.default_rng(effect_ss)
    crng = np.random.default_rng(count_ss)

    index = truth.index
    layout, cons = assemble_layout(_ALL_BLOCKS, index)
    I, S = index.n_teams, index.n_seasons

    E_reg = np.maximum(rng.normal(truth.exposure_mean, truth.exposure_sd, size=(I, S)), 100.0)
    x = np.zeros(layout.n_latent)
    x[layout.block("fixed").slice] = fixed_effects(truth, layout)
    center = ConstraintCentering(cons)
    for name in layout.blocks:
        if name == "fixed":
            continue
        group = HYPER_GROUP[name]
        drawn = draw_block(rng, layout, name, truth.sigma(group), truth.rho(group))
        if name in truth.latent:
            vals = np.asarray(truth.latent[name], dtype=float).reshape(layout.block(name).shape)
        else:
            # only this block is nonzero, so centering touches nothing else
            tmp = np.zeros(layout.n_latent)
            tmp[layout.block(name).slice] = drawn.ravel()
            vals = center(tmp)[layout.block(name).slice]
        x[layout.block(name).slice] = np.ravel(vals)
    resid = np.max(np.abs(cons.A @ x)) if cons.n_rows else 0.0
    if resid > 1e-8:
        raise InvalidConfig(f"explicit latent effects violate the sum-to-zero constraints (residual {resid:.3g})")

    X = layout.design
    b0 = layout.block("fixed").start
    if np.isfinite(truth.beta0):
        x[b0] = truth.beta0
    else:
        x[b0] = 0.0
        rel = np.exp(X @ x) * E_reg[index.team, index.season]
        # expected attempts are linear in exp(beta0): solve the mean-total equation exactly
        x[b0] = np.log(truth.target_fga_mean * I * S / rel.sum())
    eta = X @ x

    E_post = truth.post_fraction * E_reg
    y_reg = crng.poisson(E_reg[index.team, index.season] * np.exp(eta))
    y_post = crng.poisson(E_post[index.team, index.season] * np.exp(eta))
    reg = sg.CountsAndExposure(index, y_reg, E_reg, "regular")
    post = sg.CountsAndExposure(index, y_post, E_post, "post")
    return Realization(truth, layout, x, eta, E_reg, E_post, reg, post)


def generate(truth: GroundTruth, seed, count_seed=None) -> tuple[sg.CountsAndExposure, sg.CountsAndExposure]:
    """Regular-season and post-season data for one synthetic league."""
    r = realize(truth, seed, count_seed)
    return r.regular, r.post
