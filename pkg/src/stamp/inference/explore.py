"""Hyperparameter posterior: mode search, curvature, and CCD / grid integration points."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ..errors import FactorizationFailure, NonConvergence, OptimizerFailure, OverflowGuard, SingularCorrelation
from ..lgm.layout import initial_theta, log_hyperprior
from .gaussian import LatentModel, log_marginal_laplace, newton_mode

log = logging.getLogger(__name__)

_FAILURES = (NonConvergence, OverflowGuard, FactorizationFailure, SingularCorrelation, FloatingPointError)

# base factorial size per dimension; extra columns are aliased onto interactions
_BASE_BITS = {1: 1, 2: 2, 3: 3, 4: 4, 5: 4, 6: 5, 7: 6, 8: 6, 9: 7, 10: 7, 11: 7}


@dataclass
class ExplorationPoint:
    theta: np.ndarray
    log_post: float
    weight: float
    mode: np.ndarray = field(repr=False)
    z: np.ndarray = field(default=None, repr=False)


@dataclass
class Exploration:
    points: list[ExplorationPoint]
    theta_mode: np.ndarray
    hessian: np.ndarray | None
    strategy: str
    n_evals: int

    @property
    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.points])

    @property
    def thetas(self) -> np.ndarray:
        return np.array([p.theta for p in self.points]).reshape(len(self.points), -1)


class HyperPosterior:
    """``log pi(theta | y)`` up to a constant, memoized, with warm-started Newton."""

    def __init__(self, model: LatentModel, max_stall: int = 2000):
        self.model = model
        self.layout = model.layout
        self._cache: dict[bytes, tuple[float, np.ndarray | None]] = {}
        self._warm: np.ndarray | None = None
        self.n_evals = 0
        self.best = -np.inf
        self.stall = 0
        self.max_stall = max_stall

    def evaluate(self, theta) -> tuple[float, np.ndarray | None]:
        """Return ``(log posterior, constrained latent mode)``; failures give ``(-inf, None)``."""
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key in self._cache:
            return self._cache[key]
        self.n_evals += 1
        try:
            prior = log_hyperprior(theta, self.layout)
            approx = newton_mode(self.model, theta, x0=self._warm)
            value = log_marginal_laplace(self.model, theta, approx) + prior
            if not np.isfinite(value):
                raise FloatingPointError("non-finite log posterior")
            self._warm = approx.mode_unconstrained
        except _FAILURES + (ValueError,) as exc:
            log.debug("theta=%s failed: %s", theta, exc)
            value, approx = -np.inf, None
        mode = None if approx is None else approx.mode
        self._cache[key] = (value, mode)
        if value > self.best + 1e-12:
            self.best = value
            self.stall = 0
        else:
            self.stall += 1
        return value, mode

    def __call__(self, theta) -> float:
        return self.evaluate(theta)[0]


def ccd_design(p: int, scale: float = 1.2) -> tuple[np.ndarray, np.ndarray]:
    """Central composite design in standardized coordinates, with integration weights.

    Non-centre points all lie on the sphere of radius ``scale * sqrt(p)``:
    two-level (fractional) factorial corners at ``+-scale`` and axial points
    at ``+-scale*sqrt(p)``. Weights integrate constants and ``|z|^2`` exactly
    under a standard normal: the centre gets ``1 - 1/scale^2`` and the rest
    share ``1/scale^2`` equally.
    """
    if p == 0:
        return np.zeros((1, 0)), np.ones(1)
    # for p = 1 the corners and the axial points coincide
    fact = _two_level_design(p) * scale if p > 1 else np.zeros((0, 1))
    axial = np.vstack([np.eye(p), -np.eye(p)]) * scale * np.sqrt(p)
    Z = np.vstack([np.zeros((1, p)), fact, axial])
    w = np.full(len(Z), 1.0 / (scale**2 * (len(Z) - 1)))
    w[0] = 1.0 - 1.0 / scale**2
    return Z, w


def _two_level_design(p: int) -> np.ndarray:
    b = _BASE_BITS.get(p, 8 if p <= 15 else 9)
    base = np.array(list(itertools.product((-1.0, 1.0), repeat=b)))
    if p == b:
        return base
    words = []
    # prefer interaction words of length >= 4 whose pairwise differences stay long
    for size in list(range(4, b + 1)) + [3, 2]:
        for T in itertools.combinations(range(b), size):
            T = frozenset(T)
            if all(len(T ^ U) >= 3 for U in words) or size < 4:
                if T not in words:
                    words.append(T)
            if len(words) == p - b:
                break
        if len(words) == p - b:
            break
    extra = [np.prod(base[:, sorted(T)], axis=1) for T in words]
    return np.column_stack([base] + extra)


def _fd_hessian(f, x, h):
    """Central differences on the diagonal, one-sided mixed differences off it.

    The mixed terms reuse the forward diagonal evaluations, costing
    ``p (p - 1) / 2`` extra calls instead of ``2 p (p - 1)``.
    """
    p = len(x)
    H = np.zeros((p, p))
    f0 = f(x)
    E = np.eye(p) * h
    fp = np.array([f(x + E[i]) for i in range(p)])
    fm = np.array([f(x - E[i]) for i in range(p)])
    for i in range(p):
        H[i, i] = (fp[i] - 2 * f0 + fm[i]) / h**2
        for j in range(i + 1, p):
            H[i, j] = H[j, i] = (f(x + E[i] + E[j]) - fp[i] - fp[j] + f0) / h**2
    return H


def _standardize(neg_hess, min_eig=0.1):
    """Columns map standardized z to theta offsets: theta = mode + B z."""
    neg_hess = 0.5 * (neg_hess + neg_hess.T)
    lam, vec = np.linalg.eigh(neg_hess)
    lam = np.maximum(np.where(np.isfinite(lam), lam, min_eig), min_eig)
    return vec / np.sqrt(lam)


def explore_hyperparameters(
    model: LatentModel,
    strategy: str = "ccd",
    theta_fixed=None,
    theta_start=None,
    ccd_scale: float = 1.2,
    fd_step: float = 0.02,
    grid_step: float = 0.75,
    grid_extent: float = 3.75,
    max_stall: int = 2000,
    xatol: float = 1e-2,
    simplex_step: float = 1.0,
    fatol: float = 1e-3,
) -> Exploration:
    """Locate the hyperparameter mode and build weighted integration points.

    ``strategy`` is ``"ccd"`` (default), ``"grid"`` (dense grid in
    standardized space, intended for p <= 2) or ``"auto"`` (grid when
    p <= 2, else CCD).
    ``theta_fixed`` skips the search and returns a single point of weight 1.
    """
    post = HyperPosterior(model, max_stall=max_stall)
    if theta_fixed is not None or model.layout.n_hyper == 0:
        theta = np.asarray(theta_fixed if theta_fixed is not None else np.zeros(0), dtype=float)
        value, mode = post.evaluate(theta)
        if mode is None:
            approx = newton_mode(model, theta)
            value, mode = log_marginal_laplace(model, theta, approx), approx.mode
        pt = ExplorationPoint(theta, value, 1.0, mode, np.zeros(len(theta)))
        return Exploration([pt], theta, None, "fixed", post.n_evals)

    p = model.layout.n_hyper
    if strategy == "auto":
        strategy = "grid" if p <= 2 else "ccd"
    if strategy not in ("ccd", "grid"):
        raise ValueError(f"unknown strategy {strategy!r}")

    start = initial_theta(model.layout) if theta_start is None else np.asarray(theta_start, dtype=float)

    def neg(t):
        v = post(t)
        if post.stall >= post.max_stall:
            raise OptimizerFailure(f"{post.max_stall} evaluations without improvement")
        return 1e300 if not np.isfinite(v) else -v

    if not np.isfinite(post(start)):
        raise OptimizerFailure("log posterior is not finite at the starting point")
    simplex = np.vstack([start] + [start + simplex_step * e for e in np.eye(p)])
    res = optimize.minimize(
        neg, start, method="Nelder-Mead",
        options=dict(initial_simplex=simplex, xatol=xatol, fatol=fatol, maxfev=200 * p + 400),
    )
    mode = np.asarray(res.x, dtype=float)
    mode_val = post(mode)

    H = _fd_hessian(lambda t: -post(t) if np.isfinite(post(t)) else 1e6, mode, fd_step)
    B = _standardize(H)

    if strategy == "ccd":
        Z, dw = ccd_design(p, ccd_scale)
    else:
        ticks = np.arange(-grid_extent, grid_extent + 1e-9, grid_step)
        Z = np.array(list(itertools.product(ticks, repeat=p)))
        dw = np.full(len(Z), np.exp(-0.5 * (Z**2).sum(axis=1)))

    points = []
    logw = []
    for z, w in zip(Z, dw):
        theta = mode + B @ z
        value, x_mode = post.evaluate(theta)
        if x_mode is None or not np.isfinite(value):
            continue
        points.append(ExplorationPoint(theta, value, 0.0, x_mode, z))
        logw.append(np.log(w) + (value - mode_val) + 0.5 * float(z @ z))
    if not points:
        raise OptimizerFailure("no integration point could be evaluated")
    logw = np.array(logw)
    wts = np.exp(logw - logw.max())
    wts /= wts.sum()
    for pt, w in zip(points, wts):
        pt.weight = float(w)
    return Exploration(points, mode, H, strategy, post.n_evals)
