"""Brute-force reference computations for tiny models.

Both oracles work on the null space of the sum-to-zero constraints: with
an orthonormal basis ``N`` of ``{x : A x = 0}``, the constrained prior of
``x = N t`` is ``t ~ N(0, (N' Q N)^{-1})``. Everything here is dense linear
algebra built straight from the layout and never touches the sparse
arrowhead machinery of the inference engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg, stats
from scipy.special import gammaln, logsumexp

from ..errors import EffectiveSampleSizeTooLow, NonConvergence, NotConverged
from ..lgm import priors
from ..lgm.layout import CORRELATED, HYPER_GROUP, fixed_precision, log_hyperprior, unpack_theta

LOG_2PI = float(np.log(2 * np.pi))
MIN_ESS = 1000.0
MAX_RHAT = 1.05


@dataclass
class OracleProblem:
    """Dense description of a latent Gaussian model.

    The prior precision is ``sum_j coefs(theta)[j] * terms[j]``; ``lik`` is
    any object with ``y`` and either Poisson ``log_E`` or Gaussian
    ``offset``/``sd`` attributes (the engine's likelihood classes qualify).
    """

    X: np.ndarray
    lik: object
    A: np.ndarray
    terms: list
    coefs: Callable[[np.ndarray], np.ndarray]
    log_hyperprior: Callable[[np.ndarray], float] = field(default=lambda theta: 0.0)
    hyper_names: tuple = ()
    latent_names: tuple = ()
    # internal -> natural scale (sigma, rho) along the last axis, with the matching names
    natural: Callable[[np.ndarray], np.ndarray] | None = None
    natural_names: tuple = ()

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n = self.X.shape[1]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.N = linalg.null_space(self.A) if self.A.shape[0] else np.eye(n)
        self.XN = self.X @ self.N
        self.terms_t = np.array([self.N.T @ np.asarray(T, dtype=float) @ self.N for T in self.terms])

    @property
    def n_latent(self) -> int:
        return self.X.shape[1]

    @property
    def dim(self) -> int:
        return self.N.shape[1]

    @classmethod
    def from_model(cls, model) -> "OracleProblem":
        """Rebuild the prior from the layout of an engine ``LatentModel``."""
        lay = model.layout
        S = lay.index.n_seasons
        n = lay.n_latent
        terms, keys = [], []
        for name, b in lay.blocks.items():
            D = np.zeros((n, n))
            D[b.slice, b.slice] = np.eye(b.size)
            group = "fixed" if name == "fixed" else HYPER_GROUP[name]
            terms.append(D)
            keys.append((group, "diag"))
            if name in CORRELATED and S > 1:
                J = np.zeros((n, n))
                J[b.slice, b.slice] = np.kron(np.eye(b.size // S), np.ones((S, S)))
                terms.append(J)
                keys.append((group, "J"))
        fp = fixed_precision(lay.config)

        def coefs(theta):
            pars = unpack_theta(theta, lay)
            out = np.empty(len(keys))
            for j, (group, kind) in enumerate(keys):
                if group == "fixed":
                    out[j] = fp
                    continue
                g = pars[group]
                a, b = priors.equicorr_coeffs(S, g["rho"]) if S > 1 and g["rho"] != 0.0 else (1.0, 0.0)
                out[j] = g["tau"] * (a if kind == "diag" else b)
            return out

        kinds = [h.kind for h in lay.hyper]

        def natural(theta):
            theta = np.asarray(theta, dtype=float)
            out = np.empty_like(theta)
            for j, kind in enumerate(kinds):
                out[..., j] = np.exp(-0.5 * theta[..., j]) if kind == "log_tau" else \
                    priors.rho_from_internal(theta[..., j], S)
            return out

        hnames = tuple(f"theta:{h.name}" for h in lay.hyper)
        nnames = tuple(("sigma_" if h.kind == "log_tau" else "rho_") + h.group for h in lay.hyper)
        return cls(model.X.toarray(), model.lik, model.constraints.A.toarray(), terms, coefs,
                   lambda theta: log_hyperprior(theta, lay), hnames, tuple(_latent_labels(lay)), natural, nnames)

    # -- densities in null-space coordinates -----------------------------------------

    def precision_t(self, theta) -> np.ndarray:
        return np.tensordot(np.asarray(self.coefs(theta), dtype=float), self.terms_t, axes=1)

    def loglik(self, t: np.ndarray) -> np.ndarray:
        """Log-likelihood of each row of ``t`` (or of a single vector)."""
        return batch_loglik(self.lik, np.asarray(t) @ self.XN.T)

    def log_prior_t(self, t: np.ndarray, P: np.ndarray) -> np.ndarray:
        L = linalg.cholesky(P, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        quad = np.sum((np.asarray(t) @ L) ** 2, axis=-1)
        return 0.5 * logdet - 0.5 * self.dim * LOG_2PI - 0.5 * quad

    def mode(self, theta, tol: float = 1e-10, max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
        """Mode of ``t`` given theta and the negative Hessian there (damped Newton)."""
        P = self.precision_t(theta)
        t = np.zeros(self.dim)
        t = _intercept_start(self, t)
        f = -self.loglik(t) + 0.5 * t @ P @ t
        for _ in range(max_iter):
            g, w = _lik_derivs(self.lik, self.XN @ t)
            grad = self.XN.T @ g - P @ t
            H = self.XN.T @ (w[:, None] * self.XN) + P
            step = linalg.solve(H, grad, assume_a="pos")
            s = 1.0
            while True:
                t_new = t + s * step
                f_new = -self.loglik(t_new) + 0.5 * t_new @ P @ t_new
                if np.isfinite(f_new) and f_new <= f + 1e-12 * abs(f):
                    break
                s *= 0.5
                if s < 1e-12:
                    raise NonConvergence("oracle Newton line search failed", float(np.linalg.norm(grad)))
            t, f = t_new, f_new
            if np.max(np.abs(s * step)) < tol:
                break
        else:
            raise NonConvergence("oracle Newton did not converge", float(np.linalg.norm(grad)))
        g, w = _lik_derivs(self.lik, self.XN @ t)
        return t, self.XN.T @ (w[:, None] * self.XN) + P


def _latent_labels(layout) -> list[str]:
    out = list(layout.fixed_labels)
    for name, b in layout.blocks.items():
        if name != "fixed":
            out += [f"{name}[{i}]" for i in range(b.size)]
    return out


def _intercept_start(problem: OracleProblem, t: np.ndarray) -> np.ndarray:
    # starting from zero is fine for the Gaussian case; for Poisson move the mean rate to the data
    lik = problem.lik
    if not hasattr(lik, "log_E"):
        return t
    c = np.log(max(lik.y.sum(), 0.5) / np.exp(lik.log_E).sum())
    target = np.full(problem.X.shape[0], c)
    sol, *_ = np.linalg.lstsq(problem.XN, target, rcond=None)
    return sol


def batch_loglik(lik, eta: np.ndarray) -> np.ndarray:
    """Full log-likelihood (constants included) along the last axis of ``eta``."""
    y = np.asarray(lik.y, dtype=float)
    if hasattr(lik, "log_E"):
        const = np.sum(y * lik.log_E - gammaln(y + 1.0))
        return eta @ y - np.exp(lik.log_E + eta).sum(axis=-1) + const
    if hasattr(lik, "sd"):
        r = y - lik.offset - eta
        return -0.5 * np.sum(r**2, axis=-1) / lik.sd**2 - 0.5 * len(y) * np.log(2 * np.pi * lik.sd**2)
    raise TypeError(f"unsupported likelihood {type(lik).__name__}")


def _lik_derivs(lik, eta):
    if hasattr(lik, "log_E"):
        mu = np.exp(lik.log_E + eta)
        return lik.y - mu, mu
    r = lik.y - lik.offset - eta
    return r / lik.sd**2, np.full(r.shape, 1.0 / lik.sd**2)


# -- importance sampling -------------------------------------------------------------------


class ISResult(NamedTuple):
    estimate: float
    se: float
    ess: float
    n_draws: int


def oracle_is_marginal(model, theta, n_draws: int = 1_000_000, seed=0, df: float = 10.0,
                       batch: int = 100_000, max_latent: int = 30, min_ess: float = MIN_ESS) -> ISResult:
    """Importance-sampling estimate of ``log pi(y | theta)`` and its Monte-Carlo standard error.

    The proposal is a multivariate t (``df`` degrees of freedom) centred at
    the constrained mode with the Gaussian-approximation covariance; the
    heavier tails keep the weights bounded. Raises
    ``EffectiveSampleSizeTooLow`` when the effective sample size falls
    under ``min_ess``.
    """
    prob = model if isinstance(model, OracleProblem) else OracleProblem.from_model(model)
    if prob.n_latent > max_latent:
        raise ValueError(f"the oracle is for tiny models (n_latent={prob.n_latent} > {max_latent})")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    t_hat, H = prob.mode(theta)
    P = prob.precision_t(theta)
    proposal = stats.multivariate_t(loc=t_hat, shape=linalg.inv(H), df=df)
    rng = np.random.default_rng(seed)
    chunks = []
    done = 0
    while done < n_draws:
        m = min(batch, n_draws - done)
        t = proposal.rvs(size=m, random_state=rng).reshape(m, prob.dim)
        chunks.append(prob.loglik(t) + prob.log_prior_t(t, P) - proposal.logpdf(t).reshape(m))
        done += m
    lw = np.concatenate(chunks)
    lse = logsumexp(lw)
    estimate = float(lse - np.log(n_draws))
    w = np.exp(lw - lw.max())
    se = float(np.std(w) / (np.mean(w) * np.sqrt(n_draws)))
    ess = float(np.exp(2 * lse - logsumexp(2 * lw)))
    if ess < min_ess:
        raise EffectiveSampleSizeTooLow(f"importance sampling ESS {ess:.0f} < {min_ess:.0f}", ess=ess)
    return ISResult(estimate, se, ess, n_draws)


def gaussian_marginal_exact(model, theta) -> float:
    """Closed-form ``log pi(y | theta)`` for a Gaussian likelihood."""
    prob = model if isinstance(model, OracleProblem) else OracleProblem.from_model(model)
    lik = prob.lik
    P = prob.precision_t(np.atleast_1d(np.asarray(theta, dtype=float)))
    cov = prob.XN @ linalg.solve(P, prob.XN.T, assume_a="pos") + lik.sd**2 * np.eye(len(lik.y))
    return float(stats.multivariate_normal(mean=np.asarray(lik.offset, dtype=float), cov=cov).logpdf(lik.y))


def gaussian_posterior_exact(model, theta) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form posterior mean and covariance of ``x`` for a Gaussian likelihood."""
    prob = model if isinstance(model, OracleProblem) else OracleProblem.from_model(model)
    t_hat, H = prob.mode(np.atleast_1d(np.asarray(theta, dtype=float)))
    return prob.N @ t_hat, prob.N @ linalg.inv(H) @ prob.N.T


# -- adaptive random-walk Metropolis --------------------------------------------------------


@dataclass
class MCMCResult:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    mcse: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray
    acceptance: float
    draws: np.ndarray = field(repr=False)

    def __getitem__(self, name: str) -> tuple[float, float, float]:
        j = self.names.index(name)
        return float(self.mean[j]), float(self.sd[j]), float(self.mcse[j])

    def summary(self) -> dict[str, dict[str, float]]:
        return {n: {"mean": float(m), "sd": float(s), "mcse": float(e), "rhat": float(r)}
                for n, m, s, e, r in zip(self.names, self.mean, self.sd, self.mcse, self.rhat)}


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-R-hat per parameter for draws of shape ``(chains, iterations, params)``."""
    c, n, _ = chains.shape
    h = n // 2
    x = np.concatenate([chains[:, :h], chains[:, h : 2 * h]], axis=0)
    m = x.mean(axis=1)
    B = h * m.var(axis=0, ddof=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    var = (h - 1) / h * W + B / h
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(W > 0, np.sqrt(var / W), 1.0)


def effective_size(chains: np.ndarray) -> np.ndarray:
    """Multi-chain effective sample size (Geyer initial-positive-sequence truncation)."""
    c, n, p = chains.shape
    x = chains - chains.mean(axis=1, keepdims=True)
    f = np.fft.rfft(x, n=2 * n, axis=1)
    acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n] / n
    W = chains.var(axis=1, ddof=1).mean(axis=0)
    var = (n - 1) / n * W + chains.mean(axis=1).var(axis=0, ddof=1) if c > 1 else W
    rho = 1.0 - (W - acov.mean(axis=0)) / np.where(var > 0, var, 1.0)
    rho[0] = 1.0
    out = np.empty(p)
    for j in range(p):
        s, k = 0.0, 0
        while k + 1 < n:
            pair = rho[k, j] + rho[k + 1, j]
            if pair < 0:
                break
            s += pair
            k += 2
        out[j] = c * n / max(2 * s - 1.0, 1.0 / np.log10(max(c * n, 10)))
    return out


def oracle_mcmc_means(model, n_iter: int = 40_000, seed=0, n_chains: int = 4, burn: float = 0.5,
                      adapt_every: int = 200, theta_start=None, theta_fixed=None, max_latent: int = 200,
                      max_rhat: float = MAX_RHAT, check: bool = True) -> MCMCResult:
    """Posterior means and sds of the latent field and hyperparameters by adaptive Metropolis.

    The random walk runs jointly on the constraint null-space coordinates
    and the internal hyperparameters (only the former when ``theta_fixed``
    is given), so every proposal satisfies the sum-to-zero constraints
    exactly. The proposal covariance is learned from the chain history
    (scaled by ``2.38^2 / d``) during burn-in and then frozen. Raises
    ``NotConverged`` if any split-R-hat exceeds ``max_rhat``.
    """
    prob = model if isinstance(model, OracleProblem) else OracleProblem.from_model(model)
    if prob.n_latent > max_latent:
        raise ValueError(f"the oracle is for small models (n_latent={prob.n_latent} > {max_latent})")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    k = prob.dim
    if theta_fixed is not None:
        theta0 = np.atleast_1d(np.asarray(theta_fixed, dtype=float))
        p = 0
        P_fixed = prob.precision_t(theta0)
    else:
        p = len(prob.hyper_names) if prob.hyper_names else len(np.atleast_1d(theta_start))
        theta0 = np.zeros(p) if theta_start is None else np.asarray(theta_start, dtype=float)
    d = k + p

    def log_post(z):
        t = z[:, :k]
        with np.errstate(over="ignore", invalid="ignore"):
            ll = prob.loglik(t)
        if p == 0:
            out = prob.log_prior_t(t, P_fixed)
        else:
            out = np.empty(len(z))
            for c in range(len(z)):
                theta = z[c, k:]
                try:
                    out[c] = prob.log_prior_t(t[c], prob.precision_t(theta)) + prob.log_hyperprior(theta)
                except (linalg.LinAlgError, ValueError, FloatingPointError):
                    out[c] = -np.inf
        return np.where(np.isfinite(out) & np.isfinite(ll), out + ll, -np.inf)

    # start every chain from an overdispersed draw around the conditional mode at theta0
    t_hat, H = prob.mode(theta0)
    Hinv = linalg.inv(H)
    cov = linalg.block_diag(Hinv, 0.25 * np.eye(p)) if p else Hinv
    z = np.column_stack([rng.multivariate_normal(t_hat, 4.0 * Hinv, size=n_chains),
                         (theta0 + rng.normal(0.0, 1.0, size=(n_chains, p))) if p else np.zeros((n_chains, 0))])
    lp = log_post(z)
    scale = 2.38**2 / d
    n_burn = int(burn * n_iter)
    n_keep = n_iter - n_burn
    draws = np.empty((n_chains, n_keep, d))
    hist = []
    accepted = 0
    L = linalg.cholesky(scale * cov + 1e-12 * np.eye(d), lower=True)
    log_scale = 0.0
    for it in range(n_iter):
        prop = z + np.exp(log_scale) * (rng.standard_normal((n_chains, d)) @ L.T)
        lp_prop = log_post(prop)
        acc = np.log(rng.random(n_chains)) < lp_prop - lp
        z[acc], lp[acc] = prop[acc], lp_prop[acc]
        if it < n_burn:
            hist.append(z.copy())
            # keep the acceptance rate near the usual 0.234 target while adapting
            log_scale += (acc.mean() - 0.234) / np.sqrt(it + 1.0)
            if (it + 1) % adapt_every == 0 and it + 1 >= 2 * adapt_every:
                H_ = np.concatenate(hist[len(hist) // 2 :])
                emp = np.cov(H_, rowvar=False).reshape(d, d)
                L = linalg.cholesky(scale * emp + 1e-10 * np.eye(d), lower=True)
                log_scale = 0.0
        else:
            draws[:, it - n_burn] = z
            accepted += int(acc.sum())
    x_draws = draws[:, :, :k] @ prob.N.T
    theta_draws = draws[:, :, k:]
    hn = (tuple(prob.hyper_names) or tuple(f"theta[{j}]" for j in range(p))) if p else ()
    if prob.natural is not None and p:
        nat_draws, sn = prob.natural(theta_draws), tuple(prob.natural_names)
    else:
        nat_draws, sn = np.zeros(theta_draws.shape[:2] + (0,)), ()
    full = np.concatenate([x_draws, theta_draws, nat_draws], axis=2)
    ln = tuple(prob.latent_names) or tuple(f"x[{j}]" for j in range(prob.n_latent))
    names = ln + hn + sn
    flat = full.reshape(-1, full.shape[2])
    # constrained directions of x are exactly zero: report R-hat 1 there
    rhat = split_rhat(full)
    ess = effective_size(full)
    sd = flat.std(axis=0, ddof=1)
    res = MCMCResult(names, flat.mean(axis=0), sd, sd / np.sqrt(ess), rhat, ess,
                     accepted / (n_chains * n_keep), flat)
    live = sd > 1e-12 * max(1.0, float(np.max(sd)))
    worst = float(np.max(rhat[live])) if np.any(live) else 1.0
    if check and worst > max_rhat:
        raise NotConverged(f"split R-hat {worst:.3f} > {max_rhat}", rhat=worst)
    return res
