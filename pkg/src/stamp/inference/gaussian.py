"""Constrained Gaussian approximation of the latent field at fixed hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.special import gammaln

from ..errors import FactorizationFailure, NonConvergence, OverflowGuard
from ..lgm.layout import CORRELATED, HYPER_GROUP, ConstraintSet, LatentLayout, fixed_precision, unpack_theta
from ..lgm import priors
from ..shotgrid import CountsAndExposure
from .arrow import ArrowCholesky, ArrowStructure

ETA_MAX = 30.0
CORRELATED_GROUPS = {HYPER_GROUP[b] for b in CORRELATED}


class PoissonLikelihood:
    """``y_c ~ Poisson(E_c exp(eta_c))`` over cells with positive exposure."""

    def __init__(self, y, log_E):
        self.y = np.asarray(y, dtype=float)
        self.log_E = np.asarray(log_E, dtype=float)
        self.const = float(np.sum(self.y * self.log_E - gammaln(self.y + 1.0)))

    def terms(self, eta):
        """(log-likelihood, d/d eta, -d2/d eta2) without checking overflow."""
        mu = np.exp(self.log_E + eta)
        ll = float(np.sum(self.y * eta - mu)) + self.const
        return ll, self.y - mu, mu

    def check(self, eta):
        m = float(np.max(eta)) if eta.size else 0.0
        if m > ETA_MAX:
            raise OverflowGuard(f"linear predictor reached {m:.3g} > {ETA_MAX}")

    def initial_intercept(self) -> float:
        tot = self.y.sum()
        return float(np.log(max(tot, 0.5) / np.exp(self.log_E).sum()))


class GaussianLikelihood:
    """Quadratic surrogate ``y_c ~ N(offset_c + eta_c, sd^2)``; Newton is exact on it."""

    def __init__(self, y, offset=0.0, sd=1.0):
        self.y = np.asarray(y, dtype=float)
        self.offset = np.broadcast_to(np.asarray(offset, dtype=float), self.y.shape)
        self.sd = float(sd)
        self.const = -0.5 * len(self.y) * np.log(2 * np.pi * self.sd**2)

    def terms(self, eta):
        r = self.y - self.offset - eta
        ll = float(-0.5 * np.sum(r**2) / self.sd**2) + self.const
        return ll, r / self.sd**2, np.full(r.shape, 1.0 / self.sd**2)

    def check(self, eta):
        pass

    def initial_intercept(self) -> float:
        return 0.0


class LatentModel:
    """Layout + constraints + likelihood, with cached structure for fast refits."""

    def __init__(self, layout: LatentLayout, constraints: ConstraintSet, data: CountsAndExposure | None = None,
                 likelihood=None, cells=None):
        self.layout = layout
        self.constraints = constraints
        self.data = data
        if likelihood is None:
            if data is None:
                raise ValueError("need data or an explicit likelihood")
            data.check_exposure()
            E = data.cell_exposure
            active = np.flatnonzero(E > 0)
            likelihood = PoissonLikelihood(data.y[active], np.log(E[active]))
            cells = active
        if cells is None:
            cells = np.arange(layout.index.n_cells)
        self.cells = np.asarray(cells)
        self.lik = likelihood
        self.X = layout.design[self.cells]
        self.A = constraints.A.tocsr()
        self.At = self.A.T.toarray()
        self.n = layout.n_latent
        self.struct = ArrowStructure(layout.owner_team())
        self._scatter = self.struct.scatter_operator(self.X)
        self._prior_terms, self._term_keys = self._prior_patterns()
        self._gram_terms = self._constraint_gram_patterns()

    # -- prior precision -------------------------------------------------------------

    def _prior_patterns(self):
        lay, st = self.layout, self.struct
        S = lay.index.n_seasons
        cols, keys = [], []

        def add(p, q, key):
            dest = st.flat(p, q)
            cols.append(np.bincount(dest, minlength=st.size + 1).astype(float))
            keys.append(key)

        for name, b in lay.blocks.items():
            idx = np.arange(b.start, b.stop)
            if name == "fixed":
                add(idx, idx, ("fixed", None))
                continue
            add(idx, idx, (HYPER_GROUP[name], "diag"))
            if name in CORRELATED and S > 1:
                g = idx.reshape(-1, S)
                p = np.repeat(g, S, axis=1).ravel()
                q = np.tile(g, (1, S)).ravel()
                add(p, q, (HYPER_GROUP[name], "J"))
        P = sparse.csr_matrix(np.column_stack(cols))
        return P, keys

    def prior_coefs(self, theta) -> np.ndarray:
        pars = unpack_theta(theta, self.layout)
        S = self.layout.index.n_seasons
        out = np.empty(len(self._term_keys))
        for j, (group, kind) in enumerate(self._term_keys):
            if group == "fixed":
                out[j] = fixed_precision(self.layout.config)
                continue
            g = pars[group]
            a, b = priors.equicorr_coeffs(S, g["rho"]) if group in CORRELATED_GROUPS else (1.0, 0.0)
            out[j] = g["tau"] * (a if kind == "diag" else b)
        return out

    def prior_buf(self, theta) -> np.ndarray:
        return self._prior_terms @ self.prior_coefs(theta)

    def _constraint_gram_patterns(self):
        """Per block, ``A_b A_b'`` and ``A_b (I kron J_S) A_b'`` for closed-form ``A Q^-1 A'``."""
        S = self.layout.index.n_seasons
        out = []
        for name, b in self.layout.blocks.items():
            if name == "fixed":
                continue
            Ab = self.A[:, b.start : b.stop]
            P = (Ab @ Ab.T).toarray()
            if name in CORRELATED and S > 1:
                K = sparse.kron(sparse.identity(b.size // S), np.ones((S, S)), format="csr")
                Jp = (Ab @ K @ Ab.T).toarray()
            else:
                Jp = None
            out.append((name, b.size, P, Jp))
        return out

    def prior_logdet_parts(self, theta) -> tuple[float, np.ndarray]:
        """``log det Q`` and ``A Q^-1 A'`` from the block structure, without factorizing Q."""
        pars = unpack_theta(theta, self.layout)
        S = self.layout.index.n_seasons
        nf = self.layout.block("fixed").size
        logdet = nf * np.log(fixed_precision(self.layout.config))
        gram = np.zeros((self.A.shape[0], self.A.shape[0]))
        for name, size, P, Jp in self._gram_terms:
            g = pars[HYPER_GROUP[name]]
            logdet += size * np.log(g["tau"])
            if Jp is None:
                gram += P / g["tau"]
            else:
                rho = g["rho"]
                logdet -= (size // S) * priors.equicorr_logdet(S, rho)
                gram += ((1.0 - rho) * P + rho * Jp) / g["tau"]
        return float(logdet), gram

    # -- likelihood pieces -----------------------------------------------------------

    def eta(self, x):
        return self.X @ x

    def initial_x(self) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.layout.block("fixed").start] = self.lik.initial_intercept()
        return x

    def neg_log_posterior(self, x, theta=None, Qbuf=None):
        """Value, gradient and per-cell curvature of the unnormalized negative log posterior."""
        if Qbuf is None:
            Qbuf = self.prior_buf(theta)
        eta = self.eta(x)
        self.lik.check(eta)
        ll, dll, curv = self.lik.terms(eta)
        Qx = self.struct.matvec(Qbuf, x)
        value = 0.5 * float(x @ Qx) - ll
        grad = Qx - self.X.T @ dll
        return value, grad, curv

    def hessian_buf(self, Qbuf, curv) -> np.ndarray:
        return Qbuf + self._scatter @ curv

    def factor(self, buf) -> ArrowCholesky:
        return ArrowCholesky(self.struct, buf)

    def loglik(self, x) -> float:
        return self.lik.terms(self.eta(x))[0]


@dataclass
class GaussianApprox:
    theta: np.ndarray
    mode: np.ndarray
    mode_unconstrained: np.ndarray
    factor: ArrowCholesky = field(repr=False)
    V: np.ndarray = field(repr=False)
    AV_chol: np.ndarray = field(repr=False)
    A: sparse.csr_matrix = field(repr=False)
    grad_unconstrained: float = 0.0
    grad_start: float = 0.0
    iterations: int = 0
    log_marginal: float = float("nan")

    def project(self, x: np.ndarray) -> np.ndarray:
        """Conditioning by kriging: ``x - H^{-1}A'(A H^{-1} A')^{-1} A x``."""
        if self.V.shape[1] == 0:
            return np.array(x, dtype=float, copy=True)
        r = self.A @ x
        return x - self.V @ linalg.cho_solve((self.AV_chol, True), r, check_finite=False)

    def sample(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals ``z`` (n, m) to constrained draws (n, m)."""
        x = self.mode[:, None] + self.factor.solve_Lt(z)
        return self.project(x)

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.A @ self.mode))) if self.A.shape[0] else 0.0


def _kriging_parts(model: LatentModel, F: ArrowCholesky):
    if model.At.shape[1] == 0:
        return np.zeros((model.n, 0)), np.zeros((0, 0))
    V = F.solve(model.At)
    AV = model.A @ V
    AV = 0.5 * (AV + AV.T)
    try:
        L = np.linalg.cholesky(AV)
    except np.linalg.LinAlgError:
        raise FactorizationFailure("constraint matrix A H^-1 A' is singular; A lacks full row rank") from None
    return V, L


def _line_search(model, Qbuf, x, f, g, step, max_halvings):
    slope = float(g @ step)
    t = 1.0
    for _ in range(max_halvings + 1):
        xn = x + t * step
        try:
            fn, gn, cn = model.neg_log_posterior(xn, Qbuf=Qbuf)
        except OverflowGuard:
            fn = np.inf
        if np.isfinite(fn) and (fn <= f + 1e-4 * t * slope or fn - f <= 1e-12 * (1.0 + abs(f))):
            return xn, fn, gn, cn, t
        t *= 0.5
    return None


def newton_mode(model: LatentModel, theta, x0=None, tol: float = 1e-8, max_iter: int = 100,
                max_halvings: int = 50, refine: bool = True) -> GaussianApprox:
    """Damped Newton to the unconstrained mode, then kriging onto ``A x = 0``.

    With ``refine`` the projected point is polished by Newton steps restricted
    to the constraint subspace, which makes it the exact constrained mode for
    non-Gaussian likelihoods as well.
    """
    theta = np.asarray(theta, dtype=float)
    Qbuf = model.prior_buf(theta)
    x = model.initial_x() if x0 is None else np.array(x0, dtype=float)
    try:
        f, g, curv = model.neg_log_posterior(x, Qbuf=Qbuf)
    except OverflowGuard:
        x = model.initial_x()
        f, g, curv = model.neg_log_posterior(x, Qbuf=Qbuf)
    g0 = float(np.max(np.abs(g)))
    thr = tol * (1.0 + g0)
    it = 0
    F = None
    while float(np.max(np.abs(g))) > thr:
        if it >= max_iter:
            raise NonConvergence(f"Newton did not converge in {max_iter} iterations", float(np.max(np.abs(g))))
        F = model.factor(model.hessian_buf(Qbuf, curv))
        step = -F.solve(g)
        res = _line_search(model, Qbuf, x, f, g, step, max_halvings)
        if res is None:
            raise NonConvergence("line search failed", float(np.max(np.abs(g))))
        x, f, g, curv, _ = res
        it += 1
    x_unc = x.copy()
    g_unc = float(np.max(np.abs(g)))

    # any SPD metric gives an exact projection; the last Newton factor is close enough
    # to the mode that refinement below only has to remove a small remainder
    if F is None or not refine:
        F = model.factor(model.hessian_buf(Qbuf, curv))
    V, L = _kriging_parts(model, F)

    def proj(v):
        if V.shape[1] == 0:
            return v
        return v - V @ linalg.cho_solve((L, True), model.A @ v, check_finite=False)

    x = proj(x)
    if refine and V.shape[1]:
        f, g, curv = model.neg_log_posterior(x, Qbuf=Qbuf)
        for _ in range(max_iter):
            F = model.factor(model.hessian_buf(Qbuf, curv))
            V, L = _kriging_parts(model, F)
            step = proj(-F.solve(g))
            size = float(np.max(np.abs(step)))
            scale = 1.0 + float(np.max(np.abs(x)))
            if size <= 1e-10 * scale:
                break
            res = _line_search(model, Qbuf, x, f, g, step, max_halvings)
            if res is None:
                break
            x, f, g, curv, t = res
            x = proj(x)
            it += 1
            # a step this small moves the curvature negligibly; keep the current factor
            if t * size <= 1e-6 * scale:
                break
        else:
            raise NonConvergence("constrained refinement did not converge", size)
        x = proj(x)
    return GaussianApprox(theta, x, x_unc, F, V, L, model.A, g_unc, g0, it)


def gaussian_at(model: LatentModel, theta, mode) -> GaussianApprox:
    """Rebuild the Gaussian approximation around a stored constrained mode."""
    Qbuf = model.prior_buf(theta)
    _, _, curv = model.neg_log_posterior(mode, Qbuf=Qbuf)
    F = model.factor(model.hessian_buf(Qbuf, curv))
    V, L = _kriging_parts(model, F)
    approx = GaussianApprox(np.asarray(theta, float), np.asarray(mode, float), np.asarray(mode, float), F, V, L, model.A)
    approx.mode = approx.project(approx.mode)
    return approx


def log_marginal_laplace(model: LatentModel, theta, approx: GaussianApprox | None = None, **newton_kw) -> float:
    """Laplace approximation of ``log p(y | theta)`` with linear-constraint corrections.

        log p(y|x*) + log pi_c(x*|theta) - log pi_G,c(x*|y,theta)
          = log p(y|x*) + 1/2 log|Q| - 1/2 x*'Q x* + 1/2 log|A Q^-1 A'|
            - 1/2 log|H| - 1/2 log|A H^-1 A'|
    """
    if approx is None:
        approx = newton_mode(model, theta, **newton_kw)
    x = approx.mode
    Qbuf = model.prior_buf(theta)
    quad = float(x @ model.struct.matvec(Qbuf, x))
    ld_Q, gram = model.prior_logdet_parts(theta)
    ld_AQA = 2.0 * float(np.log(np.diag(np.linalg.cholesky(gram))).sum()) if gram.size else 0.0
    ld_AHA = 2.0 * float(np.log(np.diag(approx.AV_chol)).sum()) if approx.AV_chol.size else 0.0
    value = model.loglik(x) + 0.5 * ld_Q - 0.5 * quad + 0.5 * ld_AQA - 0.5 * approx.factor.logdet - 0.5 * ld_AHA
    approx.log_marginal = float(value)
    return float(value)
