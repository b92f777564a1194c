import math

import numpy as np
import pytest
from conftest import tiny_model
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from stamp import shotgrid as sg
from stamp.errors import FactorizationFailure
from stamp.inference import GaussianLikelihood, LatentModel, PoissonLikelihood, log_marginal_laplace, newton_mode
from stamp.inference.arrow import ArrowCholesky, ArrowStructure
from stamp.lgm.config import FULL_CORE, MINIMAL, ModelConfig
from stamp.lgm.layout import ConstraintSet, assemble_layout, initial_theta, prior_precision
from stamp.synth import OracleProblem, gaussian_marginal_exact, gaussian_posterior_exact

TS_ONLY = ModelConfig(use_ta=False, use_jump=False, use_step=False)


@pytest.fixture(scope="module")
def core_model():
    return tiny_model(3, 2, FULL_CORE, seed=4, scale=0.1)


def _theta(model, rng):
    return initial_theta(model.layout) + rng.normal(0, 0.3, model.layout.n_hyper)


# -- arrowhead factorization ----------------------------------------------------------------------


def _random_arrow(rng, I, nb, ng):
    owner = np.concatenate([np.repeat(np.arange(I), nb), -np.ones(ng, int)])
    rng.shuffle(owner)
    n = len(owner)
    M = np.zeros((n, n))
    for i in range(I):
        idx = np.flatnonzero(owner == i)
        M[np.ix_(idx, idx)] = rng.normal(size=(nb, nb))
    g = np.flatnonzero(owner < 0)
    M[g, :] = rng.normal(size=(ng, n))
    M = M @ M.T + n * np.eye(n)
    # restore the exact arrow pattern: team-to-team blocks must be empty
    for i in range(I):
        for j in range(I):
            if i != j:
                M[np.ix_(owner == i, owner == j)] = 0.0
    M += n * np.eye(n)
    return owner, M


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_arrow_cholesky_matches_dense(I, nb, ng, seed):
    rng = np.random.default_rng(seed)
    owner, M = _random_arrow(rng, I, nb, ng)
    if not np.all(np.linalg.eigvalsh(M) > 0):
        return
    st_ = ArrowStructure(owner)
    from scipy import sparse

    buf = st_.from_sparse(sparse.csr_matrix(M))
    np.testing.assert_allclose(st_.to_dense(buf), M, atol=1e-12)
    F = ArrowCholesky(st_, buf)
    assert abs(F.logdet - np.linalg.slogdet(M)[1]) < 1e-9 * len(M)
    b = rng.normal(size=(len(M), 3))
    np.testing.assert_allclose(F.solve(b), np.linalg.solve(M, b), atol=1e-10)
    np.testing.assert_allclose(F.solve(b[:, 0]), np.linalg.solve(M, b[:, 0]), atol=1e-10)
    # L^-T L^-1 = M^-1
    np.testing.assert_allclose(F.solve_Lt(F.solve_L(b)), np.linalg.solve(M, b), atol=1e-10)
    np.testing.assert_allclose(st_.matvec(buf, b[:, 0]), M @ b[:, 0], atol=1e-10)


def test_arrow_rejects_indefinite():
    owner = np.array([0, 0, -1])
    M = np.diag([1.0, -1.0, 1.0])
    st_ = ArrowStructure(owner)
    from scipy import sparse

    with pytest.raises(FactorizationFailure):
        ArrowCholesky(st_, st_.from_sparse(sparse.csr_matrix(M)))


def test_model_hessian_buffer_matches_dense(core_model, rng):
    m = core_model
    theta = _theta(m, rng)
    Q = prior_precision(theta, m.layout).toarray()
    np.testing.assert_allclose(m.struct.to_dense(m.prior_buf(theta)), Q, atol=1e-12)
    x = rng.normal(0, 0.1, m.n)
    _, _, curv = m.neg_log_posterior(x, theta)
    X = m.X.toarray()
    H = Q + X.T @ (curv[:, None] * X)
    np.testing.assert_allclose(m.struct.to_dense(m.hessian_buf(m.prior_buf(theta), curv)), H, rtol=1e-12, atol=1e-9)


def test_closed_form_prior_logdet_and_gram(core_model, rng):
    m = core_model
    theta = _theta(m, rng)
    Q = prior_precision(theta, m.layout).toarray()
    ld, gram = m.prior_logdet_parts(theta)
    assert abs(ld - np.linalg.slogdet(Q)[1]) < 1e-8
    A = m.A.toarray()
    np.testing.assert_allclose(gram, A @ np.linalg.solve(Q, A.T), rtol=1e-10, atol=1e-12)


# -- Newton mode and the Gaussian approximation -------------------------------------------------


def test_constrained_mode_matches_dense_oracle(core_model, rng):
    m = core_model
    theta = _theta(m, rng)
    approx = newton_mode(m, theta)
    assert approx.residual <= 1e-10
    prob = OracleProblem.from_model(m)
    t, _ = prob.mode(theta)
    np.testing.assert_allclose(approx.mode, prob.N @ t, atol=1e-7)
    # KKT: the gradient is orthogonal to the constraint null space
    _, g, _ = m.neg_log_posterior(approx.mode, theta)
    assert np.max(np.abs(prob.N.T @ g)) < 1e-6


def test_projection_is_idempotent_and_samples_are_constrained(core_model, rng):
    approx = newton_mode(core_model, initial_theta(core_model.layout))
    z = rng.normal(size=(core_model.n, 50))
    x = approx.sample(z)
    assert np.max(np.abs(core_model.A @ x)) <= 1e-10
    p = approx.project(x + rng.normal(size=x.shape))
    np.testing.assert_allclose(approx.project(p), p, atol=1e-12)


def test_sample_covariance_is_conditioned_inverse_hessian(core_model):
    m = core_model
    approx = newton_mode(m, initial_theta(m.layout))
    # the exact covariance of the kriged draw
    Hinv = approx.factor.solve(np.eye(m.n))
    A = m.A.toarray()
    C = Hinv - Hinv @ A.T @ np.linalg.solve(A @ Hinv @ A.T, A @ Hinv)
    rng = np.random.default_rng(0)
    x = approx.sample(rng.normal(size=(m.n, 20000)))
    j = m.layout.block("u").start
    assert abs(np.var(x[j]) / C[j, j] - 1) < 0.05
    assert abs(np.mean(x[j]) - approx.mode[j]) < 4 * math.sqrt(C[j, j] / 20000)


def _gaussian_model(I, S, cfg, seed, sd=0.7):
    lay, cons = assemble_layout(cfg, sg.CellIndex.from_dims(I, S))
    rng = np.random.default_rng(seed)
    cells = np.arange(lay.index.n_cells)[: 3 * 13 * I * S]
    y = rng.normal(0.3, 1.2, len(cells))
    lik = GaussianLikelihood(y, offset=0.1, sd=sd)
    return LatentModel(lay, cons, likelihood=lik, cells=cells)


@pytest.mark.parametrize("I,S,cfg", [(2, 1, MINIMAL), (3, 2, MINIMAL), (2, 2, TS_ONLY), (2, 2, FULL_CORE)])
def test_laplace_exact_for_gaussian_likelihood(I, S, cfg, rng):
    m = _gaussian_model(I, S, cfg, seed=I * 10 + S)
    theta = _theta(m, rng)
    exact = gaussian_marginal_exact(m, theta)
    assert abs(log_marginal_laplace(m, theta) - exact) < 1e-7 * max(1.0, abs(exact))
    mean, _ = gaussian_posterior_exact(m, theta)
    np.testing.assert_allclose(newton_mode(m, theta).mode, mean, atol=1e-8)


def test_one_newton_step_for_gaussian_likelihood(rng):
    m = _gaussian_model(3, 2, MINIMAL, seed=1)
    approx = newton_mode(m, _theta(m, rng))
    assert approx.iterations <= 2


def _single_cell_setup(y, log_E, theta_shift=0.0):
    idx = sg.CellIndex.from_dims(2, 1)
    lay, cons = assemble_layout(MINIMAL, idx)
    c0 = idx.lookup(0, 0, sg.AREAS.index("paint"), sg.CENTER, 0)
    m = LatentModel(lay, cons, likelihood=PoissonLikelihood([y], [log_E]), cells=[c0])
    theta = initial_theta(lay) + theta_shift
    Q = prior_precision(theta, lay).toarray()
    A = cons.A.toarray()
    Sig = np.linalg.inv(Q)
    Sig_c = Sig - Sig @ A.T @ np.linalg.solve(A @ Sig @ A.T, A @ Sig)
    a = lay.design[c0].toarray().ravel()
    return m, theta, float(a @ Sig_c @ a)


@pytest.mark.parametrize("y,log_E,quad_tol", [(0, 0.0, 0.25), (3, 1.0, 0.1), (25, 2.5, 0.1), (1, -1.0, 0.1)])
def test_laplace_single_cell_equals_scalar_laplace(y, log_E, quad_tol):
    m, theta, s2 = _single_cell_setup(y, log_E)
    # log p(y) = log int Pois(y | e^{logE + eta}) N(eta; 0, s2) d eta
    f = lambda e: y * (log_E + e) - math.exp(log_E + e) - math.lgamma(y + 1) - 0.5 * e * e / s2  # noqa: E731
    e_hat = optimize.brentq(lambda e: y - math.exp(log_E + e) - e / s2, -50, 50, xtol=1e-14)
    h = math.exp(log_E + e_hat) + 1 / s2
    scalar_laplace = f(e_hat) - 0.5 * math.log(2 * math.pi * s2) + 0.5 * math.log(2 * math.pi / h)
    lap = log_marginal_laplace(m, theta)
    assert abs(lap - scalar_laplace) < 1e-8
    exact = math.log(integrate.quad(lambda e: math.exp(f(e)) / math.sqrt(2 * math.pi * s2), -60, 60,
                                    points=[e_hat], limit=400, epsabs=0, epsrel=1e-12)[0])
    # with a vague intercept prior, Laplace for one Poisson count is good to about a tenth of a nat;
    # a zero count has no interior peak in the likelihood and is worse
    assert abs(lap - exact) < quad_tol


def test_unobserved_redundant_constraints_do_not_change_laplace():
    idx = sg.CellIndex.from_dims(2, 2)
    lay, cons = assemble_layout(TS_ONLY, idx)
    rng = np.random.default_rng(3)
    cells = np.flatnonzero(idx.team == 0)
    lik = PoissonLikelihood(rng.poisson(4.0, len(cells)), np.full(len(cells), 1.0))
    keep = [j for j, lab in enumerate(cons.labels) if "z[i=1" not in lab]
    assert len(keep) == cons.n_rows - 2
    reduced = ConstraintSet(cons.A[keep], [cons.labels[j] for j in keep])
    theta = initial_theta(lay)
    full = log_marginal_laplace(LatentModel(lay, cons, likelihood=lik, cells=cells), theta)
    red = log_marginal_laplace(LatentModel(lay, reduced, likelihood=lik, cells=cells), theta)
    assert abs(full - red) < 1e-8


def test_newton_start_independence(core_model, rng):
    theta = _theta(core_model, rng)
    a = newton_mode(core_model, theta)
    b = newton_mode(core_model, theta, x0=a.mode + rng.normal(0, 0.2, core_model.n))
    np.testing.assert_allclose(a.mode, b.mode, atol=1e-7)
    assert abs(log_marginal_laplace(core_model, theta, a) - log_marginal_laplace(core_model, theta, b)) < 1e-8


def test_gaussian_exact_marginal_against_scipy(rng):
    # the closed form itself, on a two-dimensional toy with a sum-to-zero constraint
    X = rng.normal(size=(6, 2))
    lik = GaussianLikelihood(rng.normal(size=6), 0.0, 0.5)
    prob = OracleProblem(X, lik, np.ones((1, 2)), [np.eye(2)], lambda th: np.array([math.exp(th[0])]))
    # x = (t, -t)/sqrt2 with t ~ N(0, 1/tau)
    d = X @ np.array([1, -1]) / math.sqrt(2)
    cov = np.outer(d, d) / math.exp(0.4) + 0.25 * np.eye(6)
    ref = stats.multivariate_normal(np.zeros(6), cov).logpdf(lik.y)
    assert abs(gaussian_marginal_exact(prob, [0.4]) - ref) < 1e-10
