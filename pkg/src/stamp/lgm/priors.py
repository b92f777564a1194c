"""Equicorrelation algebra and penalized-complexity priors.

PC prior for a precision: with base model sigma = 0 the prior on the standard
deviation is exponential, calibrated through ``P(sigma > U) = alpha``.

PC prior for an equicorrelation parameter: distance from the independence
base model is ``d(rho) = sqrt(-log det R_S(rho))``; ``d`` is given an
exponential density that is split evenly between the negative and positive
branches of rho, and the rate is calibrated numerically through
``P(|rho| > V) = alpha``.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import optimize
from scipy.special import expit

from ..errors import DomainError, SingularCorrelation


def rho_bounds(S: int) -> tuple[float, float]:
    if S < 2:
        return (-1.0, 1.0)
    return (-1.0 / (S - 1), 1.0)


def check_rho(S: int, rho: float):
    lo, hi = rho_bounds(S)
    if S >= 2 and not (lo < rho < hi):
        raise SingularCorrelation(f"rho={rho} outside ({lo:.6g}, 1) for S={S}")


def equicorr(S: int, rho: float) -> np.ndarray:
    R = np.full((S, S), float(rho))
    np.fill_diagonal(R, 1.0)
    return R


def equicorr_coeffs(S: int, rho: float) -> tuple[float, float]:
    """``(a, b)`` with ``R_S(rho)^{-1} = a I + b J``."""
    if S == 1:
        return 1.0, 0.0
    check_rho(S, rho)
    a = 1.0 / (1.0 - rho)
    b = -rho / ((1.0 - rho) * (1.0 + (S - 1) * rho))
    return a, b


def equicorr_precision(S: int, rho: float) -> np.ndarray:
    """Closed-form inverse of the S x S equicorrelation matrix."""
    if S < 1:
        raise ValueError("S must be at least 1")
    a, b = equicorr_coeffs(S, rho)
    return a * np.eye(S) + b * np.ones((S, S))


def equicorr_logdet(S: int, rho: float) -> float:
    """log det R_S(rho) = (S-1) log(1-rho) + log(1+(S-1) rho)."""
    if S == 1:
        return 0.0
    check_rho(S, rho)
    return (S - 1) * math.log1p(-rho) + math.log1p((S - 1) * rho)


# -- PC prior on a standard deviation ------------------------------------------


def pc_prec_rate(U: float, alpha: float) -> float:
    if not U > 0:
        raise DomainError(f"U must be positive, got {U}")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return -math.log(alpha) / U


def pc_prec_logpdf(sigma, U: float, alpha: float):
    """Log density of the standard deviation: ``log(lam) - lam * sigma``."""
    lam = pc_prec_rate(U, alpha)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise DomainError("sigma must be positive")
    out = math.log(lam) - lam * sigma
    return float(out) if out.ndim == 0 else out


def pc_prec_logpdf_logtau(log_tau, U: float, alpha: float):
    """Same prior expressed on ``log tau`` (tau = sigma^-2), Jacobian included.

    sigma = exp(-log_tau / 2), so |d sigma / d log_tau| = sigma / 2.
    """
    lam = pc_prec_rate(U, alpha)
    log_tau = np.asarray(log_tau, dtype=float)
    sigma = np.exp(-0.5 * log_tau)
    out = math.log(lam) - lam * sigma - 0.5 * log_tau - math.log(2.0)
    return float(out) if out.ndim == 0 else out


# -- PC prior on an equicorrelation parameter ----------------------------------


def _kld2(S: int, rho):
    """-log det R_S(rho), evaluated without cancellation near rho = 0."""
    rho = np.asarray(rho, dtype=float)
    return -(S - 1) * np.log1p(-rho) - np.log1p((S - 1) * rho)


def pc_cor_distance(rho, S: int):
    """``d(rho) = sqrt(2 KLD(R_S(rho) || I))``."""
    if S < 2:
        raise DomainError("correlation prior needs at least two seasons")
    g = np.maximum(_kld2(S, rho), 0.0)
    out = np.sqrt(g)
    return float(out) if np.ndim(out) == 0 else out


def pc_cor_distance_deriv(rho, S: int):
    """|d'(rho)|, with the finite limit sqrt(S(S-1)/2) at rho = 0."""
    rho = np.asarray(rho, dtype=float)
    d = np.sqrt(np.maximum(_kld2(S, rho), 0.0))
    gp = (S - 1) * S * rho / ((1.0 - rho) * (1.0 + (S - 1) * rho))
    small = np.abs(rho) < 1e-7
    safe_d = np.where(small, 1.0, d)
    out = np.where(small, math.sqrt(S * (S - 1) / 2.0), np.abs(gp) / (2.0 * safe_d))
    return float(out) if out.ndim == 0 else out


def pc_cor_tail(lam: float, V: float, S: int) -> float:
    """P(|rho| > V) under rate ``lam``."""
    lo, _ = rho_bounds(S)
    p = 0.5 * math.exp(-lam * pc_cor_distance(V, S))
    if -V > lo:
        p += 0.5 * math.exp(-lam * pc_cor_distance(-V, S))
    return p


@functools.lru_cache(maxsize=64)
def pc_cor_rate(V: float, alpha: float, S: int) -> float:
    """Rate solving ``P(|rho| > V) = alpha`` by bisection."""
    if not 0 < V < 1:
        raise DomainError(f"V must lie in (0, 1), got {V}")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    sup = pc_cor_tail(0.0, V, S)
    if alpha >= sup:
        raise DomainError(
            f"P(|rho|>{V}) can be at most {sup:.3g} for S={S}; alpha={alpha} is unattainable"
        )
    lo, hi = 0.0, 1.0
    while pc_cor_tail(hi, V, S) > alpha:
        hi *= 2.0
    return optimize.bisect(lambda lam: pc_cor_tail(lam, V, S) - alpha, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


def pc_cor_logpdf(rho, V: float, alpha: float, S: int):
    """Log density of rho on its validity region."""
    rho_arr = np.asarray(rho, dtype=float)
    lo, hi = rho_bounds(S)
    if np.any((rho_arr <= lo) | (rho_arr >= hi)):
        raise DomainError(f"rho outside ({lo:.6g}, 1)")
    lam = pc_cor_rate(V, alpha, S)
    d = pc_cor_distance(rho_arr, S)
    out = math.log(0.5 * lam) - lam * np.asarray(d) + np.log(pc_cor_distance_deriv(rho_arr, S))
    return float(out) if np.ndim(out) == 0 else out


# internal scale: theta = logit((1 + (S-1) rho) / S), a bijection R -> (-1/(S-1), 1)


def rho_from_internal(theta, S: int):
    p = expit(np.asarray(theta, dtype=float))
    out = (S * p - 1.0) / (S - 1)
    return float(out) if np.ndim(out) == 0 else out


def rho_to_internal(rho, S: int):
    p = (1.0 + (S - 1) * np.asarray(rho, dtype=float)) / S
    out = np.log(p) - np.log1p(-p)
    return float(out) if np.ndim(out) == 0 else out


def pc_cor_logpdf_internal(theta, V: float, alpha: float, S: int):
    """Log density of the internal parameter, stable far into both tails.

    With p = sigmoid(theta) the Jacobian cancels against d'(rho), leaving
    ``log(lam/2) - lam d + log((S-1)|rho| / (2 d))``. Far from rho = 0,
    ``d^2`` is evaluated from softplus terms so that 1 - rho need not be
    representable.
    """
    if S < 2:
        raise DomainError("correlation prior needs at least two seasons")
    theta = np.asarray(theta, dtype=float)
    lam = pc_cor_rate(V, alpha, S)
    rho = np.asarray(rho_from_internal(theta, S), dtype=float)
    c = math.log(S) - math.log(S - 1)
    tail = (S - 1) * (np.logaddexp(0.0, theta) - c) + np.logaddexp(0.0, -theta) - math.log(S)
    with np.errstate(divide="ignore", invalid="ignore"):
        # the log1p form is exact near rho = 0; the softplus form away from it
        near = np.abs(theta + math.log(S - 1)) < 2.0
        g = np.where(near, _kld2(S, rho), tail)
    d = np.sqrt(np.maximum(g, 0.0))
    small = np.abs(rho) < 1e-7
    limit = math.log((S - 1) / (2.0 * math.sqrt(S * (S - 1) / 2.0)))
    with np.errstate(divide="ignore"):
        ratio = np.where(small, limit, np.log((S - 1) * np.abs(rho)) - np.log(2.0 * np.where(small, 1.0, d)))
    out = math.log(0.5 * lam) - lam * d + ratio
    return float(out) if out.ndim == 0 else out


def sample_pc_cor(rng: np.random.Generator, V: float, alpha: float, S: int, size=None):
    """Draw rho: pick a branch with probability 1/2, d ~ Exp(lam), invert d(rho)."""
    lam = pc_cor_rate(V, alpha, S)
    n = 1 if size is None else int(np.prod(size))
    d = rng.exponential(1.0 / lam, size=n)
    neg = rng.random(n) < 0.5
    out = np.empty(n)
    lo, _ = rho_bounds(S)
    for j in range(n):
        target = d[j] ** 2
        if S == 2:
            r = math.sqrt(-math.expm1(-target))
            out[j] = -r if neg[j] else r
            continue
        f = lambda r: _kld2(S, r) - target  # noqa: E731
        if neg[j]:
            b = lo * (1 - 1e-15)
            out[j] = optimize.brentq(f, b, 0.0) if f(b) > 0 else b
        else:
            b = 1 - 1e-15
            out[j] = optimize.brentq(f, 0.0, b) if f(b) > 0 else b
    # far tails round to the boundary in floating point; keep draws strictly inside
    out = np.clip(out, np.nextafter(lo, 0.0), np.nextafter(1.0, 0.0))
    if size is None:
        return float(out[0])
    return out.reshape(size)
