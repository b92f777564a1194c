"""Draws of the latent field from its prior, projected onto the sum-to-zero constraints."""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .layout import CORRELATED, HYPER_GROUP, ConstraintSet, LatentLayout


class ConstraintCentering:
    """Conditioning by kriging under the prior, in closed form.

    Every constraint row sums one block over a support disjoint from the
    other rows, and each block's prior covariance (iid, or equicorrelated
    across seasons) has equal row sums over any such support. Kriging
    ``x - S A'(A S A')^{-1} A x`` then reduces to subtracting the mean of
    ``x`` over each row's support.
    """

    def __init__(self, constraints: ConstraintSet):
        A = sparse.csr_matrix(constraints.A)
        counts = np.diff(A.indptr).astype(float)
        if A.shape[0] and np.any(np.asarray((A.T @ A).diagonal()) > 1):
            raise ValueError("constraint supports overlap")
        self.A = A
        self.Bt = (sparse.diags(1.0 / np.maximum(counts, 1.0)) @ A).T.tocsr()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Project a vector or the rows of an (m, n) array."""
        x = np.asarray(x, dtype=float)
        if self.A.shape[0] == 0:
            return x.copy()
        if x.ndim == 1:
            return x - self.Bt @ (self.A @ x)
        return x - (self.Bt @ (self.A @ x.T)).T


def draw_block(rng: np.random.Generator, layout: LatentLayout, name: str, sigma: float, rho: float = 0.0,
               size: int | None = None) -> np.ndarray:
    """Unconstrained prior draw of one block, shape ``(size, *block.shape)`` or the block shape."""
    b = layout.block(name)
    shape = b.shape if size is None else (size,) + b.shape
    g = rng.standard_normal(shape)
    S = layout.index.n_seasons
    if name in CORRELATED and S > 1 and rho != 0.0:
        g = equicorr_sqrt_apply(g, rho)
    return sigma * g


def equicorr_sqrt_apply(g: np.ndarray, rho: float) -> np.ndarray:
    """Apply the symmetric square root of ``R_S(rho)`` along the last axis.

    ``R = (1-rho)(I - J/S) + (1+(S-1)rho) J/S``, so the root only rescales the
    mean and the deviations from it; unlike a Cholesky factor it stays
    defined when rho sits on the boundary in floating point.
    """
    S = g.shape[-1]
    m = g.mean(axis=-1, keepdims=True)
    a = np.sqrt(max(1.0 - rho, 0.0))
    b = np.sqrt(max(1.0 + (S - 1) * rho, 0.0))
    return a * (g - m) + b * m


def draw_latent(rng: np.random.Generator, layout: LatentLayout, constraints: ConstraintSet,
                sigma: dict[str, float], rho: dict[str, float] | None = None, fixed=None,
                centering: ConstraintCentering | None = None) -> np.ndarray:
    """One constrained latent vector; ``sigma``/``rho`` are keyed by hyperparameter group."""
    rho = rho or {}
    x = np.zeros(layout.n_latent)
    if fixed is not None:
        x[layout.block("fixed").slice] = fixed
    for name, b in layout.blocks.items():
        if name == "fixed":
            continue
        group = HYPER_GROUP[name]
        x[b.slice] = draw_block(rng, layout, name, sigma.get(group, 0.0), rho.get(group, 0.0)).ravel()
    centering = centering or ConstraintCentering(constraints)
    return centering(x)
