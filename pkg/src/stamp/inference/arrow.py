"""Block-arrowhead storage and Cholesky factorization for the model's precision.

Every team-indexed coordinate (u, w, z, slopes) interacts only with
coordinates of the same team and with the small global part (fixed
effects and area effects), both in the prior and in the Poisson
curvature. Ordering each team's coordinates contiguously and the global
ones last gives a block-arrowhead matrix

    [ D_1           C_1 ]
    [      ...      ... ]
    [           D_I C_I ]
    [ C_1' ...  C_I' G  ]

whose Cholesky factor has no fill outside that pattern. The factor is

    L = [ L_D   0   ]      L_D = blockdiag(chol(D_i)),  W_i = L_Di^{-1} C_i,
        [ W'    L_S ]      L_S = chol(G - sum_i W_i' W_i).
"""

from __future__ import annotations

import numpy as np
from scipy import linalg, sparse
from scipy.linalg import lapack

from ..errors import FactorizationFailure


class ArrowStructure:
    """Permutation and flat-buffer addressing for one latent layout."""

    def __init__(self, owner: np.ndarray):
        owner = np.asarray(owner, dtype=np.int64)
        self.n = len(owner)
        teams = owner[owner >= 0]
        self.n_teams = int(teams.max()) + 1 if len(teams) else 0
        counts = np.bincount(teams, minlength=self.n_teams) if self.n_teams else np.zeros(0, np.int64)
        if self.n_teams and not np.all(counts == counts[0]):
            raise ValueError("every team must own the same number of coordinates")
        self.nb = int(counts[0]) if self.n_teams else 0
        self.glob = np.flatnonzero(owner < 0)
        self.ng = len(self.glob)
        # stable ordering: team-major for locals, then globals
        local = np.flatnonzero(owner >= 0)
        local = local[np.argsort(owner[local], kind="stable")]
        self.perm = np.concatenate([local, self.glob])
        self.owner = owner
        self.local_pos = np.full(self.n, -1, dtype=np.int64)
        self.glob_pos = np.full(self.n, -1, dtype=np.int64)
        if self.n_teams:
            lp = np.arange(len(local)) % self.nb
            self.local_pos[local] = lp
        self.glob_pos[self.glob] = np.arange(self.ng)
        I, nb, ng = self.n_teams, self.nb, self.ng
        self.off_C = I * nb * nb
        self.off_G = self.off_C + I * nb * ng
        self.size = self.off_G + ng * ng
        self.trash = self.size  # sink for (global, local) pairs, stored once via C

    def flat(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Buffer position of matrix entry (p, q); symmetric duplicates go to ``trash``."""
        p = np.asarray(p, dtype=np.int64)
        q = np.asarray(q, dtype=np.int64)
        tp, tq = self.owner[p], self.owner[q]
        out = np.full(p.shape, self.trash, dtype=np.int64)
        ll = (tp >= 0) & (tq >= 0)
        if np.any(ll & (tp != tq)):
            raise ValueError("entry couples coordinates of two different teams")
        nb, ng = self.nb, self.ng
        out[ll] = tp[ll] * nb * nb + self.local_pos[p[ll]] * nb + self.local_pos[q[ll]]
        lg = (tp >= 0) & (tq < 0)
        out[lg] = self.off_C + tp[lg] * nb * ng + self.local_pos[p[lg]] * ng + self.glob_pos[q[lg]]
        gg = (tp < 0) & (tq < 0)
        out[gg] = self.off_G + self.glob_pos[p[gg]] * ng + self.glob_pos[q[gg]]
        return out

    def scatter_operator(self, mat: sparse.spmatrix) -> sparse.csr_matrix:
        """Operator mapping a vector of weights to the buffer of ``sum_c w_c x_c x_c'``.

        ``mat`` has one row per weight (e.g. design rows). The result has
        shape ``(size + 1, n_rows)``; the last row collects discarded
        symmetric duplicates.
        """
        mat = sparse.csr_matrix(mat)
        rows, ps, qs, vals = [], [], [], []
        for c in range(mat.shape[0]):
            lo, hi = mat.indptr[c], mat.indptr[c + 1]
            cols = mat.indices[lo:hi]
            v = mat.data[lo:hi]
            if len(cols) == 0:
                continue
            P, Qq = np.meshgrid(cols, cols, indexing="ij")
            ps.append(P.ravel())
            qs.append(Qq.ravel())
            vals.append(np.outer(v, v).ravel())
            rows.append(np.full(P.size, c))
        if not rows:
            return sparse.csr_matrix((self.size + 1, mat.shape[0]))
        p, q = np.concatenate(ps), np.concatenate(qs)
        dest = self.flat(p, q)
        op = sparse.csr_matrix((np.concatenate(vals), (dest, np.concatenate(rows))), shape=(self.size + 1, mat.shape[0]))
        op.sum_duplicates()
        return op

    def from_sparse(self, Q: sparse.spmatrix) -> np.ndarray:
        """Buffer of a symmetric sparse matrix with arrowhead pattern."""
        Q = sparse.coo_matrix(Q)
        buf = np.zeros(self.size + 1)
        np.add.at(buf, self.flat(Q.row, Q.col), Q.data)
        return buf

    def split(self, buf: np.ndarray):
        I, nb, ng = self.n_teams, self.nb, self.ng
        D = buf[: self.off_C].reshape(I, nb, nb)
        C = buf[self.off_C : self.off_G].reshape(I, nb, ng)
        G = buf[self.off_G : self.size].reshape(ng, ng)
        return D, C, G

    def to_dense(self, buf: np.ndarray) -> np.ndarray:
        """Dense matrix in the original (unpermuted) order; for checks."""
        D, C, G = self.split(buf)
        I, nb = self.n_teams, self.nb
        n = self.n
        Mp = np.zeros((n, n))
        for i in range(I):
            sl = slice(i * nb, (i + 1) * nb)
            Mp[sl, sl] = D[i]
            Mp[sl, I * nb :] = C[i]
            Mp[I * nb :, sl] = C[i].T
        Mp[I * nb :, I * nb :] = G
        out = np.empty_like(Mp)
        out[np.ix_(self.perm, self.perm)] = Mp
        return out

    # -- vector helpers -----------------------------------------------------------

    def to_arrow(self, b: np.ndarray):
        b = np.asarray(b, dtype=float)
        vec = b.ndim == 1
        bp = b[self.perm]
        if vec:
            bp = bp[:, None]
        I, nb = self.n_teams, self.nb
        return bp[: I * nb].reshape(I, nb, bp.shape[1]), bp[I * nb :], vec

    def from_arrow(self, loc: np.ndarray, glob: np.ndarray, vec: bool) -> np.ndarray:
        m = glob.shape[1]
        out = np.empty((self.n, m))
        out[self.perm] = np.concatenate([loc.reshape(-1, m), glob], axis=0)
        return out[:, 0] if vec else out

    def matvec(self, buf: np.ndarray, x: np.ndarray) -> np.ndarray:
        D, C, G = self.split(buf)
        xl, xg, vec = self.to_arrow(x)
        yl = D @ xl + C @ xg[None, :, :]
        yg = G @ xg + np.einsum("ing,inm->gm", C, xl)
        return self.from_arrow(yl, yg, vec)


def _tri_inv(L: np.ndarray) -> np.ndarray:
    """Inverses of a stack of lower-triangular matrices."""
    out = np.empty_like(L)
    for i in range(L.shape[0]):
        inv, info = lapack.dtrtri(L[i], lower=1)
        if info != 0:
            raise np.linalg.LinAlgError("singular triangular factor")
        out[i] = inv
    return out


class ArrowCholesky:
    """Cholesky factor of a block-arrowhead SPD matrix held in buffer form."""

    def __init__(self, struct: ArrowStructure, buf: np.ndarray):
        self.struct = struct
        D, C, G = struct.split(buf)
        try:
            LD = np.linalg.cholesky(D) if struct.n_teams else D
            self.LDinv = _tri_inv(LD) if struct.n_teams else LD
            W = self.LDinv @ C if struct.n_teams else np.zeros((0, 0, struct.ng))
            Sch = G - np.einsum("ing,inh->gh", W, W)
            LS = np.linalg.cholesky(Sch)
        except np.linalg.LinAlgError as exc:
            raise FactorizationFailure(f"matrix is not positive definite: {exc}") from None
        self.LD, self.W, self.LS = LD, W, LS
        diag_D = np.diagonal(LD, axis1=1, axis2=2) if struct.n_teams else np.ones(1)
        self.logdet = float(2.0 * (np.log(diag_D).sum() + np.log(np.diag(LS)).sum()))

    def _forward(self, bl, bg):
        yl = self.LDinv @ bl
        rhs = bg - np.einsum("ing,inm->gm", self.W, yl)
        yg = linalg.solve_triangular(self.LS, rhs, lower=True, check_finite=False)
        return yl, yg

    def _backward(self, yl, yg):
        xg = linalg.solve_triangular(self.LS.T, yg, lower=False, check_finite=False)
        rhs = yl - self.W @ xg[None, :, :]
        xl = np.transpose(self.LDinv, (0, 2, 1)) @ rhs
        return xl, xg

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve ``M x = b`` for a vector or an (n, m) right-hand side."""
        bl, bg, vec = self.struct.to_arrow(b)
        yl, yg = self._forward(bl, bg)
        xl, xg = self._backward(yl, yg)
        return self.struct.from_arrow(xl, xg, vec)

    def solve_Lt(self, z: np.ndarray) -> np.ndarray:
        """``L^{-T} z``: maps standard normals to draws with covariance ``M^{-1}``."""
        zl, zg, vec = self.struct.to_arrow(z)
        xl, xg = self._backward(zl, zg)
        return self.struct.from_arrow(xl, xg, vec)

    def solve_L(self, b: np.ndarray) -> np.ndarray:
        """``L^{-1} b`` (in arrow order, returned unpermuted for quadratic forms)."""
        bl, bg, vec = self.struct.to_arrow(b)
        yl, yg = self._forward(bl, bg)
        return self.struct.from_arrow(yl, yg, vec)
