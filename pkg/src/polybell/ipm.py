"""Primal-dual interior point method for ``max b.y  s.t.  C - sum_i y_i A_i = S >= 0``.

Infeasible-start path following with the HKM search direction and a
Mehrotra predictor-corrector step.  The constraint matrices are kept as a
sparse ``(m, N*N)`` operator, and the Schur complement
``M_ij = tr(A_i X A_j S^-1)`` is assembled from rank-one products over the
non-zero entries of each ``A_i``, which is cheap for moment matrices where
every variable occupies only a handful of cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp


@dataclass
class IpmResult:
    converged: bool
    y: np.ndarray
    X: np.ndarray
    S: np.ndarray
    iterations: int
    primal_infeasibility: float
    dual_infeasibility: float
    relative_gap: float
    message: str = ""


def _max_step(L: np.ndarray, d: np.ndarray) -> float:
    """Largest alpha with ``L L^T + alpha d`` still PSD."""
    t = la.solve_triangular(L, d, lower=True)
    t = la.solve_triangular(L, t.T, lower=True)
    lam = np.linalg.eigvalsh((t + t.T) / 2).min()
    return math.inf if lam >= 0 else -1.0 / lam


def _chol(m: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None


class SparseSdp:
    """Constraint data: ``C`` dense, ``A_i`` from entry lists (both triangles present)."""

    def __init__(self, dim: int, C: np.ndarray, rows, cols, var, coef, b: np.ndarray):
        self.n = dim
        self.C = np.asarray(C, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.m = len(self.b)
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        var = np.asarray(var, dtype=int)
        coef = np.asarray(coef, dtype=float)
        order = np.argsort(var, kind="stable")
        self.rows, self.cols, self.var, self.coef = rows[order], cols[order], var[order], coef[order]
        self.starts = np.searchsorted(self.var, np.arange(self.m + 1))
        self.op = sp.csr_matrix((self.coef, (self.var, self.rows * dim + self.cols)), shape=(self.m, dim * dim))
        self.op_t = self.op.T.tocsr()

    def apply(self, G: np.ndarray) -> np.ndarray:
        return self.op @ G.ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return (self.op_t @ y).reshape(self.n, self.n)

    def schur(self, X: np.ndarray, Sinv: np.ndarray, chunk: int = 256) -> np.ndarray:
        n, m = self.n, self.m
        U = X[:, self.rows] * self.coef  # columns X[:, a] * c
        V = Sinv[self.cols, :]
        M = np.empty((m, m))
        for lo in range(0, m, chunk):
            hi = min(m, lo + chunk)
            W = np.empty((hi - lo, n * n))
            for i in range(lo, hi):
                s, e = self.starts[i], self.starts[i + 1]
                W[i - lo] = (U[:, s:e] @ V[s:e, :]).ravel()
            M[:, lo:hi] = self.op @ W.T
        return (M + M.T) / 2


def solve_sparse_sdp(prob: SparseSdp, tol: float = 1e-8, max_iter: int = 100,
                     step: float = 0.95, patience: int = 8) -> IpmResult:
    """Stops when all of primal/dual infeasibility and relative gap are below
    ``tol``, or returns the best iterate once ``patience`` iterations pass
    without halving the worst of the three."""
    n, b, C = prob.n, prob.b, prob.C
    norm_a = np.sqrt(np.bincount(prob.var, weights=prob.coef ** 2, minlength=prob.m))
    norm_c = np.linalg.norm(C)
    alpha0 = n * max(1.0, float(np.max((1.0 + np.abs(b)) / (1.0 + norm_a)))) if prob.m else 1.0
    beta0 = (1.0 + max(float(norm_a.max()) if prob.m else 0.0, norm_c)) / math.sqrt(n)
    X = alpha0 * np.eye(n)
    S = beta0 * np.eye(n)
    y = np.zeros(prob.m)
    nb = 1.0 + np.linalg.norm(b)
    nc = 1.0 + norm_c
    msg = "iteration limit"
    pinf = dinf = gap = math.inf
    it = 0
    best = None
    best_err = math.inf
    since = 0
    for it in range(1, max_iter + 1):
        Rp = b - prob.apply(X)
        Rd = C - prob.adjoint(y) - S
        pobj = float(np.sum(C * X))
        dobj = float(b @ y)
        pinf = np.linalg.norm(Rp) / nb
        dinf = np.linalg.norm(Rd) / nc
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if pinf <= tol and dinf <= tol and gap <= tol:
            return IpmResult(True, y, X, S, it - 1, pinf, dinf, gap, "converged")
        err = max(pinf, dinf, gap)
        if err < best_err:
            since = 0 if err < 0.5 * best_err else since + 1
            best_err = err
            best = (y, X, S, pinf, dinf, gap)
        else:
            since += 1
        if since >= patience and err < 1e-4:
            msg = "stalled"
            break
        Lx, Ls = _chol(X), _chol(S)
        if Lx is None or Ls is None:
            msg = "lost positive definiteness"
            break
        Sinv = la.cho_solve((Ls, True), np.eye(n))
        Sinv = (Sinv + Sinv.T) / 2
        mu = float(np.sum(X * S)) / n
        M = prob.schur(X, Sinv)
        try:
            fac = la.cho_factor(M, lower=True)
        except la.LinAlgError:
            jitter = 1e-14 * max(1.0, float(np.abs(np.diag(M)).max()))
            try:
                fac = la.cho_factor(M + jitter * np.eye(prob.m), lower=True)
            except la.LinAlgError:
                msg = "singular Schur complement"
                break
        XRS = X @ Rd @ Sinv
        base = b + prob.apply(XRS)

        def direction(sigma_mu, Q):
            rhs = base - sigma_mu * prob.apply(Sinv)
            if Q is not None:
                rhs = rhs + prob.apply(Q)
            dy = la.cho_solve(fac, rhs)

            def steps(dy):
                dS = Rd - prob.adjoint(dy)
                dX = sigma_mu * Sinv - X - X @ dS @ Sinv
                if Q is not None:
                    dX = dX - Q
                return dS, dX

            # iterative refinement: the factored Schur complement is badly
            # conditioned near the optimum, the operator itself is not
            dS, dX = steps(dy)
            err_norm = math.inf
            for _ in range(3):
                err = Rp - prob.apply(dX)
                e = np.linalg.norm(err)
                if e <= 1e-3 * tol * nb or e >= 0.5 * err_norm:
                    break
                err_norm = e
                dy = dy + la.cho_solve(fac, err)
                dS, dX = steps(dy)
            return dy, (dX + dX.T) / 2, (dS + dS.T) / 2

        dy, dX, dS = direction(0.0, None)
        ap = min(1.0, _max_step(Lx, dX))
        ad = min(1.0, _max_step(Ls, dS))
        mu_aff = float(np.sum((X + ap * dX) * (S + ad * dS))) / n
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        dy, dX, dS = direction(sigma * mu, dX @ dS @ Sinv)
        ap = min(1.0, step * _max_step(Lx, dX))
        ad = min(1.0, step * _max_step(Ls, dS))
        # rounding can leave the full step just outside the cone
        for _ in range(30):
            Xn = X + ap * dX
            if _chol(Xn) is not None:
                break
            ap *= 0.8
        for _ in range(30):
            Sn = S + ad * dS
            if _chol(Sn) is not None:
                break
            ad *= 0.8
        X = (Xn + Xn.T) / 2
        S = (Sn + Sn.T) / 2
        y = y + ad * dy
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            msg = "numerical breakdown"
            break
    if best is not None and best_err < max(pinf, dinf, gap):
        y, X, S, pinf, dinf, gap = best
    return IpmResult(False, y, X, S, it, pinf, dinf, gap, msg)
