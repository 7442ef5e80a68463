"""Linear objectives over affine slices of the PSD cone.

A problem is ``maximize c.x + c0`` subject to ``M_b(x) = F0_b + sum_i x_i F_ib``
being positive semidefinite for every block ``b`` and optional equalities
``A x = rhs``.  Blocks are stored sparsely by their upper triangle.

Back ends (``POLYBELL_SOLVER`` or the ``backend`` argument):

* ``ipm`` (default), the embedded primal-dual method of :mod:`polybell.ipm`;
* ``clarabel``, interior point on the PSD triangle cone;
* ``cvxopt``, the primal-dual interior point method of ``cvxopt.solvers.sdp``.

Whatever the back end, the returned ``upper_bound`` is recomputed from the
dual iterate after projecting it onto the PSD cone, so it is a valid bound
on the maximum as long as every feasible ``x`` satisfies
``|x_i| <= variable_bound``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, SolverError

SQRT2 = math.sqrt(2.0)
BACKENDS = ("ipm", "clarabel", "cvxopt")


@dataclass(frozen=True)
class PsdBlock:
    """One symmetric matrix block; entries with ``i > j`` are mirrored from ``(j, i)``."""

    dim: int
    fixed: tuple[tuple[int, int, float], ...] = ()
    cells: tuple[tuple[int, int, int, float], ...] = ()  # (i, j, variable, coefficient)

    def __post_init__(self):
        norm = lambda i, j: (i, j) if i <= j else (j, i)
        object.__setattr__(self, "fixed", tuple((*norm(int(i), int(j)), float(v)) for i, j, v in self.fixed))
        object.__setattr__(self, "cells", tuple(
            (*norm(int(i), int(j)), int(var), float(c)) for i, j, var, c in self.cells))

    def matrix(self, x: np.ndarray) -> np.ndarray:
        m = np.zeros((self.dim, self.dim))
        for i, j, v in self.fixed:
            m[i, j] += v
        for i, j, var, c in self.cells:
            m[i, j] += c * x[var]
        return np.triu(m) + np.triu(m, 1).T


@dataclass(frozen=True)
class SdpProblem:
    blocks: tuple[PsdBlock, ...]
    objective: np.ndarray
    objective_constant: float = 0.0
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    variable_bound: float = 1.0
    labels: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "objective", np.asarray(self.objective, dtype=float))
        n = self.n_vars
        for blk in self.blocks:
            for i, j, var, _ in blk.cells:
                if not (0 <= var < n and 0 <= i < blk.dim and 0 <= j < blk.dim):
                    raise InvalidArgument(f"cell {(i, j, var)} out of range")
        if self.eq_matrix is not None:
            a = np.atleast_2d(np.asarray(self.eq_matrix, dtype=float))
            object.__setattr__(self, "eq_matrix", a)
            object.__setattr__(self, "eq_rhs", np.asarray(self.eq_rhs, dtype=float).reshape(-1))
            if a.shape != (len(self.eq_rhs), n):
                raise InvalidArgument("equality matrix shape does not match")

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    @property
    def max_dim(self) -> int:
        return max(b.dim for b in self.blocks)

    def matrices(self, x: np.ndarray) -> list[np.ndarray]:
        return [b.matrix(np.asarray(x, dtype=float)) for b in self.blocks]

    def value(self, x: np.ndarray) -> float:
        return float(self.objective @ np.asarray(x, dtype=float) + self.objective_constant)

    def negated(self) -> "SdpProblem":
        return SdpProblem(self.blocks, -self.objective, -self.objective_constant,
                          self.eq_matrix, self.eq_rhs, self.variable_bound, self.labels)

    def to_dict(self) -> dict:
        """Sparse JSON form: ``fixed`` as ``[i, j, value]``, ``cells`` as ``[i, j, var, coeff]``
        (0-based, upper triangle)."""
        d = {
            "format": "polybell-sdp/1",
            "sense": "maximize",
            "n_vars": self.n_vars,
            "blocks": [{"dim": b.dim, "fixed": [list(t) for t in b.fixed],
                        "cells": [list(t) for t in b.cells]} for b in self.blocks],
            "objective": self.objective.tolist(),
            "objective_constant": self.objective_constant,
            "variable_bound": self.variable_bound,
        }
        if self.eq_matrix is not None:
            d["equalities"] = {"matrix": self.eq_matrix.tolist(), "rhs": self.eq_rhs.tolist()}
        if self.labels is not None:
            d["labels"] = list(self.labels)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SdpProblem":
        if d.get("format") != "polybell-sdp/1":
            raise InvalidArgument(f"unsupported problem format {d.get('format')!r}")
        eq = d.get("equalities")
        return cls(
            tuple(PsdBlock(b["dim"], tuple(map(tuple, b["fixed"])), tuple(map(tuple, b["cells"])))
                  for b in d["blocks"]),
            np.asarray(d["objective"], dtype=float), float(d.get("objective_constant", 0.0)),
            None if eq is None else np.asarray(eq["matrix"]), None if eq is None else np.asarray(eq["rhs"]),
            float(d.get("variable_bound", 1.0)),
            tuple(d["labels"]) if "labels" in d else None)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SdpProblem":
        return cls.from_dict(json.loads(text))


@dataclass
class SolveResult:
    status: str  # optimal | near-optimal | infeasible | failed
    value: float
    upper_bound: float
    x: np.ndarray | None
    primal: list[np.ndarray] = field(default_factory=list, repr=False)
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    min_eigenvalue: float = math.nan
    backend: str = ""
    iterations: int = 0
    message: str = ""

    @property
    def gap(self) -> float:
        return self.upper_bound - self.value

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near-optimal")

    def to_dict(self) -> dict:
        return {"status": self.status, "value": self.value, "upper_bound": self.upper_bound,
                "gap": self.gap, "primal_residual": self.primal_residual,
                "dual_residual": self.dual_residual, "min_eigenvalue": self.min_eigenvalue,
                "backend": self.backend, "iterations": self.iterations, "message": self.message}


def default_tol(problem: SdpProblem) -> float:
    return 1e-8 if problem.max_dim < 200 else 1e-6


def _svec_index(i: int, j: int) -> int:
    # upper triangle, column-major: (0,0), (0,1), (1,1), (0,2), ...
    return j * (j + 1) // 2 + i


def _svec(m: np.ndarray) -> np.ndarray:
    dim = m.shape[0]
    iu = np.triu_indices(dim)
    order = np.argsort(iu[1] * dim + iu[0], kind="stable")
    i, j = iu[0][order], iu[1][order]
    return m[i, j] * np.where(i == j, 1.0, SQRT2)


def _smat(v: np.ndarray, dim: int) -> np.ndarray:
    m = np.zeros((dim, dim))
    iu = np.triu_indices(dim)
    order = np.argsort(iu[1] * dim + iu[0], kind="stable")
    i, j = iu[0][order], iu[1][order]
    m[i, j] = v / np.where(i == j, 1.0, SQRT2)
    return np.triu(m) + np.triu(m, 1).T


def _psd_part(z: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((z + z.T) / 2)
    return (v * np.clip(w, 0, None)) @ v.T


def certify(problem: SdpProblem, duals: Sequence[np.ndarray],
            eq_multipliers: np.ndarray | None = None) -> tuple[float, float]:
    """Upper bound on the maximum from (approximate) dual matrices, and the dual residual.

    With ``Z_b`` projected onto the PSD cone and ``r_i = c_i + sum_b tr(F_ib Z_b) - (E^T w)_i``,
    every feasible ``x`` obeys ``c.x <= sum_b tr(F0_b Z_b) + f.w + sum_i |r_i| |x_i|``.
    """
    zs = [_psd_part(z) for z in duals]
    r = problem.objective.copy()
    bound = problem.objective_constant
    for blk, z in zip(problem.blocks, zs):
        for i, j, v in blk.fixed:
            bound += v * (z[i, j] if i == j else 2 * z[i, j])
        if blk.cells:
            cells = np.array([(i, j, var) for i, j, var, _ in blk.cells], dtype=int)
            coef = np.array([c for *_, c in blk.cells])
            w = np.where(cells[:, 0] == cells[:, 1], 1.0, 2.0)
            np.add.at(r, cells[:, 2], coef * w * z[cells[:, 0], cells[:, 1]])
    if problem.eq_matrix is not None:
        if eq_multipliers is None:
            eq_multipliers = np.linalg.lstsq(problem.eq_matrix.T, r, rcond=None)[0]
        r = r - problem.eq_matrix.T @ eq_multipliers
        bound += float(problem.eq_rhs @ eq_multipliers)
    crude = bound + _times_bound(problem.variable_bound, float(np.abs(r).sum()))
    return min(crude, _absorbed_bound(problem, zs, r, bound)), float(np.abs(r).max()) if len(r) else 0.0


def _times_bound(bound: float, amount: float) -> float:
    """``bound * amount`` with ``inf * 0 = 0``."""
    return 0.0 if amount == 0.0 else bound * amount


def _absorbed_bound(problem: SdpProblem, zs: list[np.ndarray], r: np.ndarray, partial: float) -> float:
    """Second certificate: shift ``Z`` on the cells of each variable so that all
    residuals vanish, then pay for negative eigenvalues with a bound on ``tr F(x)``."""
    norm2 = np.zeros(len(r))
    for blk in problem.blocks:
        for i, j, var, c in blk.cells:
            norm2[var] += c * c * (1.0 if i == j else 2.0)
    leftover = _times_bound(problem.variable_bound, float(np.abs(r[norm2 == 0]).sum()))
    scale = np.divide(-r, norm2, out=np.zeros_like(r), where=norm2 > 0)
    bound = partial + leftover
    for blk, z in zip(problem.blocks, zs):
        z = z.copy()
        for i, j, var, c in blk.cells:
            z[i, j] += scale[var] * c
            if i != j:
                z[j, i] += scale[var] * c
        # fixed cells are untouched, so tr(F0 Z) is already in ``partial``
        lam = float(np.linalg.eigvalsh(z).min())
        if lam < 0:
            trace = sum(abs(v) for i, j, v in blk.fixed if i == j)
            trace += sum(_times_bound(problem.variable_bound, abs(c)) for i, j, _, c in blk.cells if i == j)
            bound += _times_bound(trace, -lam)
    return float(bound)


class _Conic:
    """``A x + s = b`` with ``s`` in (zero cone)^n_eq x PSD blocks, svec-scaled."""

    def __init__(self, problem: SdpProblem):
        n = problem.n_vars
        rows, cols, vals = [], [], []
        b_parts = []
        offset = 0
        self.n_eq = 0
        if problem.eq_matrix is not None:
            a = sp.coo_matrix(problem.eq_matrix)
            rows += a.row.tolist()
            cols += a.col.tolist()
            vals += a.data.tolist()
            b_parts.append(problem.eq_rhs)
            self.n_eq = a.shape[0]
            offset = self.n_eq
        self.block_offsets = []
        for blk in problem.blocks:
            size = blk.dim * (blk.dim + 1) // 2
            bvec = np.zeros(size)
            for i, j, v in blk.fixed:
                bvec[_svec_index(i, j)] += v * (1.0 if i == j else SQRT2)
            for i, j, var, c in blk.cells:
                rows.append(offset + _svec_index(i, j))
                cols.append(var)
                vals.append(-c * (1.0 if i == j else SQRT2))
            self.block_offsets.append((offset, blk.dim))
            b_parts.append(bvec)
            offset += size
        self.A = sp.csc_matrix((vals, (rows, cols)), shape=(offset, n))
        self.b = np.concatenate(b_parts) if b_parts else np.zeros(0)
        self.c = problem.objective

    def split_dual(self, z: np.ndarray) -> tuple[list[np.ndarray], np.ndarray | None]:
        mats = [_smat(z[off:off + dim * (dim + 1) // 2], dim) for off, dim in self.block_offsets]
        return mats, (z[:self.n_eq] if self.n_eq else None)


def _solve_clarabel(problem: SdpProblem, tol: float):
    import clarabel

    conic = _Conic(problem)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = 300
    cones = []
    if conic.n_eq:
        cones.append(clarabel.ZeroConeT(conic.n_eq))
    cones += [clarabel.PSDTriangleConeT(dim) for _, dim in conic.block_offsets]
    n = problem.n_vars
    sol = clarabel.DefaultSolver(sp.csc_matrix((n, n)), -conic.c, conic.A, conic.b, cones, settings).solve()
    status = str(sol.status)
    if "Infeasible" in status and "Almost" not in status:
        return "infeasible", None, None, None, status, sol.iterations
    duals, w = conic.split_dual(np.asarray(sol.z))
    return status == "Solved", np.asarray(sol.x), duals, w, status, sol.iterations


def _solve_cvxopt(problem: SdpProblem, tol: float):
    import cvxopt
    from cvxopt import solvers

    n = problem.n_vars
    gs, hs = [], []
    for blk in problem.blocks:
        d = blk.dim
        rows, cols, vals = [], [], []
        for i, j, var, c in blk.cells:
            rows.append(i + j * d)
            cols.append(var)
            vals.append(-c)
            if i != j:
                rows.append(j + i * d)
                cols.append(var)
                vals.append(-c)
        h = np.zeros((d, d))
        for i, j, v in blk.fixed:
            h[i, j] += v
            if i != j:
                h[j, i] += v
        gs.append(cvxopt.spmatrix(vals, rows, cols, (d * d, n)))
        hs.append(cvxopt.matrix(h))
    kw = {}
    if problem.eq_matrix is not None:
        kw = {"A": cvxopt.matrix(problem.eq_matrix), "b": cvxopt.matrix(problem.eq_rhs)}
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": min(tol, 1e-7), "maxiters": 200}
    try:
        sol = solvers.sdp(cvxopt.matrix(-problem.objective), Gs=gs, hs=hs, options=opts, **kw)
    except (ValueError, ArithmeticError) as exc:
        return False, None, None, None, f"cvxopt: {exc}", 0
    status = sol["status"]
    if "infeasible" in status:
        return "infeasible", None, None, None, status, sol.get("iterations", 0)
    if sol["x"] is None:
        return False, None, None, None, status, sol.get("iterations", 0)
    w = np.array(sol["y"]).reshape(-1) if problem.eq_matrix is not None else None
    return (status == "optimal", np.array(sol["x"]).reshape(-1), [np.array(z) for z in sol["zs"]],
            w, status, sol.get("iterations", 0))


def _eliminate_equalities(problem: SdpProblem) -> tuple[SdpProblem, np.ndarray, np.ndarray]:
    """Rewrite ``x = x0 + K z`` over the null space ``K`` of the equality matrix."""
    E, f = problem.eq_matrix, problem.eq_rhs
    x0 = np.linalg.lstsq(E, f, rcond=None)[0]
    if np.abs(E @ x0 - f).max() > 1e-9 * (1 + np.abs(f).max()):
        raise InvalidArgument("inconsistent equality constraints")
    K = la_null_space(E)
    blocks = []
    for blk in problem.blocks:
        f0 = blk.matrix(x0)
        fk = np.zeros((K.shape[1], blk.dim, blk.dim))
        for i, j, var, c in blk.cells:
            fk[:, i, j] += c * K[var]
        fixed = [(i, j, f0[i, j]) for i in range(blk.dim) for j in range(i, blk.dim) if f0[i, j] != 0]
        cells = [(i, j, v, fk[v, i, j]) for v in range(K.shape[1])
                 for i in range(blk.dim) for j in range(i, blk.dim) if abs(fk[v, i, j]) > 1e-15]
        blocks.append(PsdBlock(blk.dim, tuple(fixed), tuple(cells)))
    bound = problem.variable_bound * math.sqrt(problem.n_vars) if math.isfinite(problem.variable_bound) else math.inf
    reduced = SdpProblem(tuple(blocks), K.T @ problem.objective,
                         problem.objective_constant + float(problem.objective @ x0), variable_bound=bound)
    return reduced, x0, K


def la_null_space(E: np.ndarray) -> np.ndarray:
    from scipy.linalg import null_space

    return null_space(E)


def _solve_ipm(problem: SdpProblem, tol: float):
    from .ipm import SparseSdp, solve_sparse_sdp

    if problem.eq_matrix is not None:
        reduced, x0, K = _eliminate_equalities(problem)
        ok, z, duals, _, msg, it = _solve_ipm(reduced, tol)
        x = None if z is None else x0 + K @ z
        return ok, x, duals, None, msg, it
    offsets = np.cumsum([0] + [b.dim for b in problem.blocks])
    dim = int(offsets[-1])
    C = np.zeros((dim, dim))
    rows, cols, var, coef = [], [], [], []
    for off, blk in zip(offsets, problem.blocks):
        for i, j, v in blk.fixed:
            C[off + i, off + j] += v
            if i != j:
                C[off + j, off + i] += v
        for i, j, x, c in blk.cells:
            rows.append(off + i)
            cols.append(off + j)
            var.append(x)
            coef.append(-c)
            if i != j:
                rows.append(off + j)
                cols.append(off + i)
                var.append(x)
                coef.append(-c)
    # the certificate sums residuals over all variables, so aim lower
    res = solve_sparse_sdp(SparseSdp(dim, C, rows, cols, var, coef, problem.objective), tol=tol / 10)
    duals = [res.X[a:b, a:b] for a, b in zip(offsets[:-1], offsets[1:])]
    return res.converged, res.y, duals, None, res.message, res.iterations


_RAW = {"ipm": _solve_ipm, "clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}


def solve(problem: SdpProblem, tol: float | None = None, backend: str | None = None) -> SolveResult:
    """Maximize the problem's objective; numerical trouble is reported in ``status``, not raised."""
    tol = default_tol(problem) if tol is None else float(tol)
    if not 1e-10 <= tol <= 1e-4:
        raise InvalidArgument(f"tolerance {tol} outside [1e-10, 1e-4]")
    backend = (backend or os.environ.get("POLYBELL_SOLVER") or "ipm").lower()
    if backend not in _RAW:
        raise InvalidArgument(f"unknown SDP back end {backend!r}; choose from {BACKENDS}")
    converged, x, duals, w, message, iters = _RAW[backend](problem, tol)
    if converged == "infeasible":
        return SolveResult("infeasible", -math.inf, -math.inf, None, backend=backend,
                           iterations=iters, message=message)
    if x is None or not np.all(np.isfinite(x)) or not all(np.all(np.isfinite(z)) for z in duals):
        return SolveResult("failed", math.nan, math.inf, None, backend=backend,
                           iterations=iters, message=message)
    value = problem.value(x)
    upper, dres = certify(problem, duals, w)
    mats = problem.matrices(x)
    min_eig = min(float(np.linalg.eigvalsh(m).min()) for m in mats)
    pres = max(0.0, -min_eig)
    if problem.eq_matrix is not None:
        pres = max(pres, float(np.abs(problem.eq_matrix @ x - problem.eq_rhs).max()))
    scale = max(1.0, abs(value))
    gap = upper - value
    if converged and gap <= tol * scale and min_eig >= -10 * tol:
        status = "optimal"
    elif math.isfinite(upper) and gap <= 1e-4 * scale and min_eig >= -1e-4:
        status = "near-optimal"
    else:
        status = "failed"
    return SolveResult(status, value, upper, x, mats, pres, dres, min_eig, backend, iters, message)


def solve_many(problems: Sequence[SdpProblem], tol: float | None = None,
               backend: str | None = None, jobs: int = 1) -> list[SolveResult]:
    """Solve independent problems, in a process pool when ``jobs > 1``."""
    if jobs <= 1 or len(problems) < 2:
        return [solve(p, tol, backend) for p in problems]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(solve, problems, [tol] * len(problems), [backend] * len(problems),
                             chunksize=max(1, len(problems) // (4 * jobs))))


def require_ok(result: SolveResult, what: str = "SDP") -> SolveResult:
    if not result.ok:
        raise SolverError(f"{what}: solver status {result.status} ({result.message})")
    return result
