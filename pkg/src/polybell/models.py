"""Explicit quantum models and see-saw search for lower bounds."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import unitary_group

from .core import BellExpression, CorrelationTable, Scenario, evaluate
from .errors import InvalidArgument, InvalidModel, SearchFailed, SolverError
from .ncalg import MomentSdp, ZERO, canonicalize, adjoint
from .polytope import OutcomeRestriction
from .sdp import PsdBlock, SdpProblem, solve

MODEL_TOL = 1e-9


def _herm(m: np.ndarray) -> np.ndarray:
    return (m + m.conj().T) / 2


@dataclass
class QuantumModel:
    """Bipartite state plus one POVM per setting and party.

    ``a_effects[mu]`` is an array of shape ``(r, d_A, d_A)``; effects of
    outcomes outside ``restriction`` must vanish.
    """

    scenario: Scenario
    state: np.ndarray
    a_effects: list[np.ndarray]
    b_effects: list[np.ndarray]
    restriction: OutcomeRestriction | None = None

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=complex)
        self.a_effects = [np.asarray(e, dtype=complex) for e in self.a_effects]
        self.b_effects = [np.asarray(e, dtype=complex) for e in self.b_effects]
        self.validate()

    @property
    def d_a(self) -> int:
        return self.a_effects[0].shape[1]

    @property
    def d_b(self) -> int:
        return self.b_effects[0].shape[1]

    def effects(self, party: str) -> list[np.ndarray]:
        return self.a_effects if party == "A" else self.b_effects

    def validate(self):
        s = self.scenario
        for party, counts in (("A", s.a_outcomes), ("B", s.b_outcomes)):
            effs = self.effects(party)
            if len(effs) != len(counts):
                raise InvalidModel(f"party {party}: {len(effs)} measurements for {len(counts)} settings")
            d = effs[0].shape[1]
            for mu, (e, r) in enumerate(zip(effs, counts), start=1):
                if e.shape != (r, d, d):
                    raise InvalidModel(f"{party}{mu}: effect array shape {e.shape}, expected {(r, d, d)}")
                if not np.allclose(e, np.conj(np.swapaxes(e, 1, 2)), atol=MODEL_TOL):
                    raise InvalidModel(f"{party}{mu}: effects are not Hermitian")
                for k in range(r):
                    if np.linalg.eigvalsh(_herm(e[k])).min() < -MODEL_TOL:
                        raise InvalidModel(f"{party}{mu}: effect {k + 1} is not positive semidefinite")
                if np.abs(e.sum(axis=0) - np.eye(d)).max() > MODEL_TOL:
                    raise InvalidModel(f"{party}{mu}: effects do not sum to the identity")
                if self.restriction is not None:
                    sup = self.restriction.supports(party)[mu - 1]
                    for k in range(1, r + 1):
                        if k not in sup and np.any(e[k - 1] != 0):
                            raise InvalidModel(f"{party}{mu}: outcome {k} outside the support is non-zero")
        dim = self.d_a * self.d_b
        if self.state.shape != (dim, dim):
            raise InvalidModel(f"state has shape {self.state.shape}, expected {(dim, dim)}")
        if not np.allclose(self.state, self.state.conj().T, atol=MODEL_TOL):
            raise InvalidModel("state is not Hermitian")
        if abs(np.trace(self.state).real - 1.0) > MODEL_TOL:
            raise InvalidModel("state trace differs from 1")
        if np.linalg.eigvalsh(_herm(self.state)).min() < -MODEL_TOL:
            raise InvalidModel("state is not positive semidefinite")
        if self.restriction is not None:
            try:
                self.restriction.check(s)
            except InvalidArgument as exc:
                raise InvalidModel(str(exc)) from exc

    def with_state(self, state: np.ndarray) -> "QuantumModel":
        return QuantumModel(self.scenario, state, self.a_effects, self.b_effects, self.restriction)

    def to_dict(self) -> dict:
        def enc(m):
            m = np.asarray(m)
            return [[[float(z.real), float(z.imag)] for z in row] for row in m]

        return {"scenario": self.scenario.to_dict(), "d_a": self.d_a, "d_b": self.d_b,
                "state": enc(self.state),
                "a_effects": [[enc(x) for x in e] for e in self.a_effects],
                "b_effects": [[enc(x) for x in e] for e in self.b_effects],
                "restriction": None if self.restriction is None else self.restriction.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "QuantumModel":
        def dec(m):
            a = np.asarray(m, dtype=float)
            return a[..., 0] + 1j * a[..., 1]

        try:
            s = Scenario.from_dict(d["scenario"])
            r = d.get("restriction")
            restriction = None if r is None else OutcomeRestriction(
                tuple(frozenset(x) for x in r["a"]), tuple(frozenset(x) for x in r["b"]), r["n"])
            return cls(s, dec(d["state"]), [dec(e) for e in d["a_effects"]],
                       [dec(e) for e in d["b_effects"]], restriction)
        except (KeyError, TypeError, IndexError) as exc:
            raise InvalidModel(f"malformed model data: missing or bad field {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "QuantumModel":
        return cls.from_dict(json.loads(text))


def _state4(model: QuantumModel) -> np.ndarray:
    da, db = model.d_a, model.d_b
    return model.state.reshape(da, db, da, db)


def correlations_of(model: QuantumModel) -> CorrelationTable:
    """``P(k, l | mu, nu) = tr(rho E_k^mu (x) F_l^nu)``."""
    rho = _state4(model)
    blocks = {}
    for mu, ea in enumerate(model.a_effects, start=1):
        for nu, eb in enumerate(model.b_effects, start=1):
            p = np.einsum("ijkl,xki,ylj->xy", rho, ea, eb).real
            blocks[mu, nu] = p / p.sum()
    return CorrelationTable(model.scenario, blocks)


def maximally_mixed(model: QuantumModel) -> QuantumModel:
    dim = model.d_a * model.d_b
    return model.with_state(np.eye(dim) / dim)


def _haar_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def _random_projective(rng: np.random.Generator, d: int, r: int, support: Sequence[int]) -> np.ndarray:
    """Columns of a Haar unitary dealt round-robin to the support outcomes."""
    u = unitary_group.rvs(d, random_state=rng) if d > 1 else np.ones((1, 1), dtype=complex)
    eff = np.zeros((r, d, d), dtype=complex)
    sup = sorted(support)
    for col in range(d):
        k = sup[col % len(sup)] - 1
        v = u[:, col]
        eff[k] += np.outer(v, v.conj())
    return eff


def random_model(scenario: Scenario, d_a: int, d_b: int, restriction: OutcomeRestriction | None = None,
                 seed: int | np.random.Generator | None = None) -> QuantumModel:
    """Haar-random pure state and random projective measurements, reproducible from ``seed``."""
    if d_a < 1 or d_b < 1:
        raise InvalidArgument("dimensions must be positive")
    rng = np.random.default_rng(seed)
    if restriction is None:
        restriction = OutcomeRestriction.full(scenario)
    restriction.check(scenario)
    a = [_random_projective(rng, d_a, r, sup) for r, sup in zip(scenario.a_outcomes, restriction.a_supports)]
    b = [_random_projective(rng, d_b, r, sup) for r, sup in zip(scenario.b_outcomes, restriction.b_supports)]
    return QuantumModel(scenario, _haar_state(rng, d_a * d_b), a, b, restriction)


# ---------------------------------------------------------------------------
# see-saw


def _bell_operator(expr: BellExpression, model: QuantumModel, dense=None) -> np.ndarray:
    dense = expr.dense() if dense is None else dense
    da, db = model.d_a, model.d_b
    w = expr.constant * np.eye(da * db, dtype=complex)
    for (mu, nu), c in dense.items():
        ea, eb = model.a_effects[mu - 1], model.b_effects[nu - 1]
        for k, l in zip(*np.nonzero(c)):
            w += c[k, l] * np.kron(ea[k], eb[l])
    return _herm(w)


def _functionals(expr: BellExpression, model: QuantumModel, party: str, setting: int, dense) -> np.ndarray:
    """``R_k`` with ``value = const + sum_k tr(E_k R_k)`` for one setting of one party."""
    rho = _state4(model)
    if party == "A":
        d = model.d_a
        r = model.scenario.a_outcomes[setting - 1]
        out = np.zeros((r, d, d), dtype=complex)
        for nu, eb in enumerate(model.b_effects, start=1):
            c = dense[setting, nu]
            g = np.einsum("kl,lij->kij", c, eb)  # partner operator per outcome k
            out += np.einsum("aibj,kji->kab", rho, g)
    else:
        d = model.d_b
        r = model.scenario.b_outcomes[setting - 1]
        out = np.zeros((r, d, d), dtype=complex)
        for mu, ea in enumerate(model.a_effects, start=1):
            c = dense[mu, setting]
            g = np.einsum("kl,kij->lij", c, ea)
            out += np.einsum("iajb,lji->lab", rho, g)
    return out


def _measurement_sdp(R: np.ndarray, support: Sequence[int]) -> SdpProblem:
    """Maximize ``sum_k tr(E_k R_k)`` over POVMs on ``support`` in the real embedding
    ``[[X, -Y], [Y, X]]`` of each Hermitian ``E = X + iY``.

    The last support outcome is ``I - sum`` of the others.
    """
    d = R.shape[1]
    sup = sorted(support)
    free = sup[:-1]
    last = sup[-1] - 1
    upper = [(i, j) for i in range(d) for j in range(i, d)]
    strict = [(i, j) for i in range(d) for j in range(i + 1, d)]
    per = len(upper) + len(strict)
    n_vars = per * len(free)
    obj = np.zeros(n_vars)
    const = float(np.trace(R[last]).real)
    blocks = []
    last_cells = []
    for f, k in enumerate(free):
        A = R[k - 1] - R[last]
        base = f * per
        cells = []
        for t, (i, j) in enumerate(upper):
            v = base + t
            obj[v] = A[i, j].real * (1.0 if i == j else 2.0)
            cells += [(i, j, v, 1.0), (i + d, j + d, v, 1.0)]
        for t, (i, j) in enumerate(strict):
            v = base + len(upper) + t
            # Re tr(A E) picks up Im(A_ij) Y_ij from both triangles
            obj[v] = 2.0 * A[i, j].imag
            cells += [(i + d, j, v, 1.0), (j + d, i, v, -1.0)]
        blocks.append(PsdBlock(2 * d, (), tuple(cells)))
        last_cells += [(i, j, v, -c) for i, j, v, c in cells]
    fixed = tuple((i, i, 1.0) for i in range(2 * d))
    blocks.append(PsdBlock(2 * d, fixed, tuple(last_cells)))
    return SdpProblem(tuple(blocks), obj, const, variable_bound=1.0)


def _effects_from(x: np.ndarray, d: int, r: int, support: Sequence[int]) -> np.ndarray:
    sup = sorted(support)
    upper = [(i, j) for i in range(d) for j in range(i, d)]
    strict = [(i, j) for i in range(d) for j in range(i + 1, d)]
    per = len(upper) + len(strict)
    eff = np.zeros((r, d, d), dtype=complex)
    for f, k in enumerate(sup[:-1]):
        e = np.zeros((d, d), dtype=complex)
        base = f * per
        for t, (i, j) in enumerate(upper):
            e[i, j] += x[base + t]
            if i != j:
                e[j, i] += x[base + t]
        for t, (i, j) in enumerate(strict):
            y = x[base + len(upper) + t]
            e[i, j] += 1j * y
            e[j, i] -= 1j * y
        eff[k - 1] = e
    eff[sup[-1] - 1] = np.eye(d) - eff.sum(axis=0)
    return _clean_povm(eff, sup)


def _clean_povm(eff: np.ndarray, support: Sequence[int]) -> np.ndarray:
    """Clip small negative eigenvalues and restore completeness exactly."""
    d = eff.shape[1]
    out = np.zeros_like(eff)
    for k in support:
        w, v = np.linalg.eigh(_herm(eff[k - 1]))
        out[k - 1] = (v * np.clip(w, 0.0, None)) @ v.conj().T
    total = _herm(out.sum(axis=0))
    w, v = np.linalg.eigh(total)
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
    for k in support:
        out[k - 1] = _herm(inv_sqrt @ out[k - 1] @ inv_sqrt)
    last = sorted(support)[-1] - 1
    out[last] = _herm(np.eye(d) - (out.sum(axis=0) - out[last]))
    return out


def _top_state(w: np.ndarray) -> tuple[np.ndarray, float]:
    vals, vecs = np.linalg.eigh(w)
    v = vecs[:, -1]
    return np.outer(v, v.conj()), float(vals[-1])


@dataclass
class SeesawResult:
    value: float
    model: QuantumModel
    iterations: int
    restarts: int
    history: list[float] = field(default_factory=list)  # best value per restart

    def to_dict(self) -> dict:
        return {"value": self.value, "iterations": self.iterations, "restarts": self.restarts,
                "history": self.history, "model": self.model.to_dict()}


def _ascend(expr: BellExpression, model: QuantumModel, max_iter: int, gain_tol: float,
            tol: float | None, trace: list | None = None) -> tuple[QuantumModel, float, int]:
    dense = expr.dense()
    sup = model.restriction or OutcomeRestriction.full(model.scenario)
    state, value = _top_state(_bell_operator(expr, model, dense))
    model = model.with_state(state)
    if trace is not None:
        trace.append(value)
    it = 0
    for it in range(1, max_iter + 1):
        prev = value
        for party, count in (("A", len(model.a_effects)), ("B", len(model.b_effects))):
            effs = list(model.effects(party))
            for mu in range(1, count + 1):
                R = _functionals(expr, model, party, mu, dense)
                support = sup.supports(party)[mu - 1]
                if len(support) == 1:
                    continue
                res = solve(_measurement_sdp(R, support), tol=tol)
                if res.status not in ("optimal", "near-optimal"):
                    raise SolverError(f"measurement step failed: {res.message}")
                new = _effects_from(res.x, R.shape[1], R.shape[0], support)
                cur = float(np.einsum("kij,kji->", effs[mu - 1], R).real)
                if float(np.einsum("kij,kji->", new, R).real) > cur:
                    effs[mu - 1] = new
                    model = (QuantumModel(model.scenario, model.state, effs, model.b_effects, model.restriction)
                             if party == "A" else
                             QuantumModel(model.scenario, model.state, model.a_effects, effs, model.restriction))
                if trace is not None:
                    trace.append(evaluate(expr, correlations_of(model)))
        state, top = _top_state(_bell_operator(expr, model, dense))
        if top > evaluate(expr, correlations_of(model)):
            model = model.with_state(state)
        value = evaluate(expr, correlations_of(model))
        if trace is not None:
            trace.append(value)
        if value - prev < gain_tol:
            break
    return model, value, it


def _one_restart(args):
    expr, d_a, d_b, restriction, seed, tol, max_iter, gain_tol, attempts = args
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        start = random_model(expr.scenario, d_a, d_b, restriction, rng)
        try:
            model, value, it = _ascend(expr, start, max_iter, gain_tol, tol)
        except (SolverError, np.linalg.LinAlgError):
            continue
        return model, value, it
    return None


def seesaw(expr: BellExpression, d_a: int | None = None, d_b: int | None = None,
           restriction: OutcomeRestriction | None = None, restarts: int = 10,
           seed: int | None = 0, tol: float | None = None, max_iter: int = 500,
           gain_tol: float = 1e-9, jobs: int = 1) -> SeesawResult:
    """Best see-saw model over ``restarts`` random starts.

    Each restart alternates a top-eigenvector state update with one small
    SDP per setting over that setting's POVM.  The returned value is
    recomputed from the returned model.
    """
    s = expr.scenario
    dmax = max(s.a_outcomes + s.b_outcomes)
    d_a = dmax if d_a is None else d_a
    d_b = dmax if d_b is None else d_b
    if d_a < 2 or d_b < 2:
        raise InvalidArgument("see-saw dimensions must be at least 2")
    if restarts < 1:
        raise InvalidArgument("restarts must be at least 1")
    if restriction is not None:
        restriction.check(s)
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    tasks = [(expr, d_a, d_b, restriction, sd, tol, max_iter, gain_tol, 3) for sd in seeds]
    if jobs > 1 and restarts > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_one_restart, tasks))
    else:
        runs = [_one_restart(t) for t in tasks]
    good = [r for r in runs if r is not None]
    if not good:
        raise SearchFailed("every see-saw restart failed")
    model, _, _ = max(good, key=lambda r: r[1])
    value = evaluate(expr, correlations_of(model))
    return SeesawResult(value, model, sum(r[2] for r in good), restarts,
                        [float(r[1]) if r is not None else math.nan for r in runs])


# ---------------------------------------------------------------------------
# moments of explicit models


def _word_operator(model: QuantumModel, word, party: str) -> np.ndarray:
    d = model.d_a if party == "A" else model.d_b
    op = np.eye(d, dtype=complex)
    for x in word:
        if x.party == party:
            op = op @ model.effects(party)[x.setting - 1][x.outcome - 1]
    return op


def model_moments(model: QuantumModel, msdp: MomentSdp) -> np.ndarray:
    """Real parts of ``<u>`` for every moment class of the relaxation."""
    out = np.zeros(len(msdp.classes))
    for i, m in enumerate(msdp.classes):
        op = np.kron(_word_operator(model, m, "A"), _word_operator(model, m, "B"))
        out[i] = float(np.trace(model.state @ op).real)
    return out


def model_moment_matrix(model: QuantumModel, msdp: MomentSdp) -> np.ndarray:
    """Moment matrix ``Re <u^dagger v>`` built directly from words of the model."""
    mons = msdp.monomials
    n = len(mons)
    ops = [np.kron(_word_operator(model, m, "A"), _word_operator(model, m, "B")) for m in mons]
    g = np.zeros((n, n))
    for i in range(n):
        left = model.state @ ops[i].conj().T
        for j in range(i, n):
            if canonicalize(adjoint(mons[i]) + mons[j]) is ZERO:
                continue
            g[i, j] = g[j, i] = float(np.trace(ops[j] @ left).real)
    return g
