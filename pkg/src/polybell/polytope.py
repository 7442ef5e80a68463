"""Local (deterministic) and non-signaling bounds, and outcome restrictions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import BellExpression, CorrelationTable, Scenario
from .errors import InvalidArgument, SolverError


def _sign(direction: str) -> float:
    if direction == "max":
        return 1.0
    if direction == "min":
        return -1.0
    raise InvalidArgument(f"direction must be 'max' or 'min', got {direction!r}")


@dataclass(frozen=True)
class DeterministicStrategy:
    a_choice: tuple[int, ...]
    b_choice: tuple[int, ...]

    def check(self, scenario: Scenario):
        for choice, counts in ((self.a_choice, scenario.a_outcomes), (self.b_choice, scenario.b_outcomes)):
            if len(choice) != len(counts) or any(not 1 <= c <= r for c, r in zip(choice, counts)):
                raise InvalidArgument(f"strategy {choice} does not fit outcome counts {counts}")

    def table(self, scenario: Scenario) -> CorrelationTable:
        self.check(scenario)
        return CorrelationTable.deterministic(scenario, self.a_choice, self.b_choice)

    def to_dict(self) -> dict:
        return {"a": list(self.a_choice), "b": list(self.b_choice)}


class LocalBound(NamedTuple):
    value: float
    strategy: DeterministicStrategy


def local_bound(expr: BellExpression, direction: str = "max") -> LocalBound:
    """Exact optimum over deterministic strategies.

    Only one party's strategies are enumerated; the other party then
    optimizes each of its settings independently.
    """
    sign = _sign(direction)
    s = expr.scenario
    dense = {k: sign * v for k, v in expr.dense().items()}
    flip = math.prod(s.b_outcomes) < math.prod(s.a_outcomes)
    if flip:
        outer, inner = s.b_outcomes, s.a_outcomes
        coef = lambda o, i: dense[i, o].T
    else:
        outer, inner = s.a_outcomes, s.b_outcomes
        coef = lambda o, i: dense[o, i]
    strategies = np.array(list(itertools.product(*[range(r) for r in outer])), dtype=int)
    total = np.zeros(len(strategies))
    best_inner = []
    for i in range(1, len(inner) + 1):
        v = np.zeros((len(strategies), inner[i - 1]))
        for o in range(1, len(outer) + 1):
            v += coef(o, i)[strategies[:, o - 1], :]
        total += v.max(axis=1)
        best_inner.append(v.argmax(axis=1))
    idx = int(np.argmax(total))
    outer_choice = tuple(int(c) + 1 for c in strategies[idx])
    inner_choice = tuple(int(b[idx]) + 1 for b in best_inner)
    strat = DeterministicStrategy(inner_choice, outer_choice) if flip else \
        DeterministicStrategy(outer_choice, inner_choice)
    return LocalBound(float(sign * total[idx] + expr.constant), strat)


@dataclass(frozen=True)
class OutcomeRestriction:
    """Per setting, the outcome labels allowed to carry a non-zero effect."""

    a_supports: tuple[frozenset[int], ...]
    b_supports: tuple[frozenset[int], ...]
    n: int

    def __post_init__(self):
        object.__setattr__(self, "a_supports", tuple(frozenset(x) for x in self.a_supports))
        object.__setattr__(self, "b_supports", tuple(frozenset(x) for x in self.b_supports))

    @classmethod
    def full(cls, scenario: Scenario) -> "OutcomeRestriction":
        return cls(tuple(frozenset(range(1, r + 1)) for r in scenario.a_outcomes),
                   tuple(frozenset(range(1, r + 1)) for r in scenario.b_outcomes),
                   max(scenario.a_outcomes + scenario.b_outcomes))

    def supports(self, party: str) -> tuple[frozenset[int], ...]:
        return self.a_supports if party == "A" else self.b_supports

    def check(self, scenario: Scenario):
        for sup, counts in ((self.a_supports, scenario.a_outcomes), (self.b_supports, scenario.b_outcomes)):
            if len(sup) != len(counts):
                raise InvalidArgument("restriction does not match the number of settings")
            for s_, r in zip(sup, counts):
                if not s_:
                    raise InvalidArgument("empty support")
                if len(s_) > min(self.n, r) or not s_ <= set(range(1, r + 1)):
                    raise InvalidArgument(f"support {sorted(s_)} invalid for {r} outcomes and n={self.n}")

    def is_full(self, scenario: Scenario) -> bool:
        return all(len(s_) == r for s_, r in zip(self.a_supports + self.b_supports,
                                                 scenario.a_outcomes + scenario.b_outcomes))

    def to_dict(self) -> dict:
        return {"n": self.n, "a": [sorted(s_) for s_ in self.a_supports],
                "b": [sorted(s_) for s_ in self.b_supports]}

    def __str__(self):
        fmt = lambda sups: "|".join("".join(map(str, sorted(s_))) for s_ in sups)
        return f"A[{fmt(self.a_supports)}] B[{fmt(self.b_supports)}]"


def enumerate_restrictions(scenario: Scenario, n: int) -> list[OutcomeRestriction]:
    """Every assignment of a maximal support (size ``min(n, r)``) to each setting."""
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    choices = [[frozenset(c) for c in itertools.combinations(range(1, r + 1), min(n, r))]
               for r in scenario.a_outcomes + scenario.b_outcomes]
    na = len(scenario.a_outcomes)
    return [OutcomeRestriction(combo[:na], combo[na:], n) for combo in itertools.product(*choices)]


class Symmetry(NamedTuple):
    """Setting permutations plus per-setting outcome permutations (all 0-based images)."""

    a_settings: tuple[int, ...]
    b_settings: tuple[int, ...]
    a_outcomes: tuple[tuple[int, ...], ...]
    b_outcomes: tuple[tuple[int, ...], ...]

    def apply(self, r: OutcomeRestriction) -> OutcomeRestriction:
        a = [None] * len(r.a_supports)
        b = [None] * len(r.b_supports)
        for mu, sup in enumerate(r.a_supports):
            a[self.a_settings[mu]] = frozenset(self.a_outcomes[mu][k - 1] + 1 for k in sup)
        for nu, sup in enumerate(r.b_supports):
            b[self.b_settings[nu]] = frozenset(self.b_outcomes[nu][k - 1] + 1 for k in sup)
        return OutcomeRestriction(tuple(a), tuple(b), r.n)


def _setting_perms(counts: tuple[int, ...]) -> list[tuple[int, ...]]:
    return [p for p in itertools.permutations(range(len(counts)))
            if all(counts[p[i]] == counts[i] for i in range(len(counts)))]


def expression_symmetries(expr: BellExpression, limit: int = 20000,
                          max_outcomes: int = 6, atol: float = 1e-12) -> list[Symmetry]:
    """Relabelings of settings and outcomes that leave the folded coefficients invariant.

    Settings with more than ``max_outcomes`` outcomes only try the identity
    outcome map.  At most ``limit`` elements are returned; any subset still
    consists of genuine symmetries.
    """
    s = expr.scenario
    dense = {(mu - 1, nu - 1): c for (mu, nu), c in expr.dense().items()}
    na, nb = len(s.a_outcomes), len(s.b_outcomes)

    def perms(r):
        return list(itertools.permutations(range(r))) if r <= max_outcomes else [tuple(range(r))]

    # alternate the parties so blocks get checked as early as possible
    order = []
    for i in range(max(na, nb)):
        if i < na:
            order.append(("A", i))
        if i < nb:
            order.append(("B", i))

    found: list[Symmetry] = []
    for sa in _setting_perms(s.a_outcomes):
        for sb in _setting_perms(s.b_outcomes):
            pa: list = [None] * na
            pb: list = [None] * nb

            def consistent(party, idx):
                if party == "A":
                    mu = idx
                    checks = [(mu, nu) for nu in range(nb) if pb[nu] is not None]
                else:
                    nu = idx
                    checks = [(mu, nu) for mu in range(na) if pa[mu] is not None]
                for mu, nu in checks:
                    target = dense[sa[mu], sb[nu]][np.ix_(pa[mu], pb[nu])]
                    if not np.allclose(target, dense[mu, nu], atol=atol, rtol=0):
                        return False
                return True

            def search(pos):
                if len(found) >= limit:
                    return
                if pos == len(order):
                    found.append(Symmetry(sa, sb, tuple(pa), tuple(pb)))
                    return
                party, idx = order[pos]
                slots = pa if party == "A" else pb
                r = (s.a_outcomes if party == "A" else s.b_outcomes)[idx]
                for p in perms(r):
                    slots[idx] = p
                    if consistent(party, idx):
                        search(pos + 1)
                    slots[idx] = None

            search(0)
    return found


class RestrictionOrbit(NamedTuple):
    representative: OutcomeRestriction
    size: int


def restriction_orbits(expr: BellExpression, n: int,
                       symmetries: Sequence[Symmetry] | None = None) -> list[RestrictionOrbit]:
    """Group the restrictions of :func:`enumerate_restrictions` into symmetry classes.

    All members of a class share the same restricted bound, so one
    representative per class suffices.
    """
    syms = expression_symmetries(expr) if symmetries is None else symmetries
    seen: set[OutcomeRestriction] = set()
    orbits = []
    for r in enumerate_restrictions(expr.scenario, n):
        if r in seen:
            continue
        orbit = {g.apply(r) for g in syms} | {r}
        seen |= orbit
        orbits.append(RestrictionOrbit(r, len(orbit)))
    return orbits


def _ns_lp(expr: BellExpression, restriction: OutcomeRestriction | None, sign: float):
    s = expr.scenario
    if restriction is None:
        restriction = OutcomeRestriction.full(s)
    restriction.check(s)
    dense = expr.dense()
    a_sup = [sorted(x) for x in restriction.a_supports]
    b_sup = [sorted(x) for x in restriction.b_supports]
    index = {}
    cost = []
    for mu, nu in s.pairs:
        for k in a_sup[mu - 1]:
            for l in b_sup[nu - 1]:
                index[mu, nu, k, l] = len(cost)
                cost.append(-sign * dense[mu, nu][k - 1, l - 1])
    nvar = len(cost)
    rows = []
    rhs = []

    def row(entries):
        r = np.zeros(nvar)
        for key, c in entries:
            r[index[key]] += c
        return r

    for mu, nu in s.pairs:
        rows.append(row([((mu, nu, k, l), 1.0) for k in a_sup[mu - 1] for l in b_sup[nu - 1]]))
        rhs.append(1.0)
    na, nb = len(s.a_outcomes), len(s.b_outcomes)
    for mu in range(1, na + 1):
        for k in a_sup[mu - 1]:
            ref = [((mu, 1, k, l), -1.0) for l in b_sup[0]]
            for nu in range(2, nb + 1):
                rows.append(row(ref + [((mu, nu, k, l), 1.0) for l in b_sup[nu - 1]]))
                rhs.append(0.0)
    for nu in range(1, nb + 1):
        for l in b_sup[nu - 1]:
            ref = [((1, nu, k, l), -1.0) for k in a_sup[0]]
            for mu in range(2, na + 1):
                rows.append(row(ref + [((mu, nu, k, l), 1.0) for k in a_sup[mu - 1]]))
                rhs.append(0.0)
    res = linprog(np.array(cost), A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None),
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise SolverError(f"non-signaling LP failed: {res.message}")
    blocks = {key: np.zeros(s.block_shape(*key)) for key in s.pairs}
    for (mu, nu, k, l), i in index.items():
        blocks[mu, nu][k - 1, l - 1] = max(res.x[i], 0.0)
    for key, b in blocks.items():
        blocks[key] = b / b.sum()
    return float(-res.fun + sign * expr.constant), CorrelationTable(s, blocks)


class NsOptimum(NamedTuple):
    value: float
    restriction: OutcomeRestriction | None
    table: CorrelationTable


def nonsignaling_optimum(expr: BellExpression,
                         restriction: OutcomeRestriction | Iterable[OutcomeRestriction] | None = None,
                         direction: str = "max") -> NsOptimum:
    """Optimum over the (restricted) non-signaling polytope with an optimal table.

    Given a family of restrictions, the best member wins.
    """
    sign = _sign(direction)
    if restriction is None or isinstance(restriction, OutcomeRestriction):
        family = [restriction]
    else:
        family = list(restriction)
        if not family:
            raise InvalidArgument("empty restriction family")
    best = None
    for r in family:
        v, table = _ns_lp(expr, r, sign)
        if best is None or v > best[0]:
            best = (v, r, table)
    return NsOptimum(sign * best[0], best[1], best[2])


def nonsignaling_bound(expr: BellExpression,
                       restriction: OutcomeRestriction | Iterable[OutcomeRestriction] | None = None,
                       direction: str = "max", n: int | None = None) -> float:
    """Exact non-signaling optimum; ``n`` is shorthand for every restriction of that size."""
    if n is not None:
        if restriction is not None:
            raise InvalidArgument("give either a restriction or n, not both")
        restriction = enumerate_restrictions(expr.scenario, n)
    return nonsignaling_optimum(expr, restriction, direction).value
