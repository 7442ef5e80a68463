"""Projector words and the moment-matrix relaxation of restricted quantum models.

A setting whose outcomes may only be non-trivial on a support ``S`` is
modeled as an ``|S|``-outcome projective measurement: one letter for every
outcome of ``S`` except the largest, which is eliminated through
completeness.  Moments are real and identified with their adjoints, so the
moment matrix is real symmetric.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import BellExpression, Scenario
from .errors import InvalidArgument, SolverError
from .polytope import (OutcomeRestriction, Symmetry, enumerate_restrictions,
                       restriction_orbits)
from .sdp import PsdBlock, SdpProblem, SolveResult, solve_many

DEFAULT_LEVELS = {"I3": "2", "I4": "2", "CH": "1", "VB": "3", "VBprime": "3", "AN": "3"}


class Letter(NamedTuple):
    party: str
    setting: int
    outcome: int

    def __str__(self):
        return f"{self.party}{self.setting}.{self.outcome}"


class _Zero:
    __slots__ = ()

    def __repr__(self):
        return "ZERO"

    def __bool__(self):
        return False


ZERO = _Zero()
IDENTITY: tuple[Letter, ...] = ()

Monomial = tuple  # canonical tuple of Letters, Alice's part first


def _reduce(letters) -> tuple[Letter, ...] | _Zero:
    out: list[Letter] = []
    for x in letters:
        if out and out[-1].setting == x.setting:
            if out[-1].outcome == x.outcome:
                continue
            return ZERO
        out.append(x)
    return tuple(out)


def canonicalize(word: Sequence[Letter]) -> Monomial | _Zero:
    """Commute Alice's letters to the front and apply ``P^2 = P`` and ``P Q = 0``
    for different outcomes of one setting."""
    a = _reduce([x for x in word if x.party == "A"])
    if a is ZERO:
        return ZERO
    b = _reduce([x for x in word if x.party == "B"])
    if b is ZERO:
        return ZERO
    return a + b


def adjoint(m: Monomial) -> Monomial:
    a = [x for x in m if x.party == "A"]
    b = [x for x in m if x.party == "B"]
    return tuple(reversed(a)) + tuple(reversed(b))


def moment_class(m: Monomial) -> Monomial:
    """Representative of ``{m, m^dagger}``, whose moments coincide for real models."""
    return min(m, adjoint(m))


def word_str(m: Monomial | _Zero) -> str:
    if m is ZERO:
        return "0"
    return "*".join(map(str, m)) or "1"


def letters(scenario: Scenario, restriction: OutcomeRestriction | None = None
            ) -> dict[str, list[list[Letter]]]:
    """Retained letters per party and setting."""
    if restriction is None:
        restriction = OutcomeRestriction.full(scenario)
    restriction.check(scenario)
    out = {}
    for party in ("A", "B"):
        out[party] = [[Letter(party, mu, k) for k in sorted(sup)[:-1]]
                      for mu, sup in enumerate(restriction.supports(party), start=1)]
    return out


def _words(alphabet: list[list[Letter]], length: int) -> list[tuple[Letter, ...]]:
    flat = [x for group in alphabet for x in group]
    words: list[tuple[Letter, ...]] = [()]
    for _ in range(length):
        words = [w + (x,) for w in words for x in flat if not w or w[-1].setting != x.setting]
    return words


_LEVEL_RE = re.compile(r"^(\d+)((?:\+[AB]+)*)$")


def parse_level(level: int | str) -> tuple[int, list[tuple[int, int]]]:
    """``3`` or ``"1+AB+AAB"`` into the base length and extra (A length, B length) products."""
    m = _LEVEL_RE.match(str(level).replace(" ", ""))
    if not m or int(m.group(1)) < 1:
        raise InvalidArgument(f"bad level specification {level!r}")
    extras = [(w.count("A"), w.count("B")) for w in m.group(2).split("+") if w]
    return int(m.group(1)), extras


def generate_monomials(scenario: Scenario, restriction: OutcomeRestriction | None = None,
                       level: int | str = 1) -> list[Monomial]:
    """Identity plus all non-zero canonical words of the level.

    The list is closed under dropping a word's leading letter; extras like
    ``AAB`` pull in any missing shorter words.  That closure keeps every
    feasible moment inside ``[-1, 1]``.
    """
    base, extras = parse_level(level)
    alph = letters(scenario, restriction)
    cache: dict[tuple[str, int], list] = {}

    def words(party, n):
        if (party, n) not in cache:
            cache[party, n] = _words(alph[party], n)
        return cache[party, n]

    shapes = [(la, t - la) for t in range(base + 1) for la in range(t, -1, -1)] + extras
    result: list[Monomial] = []
    seen: set = set()

    def add(m):
        if m not in seen:
            seen.add(m)
            result.append(m)

    for la, lb in shapes:
        for wa in words("A", la):
            for wb in words("B", lb):
                add(wa + wb)
    i = 0
    while i < len(result):
        m = result[i]
        if m:
            add(m[1:])
        i += 1
    return result


@dataclass(frozen=True)
class MomentSdp:
    problem: SdpProblem
    monomials: tuple[Monomial, ...]
    classes: tuple[Monomial, ...]  # variable i is the moment of classes[i]
    restriction: OutcomeRestriction
    level: str

    @property
    def dim(self) -> int:
        return len(self.monomials)


def _expansion(sup: frozenset[int], party: str, setting: int, outcome: int) -> dict:
    """Effect of ``outcome`` as a combination of retained letters (``None`` = identity)."""
    if outcome not in sup:
        return {}
    kept = sorted(sup)
    if outcome != kept[-1]:
        return {Letter(party, setting, outcome): 1.0}
    d: dict = {None: 1.0}
    for k in kept[:-1]:
        d[Letter(party, setting, k)] = -1.0
    return d


def build_moment_sdp(expr: BellExpression, restriction: OutcomeRestriction | None = None,
                     level: int | str = 2) -> MomentSdp:
    s = expr.scenario
    if restriction is None:
        restriction = OutcomeRestriction.full(s)
    restriction.check(s)
    mons = generate_monomials(s, restriction, level)
    var_of: dict[Monomial, int] = {}
    classes: list[Monomial] = []
    fixed = []
    cells = []
    for i, u in enumerate(mons):
        ua = adjoint(u)
        for j in range(i, len(mons)):
            w = canonicalize(ua + mons[j])
            if w is ZERO:
                continue
            key = moment_class(w)
            if key == IDENTITY:
                fixed.append((i, j, 1.0))
                continue
            idx = var_of.get(key)
            if idx is None:
                idx = var_of[key] = len(classes)
                classes.append(key)
            cells.append((i, j, idx, 1.0))

    c = np.zeros(len(classes))
    const = expr.constant

    def add_moment(word: list[Letter], coeff: float):
        nonlocal const
        w = canonicalize(word)
        if w is ZERO:
            return
        key = moment_class(w)
        if key == IDENTITY:
            const += coeff
        elif key in var_of:
            c[var_of[key]] += coeff
        else:
            raise InvalidArgument(f"level {level} lacks the moment {word_str(key)}")

    a_sup, b_sup = restriction.a_supports, restriction.b_supports
    for t in expr.joint_terms:
        ea = _expansion(a_sup[t.a_set - 1], "A", t.a_set, t.a_out)
        eb = _expansion(b_sup[t.b_set - 1], "B", t.b_set, t.b_out)
        for la, ca in ea.items():
            for lb, cb in eb.items():
                add_moment([x for x in (la, lb) if x is not None], t.coeff * ca * cb)
    for terms, sups, party in ((expr.a_marginal_terms, a_sup, "A"), (expr.b_marginal_terms, b_sup, "B")):
        for t in terms:
            for lt, ct in _expansion(sups[t.setting - 1], party, t.setting, t.outcome).items():
                add_moment([] if lt is None else [lt], t.coeff * ct)

    problem = SdpProblem((PsdBlock(len(mons), tuple(fixed), tuple(cells)),), c, const,
                         variable_bound=1.0, labels=tuple(word_str(k) for k in classes))
    return MomentSdp(problem, tuple(mons), tuple(classes), restriction, str(level))


class RestrictionResult(NamedTuple):
    restriction: OutcomeRestriction
    value: float
    upper_bound: float
    status: str
    orbit_size: int = 1


@dataclass
class RestrictedBound:
    value: float
    certified: float  # certified upper bound (max) or lower bound (min)
    direction: str
    n: int
    level: str
    breakdown: list[RestrictionResult]

    @property
    def best(self) -> RestrictionResult:
        pick = max if self.direction == "max" else min
        return pick(self.breakdown, key=lambda r: r.value)

    def to_dict(self) -> dict:
        return {"value": self.value, "certified": self.certified, "direction": self.direction,
                "n": self.n, "level": self.level,
                "breakdown": [{"restriction": r.restriction.to_dict(), "value": r.value,
                               "upper_bound": r.upper_bound, "status": r.status,
                               "orbit_size": r.orbit_size} for r in self.breakdown]}


def restricted_bound(expr: BellExpression, n: int, level: int | str = 2, direction: str = "max",
                     symmetry: bool = False, symmetries: Sequence[Symmetry] | None = None,
                     tol: float | None = None, backend: str | None = None,
                     jobs: int = 1) -> RestrictedBound:
    """Relaxation bound over all quantum models with at most ``n`` non-trivial outcomes per setting.

    With ``symmetry`` only one restriction per symmetry class of the
    expression is solved.  Raises :class:`SolverError` if any sub-problem
    fails.
    """
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    if direction not in ("max", "min"):
        raise InvalidArgument(f"direction must be 'max' or 'min', got {direction!r}")
    target = expr if direction == "max" else -expr
    if symmetry or symmetries is not None:
        orbits = restriction_orbits(target, n, symmetries)
        family = [(o.representative, o.size) for o in orbits]
    else:
        family = [(r, 1) for r in enumerate_restrictions(expr.scenario, n)]
    problems = [build_moment_sdp(target, r, level).problem for r, _ in family]
    results: list[SolveResult] = solve_many(problems, tol=tol, backend=backend, jobs=jobs)
    sign = 1.0 if direction == "max" else -1.0
    breakdown = [RestrictionResult(r, sign * res.value, sign * res.upper_bound, res.status, size)
                 for (r, size), res in zip(family, results)]
    failed = [b for b in breakdown if b.status not in ("optimal", "near-optimal")]
    if failed:
        raise SolverError(f"{len(failed)} of {len(breakdown)} restricted problems failed, first: "
                          f"{failed[0].restriction} ({failed[0].status})")
    pick = max if direction == "max" else min
    return RestrictedBound(pick(b.value for b in breakdown), pick(b.upper_bound for b in breakdown),
                           direction, n, str(level), breakdown)


def npa_bound(expr: BellExpression, level: int | str = 2, direction: str = "max",
              tol: float | None = None, backend: str | None = None) -> RestrictedBound:
    """Unrestricted relaxation bound."""
    n = max(expr.scenario.a_outcomes + expr.scenario.b_outcomes)
    return restricted_bound(expr, n, level, direction, tol=tol, backend=backend)


FALLBACK_LEVELS = ("3", "2+AAB+ABB", "2", "1+AB", "1")
DEFAULT_MAX_DIM = 250


def choose_level(expr: BellExpression, n: int, level: int | str, max_dim: int | None = DEFAULT_MAX_DIM
                 ) -> tuple[str, bool]:
    """First level, starting at ``level`` and descending, whose moment matrix has at
    most ``max_dim`` rows for every restriction with ``n`` outcomes.

    Returns the level and whether it differs from the request.
    """
    level = str(level)
    parse_level(level)
    if max_dim is None:
        return level, False
    s = expr.scenario
    r = enumerate_restrictions(s, n)[0]  # all maximal restrictions share the alphabet sizes
    chain = [level] + [lv for lv in FALLBACK_LEVELS if lv != level and _coarser(lv, level)]
    for lv in chain:
        if len(generate_monomials(s, r, lv)) <= max_dim:
            return lv, lv != level
    return chain[-1], chain[-1] != level


def _coarser(candidate: str, level: str) -> bool:
    cb, ce = parse_level(candidate)
    lb, le = parse_level(level)
    return (cb, len(ce)) < (lb, len(le))
