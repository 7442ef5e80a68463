"""Bipartite Bell scenarios, correlation tables and Bell expressions.

Settings and outcomes are 1-based throughout the public API, so that
``table.p(2, 1, 3, 1)`` is the probability of Alice seeing outcome 3 and Bob
outcome 1 when they measure settings 2 and 1.  Internally every setting pair
owns a dense ``(r_a, r_b)`` numpy block indexed from zero.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import InvalidArgument

NORM_TOL = 1e-9
CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class Scenario:
    """Outcome count of every setting, per party."""

    a_outcomes: tuple[int, ...]
    b_outcomes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "a_outcomes", tuple(int(r) for r in self.a_outcomes))
        object.__setattr__(self, "b_outcomes", tuple(int(r) for r in self.b_outcomes))
        if not self.a_outcomes or not self.b_outcomes:
            raise InvalidArgument("each party needs at least one setting")
        if min(self.a_outcomes + self.b_outcomes) < 1:
            raise InvalidArgument("outcome counts must be positive")

    @classmethod
    def uniform(cls, settings: int, outcomes: int) -> "Scenario":
        return cls((outcomes,) * settings, (outcomes,) * settings)

    def outcomes(self, party: str) -> tuple[int, ...]:
        if party == "A":
            return self.a_outcomes
        if party == "B":
            return self.b_outcomes
        raise InvalidArgument(f"unknown party {party!r}")

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """All 1-based setting pairs, Alice-major."""
        return [(mu, nu) for mu in range(1, len(self.a_outcomes) + 1)
                for nu in range(1, len(self.b_outcomes) + 1)]

    def block_shape(self, mu: int, nu: int) -> tuple[int, int]:
        return self.a_outcomes[mu - 1], self.b_outcomes[nu - 1]

    def to_dict(self) -> dict:
        return {"a_outcomes": list(self.a_outcomes), "b_outcomes": list(self.b_outcomes)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        return cls(tuple(d["a_outcomes"]), tuple(d["b_outcomes"]))


def _check_setting(scenario: Scenario, party: str, setting: int, outcome: int | None = None):
    counts = scenario.outcomes(party)
    if not 1 <= setting <= len(counts):
        raise InvalidArgument(f"{party} setting {setting} out of range 1..{len(counts)}")
    if outcome is not None and not 1 <= outcome <= counts[setting - 1]:
        raise InvalidArgument(
            f"{party} outcome {outcome} out of range 1..{counts[setting - 1]} for setting {setting}")


class CorrelationTable:
    """Joint outcome probabilities for every setting pair.

    ``blocks`` maps a 1-based ``(mu, nu)`` pair to an array of shape
    ``(r_a, r_b)``.  Tiny negative entries are clamped to zero; every block
    must sum to one.
    """

    __slots__ = ("scenario", "_blocks")

    def __init__(self, scenario: Scenario, blocks: Mapping[tuple[int, int], np.ndarray]):
        self.scenario = scenario
        data = {}
        for mu, nu in scenario.pairs:
            if (mu, nu) not in blocks:
                raise InvalidArgument(f"missing block for setting pair {(mu, nu)}")
            b = np.array(blocks[mu, nu], dtype=float)
            if b.shape != scenario.block_shape(mu, nu):
                raise InvalidArgument(
                    f"block {(mu, nu)} has shape {b.shape}, expected {scenario.block_shape(mu, nu)}")
            if b.min() < -CLAMP_TOL:
                raise InvalidArgument(f"negative probability {b.min():.3g} in block {(mu, nu)}")
            b[b < 0] = 0.0
            if abs(b.sum() - 1.0) > NORM_TOL:
                raise InvalidArgument(f"block {(mu, nu)} sums to {b.sum():.12g}, not 1")
            b.setflags(write=False)
            data[mu, nu] = b
        self._blocks = data

    def block(self, mu: int, nu: int) -> np.ndarray:
        return self._blocks[mu, nu]

    @property
    def blocks(self) -> dict[tuple[int, int], np.ndarray]:
        return dict(self._blocks)

    def p(self, mu: int, nu: int, k: int, l: int) -> float:
        return float(self._blocks[mu, nu][k - 1, l - 1])

    def a_marginal(self, mu: int, partner: int = 1) -> np.ndarray:
        """Alice's outcome distribution for setting ``mu`` read off the ``(mu, partner)`` block."""
        return self._blocks[mu, partner].sum(axis=1)

    def b_marginal(self, nu: int, partner: int = 1) -> np.ndarray:
        return self._blocks[partner, nu].sum(axis=0)

    def mix(self, other: "CorrelationTable", weight: float) -> "CorrelationTable":
        """``weight * self + (1 - weight) * other``."""
        if other.scenario != self.scenario:
            raise InvalidArgument("scenario mismatch")
        return CorrelationTable(self.scenario, {
            key: weight * b + (1.0 - weight) * other.block(*key) for key, b in self._blocks.items()})

    def __eq__(self, other):
        if not isinstance(other, CorrelationTable) or other.scenario != self.scenario:
            return NotImplemented
        return all(np.array_equal(b, other.block(*key)) for key, b in self._blocks.items())

    def allclose(self, other: "CorrelationTable", atol: float = 1e-12) -> bool:
        return other.scenario == self.scenario and all(
            np.allclose(b, other.block(*key), atol=atol, rtol=0) for key, b in self._blocks.items())

    def __repr__(self):
        return f"CorrelationTable({self.scenario!r})"

    @classmethod
    def uniform(cls, scenario: Scenario) -> "CorrelationTable":
        return cls(scenario, {
            (mu, nu): np.full(scenario.block_shape(mu, nu), 1.0 / np.prod(scenario.block_shape(mu, nu)))
            for mu, nu in scenario.pairs})

    @classmethod
    def deterministic(cls, scenario: Scenario, a_choice: Sequence[int],
                      b_choice: Sequence[int]) -> "CorrelationTable":
        blocks = {}
        for mu, nu in scenario.pairs:
            b = np.zeros(scenario.block_shape(mu, nu))
            b[a_choice[mu - 1] - 1, b_choice[nu - 1] - 1] = 1.0
            blocks[mu, nu] = b
        return cls(scenario, blocks)

    @classmethod
    def product(cls, scenario: Scenario, a_dists: Sequence[Sequence[float]],
                b_dists: Sequence[Sequence[float]]) -> "CorrelationTable":
        """Uncorrelated table from local outcome distributions."""
        return cls(scenario, {
            (mu, nu): np.outer(a_dists[mu - 1], b_dists[nu - 1]) for mu, nu in scenario.pairs})

    def to_dict(self) -> dict:
        na, nb = len(self.scenario.a_outcomes), len(self.scenario.b_outcomes)
        return {
            "scenario": self.scenario.to_dict(),
            "blocks": [[self._blocks[mu, nu].tolist() for nu in range(1, nb + 1)]
                       for mu in range(1, na + 1)],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorrelationTable":
        scenario = Scenario.from_dict(d["scenario"])
        rows = d["blocks"]
        return cls(scenario, {(mu, nu): np.asarray(rows[mu - 1][nu - 1], dtype=float)
                              for mu, nu in scenario.pairs})


class JointTerm(NamedTuple):
    a_set: int
    b_set: int
    a_out: int
    b_out: int
    coeff: float


class MarginalTerm(NamedTuple):
    setting: int
    outcome: int
    coeff: float
    partner: int = 1


@dataclass(frozen=True)
class BellExpression:
    """Affine functional ``constant + sum of coefficient * probability``.

    Marginal terms name the partner setting whose block they are read from,
    which only matters for signaling tables.
    """

    scenario: Scenario
    constant: float = 0.0
    joint_terms: tuple[JointTerm, ...] = ()
    a_marginal_terms: tuple[MarginalTerm, ...] = ()
    b_marginal_terms: tuple[MarginalTerm, ...] = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "joint_terms", tuple(JointTerm(*t) for t in self.joint_terms))
        object.__setattr__(self, "a_marginal_terms", tuple(MarginalTerm(*t) for t in self.a_marginal_terms))
        object.__setattr__(self, "b_marginal_terms", tuple(MarginalTerm(*t) for t in self.b_marginal_terms))
        s = self.scenario
        for t in self.joint_terms:
            _check_setting(s, "A", t.a_set, t.a_out)
            _check_setting(s, "B", t.b_set, t.b_out)
        for t in self.a_marginal_terms:
            _check_setting(s, "A", t.setting, t.outcome)
            _check_setting(s, "B", t.partner)
        for t in self.b_marginal_terms:
            _check_setting(s, "B", t.setting, t.outcome)
            _check_setting(s, "A", t.partner)

    def dense(self) -> dict[tuple[int, int], np.ndarray]:
        """Coefficient block per setting pair, with marginals folded into their partner blocks."""
        s = self.scenario
        blocks = {key: np.zeros(s.block_shape(*key)) for key in s.pairs}
        for t in self.joint_terms:
            blocks[t.a_set, t.b_set][t.a_out - 1, t.b_out - 1] += t.coeff
        for t in self.a_marginal_terms:
            blocks[t.setting, t.partner][t.outcome - 1, :] += t.coeff
        for t in self.b_marginal_terms:
            blocks[t.partner, t.setting][:, t.outcome - 1] += t.coeff
        return blocks

    def scaled(self, factor: float, offset: float = 0.0) -> "BellExpression":
        """``factor * self + offset``."""
        return BellExpression(
            self.scenario, factor * self.constant + offset,
            tuple(t._replace(coeff=factor * t.coeff) for t in self.joint_terms),
            tuple(t._replace(coeff=factor * t.coeff) for t in self.a_marginal_terms),
            tuple(t._replace(coeff=factor * t.coeff) for t in self.b_marginal_terms),
            name=self.name)

    def __neg__(self):
        return self.scaled(-1.0)

    @classmethod
    def from_dense(cls, scenario: Scenario, blocks: Mapping[tuple[int, int], np.ndarray],
                   constant: float = 0.0, name: str = "") -> "BellExpression":
        terms = []
        for (mu, nu), b in sorted(blocks.items()):
            for (i, j), c in np.ndenumerate(np.asarray(b)):
                if c != 0:
                    terms.append(JointTerm(mu, nu, i + 1, j + 1, float(c)))
        return cls(scenario, constant, tuple(terms), name=name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "scenario": self.scenario.to_dict(),
            "constant": self.constant,
            "joint": [{"a_set": t.a_set, "b_set": t.b_set, "a_out": t.a_out,
                       "b_out": t.b_out, "coeff": t.coeff} for t in self.joint_terms],
            "a_marginal": [{"set": t.setting, "out": t.outcome, "coeff": t.coeff,
                            "partner": t.partner} for t in self.a_marginal_terms],
            "b_marginal": [{"set": t.setting, "out": t.outcome, "coeff": t.coeff,
                            "partner": t.partner} for t in self.b_marginal_terms],
        }

    def to_json(self, indent: int | None = 1) -> str:
        # repr() of a float round-trips, i.e. 17 significant digits
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: Mapping) -> "BellExpression":
        try:
            scenario = Scenario.from_dict(d["scenario"])
            joint = [JointTerm(t["a_set"], t["b_set"], t["a_out"], t["b_out"], float(t["coeff"]))
                     for t in d.get("joint", [])]
            am = [MarginalTerm(t["set"], t["out"], float(t["coeff"]), t.get("partner", 1))
                  for t in d.get("a_marginal", [])]
            bm = [MarginalTerm(t["set"], t["out"], float(t["coeff"]), t.get("partner", 1))
                  for t in d.get("b_marginal", [])]
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidArgument(f"malformed expression data: missing or bad field {exc}") from exc
        return cls(scenario, float(d.get("constant", 0.0)), tuple(joint), tuple(am), tuple(bm),
                   name=d.get("name", ""))

    @classmethod
    def from_json(cls, text: str) -> "BellExpression":
        return cls.from_dict(json.loads(text))


def build_cglmp_iprime(r: int) -> BellExpression:
    """Zohren-Gill form of the CGLMP combination for ``r`` outcomes.

    I' = P22(k<l) + P12(k>l) + P11(k<l) + P21(k>=l), non-negative on every
    table and at least 1 for local models.
    """
    if r < 1:
        raise InvalidArgument("r must be at least 1")
    terms = []
    pairs = [(k, l) for k in range(1, r + 1) for l in range(1, r + 1)]
    for mu, nu, cond in ((2, 2, lambda k, l: k < l), (1, 2, lambda k, l: k > l),
                         (1, 1, lambda k, l: k < l), (2, 1, lambda k, l: k >= l)):
        terms += [JointTerm(mu, nu, k, l, 1.0) for k, l in pairs if cond(k, l)]
    return BellExpression(Scenario.uniform(2, r), 0.0, tuple(terms), name=f"Iprime{r}")


def _ch_terms(c: float) -> tuple[list[JointTerm], list[MarginalTerm], list[MarginalTerm]]:
    joint = [JointTerm(1, 1, 1, 1, c), JointTerm(1, 2, 1, 1, c),
             JointTerm(2, 1, 1, 1, c), JointTerm(2, 2, 1, 1, -c)]
    return joint, [MarginalTerm(1, 1, -c, 1)], [MarginalTerm(1, 1, -c, 1)]


def build_vb(c: float, xi: float, zeta: float, upsilon: float, name: str = "VB") -> BellExpression:
    """Vertesi-Bene type expression; Bob's third setting has three outcomes."""
    joint, am, bm = _ch_terms(c)
    joint += [JointTerm(1, 3, 1, 1, 1.0), JointTerm(1, 3, 1, 2, 1.0),
              JointTerm(2, 3, 1, 1, 1.0), JointTerm(2, 3, 1, 2, -1.0)]
    bm += [MarginalTerm(3, 1, -xi, 1), MarginalTerm(3, 2, -zeta, 1)]
    if upsilon:
        am.append(MarginalTerm(1, 1, -upsilon, 1))
    return BellExpression(Scenario((2, 2), (2, 2, 3)), 0.0, tuple(joint), tuple(am), tuple(bm),
                          name=name)


def build_named(name: str) -> BellExpression:
    """Expression by table column name: ``I3``, ``I4``, ``CH``, ``VB`` or ``VBprime``.

    ``AN`` is repository data rather than code, see :func:`load_an`.
    """
    if name in ("I3", "I4"):
        expr = build_cglmp_iprime(int(name[1])).scaled(-1.0, 1.0)
        return BellExpression(expr.scenario, expr.constant, expr.joint_terms, name=name)
    if name == "CH":
        joint, am, bm = _ch_terms(1.0)
        return BellExpression(Scenario.uniform(2, 2), 0.0, tuple(joint), tuple(am), tuple(bm), name="CH")
    if name == "VB":
        return build_vb(100.0, 1.0, 1.0 - 1.0 / math.sqrt(2), 0.0, name="VB")
    if name == "VBprime":
        return build_vb(3.52, 2.0 - 1.0 / math.sqrt(2), 1.0 - 1.0 / math.sqrt(2),
                        2.0 - math.sqrt(2), name="VBprime")
    if name == "AN":
        return load_an()
    raise InvalidArgument(f"unknown expression {name!r}")


def load_an() -> BellExpression:
    from importlib import resources

    text = resources.files("polybell").joinpath("data/an.json").read_text()
    return BellExpression.from_json(text)


def evaluate(expr: BellExpression, table: CorrelationTable) -> float:
    if expr.scenario != table.scenario:
        raise InvalidArgument("expression and table live on different scenarios")
    value = expr.constant
    for t in expr.joint_terms:
        value += t.coeff * table.block(t.a_set, t.b_set)[t.a_out - 1, t.b_out - 1]
    for t in expr.a_marginal_terms:
        value += t.coeff * table.a_marginal(t.setting, t.partner)[t.outcome - 1]
    for t in expr.b_marginal_terms:
        value += t.coeff * table.b_marginal(t.setting, t.partner)[t.outcome - 1]
    return float(value)


def merge_outcomes(table: CorrelationTable, party: str, from_: int, into: int) -> CorrelationTable:
    """Fold outcome ``from_`` into ``into`` and drop ``from_``.

    Labels above ``from_`` shift down by one.  In heterogeneous scenarios
    settings lacking either label are left untouched.
    """
    if party not in ("A", "B", "both"):
        raise InvalidArgument(f"unknown party {party!r}")
    if from_ == into:
        raise InvalidArgument("from and into must differ")
    parties = ("A", "B") if party == "both" else (party,)
    s = table.scenario
    for pa in parties:
        top = max(s.outcomes(pa))
        if not (1 <= from_ <= top and 1 <= into <= top):
            raise InvalidArgument(f"labels {from_}, {into} out of range for party {pa}")

    def touched(pa, r):
        return pa in parties and from_ <= r and into <= r

    def fold(arr, axis):
        arr = np.moveaxis(arr, axis, 0).copy()
        arr[into - 1] += arr[from_ - 1]
        return np.moveaxis(np.delete(arr, from_ - 1, axis=0), 0, axis)

    a_new = tuple(r - 1 if touched("A", r) else r for r in s.a_outcomes)
    b_new = tuple(r - 1 if touched("B", r) else r for r in s.b_outcomes)
    blocks = {}
    for mu, nu in s.pairs:
        b = table.block(mu, nu)
        if touched("A", s.a_outcomes[mu - 1]):
            b = fold(b, 0)
        if touched("B", s.b_outcomes[nu - 1]):
            b = fold(b, 1)
        blocks[mu, nu] = b
    return CorrelationTable(Scenario(a_new, b_new), blocks)


@dataclass(frozen=True)
class Relabeling:
    """Per-setting outcome maps; ``a_maps[mu-1][k-1]`` is the new label of Alice's outcome k."""

    a_maps: tuple[tuple[int, ...], ...]
    b_maps: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "a_maps", tuple(tuple(int(x) for x in m) for m in self.a_maps))
        object.__setattr__(self, "b_maps", tuple(tuple(int(x) for x in m) for m in self.b_maps))

    @classmethod
    def identity(cls, scenario: Scenario) -> "Relabeling":
        return cls(tuple(tuple(range(1, r + 1)) for r in scenario.a_outcomes),
                   tuple(tuple(range(1, r + 1)) for r in scenario.b_outcomes))

    def check(self, scenario: Scenario):
        for maps, counts, pa in ((self.a_maps, scenario.a_outcomes, "A"),
                                 (self.b_maps, scenario.b_outcomes, "B")):
            if len(maps) != len(counts):
                raise InvalidArgument(f"party {pa}: {len(maps)} maps for {len(counts)} settings")
            for m, r in zip(maps, counts):
                if len(m) != r:
                    raise InvalidArgument(f"party {pa}: map {m} does not cover labels 1..{r}")
                if min(m) < 1:
                    raise InvalidArgument(f"party {pa}: map {m} has a non-positive label")

    def is_permutation(self) -> bool:
        return all(sorted(m) == list(range(1, len(m) + 1)) for m in self.a_maps + self.b_maps)

    def inverse(self) -> "Relabeling":
        if not self.is_permutation():
            raise InvalidArgument("only permutations can be inverted")

        def inv(m):
            out = [0] * len(m)
            for k, target in enumerate(m, start=1):
                out[target - 1] = k
            return tuple(out)

        return Relabeling(tuple(inv(m) for m in self.a_maps), tuple(inv(m) for m in self.b_maps))


def relabel(table: CorrelationTable, maps: Relabeling,
            scenario: Scenario | None = None) -> CorrelationTable:
    """Move mass from ``(k, l)`` to ``(lambda'_mu(k), lambda_nu(l))``; non-injective maps merge mass.

    The output scenario defaults to the input one; every target label must
    fit inside it.
    """
    maps.check(table.scenario)
    out = scenario or table.scenario
    if len(out.a_outcomes) != len(table.scenario.a_outcomes) or \
            len(out.b_outcomes) != len(table.scenario.b_outcomes):
        raise InvalidArgument("relabeling cannot change the number of settings")
    for maps_p, counts in ((maps.a_maps, out.a_outcomes), (maps.b_maps, out.b_outcomes)):
        for m, r in zip(maps_p, counts):
            if max(m) > r:
                raise InvalidArgument(f"target label {max(m)} exceeds outcome count {r}")
    blocks = {}
    for mu, nu in out.pairs:
        src = table.block(mu, nu)
        dst = np.zeros(out.block_shape(mu, nu))
        ia = np.asarray(maps.a_maps[mu - 1]) - 1
        ib = np.asarray(maps.b_maps[nu - 1]) - 1
        np.add.at(dst, (ia[:, None], ib[None, :]), src)
        blocks[mu, nu] = dst
    return CorrelationTable(out, blocks)


def relabel_expression(expr: BellExpression, perm: Relabeling) -> BellExpression:
    """Push an expression through an outcome permutation so that
    ``evaluate(relabel_expression(e, g), relabel(P, g)) == evaluate(e, P)``."""
    perm.check(expr.scenario)
    if not perm.is_permutation():
        raise InvalidArgument("expressions can only be relabeled by permutations")
    a, b = perm.a_maps, perm.b_maps
    return BellExpression(
        expr.scenario, expr.constant,
        tuple(t._replace(a_out=a[t.a_set - 1][t.a_out - 1], b_out=b[t.b_set - 1][t.b_out - 1])
              for t in expr.joint_terms),
        tuple(t._replace(outcome=a[t.setting - 1][t.outcome - 1]) for t in expr.a_marginal_terms),
        tuple(t._replace(outcome=b[t.setting - 1][t.outcome - 1]) for t in expr.b_marginal_terms),
        name=expr.name)


class NonsignalingCheck(NamedTuple):
    ok: bool
    deviation: float


def check_nonsignaling(table: CorrelationTable, tol: float = 1e-9) -> NonsignalingCheck:
    s = table.scenario
    worst = 0.0
    for mu in range(1, len(s.a_outcomes) + 1):
        margs = [table.a_marginal(mu, nu) for nu in range(1, len(s.b_outcomes) + 1)]
        worst = max(worst, max(float(np.abs(m - margs[0]).max()) for m in margs))
    for nu in range(1, len(s.b_outcomes) + 1):
        margs = [table.b_marginal(nu, mu) for mu in range(1, len(s.a_outcomes) + 1)]
        worst = max(worst, max(float(np.abs(m - margs[0]).max()) for m in margs))
    return NonsignalingCheck(worst <= tol, worst)

