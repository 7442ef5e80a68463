import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polybell.core import (BellExpression, CorrelationTable, Relabeling, Scenario, build_cglmp_iprime,
                           build_named, build_vb, check_nonsignaling, evaluate, load_an, merge_outcomes,
                           relabel, relabel_expression)
from polybell.errors import InvalidArgument

from oracles import random_ns_table


def iprime_by_loops(table: CorrelationTable, r: int) -> float:
    """The CGLMP combination summed cell by cell."""
    p = lambda mu, nu, k, l: table.p(mu, nu, k, l)
    cells = range(1, r + 1)
    total = 0.0
    for k in cells:
        for l in cells:
            if k < l:
                total += p(2, 2, k, l) + p(1, 1, k, l)
            if k > l:
                total += p(1, 2, k, l)
            if k >= l:
                total += p(2, 1, k, l)
    return total


def random_table(rng, scenario: Scenario) -> CorrelationTable:
    return CorrelationTable(scenario, {
        key: rng.dirichlet(np.ones(np.prod(scenario.block_shape(*key)))).reshape(scenario.block_shape(*key))
        for key in scenario.pairs})


seeds = st.integers(0, 2**32 - 1)


# --- scenario and table --------------------------------------------------------------------------

def test_scenario_validation():
    with pytest.raises(InvalidArgument):
        Scenario((), (2,))
    with pytest.raises(InvalidArgument):
        Scenario((2, 0), (2,))
    s = Scenario((2, 2), (2, 2, 3))
    assert Scenario.from_dict(json.loads(json.dumps(s.to_dict()))) == s
    assert s.to_dict() == {"a_outcomes": [2, 2], "b_outcomes": [2, 2, 3]}


def test_table_normalization_and_clamp():
    s = Scenario.uniform(1, 2)
    t = CorrelationTable(s, {(1, 1): [[0.5, 0.5 + 1e-13], [-1e-13, 0.0]]})
    assert t.p(1, 1, 2, 1) == 0.0
    with pytest.raises(InvalidArgument):
        CorrelationTable(s, {(1, 1): [[0.5, 0.6], [0.0, 0.0]]})
    with pytest.raises(InvalidArgument):
        CorrelationTable(s, {(1, 1): [[1.1, 0.0], [-0.1, 0.0]]})


def test_table_json_round_trip():
    rng = np.random.default_rng(3)
    t = random_table(rng, Scenario((2, 3), (4,)))
    back = CorrelationTable.from_dict(json.loads(json.dumps(t.to_dict())))
    assert back.allclose(t, atol=0)


# --- builders ------------------------------------------------------------------------------------

@pytest.mark.parametrize("r, count", [(1, 1), (2, 6), (3, 15), (4, 28)])
def test_cglmp_term_count(r, count):
    e = build_cglmp_iprime(r)
    assert len(e.joint_terms) == count
    assert e.constant == 0.0
    assert all(t.coeff == 1.0 for t in e.joint_terms)


def test_cglmp_r1_is_single_term():
    (t,) = build_cglmp_iprime(1).joint_terms
    assert (t.a_set, t.b_set, t.a_out, t.b_out) == (2, 1, 1, 1)


def test_cglmp_rejects_zero():
    with pytest.raises(InvalidArgument):
        build_cglmp_iprime(0)


@given(seeds, st.sampled_from([2, 3, 4]))
def test_cglmp_matches_cellwise_sum(seed, r):
    t = random_table(np.random.default_rng(seed), Scenario.uniform(2, r))
    assert evaluate(build_cglmp_iprime(r), t) == pytest.approx(iprime_by_loops(t, r), abs=1e-12)


def test_named_expressions_and_errors():
    for name in ("I3", "I4", "CH", "VB", "VBprime", "AN"):
        assert build_named(name).name == name
    with pytest.raises(InvalidArgument):
        build_named("I5")


def _coeff(expr, a_set, b_set, a_out, b_out):
    return sum(t.coeff for t in expr.joint_terms if (t.a_set, t.b_set, t.a_out, t.b_out) == (a_set, b_set, a_out, b_out))


def test_vb_coefficients():
    vb = build_named("VB")
    assert vb.scenario == Scenario((2, 2), (2, 2, 3))
    assert _coeff(vb, 2, 2, 1, 1) == -100.0
    assert _coeff(vb, 1, 1, 1, 1) == 100.0
    assert _coeff(vb, 2, 3, 1, 2) == -1.0
    vbp = build_named("VBprime")
    zeta = [t.coeff for t in vbp.b_marginal_terms if (t.setting, t.outcome) == (3, 2)]
    assert zeta == [pytest.approx(-(1 - 1 / math.sqrt(2)), abs=1e-15)]
    xi = [t.coeff for t in vbp.b_marginal_terms if (t.setting, t.outcome) == (3, 1)]
    assert xi == [pytest.approx(-(2 - 1 / math.sqrt(2)), abs=1e-15)]


def test_vb_against_hand_assembly():
    """Evaluate the VB-type combination cell by cell on random, possibly signaling, tables."""
    rng = np.random.default_rng(11)
    c, xi, zeta, ups = 3.52, 2 - 1 / math.sqrt(2), 1 - 1 / math.sqrt(2), 2 - math.sqrt(2)
    e = build_vb(c, xi, zeta, ups)
    for _ in range(20):
        t = random_table(rng, e.scenario)
        ch = (t.p(1, 1, 1, 1) + t.p(1, 2, 1, 1) + t.p(2, 1, 1, 1) - t.p(2, 2, 1, 1)
              - t.a_marginal(1, 1)[0] - t.b_marginal(1, 1)[0])
        want = (-xi * t.b_marginal(3, 1)[0] - zeta * t.b_marginal(3, 1)[1] - ups * t.a_marginal(1, 1)[0]
                + t.p(1, 3, 1, 1) + t.p(1, 3, 1, 2) + t.p(2, 3, 1, 1) - t.p(2, 3, 1, 2) + c * ch)
        assert evaluate(e, t) == pytest.approx(want, abs=1e-12)


def test_an_data_file():
    an = load_an()
    assert an.scenario == Scenario((4, 4, 4), (4, 4, 4))
    assert len(an.joint_terms) == 144
    assert evaluate(an, CorrelationTable.uniform(an.scenario)) == pytest.approx(0.0, abs=1e-12)


# --- evaluation ----------------------------------------------------------------------------------

def test_evaluate_examples():
    s3 = Scenario.uniform(2, 3)
    ones = CorrelationTable.deterministic(s3, [1, 1], [1, 1])
    uni = CorrelationTable.uniform(s3)
    assert evaluate(build_cglmp_iprime(3), ones) == 1.0
    assert evaluate(build_cglmp_iprime(3), uni) == pytest.approx(5 / 3, abs=1e-15)
    assert evaluate(build_named("I3"), uni) == pytest.approx(-2 / 3, abs=1e-15)
    ch = build_named("CH")
    assert evaluate(ch, CorrelationTable.deterministic(ch.scenario, [1, 1], [1, 1])) == 0.0


def test_evaluate_scenario_mismatch():
    with pytest.raises(InvalidArgument):
        evaluate(build_named("I3"), CorrelationTable.uniform(Scenario.uniform(2, 4)))


def test_marginal_partner_setting_matters_on_signaling_tables():
    s = Scenario.uniform(2, 2)
    e = BellExpression(s, a_marginal_terms=[(1, 1, 1.0, 2)])
    blocks = {key: np.full((2, 2), 0.25) for key in s.pairs}
    blocks[1, 2] = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert evaluate(e, CorrelationTable(s, blocks)) == 1.0
    e1 = BellExpression(s, a_marginal_terms=[(1, 1, 1.0, 1)])
    assert evaluate(e1, CorrelationTable(s, blocks)) == 0.5


@given(seeds, st.floats(0, 1))
def test_evaluate_is_affine(seed, alpha):
    rng = np.random.default_rng(seed)
    e = build_named("VBprime")
    p, q = random_table(rng, e.scenario), random_table(rng, e.scenario)
    mixed = evaluate(e, p.mix(q, alpha))
    assert mixed == pytest.approx(alpha * evaluate(e, p) + (1 - alpha) * evaluate(e, q), abs=1e-12)


def test_expression_json_round_trip():
    for name in ("I3", "VBprime", "AN"):
        e = build_named(name)
        text = e.to_json()
        back = BellExpression.from_json(text)
        assert back == e
    d = json.loads(build_named("VBprime").to_json())
    assert set(d) >= {"scenario", "constant", "joint", "a_marginal", "b_marginal"}
    row = d["b_marginal"][0]
    assert set(row) == {"set", "out", "coeff", "partner"}
    assert "-0.292893218813" in build_named("VBprime").to_json()


def test_dense_folds_marginals():
    ch = build_named("CH")
    d = ch.dense()
    assert np.allclose(d[1, 1], [[-1.0, -1.0], [-1.0, 0.0]])
    assert np.allclose(d[2, 2], [[-1.0, 0.0], [0.0, 0.0]])


# --- merging and relabeling ----------------------------------------------------------------------

def test_merge_uniform_example():
    m = merge_outcomes(CorrelationTable.uniform(Scenario.uniform(2, 3)), "both", 3, 1)
    assert m.scenario == Scenario.uniform(2, 2)
    for key in m.scenario.pairs:
        assert np.allclose(m.block(*key), [[4 / 9, 2 / 9], [2 / 9, 1 / 9]])


@given(seeds, st.sampled_from(["A", "B", "both"]), st.integers(1, 3), st.integers(1, 3))
def test_merge_conserves_mass(seed, party, src, dst):
    if src == dst:
        return
    t = random_table(np.random.default_rng(seed), Scenario((3, 2), (3, 3)))
    m = merge_outcomes(t, party, src, dst)
    for key in m.scenario.pairs:
        assert m.block(*key).sum() == pytest.approx(1.0, abs=1e-12)


def test_merge_errors():
    t = CorrelationTable.uniform(Scenario.uniform(2, 3))
    with pytest.raises(InvalidArgument):
        merge_outcomes(t, "both", 4, 1)
    with pytest.raises(InvalidArgument):
        merge_outcomes(t, "both", 2, 2)
    with pytest.raises(InvalidArgument):
        merge_outcomes(t, "C", 2, 1)


def test_merge_heterogeneous_only_where_labels_exist():
    s = Scenario((2, 2), (2, 2, 3))
    m = merge_outcomes(CorrelationTable.uniform(s), "B", 3, 1)
    assert m.scenario == Scenario((2, 2), (2, 2, 2))
    assert np.allclose(m.block(1, 3), [[2 / 6, 1 / 6], [2 / 6, 1 / 6]])


def test_relabel_examples():
    s = Scenario.uniform(2, 2)
    t = CorrelationTable.deterministic(s, [1, 1], [1, 1])
    assert relabel(t, Relabeling.identity(s)) == t
    swap = Relabeling(((2, 1), (2, 1)), ((2, 1), (2, 1)))
    assert relabel(t, swap) == CorrelationTable.deterministic(s, [2, 2], [2, 2])
    const = Relabeling(((1, 1), (1, 1)), ((1, 1), (1, 1)))
    rt = relabel(CorrelationTable.uniform(s), const)
    for key in s.pairs:
        assert rt.p(*key, 1, 1) == 1.0
    with pytest.raises(InvalidArgument):
        relabel(t, Relabeling(((1,), (1, 2)), ((1, 2), (1, 2))))
    with pytest.raises(InvalidArgument):
        relabel(t, Relabeling(((3, 1), (1, 2)), ((1, 2), (1, 2))))


@given(seeds)
def test_relabel_permutation_inverse(seed):
    rng = np.random.default_rng(seed)
    s = Scenario((3, 2), (4, 3))
    t = random_table(rng, s)
    perm = Relabeling(tuple(tuple(int(x) + 1 for x in rng.permutation(r)) for r in s.a_outcomes),
                      tuple(tuple(int(x) + 1 for x in rng.permutation(r)) for r in s.b_outcomes))
    assert relabel(relabel(t, perm), perm.inverse()).allclose(t, atol=0)


@given(seeds)
def test_relabel_expression_pulls_back(seed):
    rng = np.random.default_rng(seed)
    e = build_named("VBprime")
    s = e.scenario
    perm = Relabeling(tuple(tuple(int(x) + 1 for x in rng.permutation(r)) for r in s.a_outcomes),
                      tuple(tuple(int(x) + 1 for x in rng.permutation(r)) for r in s.b_outcomes))
    t = random_ns_like(rng, s)
    assert evaluate(relabel_expression(e, perm), relabel(t, perm)) == pytest.approx(evaluate(e, t), abs=1e-12)


def random_ns_like(rng, s: Scenario) -> CorrelationTable:
    """Product table: non-signaling, so marginal conventions do not matter."""
    return CorrelationTable.product(s, [rng.dirichlet(np.ones(r)) for r in s.a_outcomes],
                                    [rng.dirichlet(np.ones(r)) for r in s.b_outcomes])


# --- non-signaling check -------------------------------------------------------------------------

def test_check_nonsignaling_examples():
    s = Scenario.uniform(2, 2)
    ok = check_nonsignaling(CorrelationTable.uniform(s))
    assert ok.ok and ok.deviation == 0.0
    prod = CorrelationTable.product(s, [[0.3, 0.7], [0.5, 0.5]], [[0.9, 0.1], [0.2, 0.8]])
    assert check_nonsignaling(prod).ok
    blocks = {key: np.full((2, 2), 0.25) for key in s.pairs}
    blocks[1, 1] = np.array([[1.0, 0.0], [0.0, 0.0]])
    blocks[1, 2] = np.array([[0.0, 0.0], [0.0, 1.0]])
    bad = check_nonsignaling(CorrelationTable(s, blocks))
    assert not bad.ok and bad.deviation == pytest.approx(1.0)


# --- properties of the CGLMP combination ---------------------------------------------------------

@given(seeds, st.sampled_from([3, 4]))
def test_merge_chain_inequality(seed, r):
    rng = np.random.default_rng(seed)
    t = random_ns_table(rng, r)
    merged = merge_outcomes(t, "both", r, 1)
    lhs = evaluate(build_cglmp_iprime(r), t)
    loss = (t.block(2, 2)[r - 1, :].sum() + t.block(2, 2)[:, r - 1].sum()
            + t.block(1, 1)[r - 1, :].sum() + t.block(1, 1)[:, r - 1].sum())
    assert lhs >= evaluate(build_cglmp_iprime(r - 1), merged) - loss - 1e-12


@given(seeds, st.sampled_from([1, 2, 3, 4]))
def test_cglmp_terms_nonnegative(seed, r):
    t = random_table(np.random.default_rng(seed), Scenario.uniform(2, r))
    for term in build_cglmp_iprime(r).joint_terms:
        assert term.coeff * t.p(term.a_set, term.b_set, term.a_out, term.b_out) >= 0.0


@given(seeds, st.sampled_from([2, 3, 4]))
def test_single_outcome_gives_one(seed, r):
    t = random_ns_table(np.random.default_rng(seed), r)
    for top in range(r, 1, -1):
        t = merge_outcomes(t, "both", top, 1)
    value = evaluate(build_cglmp_iprime(1), t)
    # the only surviving cell carries the whole block
    assert value == t.block(2, 1).sum()
    assert abs(value - 1.0) <= 1e-9


def test_malformed_expression_json():
    from polybell.core import BellExpression
    from polybell.errors import InvalidArgument

    with pytest.raises(InvalidArgument):
        BellExpression.from_json("{}")
    with pytest.raises(InvalidArgument):
        BellExpression.from_json('{"scenario": {"a_outcomes": [2], "b_outcomes": [2]}, "joint": [{"a_set": 1}]}')
