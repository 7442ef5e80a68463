import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polybell.core import CorrelationTable, Scenario, build_named, check_nonsignaling, evaluate
from polybell.errors import InvalidArgument, InvalidModel
from polybell.models import (QuantumModel, _ascend, correlations_of, maximally_mixed, random_model,
                             seesaw)
from polybell.ncalg import restricted_bound
from polybell.polytope import enumerate_restrictions

TSIRELSON_CH = (math.sqrt(2) - 1) / 2


def basis_effects(r: int) -> np.ndarray:
    return np.stack([np.diag(np.eye(r)[k]).astype(complex) for k in range(r)])


def direct_probability(model, mu, nu, k, l):
    """Oracle: explicit Kronecker product and trace."""
    op = np.kron(model.a_effects[mu - 1][k - 1], model.b_effects[nu - 1][l - 1])
    return float(np.trace(model.state @ op).real)


def test_maximally_mixed_gives_uniform_table():
    s = Scenario.uniform(2, 3)
    model = maximally_mixed(random_model(s, 3, 3, seed=5))
    table = correlations_of(model)
    assert table.allclose(CorrelationTable.uniform(s), atol=1e-12)


def test_product_basis_state_is_deterministic():
    s = Scenario.uniform(2, 3)
    e0 = np.zeros((3, 3), dtype=complex)
    e0[0, 0] = 1
    model = QuantumModel(s, np.kron(e0, e0), [basis_effects(3)] * 2, [basis_effects(3)] * 2)
    assert correlations_of(model).allclose(CorrelationTable.deterministic(s, (1, 1), (1, 1)), atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_correlations_match_direct_trace(seed):
    s = Scenario((2, 3), (3, 2))
    model = random_model(s, 2, 3, seed=seed)
    table = correlations_of(model)
    rng = np.random.default_rng(seed)
    for (mu, nu) in s.pairs:
        k = int(rng.integers(1, s.a_outcomes[mu - 1] + 1))
        l = int(rng.integers(1, s.b_outcomes[nu - 1] + 1))
        assert table.p(mu, nu, k, l) == pytest.approx(direct_probability(model, mu, nu, k, l), abs=1e-12)
    assert check_nonsignaling(table, 1e-9).ok


def test_random_model_deterministic_and_valid():
    s = Scenario.uniform(2, 3)
    a = random_model(s, 3, 2, seed=11)
    b = random_model(s, 3, 2, seed=11)
    assert np.array_equal(a.state, b.state)
    for x, y in zip(a.a_effects + a.b_effects, b.a_effects + b.b_effects):
        assert np.array_equal(x, y)
    a.validate()
    assert not np.array_equal(random_model(s, 3, 2, seed=12).state, a.state)


def test_restriction_zeroes_the_missing_effect():
    s = Scenario.uniform(2, 3)
    for r in enumerate_restrictions(s, 2)[::7]:
        model = random_model(s, 3, 3, r, seed=0)
        model.validate()
        for party, effs in (("A", model.a_effects), ("B", model.b_effects)):
            for sup, eff in zip(r.supports(party), effs):
                for k in range(1, 4):
                    if k not in sup:
                        assert np.all(eff[k - 1] == 0)


def test_json_round_trip():
    s = Scenario((2, 3), (3, 2))
    r = enumerate_restrictions(s, 2)[1]
    model = random_model(s, 3, 2, r, seed=3)
    back = QuantumModel.from_json(model.to_json())
    assert np.allclose(back.state, model.state, atol=0, rtol=0)
    assert back.restriction == model.restriction
    assert correlations_of(back) == correlations_of(model)


def test_invalid_models_rejected():
    s = Scenario.uniform(1, 2)
    eff = basis_effects(2)
    rho = np.eye(4, dtype=complex) / 4
    QuantumModel(s, rho, [eff], [eff]).validate()
    with pytest.raises(InvalidModel):
        QuantumModel(s, rho * 2, [eff], [eff]).validate()
    with pytest.raises(InvalidModel):
        QuantumModel(s, rho, [eff * 0.9], [eff]).validate()
    bad = eff.copy()
    bad[0] = np.diag([1.5, 0]).astype(complex)
    bad[1] = np.diag([-0.5, 1]).astype(complex)
    with pytest.raises(InvalidModel):
        QuantumModel(s, rho, [bad], [eff]).validate()
    with pytest.raises(InvalidModel):
        correlations_of(QuantumModel(s, rho * 2, [eff], [eff]))


# --- see-saw -------------------------------------------------------------------------------------

def test_seesaw_ch_reaches_tsirelson():
    res = seesaw(build_named("CH"), 2, 2, restarts=5, seed=1)
    assert res.value >= TSIRELSON_CH - 1e-4
    assert res.value == pytest.approx(evaluate(build_named("CH"), correlations_of(res.model)), abs=1e-9)


def test_seesaw_i3_qutrits():
    res = seesaw(build_named("I3"), 3, 3, restarts=20, seed=0)
    assert res.value >= 0.3049
    res.model.validate()


def test_seesaw_restricted_never_beats_restricted_bound():
    e = build_named("I3")
    ceiling = restricted_bound(e, 2, 2).value
    for r in enumerate_restrictions(e.scenario, 2)[::20]:
        for d in (2, 3):
            res = seesaw(e, d, d, r, restarts=2, seed=d)
            assert res.value <= 0.20711 + 1e-4
            assert res.value <= ceiling + 1e-6


def test_seesaw_is_reproducible():
    e = build_named("CH")
    a = seesaw(e, 2, 2, restarts=3, seed=42)
    b = seesaw(e, 2, 2, restarts=3, seed=42)
    assert a.value == b.value and a.history == b.history


def test_seesaw_arguments_checked():
    e = build_named("CH")
    with pytest.raises(InvalidArgument):
        seesaw(e, 1, 2)
    with pytest.raises(InvalidArgument):
        seesaw(e, 2, 2, restarts=0)


@pytest.mark.parametrize("name, d, n", [("I3", 3, None), ("I3", 3, 2), ("VBprime", 3, None), ("CH", 2, None)])
def test_ascent_is_monotone(name, d, n):
    """Every state and measurement update leaves the value no smaller."""
    e = build_named(name)
    r = enumerate_restrictions(e.scenario, n)[5] if n else None
    trace: list[float] = []
    _ascend(e, random_model(e.scenario, d, d, r, seed=9), 60, 1e-9, None, trace)
    assert len(trace) > 3
    assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))


def nontrivial_outcomes(table: CorrelationTable, party: str, setting: int) -> int:
    """Brute-force count of outcomes with non-zero probability for one setting."""
    s = table.scenario
    blocks = [table.block(setting, nu) if party == "A" else table.block(mu, setting)
              for mu, nu in s.pairs if (mu if party == "A" else nu) == setting]
    marg = sum(b.sum(axis=1 if party == "A" else 0) for b in blocks)
    return int(np.count_nonzero(marg > 1e-12))


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]))
def test_kappa_accounting(seed, n):
    s = Scenario.uniform(2, 4)
    rs = enumerate_restrictions(s, n)
    r = rs[seed % len(rs)]
    table = correlations_of(random_model(s, 3, 3, r, seed=seed))
    for party in "AB":
        for setting in (1, 2):
            assert nontrivial_outcomes(table, party, setting) <= n


def test_seesaw_values_are_self_consistent():
    e = build_named("VBprime")
    res = seesaw(e, 3, 3, restarts=3, seed=2)
    assert res.value == pytest.approx(evaluate(e, correlations_of(res.model)), abs=1e-9)
    assert res.value <= 0.6978


def test_malformed_model_json():
    with pytest.raises(InvalidModel):
        QuantumModel.from_json('{"scenario": {"a_outcomes": [2], "b_outcomes": [2]}}')
