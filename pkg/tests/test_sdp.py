import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polybell.core import build_named
from polybell.errors import InvalidArgument, SolverError
from polybell.ncalg import build_moment_sdp
from polybell.sdp import PsdBlock, SdpProblem, certify, default_tol, require_ok, solve, solve_many

TSIRELSON_CH = (math.sqrt(2) - 1) / 2


def one_by_one() -> SdpProblem:
    # maximize -x subject to [x] >= 0
    return SdpProblem((PsdBlock(1, (), ((0, 0, 0, 1.0),)),), np.array([-1.0]), variable_bound=math.inf)


def correlation_2x2() -> SdpProblem:
    # maximize m subject to [[1, m], [m, 1]] >= 0
    return SdpProblem((PsdBlock(2, ((0, 0, 1.0), (1, 1, 1.0)), ((0, 1, 0, 1.0),)),), np.array([1.0]))


def test_boundary_of_the_cone():
    res = solve(one_by_one())
    assert res.status == "optimal"
    assert res.value == pytest.approx(0.0, abs=1e-7)
    # the iterate may sit a hair outside the cone, so compare within the tolerance
    assert res.upper_bound >= res.value - 1e-12


def test_correlation_matrix_extreme():
    res = solve(correlation_2x2())
    assert res.status == "optimal"
    assert res.value == pytest.approx(1.0, abs=1e-7)
    assert res.upper_bound >= 1.0 - 1e-12


def test_ch_level_one_closed_form():
    p = build_moment_sdp(build_named("CH"), None, 1).problem
    res = solve(p, tol=1e-8)
    assert res.status == "optimal"
    assert abs(res.value - TSIRELSON_CH) <= 1e-8
    assert res.gap <= 1e-8 * max(1.0, abs(res.value))
    assert res.min_eigenvalue >= -1e-7
    assert res.upper_bound >= TSIRELSON_CH - 1e-12


def test_negated_objective_gives_negated_minimum():
    p = build_moment_sdp(build_named("CH"), None, 1).problem
    lo = solve(p.negated())
    # the minimum of CH over quantum correlations, through max of -CH
    hi = solve(build_moment_sdp(-build_named("CH"), None, 1).problem)
    assert lo.value == pytest.approx(hi.value, abs=1e-9)


def test_optimal_status_invariants():
    for name, level in (("I3", "1+AB"), ("VBprime", "2"), ("CH", "2")):
        p = build_moment_sdp(build_named(name), None, level).problem
        tol = default_tol(p)
        res = solve(p, tol)
        assert res.status == "optimal", (name, res.message)
        assert res.gap <= tol * max(1.0, abs(res.value))
        assert res.min_eigenvalue >= -10 * tol


def test_default_tolerance():
    small = build_moment_sdp(build_named("CH"), None, 1).problem
    assert default_tol(small) == 1e-8
    big = SdpProblem((PsdBlock(250, tuple((i, i, 1.0) for i in range(250)), ()),), np.zeros(0))
    assert default_tol(big) == 1e-6


def test_tolerance_range_and_backend_checked():
    p = correlation_2x2()
    with pytest.raises(InvalidArgument):
        solve(p, tol=1e-12)
    with pytest.raises(InvalidArgument):
        solve(p, tol=1e-3)
    with pytest.raises(InvalidArgument):
        solve(p, backend="nope")


def test_equality_constraints():
    # maximize x0 + x1 with [[1, x0], [x0, 1]] >= 0, [[1, x1], [x1, 1]] >= 0 and x0 = x1 / 2
    blocks = (PsdBlock(2, ((0, 0, 1.0), (1, 1, 1.0)), ((0, 1, 0, 1.0),)),
              PsdBlock(2, ((0, 0, 1.0), (1, 1, 1.0)), ((0, 1, 1, 1.0),)))
    p = SdpProblem(blocks, np.array([1.0, 1.0]), eq_matrix=np.array([[2.0, -1.0]]), eq_rhs=np.array([0.0]))
    res = solve(p)
    assert res.status == "optimal"
    assert res.value == pytest.approx(1.5, abs=1e-7)
    assert res.x == pytest.approx([0.5, 1.0], abs=1e-6)


def test_json_round_trip():
    p = build_moment_sdp(build_named("I3"), None, "1+AB").problem
    text = p.to_json()
    d = json.loads(text)
    assert d["format"] == "polybell-sdp/1" and d["n_vars"] == p.n_vars
    back = SdpProblem.from_json(text)
    assert back.blocks == p.blocks and back.labels == p.labels
    assert np.array_equal(back.objective, p.objective)
    assert back.objective_constant == p.objective_constant
    assert solve(back).value == pytest.approx(solve(p).value, abs=1e-12)
    with pytest.raises(InvalidArgument):
        SdpProblem.from_dict({**d, "format": "other"})


def test_bad_cells_rejected():
    with pytest.raises(InvalidArgument):
        SdpProblem((PsdBlock(2, (), ((0, 2, 0, 1.0),)),), np.array([1.0]))
    with pytest.raises(InvalidArgument):
        SdpProblem((PsdBlock(2, (), ((0, 1, 3, 1.0),)),), np.array([1.0]))


def test_certificate_is_an_upper_bound_for_any_dual_guess():
    """Any PSD matrix gives a valid (possibly weak) bound; check against the optimum."""
    p = build_moment_sdp(build_named("CH"), None, 1).problem
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = rng.normal(size=(5, 5))
        bound, _ = certify(p, [g @ g.T])
        assert bound >= TSIRELSON_CH - 1e-12


@given(st.integers(0, 2**32 - 1))
def test_feasible_assignment_never_beats_solver(seed):
    """A random PSD moment matrix of a quantum model is feasible, so it cannot exceed the optimum."""
    from polybell.models import model_moments, random_model

    e = build_named("CH")
    m = build_moment_sdp(e, None, 1)
    model = random_model(e.scenario, 2, 2, None, seed)
    x = model_moments(model, m)
    assert m.problem.value(x) <= solve(m.problem).upper_bound + 1e-12


@pytest.mark.parametrize("backend", ["clarabel", "cvxopt"])
def test_alternate_backends_agree(backend):
    pytest.importorskip(backend)
    p = build_moment_sdp(build_named("CH"), None, 1).problem
    res = solve(p, tol=1e-7, backend=backend)
    assert res.status in ("optimal", "near-optimal")
    assert res.value == pytest.approx(TSIRELSON_CH, abs=1e-6)
    assert res.upper_bound >= TSIRELSON_CH - 1e-9
    eq = solve(correlation_2x2(), tol=1e-7, backend=backend)
    assert eq.value == pytest.approx(1.0, abs=1e-6)


def test_solve_many_matches_serial_and_is_deterministic():
    probs = [build_moment_sdp(build_named(n), None, 1).problem for n in ("CH", "I3")]
    serial = solve_many(probs)
    pooled = solve_many(probs, jobs=2)
    for a, b in zip(serial, pooled):
        assert a.value == b.value
        assert a.upper_bound == b.upper_bound


def test_require_ok():
    res = solve(correlation_2x2())
    assert require_ok(res) is res
    bad = res.__class__(**{**res.__dict__, "status": "failed"})
    with pytest.raises(SolverError):
        require_ok(bad)
