import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfstl.stl import (
    Always,
    And,
    ConcavityError,
    Eventually,
    FragmentError,
    HorizonError,
    IntervalError,
    Pred,
    StateLayout,
    StlSyntaxError,
    TrueF,
    Until,
    evaluate,
    parse_formula,
    parse_predicate,
    switching_schedule,
)

L1 = StateLayout(1, 1)


def traj_from(values, dt=0.5, t0=0.0):
    """Single-agent first-order trajectory whose state equals the given samples."""
    v = np.asarray(values, dtype=float)
    return SimpleNamespace(t=t0 + dt * np.arange(v.size), x=v[:, None], layout=L1)


# ---------------------------------------------------------------- parsing


def test_parse_always_abs_predicate():
    f = parse_formula("G[10,30](abs(v3-v2) <= 2)")
    assert isinstance(f, Always) and (f.a, f.b) == (10, 30)
    pred = f.sub.predicate
    lay = StateLayout(3, 2)
    c = pred.compile(lay)
    x = np.zeros(6)
    for v2, v3 in [(0.0, 0.0), (1.0, -0.5), (-3.0, 2.0)]:
        x[4], x[5] = v2, v3
        assert c.value(x) == pytest.approx(2 - abs(v3 - v2))
    assert pred.is_concave


def test_parse_true():
    assert parse_formula("TRUE") == TrueF()


def test_interval_error():
    with pytest.raises(IntervalError):
        parse_formula("F[5,3](p1 <= 0)")


def test_syntax_error_reports_position():
    with pytest.raises(StlSyntaxError) as e:
        parse_formula("G[0,1](p1 <= 0")
    assert e.value.pos == len("G[0,1](p1 <= 0")
    with pytest.raises(StlSyntaxError) as e:
        parse_formula("G[0,1](p1 <= 0) AND $")
    assert e.value.pos == 20


def test_nested_temporal_rejected():
    with pytest.raises(FragmentError):
        parse_formula("G[0,5](F[0,1](p1 >= 0))")
    with pytest.raises(FragmentError):
        Always(0, 1, Eventually(0, 1, TrueF()))


def test_non_concave_rejected():
    with pytest.raises(ConcavityError):
        parse_formula("G[0,1](abs(p1) >= 1)")
    with pytest.raises(ConcavityError):
        parse_formula("F[0,1]((p1 - 2)^2 >= 1)")


def test_reachability_predicate_is_concave():
    p = parse_predicate("(p1 - 1)^2 + (p2 + 2)^2 <= 4")
    c = p.compile(StateLayout(2, 1))
    x = np.array([0.5, -1.0])
    assert c.value(x) == pytest.approx(4 - 0.25 - 1.0)
    H = c.hessian(x)
    assert np.allclose(H, -2 * np.eye(2))


def test_named_predicates_resolve():
    f = parse_formula("G[0,2](near AND slow)", {"near": "abs(p1 - p2) <= 1", "slow": "v1 <= 3"})
    assert isinstance(f.sub, And)
    assert f.sub.left.predicate.name == "near"


def test_until_and_variable_alias():
    f = parse_formula("(x1 >= 0) U[1,2] (x1 >= 1)")
    assert isinstance(f, Until)
    assert f.left == Pred(parse_predicate("p1 >= 0"))


def test_unknown_identifier():
    with pytest.raises(StlSyntaxError):
        parse_formula("G[0,1](speed <= 2)")


def test_agent_index_checked_at_compile():
    p = parse_predicate("p4 <= 1")
    with pytest.raises(Exception, match="agent 4"):
        p.compile(StateLayout(3, 2))


# round trip: generate formulas structurally, print, parse, compare

_vars = st.sampled_from(["p1", "p2", "v1", "v3"])
_num = st.integers(-9, 9).map(float) | st.sampled_from([0.5, 1.25, -2.75])


@st.composite
def predicates(draw):
    v1, v2 = draw(_vars), draw(_vars)
    c = draw(st.integers(1, 9))
    kind = draw(st.integers(0, 3))
    if kind == 0:
        return f"abs({v1} - {v2} + {draw(_num)}) <= {c}"
    if kind == 1:
        return f"{draw(_num)}*{v1} + {v2} >= {draw(_num)}"
    if kind == 2:
        return f"({v1} - {draw(_num)})^2 <= {c}"
    return f"-{c}*abs({v1}) + 2*{v2} - 3 >= -1"


@st.composite
def psis(draw, depth=2):
    if depth == 0 or draw(st.booleans()):
        return "TRUE" if draw(st.integers(0, 5)) == 0 else draw(predicates())
    return f"{draw(psis(depth=depth - 1))} AND {draw(psis(depth=depth - 1))}"


@st.composite
def phis(draw):
    parts = []
    for _ in range(draw(st.integers(1, 3))):
        a = draw(st.integers(0, 20))
        b = a + draw(st.integers(0, 20))
        op = draw(st.sampled_from(["G", "F", "U"]))
        if op == "U":
            parts.append(f"({draw(psis())}) U[{a},{b}] ({draw(psis())})")
        else:
            parts.append(f"{op}[{a},{b}]({draw(psis())})")
    return " AND ".join(parts)


@settings(max_examples=200, deadline=None)
@given(phis())
def test_parse_print_parse_roundtrip(text):
    f = parse_formula(text)
    g = parse_formula(str(f))
    assert f == g
    assert str(g) == str(f)


# ---------------------------------------------------------------- semantics


def test_always_constant_signal():
    tr = traj_from([1.0] * 5)
    assert evaluate(parse_formula("G[0,1](p1 >= 0)"), tr, 0.0) is True


def test_eventually_single_grid_point():
    vals = -np.ones(5)
    vals[3] = 0.0  # t = 1.5
    tr = traj_from(vals)
    assert evaluate(parse_formula("F[0,2](p1 >= 0)"), tr, 0.0) is True
    vals[3] = -0.1
    assert evaluate(parse_formula("F[0,2](p1 >= 0)"), traj_from(vals), 0.0) is False


def test_until_example():
    # right side first holds at t = 1 (index 2); left side holds on [0, 1]
    right = np.array([-1, -1, 1, 1, 1.0])
    left = np.array([1, 1, 1, -1, -1.0])
    tr = SimpleNamespace(t=0.5 * np.arange(5), x=np.stack([left, right], axis=1), layout=StateLayout(2, 1))
    f = parse_formula("(p1 >= 0) U[0,2] (p2 >= 0)")
    assert evaluate(f, tr, 0.0) is True
    left[1] = -1.0
    tr.x = np.stack([left, right], axis=1)
    assert evaluate(f, tr, 0.0) is False


def test_horizon_error():
    tr = traj_from([1.0] * 3)
    with pytest.raises(HorizonError):
        evaluate(parse_formula("G[0,5](p1 >= 0)"), tr, 0.0)


# brute force oracle: integer grid indices, Def.-style recursion, no interpolation needed
# because every interval endpoint in these tests lies on the grid


def _bf_pred(pred, x, k):
    return pred.compile(L1).value(x[k]) >= 0


def _bf_psi(node, x, k):
    if isinstance(node, TrueF):
        return True
    if isinstance(node, Pred):
        return _bf_pred(node.predicate, x, k)
    if isinstance(node, And):
        return _bf_psi(node.left, x, k) and _bf_psi(node.right, x, k)
    raise TypeError


def brute(node, x, k, dt):
    if isinstance(node, (TrueF, Pred)):
        return _bf_psi(node, x, k)
    if isinstance(node, And):
        return brute(node.left, x, k, dt) and brute(node.right, x, k, dt)
    lo, hi = k + round(node.a / dt), k + round(node.b / dt)
    if isinstance(node, Always):
        return all(_bf_psi(node.sub, x, i) for i in range(lo, hi + 1))
    if isinstance(node, Eventually):
        return any(_bf_psi(node.sub, x, i) for i in range(lo, hi + 1))
    if isinstance(node, Until):
        for i in range(lo, hi + 1):
            if _bf_psi(node.right, x, i) and all(_bf_psi(node.left, x, m) for m in range(k, i + 1)):
                return True
        return False
    raise TypeError


_sig_preds = st.sampled_from(["p1 >= 0", "p1 <= 0.5", "abs(p1 - 0.2) <= 0.6", "(p1 + 0.3)^2 <= 1"])


@st.composite
def grid_formulas(draw):
    def psi():
        n = draw(st.integers(1, 2))
        return " AND ".join(draw(_sig_preds) for _ in range(n))

    parts = []
    for _ in range(draw(st.integers(1, 3))):
        a = draw(st.integers(0, 6))
        b = a + draw(st.integers(0, 6))
        op = draw(st.sampled_from(["G", "F", "U"]))
        parts.append(f"({psi()}) U[{a},{b}] ({psi()})" if op == "U" else f"{op}[{a},{b}]({psi()})")
    return " AND ".join(parts)


@settings(max_examples=300, deadline=None)
@given(grid_formulas(), st.lists(st.floats(-1.5, 1.5), min_size=14, max_size=40), st.integers(0, 1))
def test_evaluate_matches_brute_force(text, samples, start):
    f = parse_formula(text)
    tr = traj_from(samples, dt=1.0)
    if start + 12 >= len(samples):
        start = 0
    assert evaluate(f, tr, float(start)) == brute(f, tr.x, start, 1.0)


# ---------------------------------------------------------------- schedule


def test_schedule_example_deadlines():
    s = switching_schedule([30, 90, 60], 0.0)
    assert s.times == (0.0, 30.0, 60.0, 90.0)
    assert s.active == (frozenset({0, 1, 2}), frozenset({1, 2}), frozenset({1}))


def test_schedule_single_and_duplicate():
    assert switching_schedule([5], 0.0).times == (0.0, 5.0)
    s = switching_schedule([30, 30], 0.0)
    assert s.times == (0.0, 30.0)
    assert s.active == (frozenset({0, 1}),)


def test_schedule_empty_formula():
    s = switching_schedule(parse_formula("TRUE"), 2.0)
    assert s.times == (2.0,) and s.active == ()


def test_schedule_from_formula():
    f = parse_formula("G[10,30](p1 >= 0) AND F[10,90](p1 <= 1)")
    assert switching_schedule(f, 0.0).times == (0.0, 30.0, 90.0)


@given(st.lists(st.integers(1, 50).map(float), min_size=1, max_size=8), st.randoms())
def test_schedule_permutation_invariant(deadlines, rnd):
    a = switching_schedule(deadlines, 0.0)
    shuffled = list(deadlines)
    rnd.shuffle(shuffled)
    b = switching_schedule(shuffled, 0.0)
    assert a.times == b.times
    # active sets carry the same multiset of deadlines
    assert [sorted(deadlines[j] for j in s) for s in a.active] == [sorted(shuffled[j] for j in s) for s in b.active]
    assert a.times[-1] == max(deadlines)
    assert all(x < y for x, y in zip(a.times, a.times[1:]))
    assert all(s2 <= s1 for s1, s2 in zip(a.active, a.active[1:]))


def test_interval_index_right_continuous():
    s = switching_schedule([30, 60], 0.0)
    assert s.interval_index(0.0) == 0
    assert s.interval_index(29.999) == 0
    assert s.interval_index(30.0) == 1
    assert s.interval_index(30.0 - 1e-13) == 1
    assert s.interval_index(60.0) is None
    assert math.isclose(s.min_gap(), 30.0)
