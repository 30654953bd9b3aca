import math
from types import SimpleNamespace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfstl.barrier import (
    EnvelopeSpec,
    OperatorChain,
    PsiChain,
    RelativeDegreeError,
    ScheduleExhausted,
    build_barrier,
    build_psi_chain,
    smooth_min,
    softmin_weights,
)
from lfstl.network import Dynamics
from lfstl.stl import StateLayout, evaluate, parse_formula

L_FULL = [[1, 0, -1], [0, 1, -1], [0, 0, 0]]
L_PART = [[2, -1, -1], [-1, 1, 0], [0, 0, 0]]
LAY = StateLayout(3, 2)
TASKS = {
    "phi1": parse_formula("G[10,30](abs(v3 - v2) <= 2) AND F[10,90](abs(p1 + 1 - p3) <= 1)"),
    "phi2": parse_formula("F[10,30](abs(v3 - v2) <= 1) AND G[30,90](abs(v1 - v3) <= 2)"),
    "phi3": parse_formula("F[10,60](abs(v3 - v1) <= 1) AND G[60,90](abs(v2 - v3) <= 1) AND G[50,60](abs(p2 + 1 - p3) <= 1)"),
}


def mp_smooth_min(values, eta):
    mpmath.mp.dps = 60
    s = mpmath.fsum(mpmath.exp(-mpmath.mpf(eta) * mpmath.mpf(v)) for v in values)
    return float(-mpmath.log(s) / eta)


# ---------------------------------------------------------------- smooth min


@pytest.mark.parametrize("c", [-3.0, 0.0, 2.5, 1e3])
def test_smooth_min_single_value(c):
    assert smooth_min([c], 10) == c


def test_smooth_min_pair_identity():
    for c, eta in [(1.0, 10.0), (-2.0, 0.5)]:
        assert smooth_min([c, c], eta) == pytest.approx(c - math.log(2) / eta, abs=1e-15)


def test_smooth_min_against_high_precision():
    v = smooth_min([0.0, 5.0], 2.0)
    assert -math.log(2) / 2 <= v <= 0
    assert v == pytest.approx(mp_smooth_min([0.0, 5.0], 2.0), abs=1e-15)


def test_smooth_min_no_overflow():
    # direct summation would overflow exp(1e4)
    assert smooth_min([-1000.0, -999.0], 10.0) == pytest.approx(mp_smooth_min([-1000.0, -999.0], 10.0), rel=1e-14)


def test_smooth_min_empty():
    with pytest.raises(ValueError):
        smooth_min([], 1.0)


_vals = st.lists(st.floats(-50, 50), min_size=1, max_size=8)


@settings(max_examples=300)
@given(_vals, st.floats(0.1, 50))
def test_sandwich_and_weights(values, eta):
    v = smooth_min(values, eta)
    lo = min(values) - math.log(len(values)) / eta
    assert lo - 1e-9 <= v <= min(values) + 1e-9
    assert v == pytest.approx(mp_smooth_min(values, eta), abs=1e-9)
    w = softmin_weights(values, eta)
    assert np.all((w >= 0) & (w <= 1))
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_equal_weights():
    assert np.allclose(softmin_weights([1.5, 1.5], 3.0), [0.5, 0.5])


# ---------------------------------------------------------------- composite barrier


def test_single_operator_degenerates():
    bar = build_barrier(parse_formula("G[10,30](p1 + 2*v3 <= 4)"), LAY, eta=10, envelope=EnvelopeSpec("fixed", -1.0))
    x = np.arange(6.0)
    h, dx, dt = bar.value_and_gradients(x, 3.0)
    assert h == pytest.approx(bar.operators[0].value(x, 3.0))
    a = np.zeros(6)
    a[0], a[5] = -1, -2
    assert np.array_equal(dx, a)
    assert dt == pytest.approx(-1.0 / 10)


def test_sec5_task1_two_operators():
    bar = build_barrier(TASKS["phi1"], LAY)
    assert len(bar.operators) == 2
    assert bar.schedule.times == (0.0, 30.0, 90.0)


def test_equal_deadlines_switch_once():
    f = parse_formula("G[0,5](p1 <= 1) AND F[1,5](p2 >= 0) AND G[2,5](v1 <= 3)")
    bar = build_barrier(f, LAY)
    assert bar.schedule.times == (0.0, 5.0)
    assert bar.active(4.99) == (0, 1, 2)
    with pytest.raises(ScheduleExhausted):
        bar.value(np.zeros(6), 5.0)


def test_g_over_conjunction_is_split():
    bar = build_barrier(parse_formula("G[0,5](p1 <= 1 AND p2 >= 0)"), LAY)
    assert len(bar.operators) == 2
    bar = build_barrier(parse_formula("F[0,5](p1 <= 1 AND p2 >= 0)"), LAY)
    assert len(bar.operators) == 1


def test_envelope_shapes():
    bar = build_barrier(parse_formula("G[10,30](p1 <= 1) AND F[5,20](p2 >= 0)"), LAY, envelope=EnvelopeSpec("fixed", -2.0))
    g, f = (op.envelope for op in bar.operators)
    assert g.value(0.0) == -2.0 and g.value(5.0) == -1.0 and g.value(10.0) == 0.0 and g.value(25.0) == 0.0
    assert f.value(0.0) == -2.0 and f.value(20.0) == 0.0
    assert all(g.value(t) <= 0 for t in np.linspace(10, 30, 21))


def _sec5_barrier(offset=-1.5, eta=10.0):
    return build_barrier(TASKS, LAY, eta=eta, envelope=EnvelopeSpec("fixed", offset))


def _away_from_kinks(bar, x, t, tol=1e-3):
    for op in bar.operators:
        preds = getattr(op.predicate, "parts", [op.predicate])
        for p in preds:
            if p.abs_c.size and np.min(np.abs(p.abs_A @ x + p.abs_b)) < tol:
                return False
    return all(abs(t - tau) > tol for tau in bar.schedule.times)


def test_gradient_matches_finite_differences():
    bar = _sec5_barrier()
    rng = np.random.default_rng(0)
    worst = 0.0
    checked = 0
    while checked < 100:
        x = rng.uniform(-3, 3, 6)
        t = float(rng.uniform(0, 89.9))
        if not _away_from_kinks(bar, x, t):
            continue
        h, dx, dt = bar.value_and_gradients(x, t)
        step = 1e-6
        fd = np.array([(bar.value(x + step * e, t) - bar.value(x - step * e, t)) / (2 * step) for e in np.eye(6)])
        fdt = (bar.value(x, t + step) - bar.value(x, t - step)) / (2 * step)
        g = np.append(dx, dt)
        err = np.linalg.norm(g - np.append(fd, fdt)) / max(np.linalg.norm(g), 1e-12)
        worst = max(worst, err)
        checked += 1
    assert worst <= 1e-5


def test_monotone_at_switches():
    bar = _sec5_barrier()
    rng = np.random.default_rng(1)
    for x in rng.uniform(-4, 4, (200, 6)):
        for tau in bar.schedule.times[1:-1]:
            assert bar.value(x, tau) - bar.left_limit(x, tau) >= -1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(0, 89.9))
def test_sandwich_on_composite(x, t):
    bar = _sec5_barrier()
    x = np.array(x)
    vals = bar.operator_values(x, t)
    h = bar.value(x, t)
    assert vals.min() - math.log(vals.size) / bar.eta - 1e-12 <= h <= vals.min() + 1e-12


# barrier nonnegative along a trajectory (left limits at switches included) => formula holds


def _random_walk(rng, n=181, dt=0.5):
    steps = rng.normal(0, 0.12, n).cumsum() + rng.uniform(-0.5, 0.5)
    return SimpleNamespace(t=dt * np.arange(n), x=steps[:, None], layout=StateLayout(1, 1))


def test_nonnegative_barrier_implies_satisfaction():
    f = parse_formula("G[10,30](abs(p1 - 0.5) <= 2.5) AND F[20,60](p1 >= -1) AND F[70,90](p1 <= 2 AND p1 >= -2)")
    lay = StateLayout(1, 1)
    rng = np.random.default_rng(3)
    implied = 0
    for offset in (0.0, -0.5):
        bar = build_barrier(f, lay, eta=20.0, envelope=EnvelopeSpec("fixed", offset))
        for _ in range(3000):
            tr = _random_walk(rng)
            ok = True
            for k, t in enumerate(tr.t):
                if t >= bar.end:
                    if bar.left_limit(tr.x[k], t) < 0:
                        ok = False
                    break
                if bar.value(tr.x[k], t) < 0 or (t in bar.schedule.times[1:] and bar.left_limit(tr.x[k], t) < 0):
                    ok = False
                    break
            if ok:
                implied += 1
                assert evaluate(f, tr, 0.0)
    assert implied > 20


# ---------------------------------------------------------------- chains


def _flow(dyn, x, t, dt):
    """Drift-only RK4 step for along-trajectory differences."""
    f = dyn.drift
    k1 = f(x)
    k2 = f(x + dt / 2 * k1)
    k3 = f(x + dt / 2 * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


REL2 = {
    "a": parse_formula("F[10,90](abs(p1 + 1 - p3) <= 1) AND G[20,60](v1 <= 2)"),
    "b": parse_formula("G[5,40]((p2 - p3)^2 <= 4) AND F[30,60](p2 - p1 >= -3 AND v2 >= -1)"),
}


def test_chain_order_one_is_barrier():
    bar = _sec5_barrier()
    ch = build_psi_chain(bar, 1)
    x = np.linspace(-1, 1, 6)
    assert ch.value(x, 12.0) == bar.value(x, 12.0)


def test_chain_order_two_rejects_relative_degree_one():
    dyn = Dynamics(L_FULL)
    with pytest.raises(RelativeDegreeError):
        build_psi_chain(_sec5_barrier(), 2, dyn)
    with pytest.raises(RelativeDegreeError):
        build_psi_chain(build_barrier(parse_formula("F[0,5](abs(p1 - p3) <= 1)"), StateLayout(3, 1)), 2, Dynamics(L_FULL, order=1))


@pytest.mark.parametrize("L", [L_FULL, L_PART])
def test_psi1_matches_flow_difference(L):
    dyn = Dynamics(L)
    bar = build_barrier(REL2, LAY, envelope=EnvelopeSpec("fixed", -1.0))
    ch = build_psi_chain(bar, 2, dyn, lam=1.0)
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.uniform(-2, 2, 6)
        t = float(rng.uniform(1, 28))
        d = 1e-5
        xp, xm = _flow(dyn, x, t, d), _flow(dyn, x, t, -d)
        hdot = (bar.value(xp, t + d) - bar.value(xm, t - d)) / (2 * d)
        assert ch.value(x, t) == pytest.approx(hdot + bar.value(x, t), abs=2e-5)


def _fd_head(ch, x, t, step=1e-6):
    gx = np.array([(ch.value(x + step * e, t) - ch.value(x - step * e, t)) / (2 * step) for e in np.eye(x.size)])
    gt = (ch.value(x, t + step) - ch.value(x, t - step)) / (2 * step)
    return np.append(gx, gt)


@pytest.mark.parametrize("kind", ["psi", "operator"])
def test_chain_gradients_match_finite_differences(kind):
    dyn = Dynamics(L_PART)
    if kind == "psi":
        bar = build_barrier(REL2, LAY, envelope=EnvelopeSpec("fixed", -1.0))
        ch = PsiChain(bar, 2, dyn, 1.5)
    else:
        bar = _sec5_barrier()
        ch = OperatorChain(bar, dyn, 1.5)
    rng = np.random.default_rng(9)
    checked = 0
    while checked < 60:
        x = rng.uniform(-3, 3, 6)
        t = float(rng.uniform(0, 89.9))
        if not _away_from_kinks(bar, x, t):
            continue
        ev = ch.head(x, t)
        g = np.append(ev.grad_x, ev.grad_t)
        fd = _fd_head(ch, x, t)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))
        checked += 1


def test_operator_chain_orders_follow_actuated_slot():
    ch = OperatorChain(_sec5_barrier(), Dynamics(L_FULL))
    labels = [op.label for op in ch.barrier.operators]
    orders = dict(zip(labels, ch.orders))
    assert [orders[k] for k in labels if "p1" in k or "p2 " in k or "p2 -" in k] == [2, 2]
    assert sum(o == 1 for o in ch.orders) == 5


def test_task_heads_bound_composite():
    bar = _sec5_barrier()
    ch = OperatorChain(bar, Dynamics(L_FULL))
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.uniform(-3, 3, 6)
        t = float(rng.uniform(0, 89.9))
        head = ch.value(x, t)
        for v in ch.task_heads(x, t).values():
            if not math.isnan(v):
                assert v >= head - 1e-12
