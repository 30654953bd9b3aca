"""Time-varying composite barriers built from STL operators, and their higher-order chains."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence, Union

import numpy as np

from .stl import (
    And,
    Always,
    CompiledPredicate,
    Eventually,
    Pred,
    StateLayout,
    StlFormula,
    SwitchSchedule,
    TrueF,
    Until,
    conjuncts,
    switching_schedule,
    temporal_operators,
)

log = logging.getLogger(__name__)

__all__ = [
    "ScheduleExhausted",
    "RelativeDegreeError",
    "smooth_min",
    "softmin_weights",
    "Envelope",
    "EnvelopeSpec",
    "ConjunctionPredicate",
    "OperatorBarrier",
    "TimeVaryingBarrier",
    "LinearClassK",
    "HeadEval",
    "PsiChain",
    "OperatorChain",
    "build_barrier",
    "build_psi_chain",
    "build_operator_chain",
    "barrier_value_and_gradients",
]


class ScheduleExhausted(ValueError):
    """Raised when a barrier is evaluated at or after the last switching instant."""


class RelativeDegreeError(ValueError):
    pass


def smooth_min(values, eta: float) -> float:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("smooth_min of an empty list")
    if eta <= 0:
        raise ValueError("eta must be positive")
    m = v.min()
    return float(m - math.log(np.exp(-eta * (v - m)).sum()) / eta)


def softmin_weights(values, eta: float) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("softmin of an empty list")
    e = np.exp(-eta * (v - v.min()))
    return e / e.sum()


# ---------------------------------------------------------------------------
# envelopes and operator barriers


@dataclass(frozen=True)
class Envelope:
    """Piecewise-linear offset: ``offset`` at ``t0``, linear to 0 at ``t_end``, 0 afterwards.

    Non-positive offsets enlarge the set early on; the operator is enforced exactly from ``t_end``.
    """

    t0: float
    t_end: float
    offset: float = 0.0

    def value(self, t: float) -> float:
        if self.offset == 0.0 or t >= self.t_end or self.t_end <= self.t0:
            return 0.0
        return self.offset * (self.t_end - t) / (self.t_end - self.t0)

    def rate(self, t: float) -> float:
        if self.offset == 0.0 or t >= self.t_end or self.t_end <= self.t0:
            return 0.0
        return -self.offset / (self.t_end - self.t0)


class ConjunctionPredicate:
    """Smooth-min of several compiled predicates; used for F over a conjunction."""

    def __init__(self, parts: Sequence[CompiledPredicate], eta: float):
        self.parts = list(parts)
        self.eta = eta

    def depends_on(self, index: int) -> bool:
        return any(p.depends_on(index) for p in self.parts)

    def value(self, x) -> float:
        return smooth_min([p.value(x) for p in self.parts], self.eta)

    def values(self, X) -> np.ndarray:
        V = np.stack([p.values(X) for p in self.parts], axis=1)
        m = V.min(axis=1)
        return m - np.log(np.exp(-self.eta * (V - m[:, None])).sum(axis=1)) / self.eta

    def gradient(self, x) -> np.ndarray:
        w = softmin_weights([p.value(x) for p in self.parts], self.eta)
        return sum(wi * p.gradient(x) for wi, p in zip(w, self.parts))

    def hessian(self, x) -> np.ndarray:
        w = softmin_weights([p.value(x) for p in self.parts], self.eta)
        G = np.stack([p.gradient(x) for p in self.parts])
        gbar = w @ G
        D = G - gbar
        H = sum(wi * p.hessian(x) for wi, p in zip(w, self.parts))
        return H - self.eta * (D.T * w) @ D


@dataclass(frozen=True)
class OperatorBarrier:
    """``h_j(x, t) = h_pred(x) - gamma_j(t)`` for one temporal operator."""

    kind: str  # "G" or "F"
    a: float
    b: float
    predicate: object  # CompiledPredicate or ConjunctionPredicate
    envelope: Envelope
    task: str = ""
    label: str = ""

    def value(self, x, t: float) -> float:
        return self.predicate.value(x) - self.envelope.value(t)

    def dh_dt(self, t: float) -> float:
        return -self.envelope.rate(t)


@dataclass(frozen=True)
class EnvelopeSpec:
    """How envelope offsets are chosen.

    ``fixed``: every operator uses ``offset``.
    ``adaptive``: offsets are fitted to ``x0`` so each operator barrier (and, for
    relative-degree-2 operators, its first chain function) starts at least ``margin``.
    """

    mode: str = "fixed"
    offset: float = 0.0
    margin: float = 0.25
    x0: Sequence[float] | None = None
    dynamics: object | None = None
    lam_slope: float = 1.0

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"envelope mode must be 'fixed' or 'adaptive', got {self.mode!r}")
        if self.offset > 0:
            raise ValueError("envelope offset must be <= 0")
        if self.mode == "adaptive" and self.x0 is None:
            raise ValueError("adaptive envelopes need x0")


def _psi_parts(node) -> list:
    if isinstance(node, TrueF):
        return []
    if isinstance(node, Pred):
        return [node.predicate]
    if isinstance(node, And):
        return _psi_parts(node.left) + _psi_parts(node.right)
    raise TypeError(f"not a state formula: {node}")


def _expand_operators(formula: StlFormula, task: str) -> list[tuple[str, float, float, list, str]]:
    """(kind, a, b, predicates, label) per barrier operator."""
    out = []
    for op in temporal_operators(formula):
        if isinstance(op, Always):
            for p in _psi_parts(op.sub):
                out.append(("G", op.a, op.b, [p], f"G[{op.a:g},{op.b:g}]({p})"))
        elif isinstance(op, Eventually):
            parts = _psi_parts(op.sub)
            if parts:
                out.append(("F", op.a, op.b, parts, str(op)))
        elif isinstance(op, Until):
            warnings.warn("Until is compiled as G[0,b](left) AND F[a,b](right); treat results as experimental")
            for p in _psi_parts(op.left):
                out.append(("G", 0.0, op.b, [p], f"G[0,{op.b:g}]({p})"))
            parts = _psi_parts(op.right)
            if parts:
                out.append(("F", op.a, op.b, parts, f"F[{op.a:g},{op.b:g}]({op.right})"))
    for c in conjuncts(formula):
        if isinstance(c, Pred):
            raise ValueError(f"bare predicate {c} outside a temporal operator has no barrier; wrap it in G[0,0]")
    return out


class TimeVaryingBarrier:
    """Composite ``h(x,t) = -(1/eta) ln sum_{j active} exp(-eta h_j(x,t))`` with a switching schedule."""

    def __init__(self, operators: Sequence[OperatorBarrier], eta: float, schedule: SwitchSchedule, layout: StateLayout):
        if eta <= 0:
            raise ValueError("eta must be positive")
        self.operators = tuple(operators)
        self.eta = float(eta)
        self.schedule = schedule
        self.layout = layout
        self.tasks = tuple(dict.fromkeys(op.task for op in self.operators))
        self._active = tuple(tuple(sorted(s)) for s in schedule.active)

    @property
    def t0(self) -> float:
        return self.schedule.times[0]

    @property
    def end(self) -> float:
        return self.schedule.end

    def active(self, t: float) -> tuple[int, ...]:
        l = self.schedule.interval_index(t)
        if l is None:
            raise ScheduleExhausted(f"t = {t} outside the schedule [{self.t0}, {self.end})")
        return self._active[l]

    def active_before(self, t: float) -> tuple[int, ...]:
        """Active set just before ``t`` (left limit)."""
        times = self.schedule.times
        l = int(np.searchsorted(times, t, side="left")) - 1
        if l < 0 or l >= len(self._active):
            raise ScheduleExhausted(f"no interval ends at {t}")
        return self._active[l]

    def operator_values(self, x, t: float, idx=None) -> np.ndarray:
        idx = self.active(t) if idx is None else idx
        return np.array([self.operators[j].value(x, t) for j in idx])

    def value(self, x, t: float) -> float:
        return smooth_min(self.operator_values(x, t), self.eta)

    def left_limit(self, x, t: float) -> float:
        idx = self.active_before(t)
        return smooth_min(self.operator_values(x, t, idx), self.eta)

    def weights(self, x, t: float) -> np.ndarray:
        return softmin_weights(self.operator_values(x, t), self.eta)

    def value_and_gradients(self, x, t: float) -> tuple[float, np.ndarray, float]:
        idx = self.active(t)
        vals = self.operator_values(x, t, idx)
        w = softmin_weights(vals, self.eta)
        ops = [self.operators[j] for j in idx]
        dx = sum(wj * op.predicate.gradient(x) for wj, op in zip(w, ops))
        dt = float(sum(wj * op.dh_dt(t) for wj, op in zip(w, ops)))
        return smooth_min(vals, self.eta), np.asarray(dx, dtype=float), dt

    def task_values(self, x, t: float) -> dict[str, float]:
        """Composite barrier restricted to each task's active operators (nan when none is active)."""
        idx = self.active(t)
        out = {}
        for task in self.tasks:
            sub = [j for j in idx if self.operators[j].task == task]
            out[task] = smooth_min(self.operator_values(x, t, sub), self.eta) if sub else math.nan
        return out


def barrier_value_and_gradients(bar: TimeVaryingBarrier, x, t: float):
    return bar.value_and_gradients(x, t)


def _adaptive_offset(kind, a, b, pred, t0, spec: EnvelopeSpec, order: int) -> float:
    t_end = a if kind == "G" else b
    x0 = np.asarray(spec.x0, dtype=float)
    hp = pred.value(x0)
    r = spec.margin
    offset = min(0.0, hp - r)
    span = t_end - t0
    if span <= 0:
        if hp < r:
            log.warning("operator window starts at t0 and h(x0) = %.3g < margin; no envelope slack available", hp)
        return 0.0
    if order == 2:
        c = spec.lam_slope
        lf = float(pred.gradient(x0) @ spec.dynamics.drift(x0))
        if c > 1.0 / span:
            offset = min(offset, (lf + c * hp - r) / (c - 1.0 / span))
        elif lf + c * hp < r:
            log.warning("envelope cannot lift the first chain function at t0 (window too short)")
    return offset


def build_barrier(
    tasks: Union[StlFormula, Mapping[str, StlFormula]],
    layout: StateLayout,
    eta: float = 10.0,
    t0: float = 0.0,
    envelope: EnvelopeSpec | None = None,
) -> TimeVaryingBarrier:
    """Compile one operator barrier per temporal operator (G over a conjunction is split per predicate)."""
    if not isinstance(tasks, Mapping):
        tasks = {"phi": tasks}
    envelope = envelope or EnvelopeSpec()
    dyn = envelope.dynamics
    ops = []
    for name, formula in tasks.items():
        for kind, a, b, preds, label in _expand_operators(formula, name):
            compiled = [p.compile(layout) for p in preds]
            pred = compiled[0] if len(compiled) == 1 else ConjunctionPredicate(compiled, eta)
            t_end = a if kind == "G" else b
            if envelope.mode == "adaptive":
                order = _operator_order(pred, layout, dyn)
                offset = _adaptive_offset(kind, a, b, pred, t0, envelope, order)
            else:
                offset = envelope.offset
            ops.append(OperatorBarrier(kind, a, b, pred, Envelope(t0, t_end, offset), name, label))
    schedule = switching_schedule([op.b for op in ops], t0)
    return TimeVaryingBarrier(ops, eta, schedule, layout)


# ---------------------------------------------------------------------------
# chains


@dataclass(frozen=True)
class LinearClassK:
    """Extended class-K function ``r -> slope * r``."""

    slope: float = 1.0

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("class-K slope must be positive")

    def __call__(self, r):
        return self.slope * r

    def derivative(self, r) -> float:
        return self.slope

    def inverse(self, s):
        return s / self.slope


class HeadEval(NamedTuple):
    value: float
    grad_x: np.ndarray
    grad_t: float


def _operator_order(pred, layout: StateLayout, dynamics) -> int:
    if dynamics is None or getattr(dynamics, "order", layout.order) == 1:
        return 1
    return 1 if pred.depends_on(layout.input_index) else 2


class _ChainBase:
    barrier: TimeVaryingBarrier
    dynamics: object
    lam: LinearClassK

    def head(self, x, t: float) -> HeadEval:
        raise NotImplementedError

    def value(self, x, t: float) -> float:
        return self.head(x, t).value

    @property
    def max_order(self) -> int:
        raise NotImplementedError


class PsiChain(_ChainBase):
    """Chain built on the composite barrier; the head is ``psi_{m-1}``.

    ``m = 1``: head is the barrier itself.
    ``m = 2``: head is ``dh/dx f + dh/dt + lam(h)``; every predicate must be independent of the input slot.
    """

    def __init__(self, barrier: TimeVaryingBarrier, m: int, dynamics=None, lam: LinearClassK | float = 1.0):
        if m not in (1, 2):
            raise ValueError(f"chain order must be 1 or 2, got {m}")
        self.barrier = barrier
        self.m = m
        self.dynamics = dynamics
        self.lam = lam if isinstance(lam, LinearClassK) else LinearClassK(float(lam))
        if m == 2:
            if dynamics is None or dynamics.order != 2:
                raise RelativeDegreeError("a second-order chain needs second-order dynamics")
            slot = barrier.layout.input_index
            for op in barrier.operators:
                if op.predicate.depends_on(slot):
                    raise RelativeDegreeError(
                        f"operator {op.label} depends on the actuated state; its relative degree is 1, not 2"
                    )

    @property
    def max_order(self) -> int:
        return self.m

    def _joint(self, x, t, idx):
        """Composite value, joint gradient over (x, t) and joint Hessian."""
        bar = self.barrier
        ops = [bar.operators[j] for j in idx]
        vals = np.array([op.value(x, t) for op in ops])
        w = softmin_weights(vals, bar.eta)
        d = x.size
        G = np.zeros((len(ops), d + 1))
        H = np.zeros((d + 1, d + 1))
        for k, op in enumerate(ops):
            G[k, :d] = op.predicate.gradient(x)
            G[k, d] = op.dh_dt(t)
            H[:d, :d] += w[k] * op.predicate.hessian(x)
        gbar = w @ G
        D = G - gbar
        H -= bar.eta * (D.T * w) @ D
        return smooth_min(vals, bar.eta), gbar, H

    def _head_for(self, x, t, idx) -> HeadEval:
        x = np.asarray(x, dtype=float)
        h, g, H = self._joint(x, t, idx)
        d = x.size
        if self.m == 1:
            return HeadEval(h, g[:d], float(g[d]))
        f = self.dynamics.drift(x)
        J = self.dynamics.jacobian(x)
        F = np.append(f, 1.0)
        value = float(g[:d] @ f + g[d] + self.lam(h))
        grad = H @ F + self.lam.derivative(h) * g
        grad[:d] += J.T @ g[:d]
        return HeadEval(value, grad[:d], float(grad[d]))

    def head(self, x, t: float) -> HeadEval:
        return self._head_for(x, t, self.barrier.active(t))

    def task_heads(self, x, t: float) -> dict[str, float]:
        idx = self.barrier.active(t)
        out = {}
        for task in self.barrier.tasks:
            sub = [j for j in idx if self.barrier.operators[j].task == task]
            out[task] = self._head_for(x, t, sub).value if sub else math.nan
        return out


class OperatorChain(_ChainBase):
    """Per-operator chains combined by smooth-min.

    An operator whose predicate touches the actuated state contributes ``h_j``;
    any other operator on second-order dynamics contributes
    ``dh_j/dx f + dh_j/dt + lam(h_j)``.
    """

    def __init__(self, barrier: TimeVaryingBarrier, dynamics, lam: LinearClassK | float = 1.0):
        self.barrier = barrier
        self.dynamics = dynamics
        self.lam = lam if isinstance(lam, LinearClassK) else LinearClassK(float(lam))
        self.orders = tuple(_operator_order(op.predicate, barrier.layout, dynamics) for op in barrier.operators)

    @property
    def max_order(self) -> int:
        return max(self.orders, default=1)

    def operator_heads(self, x, t: float, idx=None):
        """(values, gradients wrt x, time derivatives) of each active operator's head."""
        x = np.asarray(x, dtype=float)
        idx = self.barrier.active(t) if idx is None else idx
        f = J = None
        vals, gx, gt = [], [], []
        for j in idx:
            op = self.barrier.operators[j]
            hp = op.predicate.value(x)
            gp = op.predicate.gradient(x)
            gam = op.envelope.value(t)
            rate = op.envelope.rate(t)
            if self.orders[j] == 1:
                vals.append(hp - gam)
                gx.append(gp)
                gt.append(-rate)
                continue
            if f is None:
                f = self.dynamics.drift(x)
                J = self.dynamics.jacobian(x)
            c = self.lam.slope
            vals.append(float(gp @ f - rate + c * (hp - gam)))
            gx.append(op.predicate.hessian(x) @ f + J.T @ gp + c * gp)
            gt.append(-c * rate)
        return np.array(vals), gx, np.array(gt)

    def _combine(self, vals, gx, gt) -> HeadEval:
        w = softmin_weights(vals, self.barrier.eta)
        grad = sum(wi * g for wi, g in zip(w, gx))
        return HeadEval(smooth_min(vals, self.barrier.eta), np.asarray(grad, dtype=float), float(w @ gt))

    def head(self, x, t: float) -> HeadEval:
        return self._combine(*self.operator_heads(x, t))

    def task_heads(self, x, t: float) -> dict[str, float]:
        idx = self.barrier.active(t)
        vals, _, _ = self.operator_heads(x, t, idx)
        out = {}
        for task in self.barrier.tasks:
            sel = [k for k, j in enumerate(idx) if self.barrier.operators[j].task == task]
            out[task] = smooth_min(vals[sel], self.barrier.eta) if sel else math.nan
        return out


def build_psi_chain(bar: TimeVaryingBarrier, m: int, dynamics=None, lam: LinearClassK | float = 1.0) -> PsiChain:
    return PsiChain(bar, m, dynamics, lam)


def build_operator_chain(bar: TimeVaryingBarrier, dynamics, lam: LinearClassK | float = 1.0) -> OperatorChain:
    return OperatorChain(bar, dynamics, lam)
