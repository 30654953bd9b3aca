"""Leader input synthesis from fixed-time barrier inequalities, and the analytic certificates."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "Mode",
    "ControllerParams",
    "ConstraintRow",
    "InfeasibleConstraintError",
    "Certificate",
    "sgn_pow",
    "assemble_constraint",
    "solve_min_norm",
    "fixed_time_bound",
    "epsilon_max_bound",
    "nominal_settling_time",
    "leader_control",
    "LeaderController",
    "ControlStep",
]

BRANCH_TOL = 1e-12
SINGULAR_TOL = 1e-12


class Mode(str, enum.Enum):
    FULL = "full"
    PARTIAL = "partial"


class InfeasibleConstraintError(ValueError):
    """Raw-inequality mode hit a state where the input has no effect but the constraint binds."""


@dataclass(frozen=True)
class ControllerParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma1: float = 0.5
    gamma2: float = 1.5
    mu: float | None = 2.0
    k: float = 2.0
    mode: Mode = Mode.FULL
    slack: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        errs = []
        if not self.alpha > 0:
            errs.append("alpha must be > 0")
        if not self.beta > 0:
            errs.append("beta must be > 0")
        if not 0 < self.gamma1 < 1:
            errs.append("gamma1 must lie in (0, 1)")
        if not self.gamma2 > 1:
            errs.append("gamma2 must be > 1")
        if not self.k > 1:
            errs.append("k must be > 1")
        if self.mu is not None:
            if not self.mu > 1:
                errs.append("mu must be > 1")
            elif not (math.isclose(self.gamma1, 1 - 1 / self.mu) and math.isclose(self.gamma2, 1 + 1 / self.mu)):
                errs.append("gamma1/gamma2 disagree with mu (use ControllerParams.from_mu)")
        elif self.mode is Mode.PARTIAL:
            errs.append("partial-information mode needs the mu parameterisation")
        if errs:
            raise ValueError("; ".join(errs))

    @classmethod
    def from_mu(cls, mu: float = 2.0, alpha: float = 1.0, beta: float = 1.0, k: float = 2.0, **kw) -> "ControllerParams":
        if not mu > 1:
            raise ValueError("mu must be > 1")
        return cls(alpha, beta, 1 - 1 / mu, 1 + 1 / mu, mu, k, **kw)

    @classmethod
    def from_gammas(cls, gamma1: float, gamma2: float, alpha: float = 1.0, beta: float = 1.0, **kw) -> "ControllerParams":
        return cls(alpha, beta, gamma1, gamma2, None, **kw)


@dataclass(frozen=True)
class ConstraintRow:
    """``a_u * u + a_eps * eps >= b``."""

    a_u: float
    a_eps: float
    b: float


def sgn_pow(v: float, p: float) -> float:
    # sign(0) = 0, so both terms vanish on the boundary
    return math.copysign(abs(v) ** p, v) if v != 0 else 0.0


def assemble_constraint(mode, dynamics, chain, x, t: float, params: ControllerParams, slack: bool | None = None):
    """Constraint row on the leader input for the chain head ``psi`` at ``(x, t)``.

    Returns ``(row, head)`` where ``head`` is the chain evaluation used.
    In partial-information mode only the leader's known drift terms enter ``b``.
    """
    mode = Mode(mode)
    x = np.asarray(x, dtype=float)
    ev = chain.head(x, t)
    a_u = float(ev.grad_x @ dynamics.input_direction(x))
    if mode is Mode.FULL:
        drift_term = float(ev.grad_x @ dynamics.drift(x))
    else:
        drift_term = dynamics.split_drift_term(ev.grad_x, x)[0]
    psi = ev.value
    b = -(
        drift_term
        + ev.grad_t
        + params.alpha * sgn_pow(psi, params.gamma1)
        + params.beta * sgn_pow(psi, params.gamma2)
    )
    use_slack = params.slack if slack is None else slack
    return ConstraintRow(a_u, 1.0 if use_slack else 0.0, b), ev


def solve_min_norm(row: ConstraintRow) -> tuple[float, float]:
    """Minimum-norm ``(u, eps)`` with ``a . z >= b``."""
    if row.b <= 0:
        return 0.0, 0.0
    a_u = row.a_u
    if row.a_eps == 0.0 and abs(a_u) <= SINGULAR_TOL:
        raise InfeasibleConstraintError(f"input has no effect (a_u = {a_u:.3g}) but b = {row.b:.6g} > 0")
    nn = a_u * a_u + row.a_eps * row.a_eps
    s = row.b / nn
    return s * a_u, s * row.a_eps


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class Certificate:
    T: float
    eps_max: float
    branch: str
    delta: float
    b: float | None = None
    c: float | None = None
    k1: float | None = None
    k2: float | None = None

    def as_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in ("T", "eps_max", "branch", "delta", "b", "c", "k1", "k2")}


BRANCH_ABOVE = "delta>2sqrt(ab)"
BRANCH_EQUAL = "delta=2sqrt(ab)"
BRANCH_BELOW = "delta<2sqrt(ab)"


def _branch(alpha, beta, delta) -> str:
    disc = delta * delta - 4 * alpha * beta
    if abs(disc) <= BRANCH_TOL:
        return BRANCH_EQUAL
    return BRANCH_ABOVE if disc > 0 else BRANCH_BELOW


def _require_mu(params: ControllerParams):
    if params.mu is None:
        raise ValueError("certificates need the mu parameterisation")
    return params.mu


def epsilon_max_bound(params: ControllerParams, delta: float) -> float:
    mu = _require_mu(params)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    a, b = params.alpha, params.beta
    br = _branch(a, b, delta)
    if br == BRANCH_ABOVE:
        return ((delta + math.sqrt(delta * delta - 4 * a * b)) / (2 * a)) ** mu
    if br == BRANCH_EQUAL:
        return params.k**mu * (b / a) ** (mu / 2)
    return delta / (2 * math.sqrt(a * b))


def fixed_time_bound(params: ControllerParams, delta: float) -> Certificate:
    mu = _require_mu(params)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    a, b = params.alpha, params.beta
    br = _branch(a, b, delta)
    eps = epsilon_max_bound(params, delta)
    if br == BRANCH_ABOVE:
        root = math.sqrt(delta * delta - 4 * a * b)
        lo = (delta - root) / (2 * a)
        hi = (delta + root) / (2 * a)
        T = mu / (a * (hi - lo)) * math.log(abs(1 + hi) / abs(1 + lo))
        return Certificate(T, eps, br, delta, b=lo, c=hi)
    if br == BRANCH_EQUAL:
        T = mu / math.sqrt(a * b) * (1 / (params.k - 1))
        return Certificate(T, eps, br, delta)
    k1 = math.sqrt((4 * a * b - delta * delta) / (4 * a * a))
    k2 = -delta / math.sqrt(4 * a * b - delta * delta)
    T = mu / (a * k1) * (math.pi / 2 - math.atan(k2))
    return Certificate(T, eps, br, delta, k1=k1, k2=k2)


def nominal_settling_time(params: ControllerParams) -> float:
    """Fixed-time bound without disturbance: ``1/(alpha(1-gamma1)) + 1/(beta(gamma2-1))``."""
    return 1.0 / (params.alpha * (1 - params.gamma1)) + 1.0 / (params.beta * (params.gamma2 - 1))


# ---------------------------------------------------------------------------
# controller


@dataclass(frozen=True)
class ControlStep:
    u: float
    eps: float
    psi: float
    a_u: float
    b: float
    active: bool
    singular: bool
    extra: dict = field(default_factory=dict)


def leader_control(mode, dynamics, chain, x, t: float, params: ControllerParams):
    """Returns ``(u, eps, diagnostics)``."""
    row, ev = assemble_constraint(mode, dynamics, chain, x, t, params)
    u, eps = solve_min_norm(row)
    singular = abs(row.a_u) <= SINGULAR_TOL
    if singular and row.b > 0:
        log.debug("t=%.4f: input singularity with binding constraint (b=%.4g)", t, row.b)
    diag = {"psi": ev.value, "a_u": row.a_u, "a_eps": row.a_eps, "b": row.b, "active": row.b > 0, "singular": singular}
    return u, eps, diag


class LeaderController:
    """State-feedback leader law bound to a dynamics model, chain and parameters."""

    def __init__(self, dynamics, chain, params: ControllerParams):
        self.dynamics = dynamics
        self.chain = chain
        self.params = params
        self.mode = params.mode
        gap = chain.barrier.schedule.min_gap()
        T = nominal_settling_time(params)
        if T > gap:
            log.warning("settling bound %.3g s exceeds the shortest switching interval %.3g s", T, gap)

    def __call__(self, x, t: float) -> ControlStep:
        u, eps, d = leader_control(self.mode, self.dynamics, self.chain, x, t, self.params)
        return ControlStep(u, eps, d["psi"], d["a_u"], d["b"], d["active"], d["singular"])
