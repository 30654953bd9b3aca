"""Scenario files: YAML documents describing network, tasks, controller, simulation and outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .barrier import (
    EnvelopeSpec,
    LinearClassK,
    OperatorChain,
    PsiChain,
    TimeVaryingBarrier,
    build_barrier,
)
from .control import ControllerParams, LeaderController, Mode
from .network import DRIFT_PRIMITIVES, Dynamics, Graph
from .stl import StateLayout, StlError, StlFormula, horizon, parse_formula, predicates_of

__all__ = ["ScenarioError", "Scenario", "System", "load_scenario", "scenario_from_dict", "resolve_scenario", "bundled_scenarios"]


class ScenarioError(ValueError):
    def __init__(self, problems: list[str], path: str | None = None):
        self.problems = list(problems)
        self.path = path
        head = f"{path}: " if path else ""
        super().__init__(head + "; ".join(self.problems))


@dataclass(frozen=True)
class NetworkCfg:
    agents: int = 1
    order: int = 2
    drift: str = "linear"
    laplacian: tuple | None = None
    edges: tuple | None = None
    gain: float = 1.0
    saturation: float = 1.0
    local_gain: tuple | None = None


@dataclass(frozen=True)
class ControllerCfg:
    mode: str = "full"
    alpha: float = 1.0
    beta: float = 1.0
    mu: float | None = 2.0
    gamma1: float | None = None
    gamma2: float | None = None
    k: float = 2.0
    eta: float = 10.0
    lambda1: float = 1.0
    order: Any = "auto"
    slack: bool = True
    envelope: str = "adaptive"
    envelope_margin: float = 0.25
    envelope_offset: float = 0.0


@dataclass(frozen=True)
class SimCfg:
    t0: float = 0.0
    horizon: float | None = None
    dt: float = 0.01
    x0: tuple | None = None


@dataclass(frozen=True)
class CertificateCfg:
    delta: Any = None  # number, "estimate" or None
    samples: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class OutputCfg:
    dir: str | None = None
    csv: str = "trajectory.csv"
    report: str = "report.json"
    svg: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    network: NetworkCfg
    formulas: dict  # task name -> StlFormula
    predicates: dict
    controller: ControllerCfg
    sim: SimCfg
    certificate: CertificateCfg
    output: OutputCfg
    source: str | None = None

    @property
    def layout(self) -> StateLayout:
        return StateLayout(self.network.agents, self.network.order)

    @property
    def horizon(self) -> float:
        if self.sim.horizon is not None:
            return float(self.sim.horizon)
        return max((horizon(f) for f in self.formulas.values()), default=self.sim.t0)

    @property
    def x0(self) -> np.ndarray:
        if self.sim.x0 is None:
            return np.zeros(self.layout.dim)
        return np.asarray(self.sim.x0, dtype=float)

    def params(self) -> ControllerParams:
        c = self.controller
        if c.mu is not None:
            return ControllerParams.from_mu(c.mu, c.alpha, c.beta, c.k, mode=Mode(c.mode), slack=c.slack)
        return ControllerParams.from_gammas(c.gamma1, c.gamma2, c.alpha, c.beta, k=c.k, mode=Mode(c.mode), slack=c.slack)

    def laplacian(self) -> np.ndarray:
        n = self.network.agents
        if self.network.laplacian is not None:
            return np.asarray(self.network.laplacian, dtype=float)
        # default: star around the leader
        L = np.zeros((n, n))
        for i in range(n - 1):
            L[i, i] += 1
            L[i, n - 1] -= 1
        return L

    def dynamics(self) -> Dynamics:
        net = self.network
        graph = Graph(net.agents, frozenset(tuple(e) for e in net.edges)) if net.edges is not None else None
        return Dynamics(
            self.laplacian(),
            order=net.order,
            gain=net.gain,
            drift=net.drift,
            saturation=net.saturation,
            local_gain=net.local_gain,
            graph=graph,
        )

    def with_overrides(self, **sim_kw) -> "Scenario":
        from dataclasses import replace

        return replace(self, sim=replace(self.sim, **{k: v for k, v in sim_kw.items() if v is not None}))

    def build(self, x0=None, envelope: EnvelopeSpec | None = None) -> "System":
        x0 = self.x0 if x0 is None else np.asarray(x0, dtype=float)
        dyn = self.dynamics()
        c = self.controller
        if envelope is None:
            envelope = EnvelopeSpec(
                mode=c.envelope, offset=c.envelope_offset, margin=c.envelope_margin, x0=x0, dynamics=dyn, lam_slope=c.lambda1
            )
        bar = build_barrier(self.formulas, self.layout, eta=c.eta, t0=self.sim.t0, envelope=envelope)
        lam = LinearClassK(c.lambda1)
        if c.order == "auto":
            chain = OperatorChain(bar, dyn, lam)
        else:
            chain = PsiChain(bar, int(c.order), dyn, lam)
        params = self.params()
        return System(self, dyn, bar, chain, params, LeaderController(dyn, chain, params), x0)


@dataclass
class System:
    scenario: Scenario
    dynamics: Dynamics
    barrier: TimeVaryingBarrier
    chain: Any
    params: ControllerParams
    controller: LeaderController
    x0: np.ndarray


# ---------------------------------------------------------------------------
# loading and validation

_SECTIONS = {"name", "network", "tasks", "controller", "sim", "certificate", "output"}


def _num(problems, where, value, kind=float, positive=False, allow_none=False):
    if value is None and allow_none:
        return None
    try:
        if isinstance(value, bool):
            raise TypeError
        v = kind(value)
    except (TypeError, ValueError):
        problems.append(f"{where}: expected a number, got {value!r}")
        return None
    if kind is float and not math.isfinite(v):
        problems.append(f"{where}: must be finite")
        return None
    if positive and not v > 0:
        problems.append(f"{where}: must be > 0")
    return v


def _section(problems, doc, key) -> dict:
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        problems.append(f"{key}: expected a mapping")
        return {}
    return sec


def _unknown(problems, sec: dict, allowed: set, where: str):
    for k in sec:
        if k not in allowed:
            problems.append(f"{where}.{k}: unknown key")


def scenario_from_dict(doc: dict, source: str | None = None) -> Scenario:
    """Validate a parsed scenario document, reporting every problem at once."""
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ScenarioError(["top level must be a mapping"], source)
    _unknown(problems, doc, _SECTIONS, "scenario")
    name = str(doc.get("name") or (Path(source).stem if source else "scenario"))

    # network
    ns = _section(problems, doc, "network")
    _unknown(problems, ns, {"agents", "order", "drift", "laplacian", "edges", "gain", "saturation", "local_gain"}, "network")
    n = _num(problems, "network.agents", ns.get("agents", 1), int, positive=True) or 1
    order = _num(problems, "network.order", ns.get("order", 2), int)
    if order not in (1, 2):
        problems.append(f"network.order: must be 1 or 2, got {ns.get('order')!r}")
        order = 2
    drift = ns.get("drift", "linear")
    if drift not in DRIFT_PRIMITIVES:
        problems.append(f"network.drift: unknown primitive {drift!r} (choose from {', '.join(DRIFT_PRIMITIVES)})")
        drift = "linear"
    L = ns.get("laplacian")
    if L is not None:
        try:
            La = np.asarray(L, dtype=float)
        except (TypeError, ValueError):
            problems.append("network.laplacian: expected a numeric matrix")
            La, L = None, None
        if La is not None:
            if La.shape != (n, n):
                problems.append(f"network.laplacian: shape {La.shape} does not match {n} agents")
                L = None
            elif not np.all(np.isfinite(La)):
                problems.append("network.laplacian: entries must be finite")
                L = None
            else:
                L = tuple(tuple(float(v) for v in row) for row in La)
    edges = ns.get("edges")
    if edges is not None:
        try:
            edges = tuple((int(a), int(b)) for a, b in edges)
        except (TypeError, ValueError):
            problems.append("network.edges: expected a list of [i, j] pairs")
            edges = None
    gain = _num(problems, "network.gain", ns.get("gain", 1.0))
    if gain == 0:
        problems.append("network.gain: must be nonzero")
    sat = _num(problems, "network.saturation", ns.get("saturation", 1.0), positive=True)
    lg = ns.get("local_gain")
    if lg is not None:
        if not isinstance(lg, (list, tuple)) or len(lg) != n:
            problems.append(f"network.local_gain: needs {n} entries")
            lg = None
        else:
            lg = tuple(float(v) for v in lg)
    network = NetworkCfg(n, order, drift, L, edges, gain if gain else 1.0, sat or 1.0, lg)
    layout = StateLayout(n, order)

    # tasks
    ts = _section(problems, doc, "tasks")
    _unknown(problems, ts, {"formulas", "predicates"}, "tasks")
    preds = ts.get("predicates") or {}
    if not isinstance(preds, dict):
        problems.append("tasks.predicates: expected a mapping of name -> comparison")
        preds = {}
    preds = {str(k): str(v) for k, v in preds.items()}
    raw = ts.get("formulas") or {}
    if isinstance(raw, (list, tuple)):
        raw = {f"phi{i + 1}": f for i, f in enumerate(raw)}
    if not isinstance(raw, dict):
        problems.append("tasks.formulas: expected a mapping of name -> formula")
        raw = {}
    formulas: dict[str, StlFormula] = {}
    for key, text in raw.items():
        try:
            f = parse_formula(str(text), preds)
        except StlError as e:
            problems.append(f"tasks.formulas.{key}: {e}")
            continue
        for p in predicates_of(f):
            try:
                p.compile(layout)
            except StlError as e:
                problems.append(f"tasks.formulas.{key}: {e}")
        formulas[str(key)] = f

    # controller
    cs = _section(problems, doc, "controller")
    allowed = {"mode", "alpha", "beta", "mu", "gamma1", "gamma2", "k", "eta", "lambda1", "order", "slack", "envelope"}
    _unknown(problems, cs, allowed, "controller")
    mode = cs.get("mode", "full")
    if mode not in ("full", "partial"):
        problems.append(f"controller.mode: must be 'full' or 'partial', got {mode!r}")
        mode = "full"
    alpha = _num(problems, "controller.alpha", cs.get("alpha", 1.0), positive=True)
    beta = _num(problems, "controller.beta", cs.get("beta", 1.0), positive=True)
    has_gamma = "gamma1" in cs or "gamma2" in cs
    mu = _num(problems, "controller.mu", cs.get("mu", None if has_gamma else 2.0), allow_none=True)
    g1 = _num(problems, "controller.gamma1", cs.get("gamma1"), allow_none=True)
    g2 = _num(problems, "controller.gamma2", cs.get("gamma2"), allow_none=True)
    if mu is not None and has_gamma:
        problems.append("controller: give either mu or gamma1/gamma2, not both")
    if mu is None and (g1 is None or g2 is None):
        problems.append("controller: gamma1 and gamma2 are both required without mu")
    k = _num(problems, "controller.k", cs.get("k", 2.0))
    eta = _num(problems, "controller.eta", cs.get("eta", 10.0), positive=True)
    lam = _num(problems, "controller.lambda1", cs.get("lambda1", 1.0), positive=True)
    corder = cs.get("order", "auto")
    if corder not in ("auto", 1, 2):
        problems.append(f"controller.order: must be auto, 1 or 2, got {corder!r}")
        corder = "auto"
    slack = cs.get("slack", True)
    if not isinstance(slack, bool):
        problems.append("controller.slack: expected true/false")
        slack = True
    env = cs.get("envelope") or {}
    if not isinstance(env, dict):
        problems.append("controller.envelope: expected a mapping")
        env = {}
    _unknown(problems, env, {"mode", "margin", "offset"}, "controller.envelope")
    env_mode = env.get("mode", "adaptive")
    if env_mode not in ("adaptive", "fixed"):
        problems.append(f"controller.envelope.mode: must be adaptive or fixed, got {env_mode!r}")
        env_mode = "adaptive"
    margin = _num(problems, "controller.envelope.margin", env.get("margin", 0.25))
    offset = _num(problems, "controller.envelope.offset", env.get("offset", 0.0))
    if offset is not None and offset > 0:
        problems.append("controller.envelope.offset: must be <= 0")
    controller = ControllerCfg(
        mode, alpha or 1.0, beta or 1.0, mu, g1, g2, k or 2.0, eta or 10.0, lam or 1.0, corder, slack,
        env_mode, margin if margin is not None else 0.25, offset or 0.0,
    )
    try:
        ControllerParams(controller.alpha, controller.beta,
                         (1 - 1 / mu) if mu else (g1 or 0.5), (1 + 1 / mu) if mu else (g2 or 1.5),
                         mu, controller.k, Mode(mode), slack)
    except ValueError as e:
        problems.append(f"controller: {e}")

    # chain order vs relative degree
    if corder in (1, 2) and order == 2 and formulas:
        slot = layout.input_index
        for key, f in formulas.items():
            for p in predicates_of(f):
                try:
                    touches = p.compile(layout).depends_on(slot)
                except StlError:
                    continue
                if corder == 2 and touches:
                    problems.append(f"tasks.formulas.{key}: predicate {p} has relative degree 1 but controller.order is 2")
                if corder == 1 and not touches:
                    problems.append(f"tasks.formulas.{key}: predicate {p} has relative degree 2 but controller.order is 1")
    if corder == 2 and order == 1:
        problems.append("controller.order: 2 needs second-order dynamics")

    # sim
    ss = _section(problems, doc, "sim")
    _unknown(problems, ss, {"t0", "horizon", "dt", "x0"}, "sim")
    t0 = _num(problems, "sim.t0", ss.get("t0", 0.0))
    hz = _num(problems, "sim.horizon", ss.get("horizon"), allow_none=True)
    dt = _num(problems, "sim.dt", ss.get("dt", 0.01), positive=True)
    x0 = ss.get("x0")
    if x0 is not None:
        if not isinstance(x0, (list, tuple)) or len(x0) != layout.dim:
            problems.append(f"sim.x0: needs {layout.dim} entries (order {order} x {n} agents)")
            x0 = None
        else:
            x0 = tuple(_num(problems, "sim.x0", v) or 0.0 for v in x0)
    if hz is not None and t0 is not None and hz < t0:
        problems.append("sim.horizon: must be >= t0")
    for key, f in formulas.items():
        end = horizon(f)
        if t0 is not None and end > 0 and end <= t0:
            problems.append(f"tasks.formulas.{key}: deadline {end} is not after t0 = {t0}")
        # a zero-length run is allowed and yields an empty report
        if hz is not None and t0 is not None and t0 < hz < t0 + end:
            problems.append(f"sim.horizon: {hz} ends before tasks.formulas.{key} can be judged (needs {t0 + end})")
    sim = SimCfg(t0 or 0.0, hz, dt or 0.01, x0)

    # certificate
    cert = _section(problems, doc, "certificate")
    _unknown(problems, cert, {"delta", "samples", "seed"}, "certificate")
    delta = cert.get("delta")
    if delta is not None and delta != "estimate":
        delta = _num(problems, "certificate.delta", delta)
        if delta is not None and delta < 0:
            problems.append("certificate.delta: must be >= 0")
    samples = _num(problems, "certificate.samples", cert.get("samples", 2000), int, positive=True)
    seed = _num(problems, "certificate.seed", cert.get("seed", 0), int)
    certificate = CertificateCfg(delta, samples or 2000, seed or 0)

    # output
    out = _section(problems, doc, "output")
    _unknown(problems, out, {"dir", "csv", "report", "svg"}, "output")
    output = OutputCfg(out.get("dir"), str(out.get("csv", "trajectory.csv")), str(out.get("report", "report.json")), bool(out.get("svg", False)))

    # network-level checks that need the assembled pieces
    if not problems:
        try:
            Scenario(name, network, formulas, preds, controller, sim, certificate, output, source).dynamics()
        except ValueError as e:
            problems.append(f"network: {e}")
    if problems:
        raise ScenarioError(problems, source)
    return Scenario(name, network, formulas, preds, controller, sim, certificate, output, source)


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("lfstl") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith((".yaml", ".yml"))}


def resolve_scenario(path: str | Path) -> Path:
    """A path on disk, or the name of a bundled scenario (``examples/<name>`` also resolves)."""
    p = Path(path)
    if p.is_file():
        return p
    for cand in (p.with_suffix(".yaml"), p.with_suffix(".yml")):
        if cand.is_file():
            return cand
    bundled = bundled_scenarios()
    stem = p.stem if p.suffix in (".yaml", ".yml") else p.name
    if stem in bundled:
        return bundled[stem]
    raise FileNotFoundError(f"scenario {str(path)!r} not found (bundled: {', '.join(sorted(bundled))})")


def load_scenario(path: str | Path) -> Scenario:
    p = resolve_scenario(path)
    text = p.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        msg = getattr(e, "problem", None) or str(e)
        raise ScenarioError([f"parse error: {msg}"], f"{p}{line}") from None
    return scenario_from_dict(doc or {}, str(p))
