"""Closed-loop integration, trajectory logging and run monitors."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .barrier import ScheduleExhausted
from .control import (
    ControlStep,
    Mode,
    fixed_time_bound,
    nominal_settling_time,
)
from .network import residual_delta_estimate
from .stl import StateLayout, evaluate

log = logging.getLogger(__name__)

__all__ = [
    "SimulationError",
    "Trajectory",
    "RunReport",
    "integrate",
    "annotate",
    "run_scenario",
    "write_csv",
    "read_csv",
    "trajectory_sampler",
    "CSV_VERSION",
]

CSV_VERSION = "lfstl-trajectory/1"


class SimulationError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """Uniformly sampled closed-loop run.

    ``u[k]`` and ``eps[k]`` are held on ``[t[k], t[k+1])``; the last entry is nan.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    layout: StateLayout
    dt: float
    psi: np.ndarray | None = None
    h: np.ndarray | None = None
    switch: np.ndarray | None = None
    task_h: dict = field(default_factory=dict)
    task_psi: dict = field(default_factory=dict)
    singular: np.ndarray | None = None
    step_seconds: np.ndarray | None = None

    def __len__(self) -> int:
        return self.t.size


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _grid(t0: float, horizon: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    span = horizon - t0
    if span < 0:
        raise ValueError("horizon before t0")
    n = int(round(span / dt))
    if abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"dt = {dt} does not divide the horizon span {span}")
    return t0 + dt * np.arange(n + 1)


def _snap_switches(t: np.ndarray, switch_times, dt: float) -> np.ndarray:
    marks = np.zeros(t.size, dtype=bool)
    for tau in switch_times:
        k = int(round((tau - t[0]) / dt))
        if 0 <= k < t.size:
            if abs(t[k] - tau) > 1e-9 * max(1.0, abs(tau)):
                log.info("switch %.6g snapped to grid time %.6g", tau, t[k])
            marks[k] = True
    return marks


def integrate(
    dynamics,
    controller: Callable | None,
    x0,
    t0: float,
    horizon: float,
    dt: float = 0.01,
    switch_times=(),
) -> Trajectory:
    """RK4 with the input held constant over each step.

    ``controller(x, t)`` returns a :class:`ControlStep`, a float, or raises
    :class:`ScheduleExhausted` (input then falls back to 0).
    """
    t = _grid(t0, horizon, dt)
    N = t.size
    d = dynamics.dim
    x = np.empty((N, d))
    x[0] = np.asarray(x0, dtype=float)
    if x[0].shape != (d,):
        raise ValueError(f"x0 has {x[0].size} entries, expected {d}")
    u = np.full(N, np.nan)
    eps = np.full(N, np.nan)
    psi = np.full(N, np.nan)
    singular = np.zeros(N, dtype=bool)
    secs = np.full(N, np.nan)
    g_cache = None
    for k in range(N - 1):
        xk = x[k]
        tic = time.perf_counter()
        uk, ek = 0.0, 0.0
        if controller is not None:
            try:
                step = controller(xk, t[k])
            except ScheduleExhausted:
                step = None
            if isinstance(step, ControlStep):
                uk, ek = step.u, step.eps
                psi[k] = step.psi
                singular[k] = step.singular and step.b > 0
            elif step is not None:
                uk = float(step)
        secs[k] = time.perf_counter() - tic
        u[k], eps[k] = uk, ek
        if g_cache is None or hasattr(dynamics, "_gain") and callable(dynamics._gain):
            g_cache = dynamics.input_direction(xk)
        g = g_cache
        x[k + 1] = _rk4(lambda s: dynamics.drift(s) + g * uk, xk, dt)
        if not np.all(np.isfinite(x[k + 1])):
            raise SimulationError(
                f"non-finite state at t = {t[k + 1]:.6g}: x = {x[k + 1].tolist()}, "
                f"previous x = {xk.tolist()}, u = {uk!r}, eps = {ek!r}"
            )
    layout = getattr(dynamics, "layout", None) or StateLayout(d, 1)
    traj = Trajectory(t, x, u, eps, layout, dt, psi=psi, singular=singular, step_seconds=secs)
    traj.switch = _snap_switches(t, switch_times, dt)
    return traj


def annotate(traj: Trajectory, barrier, chain=None) -> Trajectory:
    """Log the composite barrier, chain head and per-task values at every grid point."""
    N = len(traj)
    h = np.full(N, np.nan)
    head = np.full(N, np.nan)
    task_h = {k: np.full(N, np.nan) for k in barrier.tasks}
    task_psi = {k: np.full(N, np.nan) for k in barrier.tasks}
    for k in range(N):
        tk = traj.t[k]
        try:
            h[k] = barrier.value(traj.x[k], tk)
        except ScheduleExhausted:
            continue
        for name, v in barrier.task_values(traj.x[k], tk).items():
            task_h[name][k] = v
        if chain is not None:
            head[k] = chain.head(traj.x[k], tk).value
            for name, v in chain.task_heads(traj.x[k], tk).items():
                task_psi[name][k] = v
    traj.h = h
    traj.psi = head if chain is not None else traj.psi
    traj.task_h = task_h
    traj.task_psi = task_psi if chain is not None else {}
    if traj.switch is None or not traj.switch.any():
        traj.switch = _snap_switches(traj.t, barrier.schedule.times[1:], traj.dt)
    return traj


def trajectory_sampler(traj: Trajectory, end: float | None = None):
    """Sampler over logged grid states, for delta estimation on the simulated domain."""
    limit = traj.t.size if end is None else int(np.searchsorted(traj.t, end - 1e-9, side="left"))
    limit = max(limit, 1)

    def sample(rng: np.random.Generator):
        k = int(rng.integers(0, limit))
        return traj.x[k], float(traj.t[k])

    return sample


# ---------------------------------------------------------------------------
# reports


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.floating,)):
        return _clean(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


@dataclass
class RunReport:
    scenario: str
    mode: str
    dt: float
    verdicts: dict = field(default_factory=dict)
    windows: list = field(default_factory=list)
    min_h: float = math.nan
    min_head: float = math.nan
    initial_h: float = math.nan
    convergence_time: float | None = None
    certificate: dict = field(default_factory=dict)
    robust_bound: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)
    singularities: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def all_satisfied(self) -> bool:
        return bool(self.verdicts) and all(self.verdicts.values())

    def summary(self) -> str:
        if not self.verdicts:
            return "no tasks evaluated"
        if self.all_satisfied:
            return "all tasks satisfied"
        bad = [k for k, v in self.verdicts.items() if not v]
        return "tasks violated: " + ", ".join(bad)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["all_satisfied"] = self.all_satisfied
        d["summary"] = self.summary()
        return _clean(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _runs(mask: np.ndarray):
    """Index ranges ``[i, j]`` of consecutive True entries."""
    out = []
    k = 0
    n = mask.size
    while k < n:
        if mask[k]:
            j = k
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((k, j))
            k = j + 1
        else:
            k += 1
    return out


def _violation_windows(traj: Trajectory, barrier) -> dict:
    """Per task, the time windows where one of its operators is violated on the grid."""
    out: dict[str, list] = {k: [] for k in barrier.tasks}
    t = traj.t
    tol = 1e-9 * max(1.0, abs(t[-1]))
    for op in barrier.operators:
        sel = (t >= op.a - tol) & (t <= op.b + tol)
        if not sel.any():
            continue
        idx = np.nonzero(sel)[0]
        vals = op.predicate.values(traj.x[idx])
        if op.kind == "G":
            for i, j in _runs(vals < 0):
                out[op.task].append(
                    {"operator": op.label, "start": float(t[idx[i]]), "end": float(t[idx[j]]), "min": float(vals[i : j + 1].min())}
                )
        elif vals.max() < 0:
            out[op.task].append({"operator": op.label, "start": float(op.a), "end": float(op.b), "min": float(vals.max())})
    return out


def run_scenario(scenario, dt: float | None = None, seed: int | None = None, x0=None, envelope=None, refine: bool = True):
    """Simulate a scenario and evaluate every monitor. Returns ``(report, trajectory)``."""
    dt = float(dt or scenario.sim.dt)
    system = scenario.build(x0=x0, envelope=envelope)
    bar, chain, params = system.barrier, system.chain, system.params
    t0, T_end = scenario.sim.t0, scenario.horizon
    report = RunReport(scenario.name, params.mode.value, dt)
    if T_end <= t0:
        report.notes.append("empty horizon; nothing simulated")
        empty = Trajectory(np.array([t0]), system.x0[None, :], np.array([np.nan]), np.array([np.nan]), scenario.layout, dt)
        empty.psi = np.array([np.nan])
        empty.h = np.array([np.nan])
        empty.switch = np.zeros(1, dtype=bool)
        return report, empty

    def simulate(step):
        tr = integrate(system.dynamics, system.controller, system.x0, t0, T_end, step, bar.schedule.times[1:])
        return annotate(tr, bar, chain)

    traj = simulate(dt)
    h0 = traj.h[0]
    if refine and params.mode is Mode.FULL and math.isfinite(h0) and h0 >= 0:
        scale = max(1.0, float(np.nanmax(np.abs(traj.h))))
        tol = 10 * dt**4 * scale
        worst = float(np.nanmin(traj.h))
        if worst < -tol:
            report.notes.append(f"invariance monitor: min h = {worst:.3g} < -{tol:.1e}; halved dt once")
            dt = dt / 2
            report.dt = dt
            traj = simulate(dt)

    # verdicts on the logged trajectory
    for name, f in scenario.formulas.items():
        report.verdicts[name] = evaluate(f, traj, t0)

    # per-window minima
    times = bar.schedule.times
    for l in range(len(times) - 1):
        sel = (traj.t >= times[l] - 1e-9) & (traj.t < times[l + 1] - 1e-9)
        w = {"start": times[l], "end": times[l + 1], "min_h": float(np.nanmin(traj.h[sel])), "min_head": float(np.nanmin(traj.psi[sel]))}
        w["tasks"] = {}
        for name in bar.tasks:
            vh, vp = traj.task_h[name][sel], traj.task_psi[name][sel]
            if np.isfinite(vh).any():
                w["tasks"][name] = {"min_h": float(np.nanmin(vh)), "min_head": float(np.nanmin(vp))}
        report.windows.append(w)
    report.min_h = float(np.nanmin(traj.h))
    report.min_head = float(np.nanmin(traj.psi))
    report.initial_h = float(h0)
    if h0 >= 0:
        report.convergence_time = 0.0
    else:
        hit = np.nonzero(traj.h >= 0)[0]
        report.convergence_time = float(traj.t[hit[0]] - t0) if hit.size else None

    # certificate and robust bound
    lam = chain.lam
    order = chain.max_order
    if params.mode is Mode.FULL:
        cert = {"T": nominal_settling_time(params), "eps_max": 0.0, "branch": "full information", "delta": 0.0}
    else:
        delta = scenario.certificate.delta
        source = "given"
        if delta in (None, "estimate"):
            rng = np.random.default_rng(scenario.certificate.seed if seed is None else seed)
            delta = residual_delta_estimate(
                system.dynamics, chain, trajectory_sampler(traj, bar.end), scenario.certificate.samples, rng
            )
            source = "estimated"
        c = fixed_time_bound(params, float(delta))
        cert = c.as_dict()
        cert["delta_source"] = source
    eps = cert["eps_max"]
    bound = -lam.inverse(eps) if order == 2 else -eps
    report.certificate = cert
    report.robust_bound = {"bound": bound, "min_h": report.min_h, "satisfied": bool(report.min_h >= bound)}
    if report.convergence_time is not None and report.convergence_time > cert["T"]:
        report.notes.append("measured convergence exceeds the certified bound")

    report.violations = _violation_windows(traj, bar)
    sing = np.nonzero(traj.singular)[0] if traj.singular is not None else np.array([], dtype=int)
    report.singularities = {"count": int(sing.size), "events": [float(traj.t[k]) for k in sing[:200]]}
    secs = traj.step_seconds[np.isfinite(traj.step_seconds)] if traj.step_seconds is not None else np.array([])
    if secs.size:
        report.timing = {
            "steps": int(secs.size),
            "mean_ms": float(secs.mean() * 1e3),
            "max_ms": float(secs.max() * 1e3),
            "total_s": float(secs.sum()),
        }
    return report, traj


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_csv(traj: Trajectory, path, scenario: str = "", verdicts: dict | None = None) -> None:
    names = traj.layout.names()
    tasks = list(traj.task_h)
    header = ["t", *names, "u", "eps", "h", "psi1", "switch"]
    header += [f"h:{k}" for k in tasks] + [f"psi1:{k}" for k in tasks]
    meta = f"# {CSV_VERSION} scenario={scenario} dt={traj.dt!r} agents={traj.layout.n_agents} order={traj.layout.order}"
    if verdicts is not None:
        meta += " verdicts=" + ",".join(f"{k}:{'true' if v else 'false'}" for k, v in verdicts.items())
    buf = io.StringIO()
    buf.write(meta + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    N = len(traj)
    nan = np.full(N, np.nan)
    psi = traj.psi if traj.psi is not None else nan
    h = traj.h if traj.h is not None else nan
    sw = traj.switch if traj.switch is not None else np.zeros(N, dtype=bool)
    for k in range(N):
        row = [_fmt(traj.t[k]), *(_fmt(v) for v in traj.x[k]), _fmt(traj.u[k]), _fmt(traj.eps[k]), _fmt(h[k]), _fmt(psi[k]), str(int(sw[k]))]
        row += [_fmt(traj.task_h[k2][k]) for k2 in tasks] + [_fmt(traj.task_psi.get(k2, nan)[k]) for k2 in tasks]
        w.writerow(row)
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    """Load a trajectory CSV. Returns ``(trajectory, meta)``; ``meta['verdicts']`` holds embedded verdicts."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# " + CSV_VERSION):
        raise ValueError(f"{path}: not a {CSV_VERSION} file")
    meta: dict[str, Any] = {}
    for tok in lines[0][2:].split()[1:]:
        k, _, v = tok.partition("=")
        meta[k] = v
    verdicts = {}
    if meta.get("verdicts"):
        for item in meta["verdicts"].split(","):
            k, _, v = item.partition(":")
            verdicts[k] = v == "true"
    meta["verdicts"] = verdicts
    rows = list(csv.reader(lines[1:]))
    header = rows[0]
    body = [r for r in rows[1:] if r]
    n, order = int(meta["agents"]), int(meta["order"])
    layout = StateLayout(n, order)
    names = layout.names()
    try:
        cols = {name: header.index(name) for name in ["t", *names]}
    except ValueError as e:
        raise ValueError(f"{path}: missing column ({e})") from None
    # a truncated final line is dropped rather than half-read
    body = [r for r in body if len(r) == len(header)]
    data = np.array([[float(r[cols["t"]])] + [float(r[cols[nm]]) for nm in names] for r in body]) if body else np.zeros((0, 1 + len(names)))

    def col(name):
        if name not in header:
            return None
        i = header.index(name)
        return np.array([float(r[i]) for r in body])

    traj = Trajectory(
        data[:, 0],
        data[:, 1:],
        col("u"),
        col("eps"),
        layout,
        float(meta.get("dt", "nan")),
        psi=col("psi1"),
        h=col("h"),
    )
    traj.task_h = {c[2:]: col(c) for c in header if c.startswith("h:")}
    traj.task_psi = {c[5:]: col(c) for c in header if c.startswith("psi1:")}
    sw = col("switch")
    traj.switch = sw.astype(bool) if sw is not None else None
    return traj, meta
