"""SVG panels: position errors, velocity errors and per-task barrier values."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so repeated runs write identical files
plt.rcParams["svg.hashsalt"] = "lfstl"


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _panel(t, series: dict, ylabel: str, title: str, path: Path, switches=()) -> Path:
    fig, ax = plt.subplots(figsize=(7, 3))
    for label, y in series.items():
        ax.plot(t, y, label=label, linewidth=1.2)
    for tau in switches:
        ax.axvline(tau, color="0.7", linewidth=0.6, linestyle=":")
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, linewidth=0.3)
    if series:
        ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    return _save(fig, path)


def plot_trajectory(traj, scenario, out_dir) -> list[Path]:
    """Write one SVG per panel; errors are taken relative to the leader."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = traj.layout.n_agents
    t = traj.t
    switches = t[traj.switch] if traj.switch is not None else ()
    paths = []
    pos = {f"p{i} - p{n}": traj.x[:, i - 1] - traj.x[:, n - 1] for i in range(1, n)}
    paths.append(_panel(t, pos, "position error", f"{scenario.name}: position errors", out / "position_errors.svg", switches))
    if traj.layout.order == 2:
        vel = {f"v{i} - v{n}": traj.x[:, n + i - 1] - traj.x[:, 2 * n - 1] for i in range(1, n)}
        paths.append(_panel(t, vel, "velocity error", f"{scenario.name}: velocity errors", out / "velocity_errors.svg", switches))
    bars = {name: np.asarray(v) for name, v in traj.task_h.items()}
    paths.append(_panel(t, bars, "barrier value", f"{scenario.name}: barrier values per task", out / "barriers.svg", switches))
    return paths
