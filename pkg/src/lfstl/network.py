"""Leader-follower graphs and stacked first/second-order consensus dynamics.

Agents are numbered 1..n and agent n is the (single) leader. The stacked state
is ``(p_1..p_n)`` for first order and ``(p_1..p_n, v_1..v_n)`` for second order.
Only the leader's last state slot is actuated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .stl import StateLayout

__all__ = ["Graph", "Dynamics", "DRIFT_PRIMITIVES", "residual_delta_estimate", "box_sampler"]

DRIFT_PRIMITIVES = ("linear", "saturated")


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one agent")
        norm = set()
        for i, j in self.edges:
            if not (1 <= i <= self.n and 1 <= j <= self.n) or i == j:
                raise ValueError(f"bad edge ({i}, {j}) for {self.n} agents")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self.is_connected():
            raise ValueError("graph must be connected")

    @classmethod
    def from_laplacian(cls, L) -> "Graph":
        L = np.asarray(L, dtype=float)
        n = L.shape[0]
        edges = {(i + 1, j + 1) for i in range(n) for j in range(i + 1, n) if L[i, j] != 0 or L[j, i] != 0}
        return cls(n, frozenset(edges))

    @property
    def leader(self) -> int:
        return self.n

    @property
    def followers(self) -> tuple[int, ...]:
        return tuple(range(1, self.n))

    def neighbors(self, i: int) -> frozenset:
        return frozenset(j for e in self.edges for j in e if i in e and j != i)

    def is_connected(self) -> bool:
        seen = {1}
        stack = [1]
        while stack:
            i = stack.pop()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n


class Dynamics:
    """Consensus-type drift with per-agent local terms and pairwise couplings.

    For agent ``i`` with state ``z_i`` (``p_i`` for order 1, ``p_i + v_i`` for order 2)::

        f_ij = L_ij * s(z_i - z_j)           (j != i)
        f_ii = -(sum_j L_ij) * s(z_i) - k_i * y_i

    with ``s`` the identity ("linear") or ``sat * tanh(./sat)`` ("saturated") and
    ``y_i`` the agent's highest-order state. The agent's driven row is the sum.
    For order 2 the kinematic rows are ``p_dot = v``.
    """

    def __init__(
        self,
        L,
        order: int = 2,
        gain: float | Callable[[np.ndarray], float] = 1.0,
        drift: str = "linear",
        saturation: float = 1.0,
        local_gain: Sequence[float] | None = None,
        graph: Graph | None = None,
    ):
        self.L = np.array(L, dtype=float)
        n = self.L.shape[0]
        if self.L.shape != (n, n):
            raise ValueError("Laplacian must be square")
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if drift not in DRIFT_PRIMITIVES:
            raise ValueError(f"unknown drift primitive {drift!r}; choose from {DRIFT_PRIMITIVES}")
        if drift == "saturated" and not saturation > 0:
            raise ValueError("saturation level must be positive")
        self.n = n
        self.order = order
        self.kind = drift
        self.sat = float(saturation)
        self.k = np.zeros(n) if local_gain is None else np.asarray(local_gain, dtype=float)
        if self.k.shape != (n,):
            raise ValueError("local_gain needs one entry per agent")
        self.graph = graph or Graph.from_laplacian(self.L)
        if self.graph.n != n:
            raise ValueError("graph and Laplacian sizes differ")
        for i in range(n):
            for j in range(n):
                if i != j and self.L[i, j] != 0 and (j + 1) not in self.graph.neighbors(i + 1):
                    raise ValueError(f"L[{i + 1},{j + 1}] couples agents that share no edge")
        self._gain = gain
        self.layout = StateLayout(n, order)
        self._offdiag = self.L - np.diag(np.diag(self.L))
        self._rowsum = self.L.sum(axis=1)

    # -- helpers
    @property
    def dim(self) -> int:
        return self.order * self.n

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"state has shape {x.shape}, expected ({self.dim},)")
        return x

    def _split(self, x):
        n = self.n
        if self.order == 1:
            return x, x, x
        p, v = x[:n], x[n:]
        return p + v, v, v

    def _s(self, z):
        if self.kind == "linear":
            return z
        return self.sat * np.tanh(z / self.sat)

    def _ds(self, z):
        if self.kind == "linear":
            return np.ones_like(z)
        return 1.0 / np.cosh(z / self.sat) ** 2

    def dyn_row(self, i: int) -> int:
        """Stacked index of agent ``i``'s driven row (1-based agent)."""
        return (i - 1) if self.order == 1 else self.n + i - 1

    # -- decomposition
    def local_terms(self, x) -> np.ndarray:
        z, y, _ = self._split(self._check(x))
        return -self._rowsum * self._s(z) - self.k * y

    def coupling_terms(self, x) -> np.ndarray:
        """Matrix ``C[i, j] = f_{i+1, j+1}(x)``; zero on the diagonal and off the edge set."""
        z, _, _ = self._split(self._check(x))
        return self._offdiag * self._s(z[:, None] - z[None, :])

    def local(self, i: int, x) -> float:
        return float(self.local_terms(x)[i - 1])

    def coupling(self, i: int, j: int, x) -> float:
        return float(self.coupling_terms(x)[i - 1, j - 1])

    # -- stacked quantities
    def drift(self, x) -> np.ndarray:
        x = self._check(x)
        z, y, v = self._split(x)
        if self.kind == "linear":
            acc = -self.L @ z - self.k * y
        else:
            acc = self.local_terms(x) + self.coupling_terms(x).sum(axis=1)
        if self.order == 1:
            return acc
        return np.concatenate([v, acc])

    def jacobian(self, x) -> np.ndarray:
        x = self._check(x)
        n = self.n
        z, _, _ = self._split(x)
        if self.kind == "linear":
            A = -self.L.copy()
        else:
            D = self._offdiag * self._ds(z[:, None] - z[None, :])
            A = np.diag(D.sum(axis=1) - self._rowsum * self._ds(z)) - D
        K = np.diag(self.k)
        if self.order == 1:
            return A - K
        J = np.zeros((2 * n, 2 * n))
        J[:n, n:] = np.eye(n)
        J[n:, :n] = A
        J[n:, n:] = A - K
        return J

    def gain(self, x) -> float:
        g = self._gain
        if callable(g):
            x = self._check(x)
            return float(g(x[self.dyn_row(self.n)]))
        return float(g)

    def input_direction(self, x) -> np.ndarray:
        x = self._check(x)
        g = np.zeros(self.dim)
        g[self.dyn_row(self.n)] = self.gain(x)
        return g

    def closed_loop(self, x, u: float) -> np.ndarray:
        return self.drift(x) + self.input_direction(x) * u

    # -- leader knowledge split
    def known_agents(self) -> frozenset:
        return self.graph.neighbors(self.n) | {self.n}

    def split_drift_term(self, grad, x) -> tuple[float, float]:
        """Split ``grad . f(x)`` into the part the leader can compute and the residual.

        The leader knows its own terms, its neighbours' local terms and their
        couplings to agents it knows. Kinematic rows (order 2) are always known.
        """
        x = self._check(x)
        grad = np.asarray(grad, dtype=float)
        total = float(grad @ self.drift(x))
        known = self.known_agents()
        unknown = [j for j in range(1, self.n + 1) if j not in known]
        if not unknown:
            return total, 0.0
        rows = np.array([self.dyn_row(j) for j in range(1, self.n + 1)])
        g_dyn = grad[rows]
        acc = self.local_terms(x) + self.coupling_terms(x).sum(axis=1)
        C = self.coupling_terms(x)
        u_idx = np.array(unknown) - 1
        nb_idx = np.array(sorted(self.graph.neighbors(self.n))) - 1
        residual = float(g_dyn[u_idx] @ acc[u_idx])
        if nb_idx.size:
            residual += float(g_dyn[nb_idx] @ C[np.ix_(nb_idx, u_idx)].sum(axis=1))
        return total - residual, residual


def box_sampler(lo, hi, t0: float, t1: float):
    """Uniform sampler over a state box times ``[t0, t1)``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)

    def sample(rng: np.random.Generator):
        return rng.uniform(lo, hi), float(rng.uniform(t0, t1))

    return sample


def residual_delta_estimate(dyn: Dynamics, chain, sampler, n_samples: int, seed: int | np.random.Generator = 0) -> float:
    """Largest residual magnitude over ``n_samples`` draws; an empirical lower bound on the true delta.

    ``chain`` is anything with ``head(x, t)`` returning a value/gradient triple
    (a barrier chain), or a barrier with ``value_and_gradients``.
    Samples are drawn sequentially, so more samples never lower the estimate.
    """
    unknown = [j for j in range(1, dyn.n + 1) if j not in dyn.known_agents()]
    if not unknown:
        return 0.0
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    best = 0.0
    for _ in range(int(n_samples)):
        x, t = sampler(rng)
        if hasattr(chain, "head"):
            grad = chain.head(x, t).grad_x
        else:
            grad = chain.value_and_gradients(x, t)[1]
        best = max(best, abs(dyn.split_drift_term(grad, x)[1]))
    return best
