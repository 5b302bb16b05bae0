"""Optimal impulse policy, controlled-path simulation and Monte Carlo valuation.

Paths run on the solver's time grid. At each node the due order (decided m h
earlier) executes first, then the strategy may decide a new order, then the
state takes an Euler-Maruyama step. Path ``i`` draws its normals from
``numpy.random.default_rng([seed, i])`` so results do not depend on how paths
are batched or split across threads.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .kernel import InterpPlan
from .lattice import PendingConfig, TimeGrid
from .model import ValidatedProblem
from .oracle import InstanceTooLarge, brute_force_oracle  # noqa: F401  (re-exported)
from .solver import StoreIncomplete, ValueStore, bind_tolerance

WAIT = -1


@dataclass(frozen=True)
class Action:
    kind: str
    impulse: int | None = None

    def __str__(self) -> str:
        return "wait" if self.kind == "wait" else f"decide({self.impulse})"


@dataclass(frozen=True)
class OrderBook:
    """Pending (decision index, impulse index) pairs, oldest first."""

    pending: tuple[tuple[int, int], ...] = ()

    @property
    def k(self) -> int:
        return len(self.pending)

    @property
    def config(self) -> PendingConfig:
        return PendingConfig(tuple(t for t, _ in self.pending), tuple(e for _, e in self.pending))

    def may_decide(self, j: int, tgrid: TimeGrid) -> bool:
        if self.k >= tgrid.m or j + tgrid.delay_steps > tgrid.n_steps:
            return False
        return self.k == 0 or j - self.pending[-1][0] >= tgrid.lag_steps


def _require_complete(store: ValueStore) -> None:
    if not store.complete:
        raise StoreIncomplete(f"store is at stage {store.stage} of {store.tgrid.n_stages}")


def extract_decision(store: ValueStore, j: int, x: Sequence[float], book: OrderBook) -> Action:
    """Decide when v_k(t, x, p) is within the binding tolerance of max_e v_{k+1}(t, x, p + (t, e))."""
    _require_complete(store)
    if not book.may_decide(j, store.tgrid):
        return Action("wait")
    decisions = StorePolicy(store).decide(j, np.atleast_2d(np.asarray(x, dtype=float)), [book.config],
                                          np.zeros(1, dtype=np.int64))
    return Action("wait") if decisions[0] == WAIT else Action("decide", int(decisions[0]))


class Strategy(Protocol):
    def decide(self, j: int, x: np.ndarray, configs: list[PendingConfig], which: np.ndarray) -> np.ndarray:
        """Impulse index per path, or ``WAIT``.

        Only called for paths allowed to decide; path ``i`` holds the pending
        orders ``configs[which[i]]``.
        """


class StorePolicy:
    """Greedy rule read off the solved value functions; ties go to the lowest impulse index."""

    def __init__(self, store: ValueStore):
        _require_complete(store)
        self.store = store

    def decide(self, j: int, x: np.ndarray, configs: list[PendingConfig], which: np.ndarray) -> np.ndarray:
        store = self.store
        out = np.full(len(which), WAIT, dtype=np.int64)
        for c, p in enumerate(configs):
            rows = np.flatnonzero(which == c)
            if not len(rows):
                continue
            plan = InterpPlan(store.sgrid, x[rows])
            v = plan.apply(store.value(p, j))
            cand = np.stack([plan.apply(store.value(p.extended(j, e), j))
                             for e in range(store.problem.n_impulses)])
            best = np.argmax(cand, axis=0)
            bind = v <= cand.max(axis=0) + bind_tolerance(v)
            out[rows] = np.where(bind, best, WAIT)
        return out


class NeverImpulse:
    def decide(self, j, x, configs, which):
        return np.full(len(which), WAIT, dtype=np.int64)


@dataclass
class AlwaysImpulse:
    """Decide ``impulse`` at every admissible node."""

    impulse: int = 0

    def decide(self, j, x, configs, which):
        return np.full(len(which), self.impulse, dtype=np.int64)


@dataclass
class ThresholdImpulse:
    """Decide ``impulse`` whenever state component ``index`` is above (or below) ``level``."""

    level: float
    impulse: int = 0
    index: int = 0
    above: bool = True

    def decide(self, j, x, configs, which):
        hit = x[:, self.index] >= self.level if self.above else x[:, self.index] <= self.level
        return np.where(hit, self.impulse, WAIT).astype(np.int64)


@dataclass
class ScheduledImpulse:
    """Decide fixed impulses at fixed time indices, when admissible."""

    schedule: dict[int, int] = field(default_factory=dict)

    def decide(self, j, x, configs, which):
        return np.full(len(which), self.schedule.get(j, WAIT), dtype=np.int64)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    actions: list[str]
    pending: np.ndarray
    running_profit: np.ndarray
    decisions: list[tuple[int, int]]
    executions: list[tuple[int, int]]
    running_integral: float
    execution_rewards: float
    terminal_reward: float
    payoff: float

    def to_csv(self, path: str | Path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"x{i}" for i in range(d)] + ["action", "pending", "running_pi"])
            for j in range(len(self.times)):
                w.writerow([repr(float(self.times[j]))] + [f"{v:.17g}" for v in self.states[j]]
                           + [self.actions[j], int(self.pending[j]), f"{self.running_profit[j]:.17g}"])


def path_normals(seed: int, index: int, n_steps: int, dim: int) -> np.ndarray:
    """Standard normals of path ``index`` under the seed-splitting rule."""
    return np.random.default_rng([seed, index]).standard_normal((n_steps, dim))


def _simulate_batch(problem: ValidatedProblem, tgrid: TimeGrid, strategy: Strategy, seed: int,
                    indices: range, record: bool = False):
    n = len(indices)
    d, m = problem.dim, tgrid.m
    n_t, D, L = tgrid.n_steps, tgrid.delay_steps, tgrid.lag_steps
    dt = tgrid.dt_float
    sqdt = np.sqrt(dt)
    z = np.stack([path_normals(seed, i, n_t, d) for i in indices]) if n_t else np.zeros((n, 0, d))
    x = np.tile(problem.x0, (n, 1))
    times = np.full((n, m), -1, dtype=np.int64)
    imps = np.full((n, m), -1, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    pi = np.zeros(n)
    f_int = np.zeros(n)
    c_sum = np.zeros(n)
    log = None
    if record:
        log = {"states": [], "actions": [], "pending": [], "pi": [], "decisions": [], "executions": []}
    for j in range(n_t + 1):
        labels = [[] for _ in range(n)] if record else None
        due = (count > 0) & (times[:, 0] + D == j)
        if due.any():
            for e in np.unique(imps[due, 0]):
                rows = np.flatnonzero(due & (imps[:, 0] == e))
                c_sum[rows] += problem.cost(x[rows], int(e))
                x[rows] = problem.impulse_map(x[rows], int(e))
                if record:
                    for r in rows:
                        labels[r].append(f"execute({int(e)})")
                        log["executions"].append((j, int(e)))
            times[due, :-1] = times[due, 1:]
            imps[due, :-1] = imps[due, 1:]
            times[due, -1] = -1
            imps[due, -1] = -1
            count[due] -= 1
        if j == n_t:
            g = problem.terminal(x)
            if record:
                log["parts"] = (float(f_int[0]), float(c_sum[0]), float(g[0]))
            pi = f_int + c_sum + g
        else:
            last = times[np.arange(n), np.maximum(count - 1, 0)]
            eligible = (count < m) & ((count == 0) | (j - last >= L)) & (j + D <= n_t)
            rows = np.flatnonzero(eligible)
            if len(rows):
                keys, which = np.unique(np.column_stack([count[rows], times[rows], imps[rows]]),
                                        axis=0, return_inverse=True)
                configs = [PendingConfig(tuple(int(t) for t in key[1:1 + key[0]]),
                                         tuple(int(e) for e in key[1 + m:1 + m + key[0]])) for key in keys]
                choice = np.asarray(strategy.decide(j, x[rows], configs, which.reshape(-1)), dtype=np.int64)
                act = rows[choice != WAIT]
                chosen = choice[choice != WAIT]
                if len(act):
                    times[act, count[act]] = j
                    imps[act, count[act]] = chosen
                    count[act] += 1
                    if record:
                        for r, e in zip(act, chosen):
                            labels[r].append(f"decide({int(e)})")
                            log["decisions"].append((j, int(e)))
        if record:
            log["states"].append(x[0].copy())
            log["actions"].append("+".join(labels[0]) or "wait")
            log["pending"].append(int(count[0]))
        if j < n_t:
            f_int += problem.running(x) * dt
            x = x + problem.drift(x) * dt + problem.vol_diag(x) * sqdt * z[:, j]
        if record:
            log["pi"].append(float(pi[0]) if j == n_t else float(f_int[0] + c_sum[0]))
    return pi, log


def simulate_path(problem: ValidatedProblem, tgrid: TimeGrid, strategy: Strategy | ValueStore,
                  seed: int, index: int = 0) -> Trajectory:
    """One controlled path (path ``index`` of the seed's family) with its full record."""
    if isinstance(strategy, ValueStore):
        strategy = StorePolicy(strategy)
    pi, log = _simulate_batch(problem, tgrid, strategy, seed, range(index, index + 1), record=True)
    return Trajectory(tgrid.times, np.array(log["states"]), log["actions"], np.array(log["pending"]),
                      np.array(log["pi"]), log["decisions"], log["executions"], *log["parts"], float(pi[0]))


def simulate_payoffs(problem: ValidatedProblem, tgrid: TimeGrid, strategy: Strategy | ValueStore,
                     n_paths: int, seed: int, threads: int = 1, batch: int = 2048) -> np.ndarray:
    """Realised total profit of paths 0..n_paths-1."""
    if isinstance(strategy, ValueStore):
        strategy = StorePolicy(strategy)
    chunks = [range(s, min(s + batch, n_paths)) for s in range(0, n_paths, batch)]

    def run(idx: range) -> np.ndarray:
        return _simulate_batch(problem, tgrid, strategy, seed, idx)[0]

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts)


def monte_carlo_value(problem: ValidatedProblem, tgrid: TimeGrid, strategy: Strategy | ValueStore,
                      n_paths: int, seed: int, threads: int = 1) -> tuple[float, float]:
    """Sample mean of the profit and its standard error."""
    if n_paths < 2:
        raise ValueError("monte_carlo_value needs at least two paths")
    pi = simulate_payoffs(problem, tgrid, strategy, n_paths, seed, threads)
    return float(np.mean(pi)), float(np.std(pi, ddof=1) / np.sqrt(n_paths))
