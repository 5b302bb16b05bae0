"""Stage-by-stage computation of the value functions v_k(t, x, p).

Stage ``n`` knows every configuration whose first decision lies after
T - n h, and v_0 on (T - n h, T]. The first stage (n = m) is pure
Feynman-Kac: orders decided that late never execute. Each later stage walks
k = m, ..., 1 (execution boundary, optional obstacle solve on the decision
window, linear solve on the lag window) and then extends v_0 by an obstacle
solve over the new time window.

Fields of an executable configuration are stored on the index range
``[j_k, j_1 + D]``; the entry at ``j_1 + D`` is the pre-execution left limit
c(x, e_1) + v_{k-1}(j_1 + D, Gamma(x, e_1), p_-).
"""

from __future__ import annotations

import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernel import (
    ExecutionMap,
    Operator,
    build_operator,
    feynman_kac_solve,
    optimal_stopping_solve,
)
from .lattice import (
    EMPTY,
    INTERIOR,
    PendingConfig,
    SpaceGrid,
    TimeGrid,
    build_grids,
    classify_config,
    enumerate_configs,
    stage_configs,
    stage_window,
)
from .model import ValidatedProblem

BIND_RTOL = 1e-9


class DependencyIncomplete(RuntimeError):
    """A field was read before the stage that computes it."""


class StoreIncomplete(RuntimeError):
    pass


def bind_tolerance(v: np.ndarray | float) -> np.ndarray | float:
    return BIND_RTOL * (1.0 + np.abs(v))


@dataclass(frozen=True, eq=False)
class ConfigField:
    """v_k(., ., p) on consecutive time indices starting at ``start``."""

    start: int
    data: np.ndarray
    interior: bool
    stage: int

    @property
    def end(self) -> int:
        return self.start + len(self.data) - 1

    def at(self, j: int) -> np.ndarray:
        if not self.start <= j <= self.end:
            raise IndexError(f"time index {j} outside [{self.start}, {self.end}]")
        return self.data[j - self.start]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(eq=False)
class ValueStore:
    problem: ValidatedProblem
    tgrid: TimeGrid
    sgrid: SpaceGrid
    fk: np.ndarray
    v0: np.ndarray
    v0_from: int
    fields: dict[PendingConfig, ConfigField] = field(default_factory=dict)
    stage: int = 0
    clamp_count: int = 0
    stage_seconds: dict[int, float] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return self.stage >= self.tgrid.n_stages

    def put(self, p: PendingConfig, start: int, data: np.ndarray, interior: bool, stage: int) -> None:
        if p in self.fields:
            raise RuntimeError(f"config {p.key()} written twice")
        self.fields[p] = ConfigField(start, _frozen(data), interior, stage)

    def field(self, p: PendingConfig) -> ConfigField:
        try:
            return self.fields[p]
        except KeyError:
            raise DependencyIncomplete(f"config {p.key()} has not been computed") from None

    def value(self, p: PendingConfig, j: int) -> np.ndarray:
        """v_k(t_j, ., p) on the space grid (post-execution, pre-decision at t_j)."""
        if p.k == 0:
            if j < self.v0_from:
                raise DependencyIncomplete(f"v_0 at index {j} has not been computed")
            return self.v0[j]
        return self.field(p).at(j)

    def obstacle(self, p: PendingConfig, j: int) -> np.ndarray:
        """max over impulses of v_{k+1}(t_j, ., p + (t_j, e))."""
        out = self.value(p.extended(j, 0), j)
        for e in range(1, self.problem.n_impulses):
            out = np.maximum(out, self.value(p.extended(j, e), j))
        return out

    def counts_by_k(self) -> dict[int, int]:
        out: dict[int, int] = defaultdict(int)
        for p in self.fields:
            out[p.k] += 1
        return dict(sorted(out.items()))


def obstacle_field(store: ValueStore, p: PendingConfig, times: range) -> np.ndarray:
    """F_{k,p} on consecutive time indices, shape ``(len(times), *space)``."""
    return np.stack([store.obstacle(p, j) for j in times])


def init_stage(problem: ValidatedProblem, tgrid: TimeGrid, sgrid: SpaceGrid, op: Operator) -> ValueStore:
    """Stage n = m: configurations that never execute and v_0 on (T - m h, T]."""
    t0 = time.perf_counter()
    n_t, m = tgrid.n_steps, tgrid.m
    fk = _frozen(feynman_kac_solve(problem.terminal(sgrid.points), n_t, op))
    v0 = np.full_like(fk, np.nan)
    lo = n_t - tgrid.delay_steps + 1
    v0[lo:] = fk[lo:]
    store = ValueStore(problem, tgrid, sgrid, fk, v0, lo)
    for k in range(1, m + 1):
        for p in enumerate_configs(k, m, tgrid, problem.n_impulses):
            store.put(p, p.last, fk[p.last:], interior=False, stage=m)
    store.stage = m
    store.stage_seconds[m] = time.perf_counter() - t0
    return store


def _solve_group(store: ValueStore, configs: list[PendingConfig], op: Operator,
                 exec_map: ExecutionMap) -> np.ndarray:
    """Fields of configs sharing one offset pattern, shape (len, B, *space)."""
    tgrid = store.tgrid
    D, L = tgrid.delay_steps, tgrid.lag_steps
    shape = store.sgrid.shape
    b = len(configs)
    G = np.empty((b,) + shape)
    prev = np.stack([store.value(p.dropped_first(), p.first + D) for p in configs])
    firsts = np.array([p.impulses[0] for p in configs])
    for e in np.unique(firsts):
        idx = np.flatnonzero(firsts == e)
        G[idx] = exec_map(prev[idx], int(e))
    p0 = configs[0]
    rel_last = p0.last - p0.first
    n1 = min(L, D - rel_last)
    n2 = D - rel_last - n1
    if n2 > 0:
        obstacle = np.empty((n2, b) + shape)
        for r in range(n2):
            for i, p in enumerate(configs):
                obstacle[r, i] = store.obstacle(p, p.last + n1 + r)
        tail = optimal_stopping_solve(obstacle, G, op)
    else:
        tail = G[None]
    head = feynman_kac_solve(tail[0], n1, op)
    return np.concatenate([head[:-1], tail], axis=0)


def _chunks(items: list, n: int) -> list[list]:
    n = max(1, min(n, len(items)))
    size = -(-len(items) // n)
    return [items[i:i + size] for i in range(0, len(items), size)]


def advance_stage(store: ValueStore, n: int, op: Operator, exec_map: ExecutionMap, threads: int = 1) -> ValueStore:
    """Extend a store complete through stage ``n`` to stage ``n + 1``."""
    if store.stage != n:
        raise DependencyIncomplete(f"store is at stage {store.stage}, cannot advance from {n}")
    t0 = time.perf_counter()
    s = n + 1
    tgrid = store.tgrid
    n_e = store.problem.n_impulses
    for k in range(tgrid.m, 0, -1):
        groups: dict[tuple[int, ...], list[PendingConfig]] = defaultdict(list)
        for p in stage_configs(k, s, tgrid, n_e):
            groups[p.offsets].append(p)
        jobs = [chunk for key in sorted(groups) for chunk in _chunks(groups[key], threads)]
        if threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda c: _solve_group(store, c, op, exec_map), jobs))
        else:
            results = [_solve_group(store, c, op, exec_map) for c in jobs]
        for chunk, stack in zip(jobs, results):
            for i, p in enumerate(chunk):
                store.put(p, p.last, np.ascontiguousarray(stack[:, i]), interior=True, stage=s)
    lo, hi = stage_window(s, tgrid)
    obstacle = obstacle_field(store, EMPTY, range(lo, hi + 1))
    window = optimal_stopping_solve(obstacle, store.v0[hi + 1], op)
    store.v0[lo:hi + 1] = window[:-1]
    store.v0_from = lo
    store.stage = s
    store.stage_seconds[s] = time.perf_counter() - t0
    return store


def solve(problem: ValidatedProblem, tgrid: TimeGrid | None = None, sgrid: SpaceGrid | None = None,
          threads: int = 1) -> ValueStore:
    """All value functions on the lattice, stages m through N."""
    if tgrid is None or sgrid is None:
        if problem.spec.grid is None:
            raise ValueError("problem has no grid section and no grids were supplied")
        tgrid, sgrid = build_grids(problem.delay, problem.spec.grid)
    op = build_operator(problem, sgrid, tgrid.dt_float)
    exec_map = ExecutionMap(problem, sgrid)
    store = init_stage(problem, tgrid, sgrid, op)
    store.clamp_count = sum(exec_map.clamp_count(e) for e in range(problem.n_impulses))
    for n in range(tgrid.m, tgrid.n_stages):
        advance_stage(store, n, op, exec_map, threads)
    store.v0.flags.writeable = False
    return store


def is_interior(p: PendingConfig, tgrid: TimeGrid) -> bool:
    return classify_config(p, tgrid) == INTERIOR
