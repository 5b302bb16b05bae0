"""Structural and numerical invariants of a solved store.

Each check returns a :class:`CheckResult`; ``run_all`` is what the ``validate``
command and the acceptance suite execute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import backward_step, build_operator, interpolate
from .lattice import EMPTY, enumerate_configs, partition_domain
from .solver import ValueStore

ORDER_RTOL = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _slack(a: np.ndarray) -> np.ndarray:
    return ORDER_RTOL * (1.0 + np.abs(a))


def check_execution_boundary(store: ValueStore) -> CheckResult:
    """Stored left limit at t_1 + m h equals c(x, e_1) + v_{k-1}(t_1 + m h, Gamma(x, e_1), p_-) bit for bit."""
    problem, sgrid, D = store.problem, store.sgrid, store.tgrid.delay_steps
    pts = sgrid.points
    mismatches = 0
    checked = 0
    for p, fld in store.fields.items():
        if not fld.interior:
            continue
        j = p.first + D
        e = p.impulses[0]
        expected = problem.cost(pts, e) + interpolate(store.value(p.dropped_first(), j),
                                                      problem.impulse_map(pts, e), sgrid)
        checked += 1
        if not np.array_equal(fld.at(j), expected):
            mismatches += 1
    return CheckResult("execution boundary", mismatches == 0, f"{checked} configs, {mismatches} mismatches")


def check_impulse_dominance(store: ValueStore) -> CheckResult:
    """v_k >= max_e v_{k+1}(., ., p + (t, e)) on every decision-window node, k = 0 included."""
    tg = store.tgrid
    worst = 0.0
    nodes = 0
    for p, fld in store.fields.items():
        if not fld.interior or p.k >= tg.m:
            continue
        for j in partition_domain(p, tg).second:
            v, obst = fld.at(j), store.obstacle(p, j)
            worst = max(worst, float(np.max(obst - v - _slack(v))))
            nodes += 1
    for j in range(tg.n_steps):
        v, obst = store.v0[j], store.obstacle(EMPTY, j)
        worst = max(worst, float(np.max(obst - v - _slack(v))))
        nodes += 1
    return CheckResult("impulse dominance", worst <= 0.0, f"{nodes} time nodes, worst excess {max(worst, 0.0):.3g}")


def check_no_action_bound(store: ValueStore) -> CheckResult:
    excess = float(np.max(store.fk - store.v0 - _slack(store.fk)))
    return CheckResult("no-action lower bound", excess <= 0.0, f"worst excess {max(excess, 0.0):.3g}")


def check_terminal(store: ValueStore) -> CheckResult:
    g = store.problem.terminal(store.sgrid.points)
    ok = np.array_equal(store.v0[store.tgrid.n_steps], g)
    return CheckResult("terminal value v_0(T) = g", ok, "exact" if ok else "differs from g")


def check_dpp_residual(store: ValueStore) -> CheckResult:
    """Re-apply the linear stencil on every no-decision node."""
    op = build_operator(store.problem, store.sgrid, store.tgrid.dt_float)
    worst = 0.0
    for p, fld in store.fields.items():
        if not fld.interior:
            continue
        part = partition_domain(p, store.tgrid)
        rng = part.first
        now = fld.data[rng.start - fld.start:rng.stop - fld.start]
        nxt = fld.data[rng.start - fld.start + 1:rng.stop - fld.start + 1]
        worst = max(worst, float(np.max(np.abs(now - backward_step(nxt, op)))))
    return CheckResult("linear-window residual", worst <= 1e-12, f"max residual {worst:.3g}")


def check_finite(store: ValueStore) -> CheckResult:
    ok = bool(np.all(np.isfinite(store.v0)) and all(np.all(np.isfinite(f.data)) for f in store.fields.values()))
    return CheckResult("finite fields", ok, "all finite" if ok else "NaN or Inf present")


def check_config_cover(store: ValueStore) -> CheckResult:
    """Every admissible configuration is stored, none beyond m orders, and decision windows follow lags."""
    tg = store.tgrid
    n_e = store.problem.n_impulses
    expected = {p for k in range(1, tg.m + 1) for p in enumerate_configs(k, tg.n_stages, tg, n_e)}
    extra = set(store.fields) - expected
    missing = expected - set(store.fields)
    beyond = enumerate_configs(tg.m + 1, tg.n_stages, tg, n_e)
    bad_partition = 0
    for p, fld in store.fields.items():
        if fld.interior:
            part = partition_domain(p, tg)
            if len(part.first) == 0 or part.first.stop != part.second.start or \
                    (p.k == tg.m and len(part.second) != 0) or fld.end != part.terminal:
                bad_partition += 1
    ok = not extra and not missing and not beyond and bad_partition == 0
    return CheckResult("configuration cover", ok,
                       f"{len(store.fields)} configs, {len(missing)} missing, {len(extra)} unexpected, "
                       f"{bad_partition} bad partitions")


def check_growth(store: ValueStore) -> CheckResult:
    """Linear growth bounds of the reward families and the impulse map on the grid."""
    problem = store.problem
    pts = store.sgrid.points.reshape(-1, problem.dim)
    box = np.maximum(np.abs(store.sgrid.lower), np.abs(store.sgrid.upper))
    c_reward, c_map = problem.growth_constants(box)
    norm = 1.0 + np.linalg.norm(pts, axis=-1)
    worst = 0.0
    for e in range(problem.n_impulses):
        lhs = np.abs(problem.running(pts)) + np.abs(problem.terminal(pts)) + np.abs(problem.cost(pts, e))
        worst = max(worst, float(np.max(lhs / norm)) / max(c_reward, 1e-300))
        worst = max(worst, float(np.max(np.linalg.norm(problem.impulse_map(pts, e), axis=-1) / norm))
                    / max(c_map, 1e-300))
    return CheckResult("linear growth", worst <= 1.0 + 1e-12, f"max ratio to bound {worst:.3g}")


ALL_CHECKS = (check_config_cover, check_finite, check_terminal, check_execution_boundary,
              check_impulse_dominance, check_no_action_bound, check_dpp_residual, check_growth)


def run_all(store: ValueStore) -> list[CheckResult]:
    return [check(store) for check in ALL_CHECKS]
