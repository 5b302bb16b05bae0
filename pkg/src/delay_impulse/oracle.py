"""Exhaustive backward induction on the finite Markov chain behind the scheme.

The chain state is (time node, space node, pending orders). Transition
probabilities come from the explicit stencil, written out here as a dense
matrix; the recursion enumerates every wait/decide choice. Only the model's
coefficient functions are shared with the solver, so agreement between the
two is a genuine cross-check.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .model import ValidatedProblem

MAX_STEPS = 10
MAX_NODES = 9
MAX_IMPULSES = 2
MAX_M = 2


class InstanceTooLarge(ValueError):
    pass


def _nodes(problem: ValidatedProblem) -> tuple[list[np.ndarray], np.ndarray]:
    g = problem.spec.grid
    axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(g.x_min, g.x_max, g.nx)]
    states = np.array(list(itertools.product(*axes)))
    return axes, states


def _transition_matrix(problem: ValidatedProblem, axes: list[np.ndarray], states: np.ndarray,
                       dt: float) -> np.ndarray:
    sizes = [len(a) for a in axes]
    strides = [int(np.prod(sizes[i + 1:])) for i in range(len(sizes))]
    n = len(states)
    P = np.zeros((n, n))
    b = problem.drift(states)
    s2 = problem.vol_diag(states) ** 2
    for flat in range(n):
        multi = np.unravel_index(flat, sizes)
        leave = 0.0
        for i, ax in enumerate(axes):
            dx = ax[1] - ax[0]
            bi, si = b[flat, i], s2[flat, i]
            at_lo, at_hi = multi[i] == 0, multi[i] == sizes[i] - 1
            if at_lo:
                p_up, p_dn = dt * max(bi, 0.0) / dx, 0.0
            elif at_hi:
                p_up, p_dn = 0.0, dt * max(-bi, 0.0) / dx
            elif si >= abs(bi) * dx:
                p_up = dt * (si / (2 * dx * dx) + bi / (2 * dx))
                p_dn = dt * (si / (2 * dx * dx) - bi / (2 * dx))
            else:
                p_up = dt * (si / (2 * dx * dx) + max(bi, 0.0) / dx)
                p_dn = dt * (si / (2 * dx * dx) + max(-bi, 0.0) / dx)
            if p_up:
                P[flat, flat + strides[i]] += p_up
            if p_dn:
                P[flat, flat - strides[i]] += p_dn
            leave += p_up + p_dn
        if leave > 1.0:
            raise ValueError("transition probabilities exceed one; time step too large")
        P[flat, flat] += 1.0 - leave
    return P


def _interp_matrix(axes: list[np.ndarray], targets: np.ndarray) -> np.ndarray:
    sizes = [len(a) for a in axes]
    n = int(np.prod(sizes))
    M = np.zeros((len(targets), n))
    for row, x in enumerate(targets):
        per_dim = []
        for i, ax in enumerate(axes):
            xi = min(max(x[i], ax[0]), ax[-1])
            hi = int(np.searchsorted(ax, xi, side="right"))
            hi = min(max(hi, 1), len(ax) - 1)
            lo = hi - 1
            w = (xi - ax[lo]) / (ax[hi] - ax[lo])
            per_dim.append(((lo, 1.0 - w), (hi, w)))
        for combo in itertools.product(*per_dim):
            idx = np.ravel_multi_index(tuple(c[0] for c in combo), sizes)
            M[row, idx] += float(np.prod([c[1] for c in combo]))
    return M


def brute_force_oracle(problem: ValidatedProblem) -> np.ndarray:
    """v_0 at time 0 on the problem's grid, flattened in C order."""
    g = problem.spec.grid
    if g is None:
        raise ValueError("oracle needs a grid section")
    delay = problem.delay
    dt = Fraction(g.dt)
    n_t = delay.T / dt
    lag = delay.h / dt
    if n_t.denominator != 1 or lag.denominator != 1:
        raise ValueError("time step must divide h and T")
    n_t, lag = int(n_t), int(lag)
    m = delay.m
    if n_t > MAX_STEPS or max(g.nx) > MAX_NODES or problem.n_impulses > MAX_IMPULSES or m > MAX_M:
        raise InstanceTooLarge(f"oracle caps: steps <= {MAX_STEPS}, nodes <= {MAX_NODES}, "
                               f"impulses <= {MAX_IMPULSES}, m <= {MAX_M}")
    exec_steps = m * lag
    axes, states = _nodes(problem)
    P = _transition_matrix(problem, axes, states, float(dt))
    running = problem.running(states) * float(dt)
    terminal = problem.terminal(states)
    n_e = problem.n_impulses
    costs = [problem.cost(states, e) for e in range(n_e)]
    jumps = [_interp_matrix(axes, problem.impulse_map(states, e)) for e in range(n_e)]

    @lru_cache(maxsize=None)
    def before_execution(j: int, book: tuple) -> np.ndarray:
        if book and book[0][0] + exec_steps == j:
            e = book[0][1]
            return costs[e] + jumps[e] @ after_execution(j, book[1:])
        return after_execution(j, book)

    @lru_cache(maxsize=None)
    def after_execution(j: int, book: tuple) -> np.ndarray:
        if j == n_t:
            return terminal
        best = continuation(j, book)
        if len(book) < m and (not book or j - book[-1][0] >= lag):
            for e in range(n_e):
                best = np.maximum(best, continuation(j, book + ((j, e),)))
        return best

    @lru_cache(maxsize=None)
    def continuation(j: int, book: tuple) -> np.ndarray:
        return P @ before_execution(j + 1, book) + running

    return after_execution(0, ())
