"""Explicit monotone finite-difference kernel.

One backward step of the linear equation -v_t - L v - f = 0 reads

    v(t_j) = v(t_{j+1}) + sum_i [up_i (v_{+i} - v) + down_i (v_{-i} - v)] + dt f

with non-negative neighbour weights, so the step is a Markov-chain expectation
and preserves order. Fields may carry leading batch axes in front of the space
axes; every operation is elementwise along those axes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .lattice import SpaceGrid
from .model import ValidatedProblem

CFL_LIMIT = 0.5


class NumericalError(ArithmeticError):
    pass


class CFLViolation(NumericalError):
    def __init__(self, ratio: float):
        self.ratio = ratio
        super().__init__(f"explicit scheme unstable: dt * max(sum sigma^2/dx^2 + |b|/dx) = {ratio:.6g} "
                         f"> {CFL_LIMIT}")


class NonFiniteField(NumericalError):
    pass


@dataclass(frozen=True, eq=False)
class Operator:
    """Precomputed stencil weights of the discrete generator times dt."""

    grid: SpaceGrid
    dt: float
    up: np.ndarray
    down: np.ndarray
    source: np.ndarray
    cfl_ratio: float

    def step(self, v: np.ndarray) -> np.ndarray:
        return backward_step(v, self)


def stencil_weights(problem: ValidatedProblem, grid: SpaceGrid, dt: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-dimension (up, down) weights over the grid and the CFL ratio.

    Central differences where sigma^2 >= |b| dx, upwinded drift elsewhere.
    Extreme nodes drop the second derivative and keep only inward drift.
    """
    pts = grid.points
    b = problem.drift(pts)
    s2 = problem.vol_diag(pts) ** 2
    d = grid.dim
    up = np.zeros((d,) + grid.shape)
    down = np.zeros((d,) + grid.shape)
    rate = np.zeros(grid.shape)
    for i in range(d):
        dx = grid.dx[i]
        bi, si = b[..., i], s2[..., i]
        diff = si / (2 * dx * dx)
        central = si >= np.abs(bi) * dx
        u = np.where(central, diff + bi / (2 * dx), diff + np.maximum(bi, 0.0) / dx)
        w = np.where(central, diff - bi / (2 * dx), diff + np.maximum(-bi, 0.0) / dx)
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[i], hi[i] = 0, -1
        u[tuple(lo)] = np.maximum(bi[tuple(lo)], 0.0) / dx
        w[tuple(lo)] = 0.0
        u[tuple(hi)] = 0.0
        w[tuple(hi)] = np.maximum(-bi[tuple(hi)], 0.0) / dx
        up[i] = dt * u
        down[i] = dt * w
        rate += si / (dx * dx) + np.abs(bi) / dx
    return up, down, float(dt * rate.max())


def build_operator(problem: ValidatedProblem, grid: SpaceGrid, dt: float) -> Operator:
    up, down, ratio = stencil_weights(problem, grid, dt)
    if ratio > CFL_LIMIT * (1 + 1e-12):
        raise CFLViolation(ratio)
    return Operator(grid, float(dt), up, down, dt * problem.running(grid.points), ratio)


def backward_step(v: np.ndarray, op: Operator) -> np.ndarray:
    d = op.grid.dim
    out = np.array(v, dtype=float, copy=True)
    for i in range(d):
        ax = out.ndim - d + i
        jump = np.diff(v, axis=ax)
        n = v.shape[ax]
        head = [slice(None)] * out.ndim
        tail = [slice(None)] * out.ndim
        head[ax] = slice(0, n - 1)
        tail[ax] = slice(1, n)
        wh = [slice(None)] * d
        wt = [slice(None)] * d
        wh[i] = slice(0, n - 1)
        wt[i] = slice(1, n)
        out[tuple(head)] += op.up[i][tuple(wh)] * jump
        out[tuple(tail)] -= op.down[i][tuple(wt)] * jump
    out += op.source
    return out


def _check_finite(stack: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(stack)):
        raise NonFiniteField("non-finite values produced by the finite-difference kernel")
    return stack


def feynman_kac_solve(terminal: np.ndarray, n_steps: int, op: Operator) -> np.ndarray:
    """Stack of fields at ``t_start, ..., t_end``; the last entry is ``terminal``."""
    out = np.empty((n_steps + 1,) + np.shape(terminal))
    out[n_steps] = terminal
    for i in range(n_steps - 1, -1, -1):
        out[i] = backward_step(out[i + 1], op)
    return _check_finite(out)


def optimal_stopping_solve(obstacle: np.ndarray, terminal: np.ndarray, op: Operator) -> np.ndarray:
    """Discrete obstacle problem on ``len(obstacle) + 1`` nodes.

    ``obstacle[i]`` is the stopping payoff at node ``t_start + i``; the final
    node takes ``terminal`` without comparison.
    """
    n_steps = len(obstacle)
    out = np.empty((n_steps + 1,) + np.shape(terminal))
    out[n_steps] = terminal
    for i in range(n_steps - 1, -1, -1):
        out[i] = np.maximum(backward_step(out[i + 1], op), obstacle[i])
    return _check_finite(out)


class InterpPlan:
    """Multilinear interpolation weights for a fixed set of query points.

    Points outside the grid are clamped to the boundary and counted in
    ``n_clamped``.
    """

    def __init__(self, grid: SpaceGrid, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        self.grid = grid
        self.out_shape = points.shape[:-1]
        pts = points.reshape(-1, grid.dim)
        lower = np.asarray(grid.lower)
        upper = np.asarray(grid.upper)
        tol = 1e-12 * np.maximum(1.0, np.abs(upper - lower))
        outside = np.any((pts < lower - tol) | (pts > upper + tol), axis=1)
        self.n_clamped = int(np.count_nonzero(outside))
        base = []
        frac = []
        for i in range(grid.dim):
            n = grid.n[i]
            t = np.clip((pts[:, i] - lower[i]) / grid.dx[i], 0.0, n - 1)
            i0 = np.minimum(np.floor(t).astype(np.int64), n - 2)
            base.append(i0)
            frac.append(t - i0)
        self.corners = []
        for bits in itertools.product((0, 1), repeat=grid.dim):
            idx = tuple(b + bit for b, bit in zip(base, bits))
            w = np.ones(len(pts))
            for f, bit in zip(frac, bits):
                w = w * (f if bit else 1.0 - f)
            self.corners.append((np.ravel_multi_index(idx, grid.shape), w))

    def apply(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field, dtype=float)
        lead = field.shape[: field.ndim - self.grid.dim]
        flat = field.reshape(lead + (self.grid.size,))
        out = None
        for idx, w in self.corners:
            term = w * flat[..., idx]
            out = term if out is None else out + term
        return out.reshape(lead + self.out_shape)


def interpolate(field: np.ndarray, x: np.ndarray, grid: SpaceGrid) -> np.ndarray:
    """Multilinear interpolation of a grid field at off-grid points ``x`` (shape ``(..., d)``)."""
    return InterpPlan(grid, x).apply(field)


class ExecutionMap:
    """The execution boundary G(x) = c(x, e) + v_prev(Gamma(x, e)) on grid nodes, per impulse."""

    def __init__(self, problem: ValidatedProblem, grid: SpaceGrid):
        pts = grid.points
        self.costs = [problem.cost(pts, e) for e in range(problem.n_impulses)]
        self.plans = [InterpPlan(grid, problem.impulse_map(pts, e)) for e in range(problem.n_impulses)]

    def clamp_count(self, e: int) -> int:
        return self.plans[e].n_clamped

    def __call__(self, v_prev: np.ndarray, e: int) -> np.ndarray:
        return self.costs[e] + self.plans[e].apply(v_prev)


def apply_execution_boundary(v_prev: np.ndarray, e: int, problem: ValidatedProblem,
                             grid: SpaceGrid) -> tuple[np.ndarray, int]:
    """G on the grid for impulse index ``e`` and the number of clamped images."""
    plan = InterpPlan(grid, problem.impulse_map(grid.points, e))
    return problem.cost(grid.points, e) + plan.apply(v_prev), plan.n_clamped
