"""Ready-made problem documents used by the bundled files, the tests and the CLI."""

from __future__ import annotations

import json
from importlib import resources
from typing import Any

import numpy as np


def _zero() -> dict[str, Any]:
    return {"family": "constant", "value": 0.0}


def counting(T: float | str = 1.0, h: float | str = 0.25, m: int = 2, nx: int = 51,
             dt: float | str | None = None) -> dict[str, Any]:
    """Every execution pays 1 and nothing moves: v_0(0, x) counts executable orders."""
    return {
        "dynamics": {"family": "abm", "mu": 0.0, "sigma": 0.0},
        "rewards": {"running": _zero(), "terminal": _zero(),
                    "cost": {"family": "constant", "value": 1.0},
                    "impulse_map": {"family": "identity"}},
        "delay": {"T": T, "h": h, "m": m},
        "impulses": [0.0],
        "initial_state": [0.0],
        "grid": {"dt": h if dt is None else dt, "x_min": [-1.0], "x_max": [1.0], "nx": [nx]},
    }


def harvest(m: int = 1, nx: int = 101, sigma: float = 0.1, mu: float = -0.1, fee: float = 0.01,
            dt: str = "1/240") -> dict[str, Any]:
    """GBM asset from which a fraction e is withdrawn on execution, at a fixed fee.

    Gamma(x, e) = (1 - e) x, c(x, e) = e x - fee, terminal value g(x) = x.
    With a negative drift early withdrawals pay, so the decision region is a
    genuine free boundary in (t, x).
    """
    return {
        "dynamics": {"family": "gbm", "mu": mu, "sigma": sigma},
        "rewards": {"running": _zero(),
                    "terminal": {"family": "affine", "const": 0.0, "weights": [1.0]},
                    "cost": {"family": "affine", "const": -fee, "x_weights": [0.0], "e_weights": [0.0],
                             "cross": [[1.0]]},
                    "impulse_map": {"family": "scale", "matrix": [[-1.0]]}},
        "delay": {"T": 1.0, "h": 0.25, "m": m},
        "impulses": [0.25, 0.5],
        "initial_state": [1.0],
        "grid": {"dt": dt, "x_min": [0.0], "x_max": [2.0], "nx": [nx]},
    }


def never_impulse(nx: int = 21, dt: str = "1/40") -> dict[str, Any]:
    """GBM with g(x) = x where every execution costs 1 and leaves the state alone."""
    return {
        "dynamics": {"family": "gbm", "mu": 0.05, "sigma": 0.2},
        "rewards": {"running": _zero(),
                    "terminal": {"family": "affine", "const": 0.0, "weights": [1.0]},
                    "cost": {"family": "constant", "value": -1.0},
                    "impulse_map": {"family": "identity"}},
        "delay": {"T": 1.0, "h": 0.25, "m": 2},
        "impulses": [0.0, 1.0],
        "initial_state": [1.0],
        "grid": {"dt": dt, "x_min": [0.0], "x_max": [2.0], "nx": [nx]},
    }


def shortfall(strike: float = 1.0, fee: float = 0.002, m: int = 2) -> dict[str, Any]:
    """Put-claim shortfall hedging with delayed stock orders, state (S, Y, Z)."""
    return {
        "dynamics": {"family": "multi", "components": [
            {"family": "gbm", "mu": 0.05, "sigma": 0.2},
            {"family": "abm", "mu": 0.0, "sigma": 0.0},
            {"family": "gbm", "mu": 0.01, "sigma": 0.0},
        ]},
        "rewards": {"running": _zero(),
                    "terminal": {"family": "shortfall", "claim": "put", "strike": strike, "notional": 1.0},
                    "cost": {"family": "constant", "value": -fee},
                    "impulse_map": {"family": "financial"}},
        "delay": {"T": 1.0, "h": 0.25, "m": m},
        "impulses": [-1.0, -0.5, 0.0],
        "initial_state": [1.0, 0.0, 0.1],
        "grid": {"dt": 0.05, "x_min": [0.5, -1.0, -0.5], "x_max": [1.5, 0.0, 3.5], "nx": [11, 3, 17]},
    }


def tiny_random(seed: int) -> dict[str, Any]:
    """Small random instance within the brute-force oracle's caps."""
    from .kernel import CFL_LIMIT, stencil_weights
    from .lattice import SpaceGrid
    from .model import ProblemSpec, validate_problem

    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 3))
    lag = int(rng.integers(1, 3))
    n_t = int(rng.integers(m * lag, 9))
    nx = int(rng.integers(5, 8))
    n_e = int(rng.integers(1, 3))
    lo = float(rng.uniform(-1.0, 0.5))
    hi = lo + float(rng.uniform(1.0, 2.0))
    family = ["abm", "gbm", "ou"][int(rng.integers(3))]
    if family == "ou":
        dyn = {"family": "ou", "kappa": float(rng.uniform(0, 1)), "theta": float(rng.uniform(lo, hi)),
               "sigma": float(rng.uniform(0, 0.5))}
    else:
        dyn = {"family": family, "mu": float(rng.uniform(-0.5, 0.5)), "sigma": float(rng.uniform(0, 0.5))}
    terminal_kind = ["affine", "call", "put"][int(rng.integers(3))]
    if terminal_kind == "affine":
        terminal = {"family": "affine", "const": float(rng.normal()), "weights": [float(rng.normal())]}
    else:
        terminal = {"family": terminal_kind, "strike": float(rng.uniform(lo, hi)),
                    "scale": float(rng.uniform(0.5, 2.0))}
    doc = {
        "dynamics": dyn,
        "rewards": {
            "running": {"family": "affine", "const": float(rng.normal(0, 0.3)), "weights": [float(rng.normal(0, 0.3))]},
            "terminal": terminal,
            "cost": {"family": "table", "entries": [
                {"const": float(rng.uniform(-0.3, 0.4)), "x_weights": [float(rng.normal(0, 0.2))]}
                for _ in range(n_e)]},
            "impulse_map": {"family": "table", "entries": [
                {"matrix": [[float(rng.uniform(0.6, 1.2))]], "offset": [float(rng.uniform(-0.4, 0.4))]}
                for _ in range(n_e)]},
        },
        "delay": {"T": 1.0, "h": f"{lag}/{n_t}", "m": m},
        "impulses": [float(i) for i in range(n_e)],
        "initial_state": [float(rng.uniform(lo, hi))],
        "grid": {"dt": f"1/{n_t}", "x_min": [lo], "x_max": [hi], "nx": [nx]},
    }
    # shrink the coefficients until the explicit scheme is stable
    for _ in range(60):
        problem = validate_problem(ProblemSpec.from_dict(doc))
        _, _, ratio = stencil_weights(problem, SpaceGrid((lo,), (hi,), (nx,)), 1.0 / n_t)
        if ratio <= CFL_LIMIT:
            break
        for key in ("mu", "sigma", "kappa"):
            if key in dyn:
                dyn[key] *= 0.8
    return doc


def bundled(name: str) -> dict[str, Any]:
    """A problem document shipped with the package (``counting``, ``shortfall``, ...)."""
    text = resources.files("delay_impulse").joinpath("problems", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


BUNDLED = {
    "counting": lambda: counting(),
    "never_impulse": lambda: never_impulse(),
    "harvest": lambda: harvest(),
    "shortfall": lambda: shortfall(),
    "tiny_random": lambda: tiny_random(7),
}
