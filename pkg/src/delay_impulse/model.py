"""Problem definition: dynamics, rewards, impulse map, delay parameters.

Every coefficient function is a tagged parametric family so that a problem can
be written to and read from JSON without carrying code. Evaluation is
vectorised: state arrays have shape ``(..., d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

MAX_DIM = 3
MAX_IMPULSE_DIM = 2


class ProblemError(Exception):
    """Base class for malformed problem input."""


class SchemaViolation(ProblemError):
    """Unknown, missing or out-of-range key in a problem document."""


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} at {self.field}: {self.message}"


class ProblemValidationError(ProblemError):
    code = "InvalidProblem"

    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class DelayExceedsHorizon(ProblemValidationError):
    code = "DelayExceedsHorizon"


class EmptyImpulseSet(ProblemValidationError):
    code = "EmptyImpulseSet"


class DimensionMismatch(ProblemValidationError):
    code = "DimensionMismatch"


class InvalidParameter(ProblemValidationError):
    code = "InvalidParameter"


class ImpulseNotInSet(ProblemError):
    pass


_ERROR_BY_CODE = {
    cls.code: cls
    for cls in (DelayExceedsHorizon, EmptyImpulseSet, DimensionMismatch, InvalidParameter)
}


def as_fraction(value: Any) -> Fraction:
    """Exact rational from a JSON number or a string such as ``"1/480"``."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise SchemaViolation(f"expected a number, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # the shortest repr is what the user typed
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise SchemaViolation(f"not a rational number: {value!r}") from exc
    raise SchemaViolation(f"expected a number, got {value!r}")


def _json_number(value: Fraction) -> float | str:
    f = float(value)
    return f if Fraction(repr(f)) == value else f"{value.numerator}/{value.denominator}"


def _check_keys(doc: Mapping[str, Any], where: str, required: Sequence[str], optional: Sequence[str] = ()) -> None:
    if not isinstance(doc, Mapping):
        raise SchemaViolation(f"{where}: expected an object")
    unknown = sorted(set(doc) - set(required) - set(optional))
    if unknown:
        raise SchemaViolation(f"{where}: unknown key(s) {', '.join(unknown)}")
    missing = [k for k in required if k not in doc]
    if missing:
        raise SchemaViolation(f"{where}: missing key(s) {', '.join(missing)}")


def _float(doc: Mapping[str, Any], key: str, where: str, default: float | None = None) -> float:
    if key not in doc:
        if default is None:
            raise SchemaViolation(f"{where}.{key}: missing")
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"{where}.{key}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise SchemaViolation(f"{where}.{key}: must be finite")
    return float(value)


def _vector(value: Any, where: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value),)
    if not isinstance(value, Sequence) or isinstance(value, str):
        raise SchemaViolation(f"{where}: expected a number or an array of numbers")
    out = []
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
            raise SchemaViolation(f"{where}: expected finite numbers, got {item!r}")
        out.append(float(item))
    return tuple(out)


def _matrix(value: Any, where: str) -> tuple[tuple[float, ...], ...]:
    if not isinstance(value, Sequence) or isinstance(value, str):
        raise SchemaViolation(f"{where}: expected an array of rows")
    return tuple(_vector(row, f"{where}[{i}]") for i, row in enumerate(value))


def _index(doc: Mapping[str, Any], key: str, where: str, default: int) -> int:
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise SchemaViolation(f"{where}.{key}: expected a non-negative integer")
    return value


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

COMPONENT_FAMILIES = ("abm", "gbm", "ou")


@dataclass(frozen=True)
class Component:
    """One state coordinate with its own scalar diffusion.

    ``abm``: b = mu, s = sigma; ``gbm``: b = mu x, s = sigma x;
    ``ou``: b = kappa (theta - x), s = sigma.
    """

    family: str
    mu: float = 0.0
    sigma: float = 0.0
    kappa: float = 0.0
    theta: float = 0.0

    def drift(self, x: np.ndarray) -> np.ndarray:
        if self.family == "abm":
            return np.full_like(x, self.mu)
        if self.family == "gbm":
            return self.mu * x
        return self.kappa * (self.theta - x)

    def vol(self, x: np.ndarray) -> np.ndarray:
        if self.family == "gbm":
            return self.sigma * x
        return np.full_like(x, self.sigma)

    def to_dict(self) -> dict[str, Any]:
        if self.family == "ou":
            return {"family": "ou", "kappa": self.kappa, "theta": self.theta, "sigma": self.sigma}
        return {"family": self.family, "mu": self.mu, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], where: str) -> Component:
        family = doc.get("family") if isinstance(doc, Mapping) else None
        if family not in COMPONENT_FAMILIES:
            raise SchemaViolation(f"{where}.family: expected one of {COMPONENT_FAMILIES}, got {family!r}")
        if family == "ou":
            _check_keys(doc, where, ["family", "kappa", "sigma"], ["theta"])
            return cls("ou", kappa=_float(doc, "kappa", where), theta=_float(doc, "theta", where, 0.0),
                       sigma=_float(doc, "sigma", where))
        _check_keys(doc, where, ["family", "sigma"], ["mu"])
        return cls(family, mu=_float(doc, "mu", where, 0.0), sigma=_float(doc, "sigma", where))


@dataclass(frozen=True)
class DynamicsSpec:
    """Diagonal-noise diffusion, one independent Brownian driver per component."""

    family: str
    components: tuple[Component, ...]

    @property
    def dim(self) -> int:
        return len(self.components)

    def drift(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([c.drift(x[..., i]) for i, c in enumerate(self.components)], axis=-1)

    def vol_diag(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([c.vol(x[..., i]) for i, c in enumerate(self.components)], axis=-1)

    def to_dict(self) -> dict[str, Any]:
        if self.family == "multi":
            return {"family": "multi", "components": [c.to_dict() for c in self.components]}
        return self.components[0].to_dict()

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> DynamicsSpec:
        if not isinstance(doc, Mapping):
            raise SchemaViolation("dynamics: expected an object")
        if doc.get("family") == "multi":
            _check_keys(doc, "dynamics", ["family", "components"])
            comps = doc["components"]
            if not isinstance(comps, Sequence) or isinstance(comps, str):
                raise SchemaViolation("dynamics.components: expected an array")
            return cls("multi", tuple(Component.from_dict(c, f"dynamics.components[{i}]")
                                      for i, c in enumerate(comps)))
        comp = Component.from_dict(doc, "dynamics")
        return cls(comp.family, (comp,))


# ---------------------------------------------------------------------------
# reward families
# ---------------------------------------------------------------------------

def _box_norm(box: np.ndarray | None) -> float:
    return math.inf if box is None else float(np.max(np.abs(box)))


@dataclass(frozen=True)
class ScalarFamily:
    """Running or terminal profit as a function of the state.

    Families: ``constant`` (value), ``affine`` (const + weights . x),
    ``call``/``put`` (scale * payoff of x[index] at strike), ``shortfall``
    (minus the positive part of claim minus wealth z + y s) and
    ``polynomial`` (sum of coefficients[k] * x[index]**k).
    """

    family: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        fam = self.family
        if fam == "constant":
            return np.full(x.shape[:-1], p["value"], dtype=float)
        if fam == "affine":
            return p["const"] + x @ np.asarray(p["weights"], dtype=float)
        if fam in ("call", "put"):
            s = x[..., p["index"]]
            pay = s - p["strike"] if fam == "call" else p["strike"] - s
            return p["scale"] * np.maximum(pay, 0.0)
        if fam == "shortfall":
            s, y, z = x[..., p["s_index"]], x[..., p["y_index"]], x[..., p["z_index"]]
            pay = s - p["strike"] if p["claim"] == "call" else p["strike"] - s
            claim = p["notional"] * np.maximum(pay, 0.0)
            return -np.maximum(claim - (z + y * s), 0.0)
        if fam == "polynomial":
            s = x[..., p["index"]]
            out = np.zeros_like(s)
            for a in reversed(p["coefficients"]):
                out = out * s + a
            return out
        raise AssertionError(fam)

    def indices(self) -> list[int]:
        p = self.params
        if self.family in ("call", "put", "polynomial"):
            return [p["index"]]
        if self.family == "shortfall":
            return [p["s_index"], p["y_index"], p["z_index"]]
        return []

    def vector_lengths(self) -> dict[str, int]:
        return {"weights": len(self.params["weights"])} if self.family == "affine" else {}

    def growth_constant(self, box: np.ndarray | None = None) -> float:
        """C with |value| <= C (1 + |x|); families beyond affine growth need ``box``."""
        p = self.params
        fam = self.family
        if fam == "constant":
            return abs(p["value"])
        if fam == "affine":
            return max(abs(p["const"]), float(np.sum(np.abs(p["weights"]))))
        if fam in ("call", "put"):
            return abs(p["scale"]) * max(1.0, abs(p["strike"]))
        r = _box_norm(box)
        if fam == "shortfall":
            return abs(p["notional"]) * max(1.0, abs(p["strike"])) + 1.0 + r
        if fam == "polynomial":
            coeffs = np.abs(np.asarray(p["coefficients"], dtype=float))
            return float(sum(a * max(1.0, r) ** max(k - 1, 0) for k, a in enumerate(coeffs)))
        raise AssertionError(fam)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"family": self.family}
        for key, value in self.params.items():
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], where: str) -> ScalarFamily:
        fam = doc.get("family") if isinstance(doc, Mapping) else None
        if fam == "constant":
            _check_keys(doc, where, ["family", "value"])
            return cls(fam, {"value": _float(doc, "value", where)})
        if fam == "affine":
            _check_keys(doc, where, ["family", "weights"], ["const"])
            return cls(fam, {"const": _float(doc, "const", where, 0.0),
                             "weights": _vector(doc["weights"], f"{where}.weights")})
        if fam in ("call", "put"):
            _check_keys(doc, where, ["family", "strike"], ["scale", "index"])
            return cls(fam, {"strike": _float(doc, "strike", where), "scale": _float(doc, "scale", where, 1.0),
                             "index": _index(doc, "index", where, 0)})
        if fam == "shortfall":
            _check_keys(doc, where, ["family", "claim", "strike"],
                        ["notional", "s_index", "y_index", "z_index"])
            if doc["claim"] not in ("call", "put"):
                raise SchemaViolation(f"{where}.claim: expected 'call' or 'put'")
            return cls(fam, {"claim": doc["claim"], "strike": _float(doc, "strike", where),
                             "notional": _float(doc, "notional", where, 1.0),
                             "s_index": _index(doc, "s_index", where, 0),
                             "y_index": _index(doc, "y_index", where, 1),
                             "z_index": _index(doc, "z_index", where, 2)})
        if fam == "polynomial":
            _check_keys(doc, where, ["family", "coefficients"], ["index"])
            return cls(fam, {"coefficients": _vector(doc["coefficients"], f"{where}.coefficients"),
                             "index": _index(doc, "index", where, 0)})
        raise SchemaViolation(f"{where}.family: unknown scalar family {fam!r}")


@dataclass(frozen=True)
class CostFamily:
    """Execution reward c(x, e).

    ``constant``: value. ``affine``: const + x_weights . x + e_weights . e
    + x' cross e. ``table``: one (const, x_weights) pair per impulse, in
    impulse-set order.
    """

    family: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __call__(self, x: np.ndarray, e: np.ndarray, idx: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.family == "constant":
            return np.full(x.shape[:-1], p["value"], dtype=float)
        if self.family == "affine":
            e = np.asarray(e, dtype=float)
            out = p["const"] + float(np.dot(p["e_weights"], e)) + x @ np.asarray(p["x_weights"], dtype=float)
            if p["cross"] is not None:
                out = out + x @ (np.asarray(p["cross"], dtype=float) @ e)
            return out
        entry = p["entries"][idx]
        return entry["const"] + x @ np.asarray(entry["x_weights"], dtype=float)

    def growth_constant(self, impulses: np.ndarray) -> float:
        p = self.params
        if self.family == "constant":
            return abs(p["value"])
        if self.family == "affine":
            emax = float(np.max(np.abs(impulses))) if impulses.size else 0.0
            lin = float(np.sum(np.abs(p["x_weights"])))
            if p["cross"] is not None:
                lin += float(np.sum(np.abs(p["cross"]))) * emax
            return max(abs(p["const"]) + float(np.sum(np.abs(p["e_weights"]))) * emax, lin)
        return max(max(abs(en["const"]), float(np.sum(np.abs(en["x_weights"])))) for en in p["entries"])

    def to_dict(self) -> dict[str, Any]:
        p = self.params
        if self.family == "constant":
            return {"family": "constant", "value": p["value"]}
        if self.family == "affine":
            out = {"family": "affine", "const": p["const"], "x_weights": list(p["x_weights"]),
                   "e_weights": list(p["e_weights"])}
            if p["cross"] is not None:
                out["cross"] = [list(r) for r in p["cross"]]
            return out
        return {"family": "table", "entries": [{"const": en["const"], "x_weights": list(en["x_weights"])}
                                               for en in p["entries"]]}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], where: str) -> CostFamily:
        fam = doc.get("family") if isinstance(doc, Mapping) else None
        if fam == "constant":
            _check_keys(doc, where, ["family", "value"])
            return cls(fam, {"value": _float(doc, "value", where)})
        if fam == "affine":
            _check_keys(doc, where, ["family", "x_weights"], ["const", "e_weights", "cross"])
            return cls(fam, {"const": _float(doc, "const", where, 0.0),
                             "x_weights": _vector(doc["x_weights"], f"{where}.x_weights"),
                             "e_weights": _vector(doc.get("e_weights", []), f"{where}.e_weights"),
                             "cross": _matrix(doc["cross"], f"{where}.cross") if "cross" in doc else None})
        if fam == "table":
            _check_keys(doc, where, ["family", "entries"])
            entries = []
            for i, en in enumerate(doc["entries"]):
                w = f"{where}.entries[{i}]"
                _check_keys(en, w, ["x_weights"], ["const"])
                entries.append({"const": _float(en, "const", w, 0.0),
                                "x_weights": _vector(en["x_weights"], f"{w}.x_weights")})
            return cls(fam, {"entries": tuple(entries)})
        raise SchemaViolation(f"{where}.family: unknown cost family {fam!r}")


@dataclass(frozen=True)
class ImpulseMapFamily:
    """State jump Gamma(x, e) applied when an order executes.

    ``identity``; ``shift``: x + M e; ``scale``: x * (1 + M e) componentwise;
    ``table``: A_i x + b_i per impulse; ``financial``: (s, y, z) -> (s, e, z - e s).
    ``M`` defaults to the d x q identity pattern.
    """

    family: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def _loading(self, d: int, q: int) -> np.ndarray:
        if self.params.get("matrix") is not None:
            return np.asarray(self.params["matrix"], dtype=float)
        return np.eye(d, q)

    def __call__(self, x: np.ndarray, e: np.ndarray, idx: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        e = np.asarray(e, dtype=float)
        fam = self.family
        if fam == "identity":
            return x.copy()
        d = x.shape[-1]
        if fam == "shift":
            return x + self._loading(d, e.size) @ e
        if fam == "scale":
            return x * (1.0 + self._loading(d, e.size) @ e)
        if fam == "table":
            entry = self.params["entries"][idx]
            return x @ np.asarray(entry["matrix"], dtype=float).T + np.asarray(entry["offset"], dtype=float)
        p = self.params
        out = x.copy()
        out[..., p["y_index"]] = e[0]
        out[..., p["z_index"]] = x[..., p["z_index"]] - e[0] * x[..., p["s_index"]]
        return out

    def growth_constant(self, d: int, impulses: np.ndarray) -> float:
        fam = self.family
        q = impulses.shape[1] if impulses.ndim == 2 else 1
        emax = float(np.max(np.abs(impulses))) if impulses.size else 0.0
        if fam == "identity":
            return 1.0
        if fam == "shift":
            return max(1.0, float(np.sum(np.abs(self._loading(d, q)))) * emax)
        if fam == "scale":
            return 1.0 + float(np.max(np.sum(np.abs(self._loading(d, q)), axis=1))) * emax
        if fam == "table":
            return max(max(float(np.sum(np.abs(en["matrix"]))), float(np.sum(np.abs(en["offset"]))))
                       for en in self.params["entries"])
        # |(s, e, z - e s)| <= (2 + emax)|x| + emax
        return 2.0 + emax

    def to_dict(self) -> dict[str, Any]:
        p = self.params
        if self.family in ("shift", "scale"):
            out: dict[str, Any] = {"family": self.family}
            if p.get("matrix") is not None:
                out["matrix"] = [list(r) for r in p["matrix"]]
            return out
        if self.family == "table":
            return {"family": "table", "entries": [{"matrix": [list(r) for r in en["matrix"]],
                                                    "offset": list(en["offset"])} for en in p["entries"]]}
        if self.family == "financial":
            return {"family": "financial", "s_index": p["s_index"], "y_index": p["y_index"],
                    "z_index": p["z_index"]}
        return {"family": self.family}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], where: str) -> ImpulseMapFamily:
        fam = doc.get("family") if isinstance(doc, Mapping) else None
        if fam == "identity":
            _check_keys(doc, where, ["family"])
            return cls(fam)
        if fam in ("shift", "scale"):
            _check_keys(doc, where, ["family"], ["matrix"])
            return cls(fam, {"matrix": _matrix(doc["matrix"], f"{where}.matrix") if "matrix" in doc else None})
        if fam == "table":
            _check_keys(doc, where, ["family", "entries"])
            entries = []
            for i, en in enumerate(doc["entries"]):
                w = f"{where}.entries[{i}]"
                _check_keys(en, w, ["matrix"], ["offset"])
                mat = _matrix(en["matrix"], f"{w}.matrix")
                entries.append({"matrix": mat,
                                "offset": _vector(en.get("offset", [0.0] * len(mat)), f"{w}.offset")})
            return cls(fam, {"entries": tuple(entries)})
        if fam == "financial":
            _check_keys(doc, where, ["family"], ["s_index", "y_index", "z_index"])
            return cls(fam, {"s_index": _index(doc, "s_index", where, 0),
                             "y_index": _index(doc, "y_index", where, 1),
                             "z_index": _index(doc, "z_index", where, 2)})
        raise SchemaViolation(f"{where}.family: unknown impulse map family {fam!r}")


@dataclass(frozen=True)
class RewardSpec:
    running: ScalarFamily
    terminal: ScalarFamily
    cost: CostFamily
    impulse_map: ImpulseMapFamily

    def to_dict(self) -> dict[str, Any]:
        return {"running": self.running.to_dict(), "terminal": self.terminal.to_dict(),
                "cost": self.cost.to_dict(), "impulse_map": self.impulse_map.to_dict()}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> RewardSpec:
        _check_keys(doc, "rewards", ["running", "terminal", "cost", "impulse_map"])
        return cls(ScalarFamily.from_dict(doc["running"], "rewards.running"),
                   ScalarFamily.from_dict(doc["terminal"], "rewards.terminal"),
                   CostFamily.from_dict(doc["cost"], "rewards.cost"),
                   ImpulseMapFamily.from_dict(doc["impulse_map"], "rewards.impulse_map"))


# ---------------------------------------------------------------------------
# delay, impulses, grid request, problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DelayParams:
    """Horizon T, decision lag h and delay multiplier m (execution after m h).

    T and h are held as exact rationals so grid alignment can be checked
    without rounding.
    """

    T: Fraction
    h: Fraction
    m: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "T", as_fraction(self.T))
        object.__setattr__(self, "h", as_fraction(self.h))

    @property
    def delay(self) -> Fraction:
        return self.m * self.h

    def to_dict(self) -> dict[str, Any]:
        return {"T": _json_number(self.T), "h": _json_number(self.h), "m": self.m}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> DelayParams:
        _check_keys(doc, "delay", ["T", "h", "m"])
        m = doc["m"]
        if isinstance(m, bool) or not isinstance(m, int) or m < 1:
            raise SchemaViolation(f"delay.m: expected an integer >= 1, got {m!r}")
        return cls(as_fraction(doc["T"]), as_fraction(doc["h"]), m)


@dataclass(frozen=True)
class ImpulseSet:
    """Finite ordered impulse values, stored as an ``(n, q)`` array."""

    values: tuple[tuple[float, ...], ...]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float).reshape(len(self.values), -1)

    @property
    def q(self) -> int:
        return len(self.values[0]) if self.values else 0

    def __len__(self) -> int:
        return len(self.values)

    def index_of(self, e: Any) -> int:
        target = tuple(float(v) for v in np.atleast_1d(np.asarray(e, dtype=float)))
        for i, val in enumerate(self.values):
            if val == target:
                return i
        raise ImpulseNotInSet(f"impulse {target} is not in {list(self.values)}")

    def to_list(self) -> list[Any]:
        return [v[0] if len(v) == 1 else list(v) for v in self.values]

    @classmethod
    def from_list(cls, doc: Any) -> ImpulseSet:
        if not isinstance(doc, Sequence) or isinstance(doc, str):
            raise SchemaViolation("impulses: expected an array")
        return cls(tuple(_vector(v, f"impulses[{i}]") for i, v in enumerate(doc)))


@dataclass(frozen=True)
class GridRequest:
    dt: Fraction
    x_min: tuple[float, ...]
    x_max: tuple[float, ...]
    nx: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "dt", as_fraction(self.dt))

    def to_dict(self) -> dict[str, Any]:
        return {"dt": _json_number(self.dt), "x_min": list(self.x_min), "x_max": list(self.x_max),
                "nx": list(self.nx)}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> GridRequest:
        _check_keys(doc, "grid", ["dt", "x_min", "x_max", "nx"])
        nx = doc["nx"]
        nx = [nx] if isinstance(nx, int) else nx
        if not isinstance(nx, Sequence) or any(isinstance(n, bool) or not isinstance(n, int) for n in nx):
            raise SchemaViolation("grid.nx: expected integers")
        return cls(as_fraction(doc["dt"]), _vector(doc["x_min"], "grid.x_min"),
                   _vector(doc["x_max"], "grid.x_max"), tuple(nx))


PROBLEM_KEYS = ("dynamics", "rewards", "delay", "impulses", "initial_state", "grid")


@dataclass(frozen=True)
class ProblemSpec:
    dynamics: DynamicsSpec
    rewards: RewardSpec
    delay: DelayParams
    impulses: ImpulseSet
    initial_state: tuple[float, ...]
    grid: GridRequest | None = None

    def to_dict(self) -> dict[str, Any]:
        out = {"dynamics": self.dynamics.to_dict(), "rewards": self.rewards.to_dict(),
               "delay": self.delay.to_dict(), "impulses": self.impulses.to_list(),
               "initial_state": list(self.initial_state)}
        if self.grid is not None:
            out["grid"] = self.grid.to_dict()
        return out

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> ProblemSpec:
        _check_keys(doc, "problem", PROBLEM_KEYS[:5], ["grid"])
        return cls(DynamicsSpec.from_dict(doc["dynamics"]), RewardSpec.from_dict(doc["rewards"]),
                   DelayParams.from_dict(doc["delay"]), ImpulseSet.from_list(doc["impulses"]),
                   _vector(doc["initial_state"], "initial_state"),
                   GridRequest.from_dict(doc["grid"]) if "grid" in doc else None)


def check_problem(spec: ProblemSpec) -> list[Violation]:
    """Every invariant violation in ``spec``, in a stable order."""
    out: list[Violation] = []
    delay, dyn, rw = spec.delay, spec.dynamics, spec.rewards
    if delay.h <= 0:
        out.append(Violation("InvalidParameter", "delay.h", f"lag must be positive, got {delay.h}"))
    if delay.m < 1:
        out.append(Violation("InvalidParameter", "delay.m", f"multiplier must be >= 1, got {delay.m}"))
    if delay.T < delay.m * delay.h:
        out.append(Violation("DelayExceedsHorizon", "delay",
                             f"m*h = {float(delay.m * delay.h):g} exceeds T = {float(delay.T):g}"))
    if len(spec.impulses) == 0:
        out.append(Violation("EmptyImpulseSet", "impulses", "at least one impulse value is required"))
    else:
        if len(set(spec.impulses.values)) != len(spec.impulses):
            out.append(Violation("InvalidParameter", "impulses", "duplicate impulse values"))
        lengths = {len(v) for v in spec.impulses.values}
        if len(lengths) != 1 or not 1 <= next(iter(lengths)) <= MAX_IMPULSE_DIM:
            out.append(Violation("DimensionMismatch", "impulses",
                                 f"impulses must share one length between 1 and {MAX_IMPULSE_DIM}"))
    d = dyn.dim
    if not 1 <= d <= MAX_DIM:
        out.append(Violation("DimensionMismatch", "dynamics", f"state dimension {d} outside 1..{MAX_DIM}"))
    if dyn.family != "multi" and d != 1:
        out.append(Violation("DimensionMismatch", "dynamics", "single-family dynamics are one-dimensional"))
    for i, comp in enumerate(dyn.components):
        if comp.sigma < 0:
            out.append(Violation("InvalidParameter", f"dynamics.components[{i}].sigma",
                                 f"volatility must be >= 0, got {comp.sigma}"))
    if len(spec.initial_state) != d:
        out.append(Violation("DimensionMismatch", "initial_state", f"length {len(spec.initial_state)} != d = {d}"))
    for name, fam in (("running", rw.running), ("terminal", rw.terminal)):
        for key, n in fam.vector_lengths().items():
            if n != d:
                out.append(Violation("DimensionMismatch", f"rewards.{name}.{key}", f"length {n} != d = {d}"))
        if any(i >= d for i in fam.indices()):
            out.append(Violation("DimensionMismatch", f"rewards.{name}", f"component index out of range for d = {d}"))
    q = spec.impulses.q
    n_e = len(spec.impulses)
    cost = rw.cost
    if cost.family == "affine":
        if len(cost.params["x_weights"]) != d:
            out.append(Violation("DimensionMismatch", "rewards.cost.x_weights", f"length != d = {d}"))
        if cost.params["e_weights"] and len(cost.params["e_weights"]) != q:
            out.append(Violation("DimensionMismatch", "rewards.cost.e_weights", f"length != q = {q}"))
        cross = cost.params["cross"]
        if cross is not None and (len(cross) != d or any(len(r) != q for r in cross)):
            out.append(Violation("DimensionMismatch", "rewards.cost.cross", f"expected a {d} x {q} matrix"))
    elif cost.family == "table":
        if len(cost.params["entries"]) != n_e:
            out.append(Violation("DimensionMismatch", "rewards.cost.entries", f"need one entry per impulse ({n_e})"))
        if any(len(en["x_weights"]) != d for en in cost.params["entries"]):
            out.append(Violation("DimensionMismatch", "rewards.cost.entries", f"x_weights length != d = {d}"))
    gam = rw.impulse_map
    if gam.family in ("shift", "scale") and gam.params.get("matrix") is not None:
        mat = gam.params["matrix"]
        if len(mat) != d or any(len(r) != q for r in mat):
            out.append(Violation("DimensionMismatch", "rewards.impulse_map.matrix", f"expected a {d} x {q} matrix"))
    elif gam.family == "table":
        entries = gam.params["entries"]
        if len(entries) != n_e:
            out.append(Violation("DimensionMismatch", "rewards.impulse_map.entries",
                                 f"need one entry per impulse ({n_e})"))
        for en in entries:
            if len(en["matrix"]) != d or any(len(r) != d for r in en["matrix"]) or len(en["offset"]) != d:
                out.append(Violation("DimensionMismatch", "rewards.impulse_map.entries", f"expected {d} x {d} + {d}"))
                break
    elif gam.family == "financial":
        idx = [gam.params[k] for k in ("s_index", "y_index", "z_index")]
        if max(idx) >= d or len(set(idx)) != 3:
            out.append(Violation("DimensionMismatch", "rewards.impulse_map", "needs three distinct components"))
        if q not in (0, 1):
            out.append(Violation("DimensionMismatch", "rewards.impulse_map", "financial map takes scalar impulses"))
    if spec.grid is not None:
        g = spec.grid
        if not len(g.x_min) == len(g.x_max) == len(g.nx) == d:
            out.append(Violation("DimensionMismatch", "grid", f"grid arrays must have length d = {d}"))
        if g.dt <= 0:
            out.append(Violation("InvalidParameter", "grid.dt", "time step must be positive"))
    return out


@dataclass(frozen=True)
class ValidatedProblem:
    """A problem whose invariants have been checked; immutable and shareable."""

    spec: ProblemSpec

    @property
    def dim(self) -> int:
        return self.spec.dynamics.dim

    @property
    def delay(self) -> DelayParams:
        return self.spec.delay

    @property
    def impulses(self) -> np.ndarray:
        return self.spec.impulses.array

    @property
    def n_impulses(self) -> int:
        return len(self.spec.impulses)

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.spec.initial_state, dtype=float)

    def drift(self, x: np.ndarray) -> np.ndarray:
        return self.spec.dynamics.drift(x)

    def vol_diag(self, x: np.ndarray) -> np.ndarray:
        return self.spec.dynamics.vol_diag(x)

    def running(self, x: np.ndarray) -> np.ndarray:
        return self.spec.rewards.running(x)

    def terminal(self, x: np.ndarray) -> np.ndarray:
        return self.spec.rewards.terminal(x)

    def cost(self, x: np.ndarray, idx: int) -> np.ndarray:
        return self.spec.rewards.cost(x, self.impulses[idx], idx)

    def impulse_map(self, x: np.ndarray, idx: int) -> np.ndarray:
        return self.spec.rewards.impulse_map(x, self.impulses[idx], idx)

    def growth_constants(self, box: np.ndarray | None = None) -> tuple[float, float]:
        """(reward constant, impulse-map constant) of the linear growth bounds."""
        rw = self.spec.rewards
        c_reward = (rw.running.growth_constant(box) + rw.terminal.growth_constant(box)
                    + rw.cost.growth_constant(self.impulses))
        return c_reward, rw.impulse_map.growth_constant(self.dim, self.impulses)


def validate_problem(spec: ProblemSpec) -> ValidatedProblem:
    """Check every invariant; raise the error class of the first violation.

    The raised error carries the full list in ``.violations``.
    """
    violations = check_problem(spec)
    if violations:
        raise _ERROR_BY_CODE.get(violations[0].code, ProblemValidationError)(violations)
    return ValidatedProblem(spec)


def _state(problem: ValidatedProblem, x: Any) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[-1] != problem.dim:
        raise DimensionMismatch([Violation("DimensionMismatch", "x",
                                           f"state has length {x.shape[-1]}, expected {problem.dim}")])
    return x


def eval_dynamics(problem: ValidatedProblem, x: Any) -> tuple[np.ndarray, np.ndarray]:
    """Drift vector b(x) and diagonal volatility matrix sigma(x)."""
    x = _state(problem, x)
    return problem.drift(x), np.diag(problem.vol_diag(x)) if x.ndim == 1 else _diag_batch(problem.vol_diag(x))


def _diag_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape + (v.shape[-1],))
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def eval_rewards(problem: ValidatedProblem, x: Any, e: Any) -> tuple[float, float, float, np.ndarray]:
    """(f(x), g(x), c(x, e), Gamma(x, e)) at a single state."""
    x = _state(problem, x)
    idx = problem.spec.impulses.index_of(e)
    return (float(problem.running(x)), float(problem.terminal(x)), float(problem.cost(x, idx)),
            problem.impulse_map(x, idx))
