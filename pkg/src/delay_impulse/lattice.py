"""Time/space grids and the discrete pending-order configurations.

Decision times live on the time grid, so a pending-order configuration is a
tuple of grid indices ``(j_1, ..., j_k)`` plus impulse indices into the
impulse set. With ``L`` grid steps per lag and ``D = m L`` steps of delay, a
tuple is admissible when consecutive gaps are ``>= L`` and ``j_k - j_1 < D``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .model import DelayParams, GridRequest

INTERIOR = "interior"
NEVER_EXECUTED = "never-executed"


class MisalignedGrid(ValueError):
    """h or T is not an integer multiple of the time step."""


class InvalidGrid(ValueError):
    pass


class ConfigOutsideInterior(ValueError):
    """The configuration's first order executes after the horizon."""


@dataclass(frozen=True)
class TimeGrid:
    dt: Fraction
    n_steps: int
    lag_steps: int
    m: int

    @property
    def delay_steps(self) -> int:
        return self.m * self.lag_steps

    @property
    def dt_float(self) -> float:
        return float(self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.array([float(j * self.dt) for j in range(self.n_steps + 1)])

    @property
    def n_stages(self) -> int:
        """N = min{n >= 1 : T - n h < 0}."""
        return self.n_steps // self.lag_steps + 1

    def time(self, j: int) -> float:
        return float(j * self.dt)

    def index_of(self, t: float | str | Fraction) -> int:
        from .model import as_fraction

        ratio = as_fraction(t) / self.dt
        if ratio.denominator != 1 or not 0 <= ratio <= self.n_steps:
            raise MisalignedGrid(f"time {t} is not a node of the time grid")
        return int(ratio)

    def to_dict(self) -> dict:
        return {"dt": f"{self.dt.numerator}/{self.dt.denominator}", "n_steps": self.n_steps,
                "lag_steps": self.lag_steps, "m": self.m}

    @classmethod
    def from_dict(cls, doc: dict) -> TimeGrid:
        return cls(Fraction(doc["dt"]), int(doc["n_steps"]), int(doc["lag_steps"]), int(doc["m"]))


@dataclass(frozen=True)
class SpaceGrid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n: tuple[int, ...]

    def __post_init__(self) -> None:
        if not len(self.lower) == len(self.upper) == len(self.n) >= 1:
            raise InvalidGrid("grid bounds and node counts must have one entry per dimension")
        for i, (lo, hi, n) in enumerate(zip(self.lower, self.upper, self.n)):
            if not lo < hi:
                raise InvalidGrid(f"dimension {i}: lower bound {lo} must be below upper bound {hi}")
            if n < 3:
                raise InvalidGrid(f"dimension {i}: need at least 3 nodes, got {n}")

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.n))

    @cached_property
    def dx(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for lo, hi, n in zip(self.lower, self.upper, self.n)])

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, d)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def flat_index(self, idx: tuple[int, ...]) -> int:
        return int(np.ravel_multi_index(idx, self.shape))

    def to_dict(self) -> dict:
        return {"x_min": list(self.lower), "x_max": list(self.upper), "nx": list(self.n)}

    @classmethod
    def from_dict(cls, doc: dict) -> SpaceGrid:
        return cls(tuple(float(v) for v in doc["x_min"]), tuple(float(v) for v in doc["x_max"]),
                   tuple(int(v) for v in doc["nx"]))


def build_grids(delay: DelayParams, request: GridRequest) -> tuple[TimeGrid, SpaceGrid]:
    if request.dt <= 0:
        raise InvalidGrid("time step must be positive")
    lag = delay.h / request.dt
    total = delay.T / request.dt
    if lag.denominator != 1 or total.denominator != 1:
        raise MisalignedGrid(f"dt = {request.dt} must divide both h = {delay.h} and T = {delay.T}")
    tgrid = TimeGrid(request.dt, int(total), int(lag), delay.m)
    if tgrid.delay_steps > tgrid.n_steps:
        raise MisalignedGrid("delay m*h exceeds the horizon")
    return tgrid, SpaceGrid(tuple(request.x_min), tuple(request.x_max), tuple(request.nx))


@dataclass(frozen=True, order=True)
class PendingConfig:
    """Pending orders: decision-time indices and impulse indices, oldest first."""

    times: tuple[int, ...] = ()
    impulses: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return len(self.times)

    @property
    def first(self) -> int:
        return self.times[0]

    @property
    def last(self) -> int:
        return self.times[-1]

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(t - self.times[0] for t in self.times[1:])

    def dropped_first(self) -> PendingConfig:
        return PendingConfig(self.times[1:], self.impulses[1:])

    def extended(self, j: int, e: int) -> PendingConfig:
        return PendingConfig(self.times + (j,), self.impulses + (e,))

    def key(self) -> str:
        return f"{self.k}|{','.join(map(str, self.times))}|{','.join(map(str, self.impulses))}"

    @classmethod
    def from_key(cls, key: str) -> PendingConfig:
        k, times, imps = key.split("|")
        t = tuple(int(v) for v in times.split(",")) if times else ()
        e = tuple(int(v) for v in imps.split(",")) if imps else ()
        if len(t) != int(k) or len(e) != int(k):
            raise ValueError(f"malformed config key {key!r}")
        return cls(t, e)

    def is_admissible(self, tgrid: TimeGrid) -> bool:
        t = self.times
        if len(t) != len(self.impulses):
            return False
        if not t:
            return True
        if t[0] < 0 or t[-1] > tgrid.n_steps or t[-1] - t[0] >= tgrid.delay_steps:
            return False
        return all(b - a >= tgrid.lag_steps for a, b in zip(t, t[1:]))


EMPTY = PendingConfig()


def _time_tuples(k: int, first_min: int, first_max: int, tgrid: TimeGrid):
    lag, delay, n_t = tgrid.lag_steps, tgrid.delay_steps, tgrid.n_steps

    def extend(prefix: tuple[int, ...]):
        if len(prefix) == k:
            yield prefix
            return
        for j in range(prefix[-1] + lag, min(prefix[0] + delay - 1, n_t) + 1):
            yield from extend(prefix + (j,))

    for j1 in range(max(first_min, 0), min(first_max, n_t) + 1):
        yield from extend((j1,))


def _with_impulses(k: int, tuples, n_impulses: int) -> list[PendingConfig]:
    combos = list(itertools.product(range(n_impulses), repeat=k))
    return [PendingConfig(t, e) for t in tuples for e in combos]


def enumerate_configs(k: int, n: int, tgrid: TimeGrid, n_impulses: int) -> list[PendingConfig]:
    """All admissible configurations with ``k`` orders whose first decision is after T - n h."""
    if k == 0:
        return [EMPTY]
    if k > tgrid.m:
        return []
    first_min = tgrid.n_steps - n * tgrid.lag_steps + 1
    return _with_impulses(k, _time_tuples(k, first_min, tgrid.n_steps, tgrid), n_impulses)


def stage_configs(k: int, n: int, tgrid: TimeGrid, n_impulses: int) -> list[PendingConfig]:
    """Configurations first covered at stage ``n`` (those with T-nh < t_1 <= T-(n-1)h)."""
    if k == 0 or k > tgrid.m:
        return []
    lo, hi = stage_window(n, tgrid)
    return _with_impulses(k, _time_tuples(k, lo, hi, tgrid), n_impulses)


def stage_window(n: int, tgrid: TimeGrid) -> tuple[int, int]:
    """Inclusive index range (T - n h, T - (n-1) h] clipped to the grid; stage m covers (T - m h, T]."""
    lo = max(tgrid.n_steps - n * tgrid.lag_steps + 1, 0)
    hi = tgrid.n_steps if n <= tgrid.m else tgrid.n_steps - (n - 1) * tgrid.lag_steps
    return lo, hi


def classify_config(p: PendingConfig, tgrid: TimeGrid) -> str:
    if p.k == 0 or p.first + tgrid.delay_steps <= tgrid.n_steps:
        return INTERIOR
    return NEVER_EXECUTED


@dataclass(frozen=True)
class Partition:
    """Index ranges of the no-decision part and the decision part, and the execution index."""

    first: range
    second: range
    terminal: int


def partition_domain(p: PendingConfig, tgrid: TimeGrid) -> Partition:
    if p.k == 0 or classify_config(p, tgrid) != INTERIOR:
        raise ConfigOutsideInterior(f"config {p.key()} has no execution inside the horizon")
    terminal = p.first + tgrid.delay_steps
    split = min(p.last + tgrid.lag_steps, terminal)
    return Partition(range(p.last, split), range(split, terminal), terminal)
