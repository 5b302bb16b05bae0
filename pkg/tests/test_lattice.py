import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delay_impulse.lattice import (
    EMPTY,
    INTERIOR,
    NEVER_EXECUTED,
    ConfigOutsideInterior,
    InvalidGrid,
    MisalignedGrid,
    PendingConfig,
    SpaceGrid,
    TimeGrid,
    build_grids,
    classify_config,
    enumerate_configs,
    partition_domain,
    stage_configs,
)
from delay_impulse.model import DelayParams, GridRequest


def grids(T, h, m, dt, nx=5):
    return build_grids(DelayParams(T, h, m), GridRequest(Fraction(dt), (0.0,), (1.0,), (nx,)))


def test_grid_arithmetic_m1():
    tg, _ = grids(1, 0.5, 1, "1/4")
    assert (tg.n_steps, tg.lag_steps, tg.delay_steps) == (4, 2, 2)


def test_grid_arithmetic_m2():
    tg, _ = grids(1, 0.25, 2, "1/8")
    assert (tg.n_steps, tg.lag_steps, tg.delay_steps) == (8, 2, 4)


def test_misaligned_lag():
    with pytest.raises(MisalignedGrid):
        grids(1, 0.3, 1, "1/4")


def test_misaligned_horizon():
    with pytest.raises(MisalignedGrid):
        grids(Fraction(9, 10), 0.25, 1, "1/4")


def test_invalid_space_grid():
    with pytest.raises(InvalidGrid):
        SpaceGrid((1.0,), (0.0,), (5,))
    with pytest.raises(InvalidGrid):
        SpaceGrid((0.0,), (1.0,), (2,))


def test_time_index_of():
    tg, _ = grids(1, 0.25, 2, "1/8")
    assert tg.index_of("0.375") == 3
    assert tg.index_of(1.0) == 8
    with pytest.raises(MisalignedGrid):
        tg.index_of(0.1)


def test_space_grid_points():
    sg = SpaceGrid((0.0, -1.0), (1.0, 1.0), (3, 5))
    assert sg.points.shape == (3, 5, 2)
    assert sg.points[2, 4].tolist() == [1.0, 1.0]
    assert sg.dx.tolist() == [0.5, 0.5]


def test_grid_dict_round_trip():
    tg, sg = grids(1, 0.25, 2, "1/8")
    assert TimeGrid.from_dict(tg.to_dict()) == tg
    assert SpaceGrid.from_dict(sg.to_dict()) == sg


def test_k_above_m_is_empty():
    tg, _ = grids(1, 0.5, 1, "1/4")
    assert enumerate_configs(2, tg.n_stages, tg, 1) == []


def test_k_zero_is_empty_config():
    tg, _ = grids(1, 0.5, 1, "1/4")
    assert enumerate_configs(0, tg.n_stages, tg, 3) == [EMPTY]


def test_single_order_configs():
    tg, _ = grids(1, 0.5, 1, "1/4")
    configs = enumerate_configs(1, tg.n_stages, tg, 1)
    assert [tg.time(p.first) for p in configs] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert all(p.impulses == (0,) for p in configs)
    interior = [tg.time(p.first) for p in configs if classify_config(p, tg) == INTERIOR]
    assert interior == [0.0, 0.25, 0.5]


def brute_force(k, tg, n_impulses):
    out = set()
    for times in itertools.product(range(tg.n_steps + 1), repeat=k):
        if any(b - a < tg.lag_steps for a, b in zip(times, times[1:])):
            continue
        if times[-1] - times[0] >= tg.delay_steps:
            continue
        for imps in itertools.product(range(n_impulses), repeat=k):
            out.add(PendingConfig(times, imps))
    return out


def test_two_orders_unit_gap():
    tg, _ = grids(1, 0.25, 2, "1/4")
    configs = enumerate_configs(2, tg.n_stages, tg, 1)
    assert all(p.times[1] - p.times[0] == 1 for p in configs)
    assert set(configs) == brute_force(2, tg, 1)
    assert len(configs) == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 6), st.integers(1, 2))
def test_enumeration_matches_brute_force(m, lag, k, extra, n_e):
    n_t = m * lag + extra
    tg = TimeGrid(Fraction(1, n_t), n_t, lag, m)
    got = enumerate_configs(k, tg.n_stages, tg, n_e)
    assert len(got) == len(set(got))
    assert set(got) == (brute_force(k, tg, n_e) if k <= m else set())
    assert all(p.is_admissible(tg) for p in got)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 6))
def test_stages_are_nested_and_partition(m, lag, extra):
    n_t = m * lag + extra
    tg = TimeGrid(Fraction(1, n_t), n_t, lag, m)
    for k in range(1, m + 1):
        prev = set()
        for n in range(m, tg.n_stages + 1):
            cur = set(enumerate_configs(k, n, tg, 1))
            assert prev <= cur
            if n > m:
                assert cur - prev == set(stage_configs(k, n, tg, 1))
            prev = cur
        assert prev == brute_force(k, tg, 1)


def test_partition_m1():
    tg, _ = grids(1, 0.5, 1, "1/4")
    part = partition_domain(PendingConfig((1,), (0,)), tg)
    assert (part.first, part.second, part.terminal) == (range(1, 3), range(3, 3), 3)


def test_partition_single_order_m2():
    tg, _ = grids(1, 0.25, 2, "1/4")
    part = partition_domain(PendingConfig((0,), (0,)), tg)
    assert (part.first, part.second, part.terminal) == (range(0, 1), range(1, 2), 2)


def test_partition_two_orders_m2():
    tg, _ = grids(1, 0.25, 2, "1/4")
    part = partition_domain(PendingConfig((0, 1), (0, 0)), tg)
    assert (part.first, part.second, part.terminal) == (range(1, 2), range(2, 2), 2)


def test_partition_outside_interior():
    tg, _ = grids(1, 0.5, 1, "1/4")
    with pytest.raises(ConfigOutsideInterior):
        partition_domain(PendingConfig((3,), (0,)), tg)


def test_classification():
    tg, _ = grids(1, 0.5, 1, "1/4")
    assert classify_config(PendingConfig((3,), (0,)), tg) == NEVER_EXECUTED
    assert classify_config(PendingConfig((2,), (0,)), tg) == INTERIOR
    assert classify_config(EMPTY, tg) == INTERIOR


def test_key_round_trip():
    for p in (EMPTY, PendingConfig((3,), (1,)), PendingConfig((0, 2, 5), (1, 0, 1))):
        assert PendingConfig.from_key(p.key()) == p
    assert PendingConfig((0, 2), (1, 0)).key() == "2|0,2|1,0"
    with pytest.raises(ValueError):
        PendingConfig.from_key("2|1|0")


def test_config_helpers():
    p = PendingConfig((1, 3), (0, 1))
    assert p.offsets == (2,)
    assert p.dropped_first() == PendingConfig((3,), (1,))
    assert p.extended(5, 0) == PendingConfig((1, 3, 5), (0, 1, 0))
    assert np.array_equal(np.array(p.times), [1, 3])
