from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st

from qevac import streams
from qevac.engine import (
    BuildingRecord,
    OpenSpaceRecord,
    PersonState,
    ScenarioConfig,
    build_world,
    outdoor_hazard,
    run,
    select_target,
    tick,
)
from qevac.geom import ElevationGrid, Point2D, rectangle
from qevac.synth import PRESETS, SynthCitySpec, generate
from qevac.vulnerability import CasualtyTable, ConfigurationError

FLAT = ElevationGrid.constant(Point2D(-200, -200), 10.0, 80, 60)


def house(bid=1, x=0.0, y=0.0, size=10.0, floors=1, apartments=1, mu=0.0, door=None, year=2010):
    return BuildingRecord(bid, rectangle(x, y, size, size), floors, apartments, year, mu, door)


def fixed_speed(**kw):
    return ScenarioConfig(speed_min=1.4, speed_max=1.4, household_size=1, **kw)


def small_city(seed=5, **over):
    spec = dataclasses.replace(
        SynthCitySpec(cols=6, rows=6, ring_spaces=3, ring_inset=1, space_cells=1, terrain="ramp", grade=0.04, seed=seed),
        **over,
    )
    return generate(spec)


def test_straight_line_travel_time():
    # spawn point sits 0.05 m outside the east wall, the space 140 m beyond it
    b = house(door=Point2D(10.0, 5.0))
    space = OpenSpaceRecord(1, rectangle(150.05, -20, 30, 50))
    world = build_world([b], [space], FLAT, fixed_speed())
    res = run(world)
    assert world.state[0] == PersonState.SAFE
    assert world.arrival[0] == pytest.approx(100.0, abs=2.0)
    assert res.spaces[0].min_arrival_s == world.arrival[0]


def test_nearest_space_tie_goes_to_lower_id():
    b = house(door=Point2D(5.0, 0.0))
    # both spaces 20 m from the door point, ids listed in reverse
    far_left = OpenSpaceRecord(7, rectangle(-40, -60, 20, 20))
    far_right = OpenSpaceRecord(3, rectangle(30, -60, 20, 20))
    world = build_world([b], [far_left, far_right], FLAT, fixed_speed())
    tick(world)
    assert world.person(0).target == 3


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(-150, 150), st.integers(-150, 150), st.integers(5, 40)), min_size=1, max_size=5),
)
def test_initial_target_is_nearest_boundary(boxes):
    b = house(x=-5, y=-5, door=Point2D(5.0, 0.0))
    spaces = []
    for n, (x, y, w) in enumerate(boxes):
        poly = rectangle(x, y, w, w)
        if shapely.intersects(poly.to_shapely(), b.footprint.to_shapely()):
            continue
        spaces.append(OpenSpaceRecord(n + 1, poly))
    if not spaces:
        return
    world = build_world([b], spaces, FLAT, fixed_speed(door_offset=0.05))
    sx, sy = world.spawn_xy[0]
    dist = [shapely.Point(sx, sy).distance(s.polygon.to_shapely()) for s in spaces]
    best = min(dist)
    expected = min(s.id for s, d in zip(spaces, dist) if d <= best + 1e-9)
    got = world.spaces[world.building_target[0]].id
    assert got == expected or math.isclose(dist[[s.id for s in spaces].index(got)], best, abs_tol=1e-9)


def test_conservation_and_monotone_counts():
    city = small_city()
    cfg = ScenarioConfig(debris_model="ring", seed=3, sim_duration=120)
    world = build_world(city.buildings, city.open_spaces, city.elevation, cfg)
    n = world.n_persons
    capacity = world.space_capacity.copy()

    def check(w):
        assert np.all(w.space_occupancy <= capacity)

    res = run(world, on_tick=check)
    rows = np.array(res.timeseries)
    assert len(rows) == cfg.n_ticks + 1
    assert np.all(rows[:, 1:].sum(axis=1) == n)
    assert np.all(np.diff(rows[:, 1]) >= 0)
    assert np.all(np.diff(rows[:, 4]) >= 0)
    assert rows[-1, 1] > 0


def test_all_spaces_locked_nobody_safe():
    b = house(apartments=5)
    spaces = [OpenSpaceRecord(1, rectangle(30, 0, 10, 10), True), OpenSpaceRecord(2, rectangle(-40, 0, 10, 10), True)]
    world = build_world([b], spaces, FLAT, fixed_speed(sim_duration=120))
    res = run(world)
    assert res.timeseries[-1][1] == 0
    assert all(s.occupancy == 0 and s.pct_population == 0.0 for s in res.spaces)
    assert res.stranded == world.n_persons


def test_locked_space_is_discovered_and_avoided():
    b = house(door=Point2D(10.0, 5.0))
    near = OpenSpaceRecord(1, rectangle(20, -5, 10, 20), True)
    other = OpenSpaceRecord(2, rectangle(-60, -5, 10, 20))
    world = build_world([b], [near, other], FLAT, fixed_speed(sim_duration=200))
    res = run(world)
    assert world.discovered[0, 0]
    assert world.person(0).target == 2
    assert world.state[0] == PersonState.SAFE
    assert res.spaces[0].occupancy == 0


def test_zero_duration():
    world = build_world([house()], [OpenSpaceRecord(1, rectangle(30, 0, 10, 10))], FLAT, fixed_speed(sim_duration=0))
    res = run(world)
    assert res.timeseries == [(0.0, 0, 0, 0, 0, 1)]


def test_zero_residents_summary():
    b = house()
    world = build_world([], [OpenSpaceRecord(1, rectangle(30, 0, 10, 10))], FLAT, fixed_speed(sim_duration=10))
    res = run(world)
    assert world.n_persons == 0 and res.final_safe_fraction == 0.0
    assert res.spaces[0].pct_population == 0.0
    assert b.floors == 1


def test_capacity_is_respected():
    # 2 persons per m^2 on a 2 x 2 m space: 8 admitted, the rest circle the rim
    b = house(apartments=20)
    world = build_world([b], [OpenSpaceRecord(1, rectangle(15, 3, 2, 2))], FLAT, fixed_speed(sim_duration=200))
    res = run(world)
    assert res.spaces[0].capacity == 8
    assert res.spaces[0].occupancy == 8


def test_spawn_delay_by_floor():
    b = house(floors=4, apartments=30)
    world = build_world([b], [OpenSpaceRecord(1, rectangle(300, 0, 10, 10))], FLAT, ScenarioConfig(sim_duration=10))
    assert set(np.unique(world.spawn_time)) <= {0.0, 15.0, 30.0, 45.0}
    assert np.all(world.spawn_time == (world.floor - 1) * 15.0)
    assert world.floor.min() >= 1 and world.floor.max() <= 4


def test_indoor_deaths_follow_streams():
    rows = [dict(zip(("typology", "damage_state", "setting", "rate"), map(str, r))) for r in CasualtyTable.default().rows()]
    for r in rows:
        if r["damage_state"] == "Complete" and r["setting"] == "indoor":
            r["rate"] = "0.25"
    table = CasualtyTable.from_rows(rows)
    cfg = ScenarioConfig(casualty_table=table, seed=9, sim_duration=0)
    b = house(apartments=500, mu=4.0, floors=2, year=1940)
    world = build_world([b], [OpenSpaceRecord(1, rectangle(300, 0, 10, 10))], FLAT, cfg)
    u = streams.uniforms(9, 0, streams.INDOOR_DEATH, world.n_persons)
    assert np.array_equal(world.state == PersonState.DEAD, u < 0.25)
    assert abs(np.mean(u < 0.25) - 0.25) < 0.03


@pytest.mark.parametrize("rate", [0.0, 0.001, 0.2, 0.9])
def test_hazard_compounds_to_rate(rate):
    q = outdoor_hazard(rate, 1.0, 30.0)
    assert 1.0 - (1.0 - q) ** 30 == pytest.approx(rate, abs=1e-12)


def test_thread_count_does_not_change_results():
    city = small_city(seed=8)
    cfg = ScenarioConfig(debris_model="ring", seed=1, sim_duration=60)
    outs = []
    for threads in (1, 3):
        world = build_world(city.buildings, city.open_spaces, city.elevation, cfg)
        outs.append((run(world, threads=threads), world.pos.copy()))
    (a, pa), (b, pb) = outs
    assert a.timeseries == b.timeseries
    assert a.spaces == b.spaces
    assert np.array_equal(pa, pb, equal_nan=True)


def test_select_target_skips_discovered():
    spaces = [OpenSpaceRecord(1, rectangle(30, 0, 10, 10)), OpenSpaceRecord(2, rectangle(-80, 0, 10, 10))]
    world = build_world([house()], spaces, FLAT, fixed_speed())
    tick(world)
    assert select_target(world, 0) == 1
    world.discovered[0, 0] = True
    assert select_target(world, 0) == 2


def test_config_validation_collects_errors():
    with pytest.raises(ConfigurationError) as exc:
        ScenarioConfig(tick=0.7, speed_min=2.0, speed_max=1.0, debris_model="cone")
    assert len(exc.value.errors) >= 3


def test_minimal_preset_runs():
    city = generate(PRESETS["minimal"])
    world = build_world(city.buildings, city.open_spaces, city.elevation, ScenarioConfig(sim_duration=30))
    res = run(world)
    assert sum(res.timeseries[-1][1:]) == world.n_persons
