import pytest
from hypothesis import given, settings, strategies as st

import oracles
from pecc.controller import ControllerConfig, Mode, init_controller
from pecc.profiles import ControlPair, default_table
from pecc.simworld import (BUNDLED, ObstacleEvent, Scenario, ScenarioError, SimState, bundled_scenario,
                           dump_scenario, load_scenario, make_budgets, resolve_scenario, run, simulate,
                           trace_to_csv)

TABLE = default_table()


def fixed(f, s):
    return ControllerConfig(Mode.FIXED, rd_des=100.0, fixed_pair=ControlPair(f, s))


def free(length):
    return Scenario("free", length)


# --- loading ---------------------------------------------------------------

def test_minimal_scenario():
    sc = load_scenario("name: line\nbase_length_m: 10\n")
    assert sc.obstacles == () and sc.base_length == 10.0 and sc.seed == 0


def test_obstacle_defaults():
    sc = load_scenario("name: x\nbase_length_m: 10\nobstacles:\n  - {position_m: 2}\n")
    assert sc.obstacles == (ObstacleEvent(2.0, 1.0, 0.4, 0.5),)


def test_overlapping_zones_rejected():
    src = ("name: x\nbase_length_m: 10\nobstacles:\n"
           "  - {position_m: 2, zone_length_m: 1.5}\n  - {position_m: 3}\n")
    with pytest.raises(ScenarioError, match="overlap"):
        load_scenario(src)


@pytest.mark.parametrize("src, match", [
    ("name: x\nbase_length_m: [1\n", "line"),
    ("name: x\n", "base_length_m"),
    ("name: x\nbase_length_m: 0\n", "positive"),
    ("name: x\nbase_length_m: ten\n", "invalid value"),
    ("name: x\nbase_length_m: 5\nobstacles:\n  - {position_m: 6}\n", "outside"),
    ("name: x\nbase_length_m: 5\nobstacles:\n  - {position_m: 1, speed_cap_mps: 0}\n", "speed_cap"),
    ("name: x\nbase_length_m: 5\nobstacles:\n  - {position_m: 1, size: 2}\n", "unknown fields"),
    ("- 1\n- 2\n", "mapping"),
])
def test_load_errors(src, match):
    with pytest.raises(ScenarioError, match=match):
        load_scenario(src)


def test_speed_cap_bounded_by_platform():
    src = "name: x\nbase_length_m: 5\nobstacles:\n  - {position_m: 1, speed_cap_mps: 3.0}\n"
    with pytest.raises(ScenarioError, match="platform maximum"):
        load_scenario(src, max_speed=2.4)


def test_bundled_qu():
    sc = bundled_scenario("QU")
    assert sc.base_length == 30.0 and len(sc.obstacles) == 3
    assert bundled_scenario("QU", obstacles=False).obstacles == ()


@pytest.mark.parametrize("name, length", [("AB", 12), ("BD", 22), ("DA", 16), ("PT", 25), ("QU", 30),
                                          ("RS", 28)])
def test_bundled_lengths(name, length):
    sc = bundled_scenario(name)
    assert sc.base_length == length
    assert all(o.speed_cap <= TABLE.grid.s_max for o in sc.obstacles)


def test_each_map_has_nine_obstacles():
    assert sum(len(bundled_scenario(n).obstacles) for n in BUNDLED[:3]) == 9
    assert sum(len(bundled_scenario(n).obstacles) for n in BUNDLED[3:]) == 9


def test_resolve_variants(tmp_path):
    assert resolve_scenario("PT:free").obstacles == ()
    path = tmp_path / "s.yaml"
    path.write_text(dump_scenario(bundled_scenario("RS")))
    assert resolve_scenario(str(path)) == bundled_scenario("RS")
    with pytest.raises(ScenarioError):
        resolve_scenario(str(tmp_path / "missing.yaml"))


def test_jitter_is_seeded_and_valid():
    sc = bundled_scenario("PT")
    a, b = sc.jittered(3), sc.jittered(3)
    assert a == b and a != sc.jittered(4)
    for trial in range(50):
        Scenario(sc.name, sc.base_length, sc.jittered(trial).obstacles)  # revalidates


# --- stepping --------------------------------------------------------------

def test_free_step_arithmetic():
    ctrl = init_controller(fixed(2.26, 1.6), TABLE, 1e6, 10.0)
    state = SimState(free(10.0), ctrl, TABLE)
    sample = state.step(0.05)
    assert sample.arc_position == pytest.approx(0.08, rel=1e-12)
    assert sample.cumulative_energy == pytest.approx(oracles.power(2.26, 1.6) * 0.05, rel=1e-9)
    assert sample.effective_speed == sample.commanded_speed == 1.6


def test_speed_cap_dominates_inside_zone():
    sc = Scenario("z", 10.0, (ObstacleEvent(0.0, 2.0, 0.4, 0.0),))
    ctrl = init_controller(fixed(2.26, 1.6), TABLE, 1e6, 10.0)
    state = SimState(sc, ctrl, TABLE)
    assert state.step(0.05).commanded_speed == 0.4


def test_stall_effective_speed():
    ctrl = init_controller(fixed(1.11, 2.4), TABLE, 1e6, 10.0)
    sample = SimState(free(10.0), ctrl, TABLE).step(0.05)
    assert sample.commanded_speed == 2.4
    assert sample.effective_speed == pytest.approx(2.0, rel=1e-9)


def test_entering_zone_adds_detour_and_replans():
    sc = Scenario("d", 10.0, (ObstacleEvent(1.0, 1.0, 0.4, 0.5),))
    ctrl = init_controller(ControllerConfig(Mode.PECC_DELTA, rd_des=0.5), TABLE, 1e4, 10.0)
    state = SimState(sc, ctrl, TABLE)
    while state.position < 1.0:
        state.step(0.05)
    state.step(0.05)
    assert state.total_length == 10.5
    assert ctrl.ledger.remaining_distance == pytest.approx(10.5 - state.position, abs=1e-9)


# --- whole runs ------------------------------------------------------------

def test_zero_length_path():
    ctrl = init_controller(fixed(1.11, 0.4), TABLE, 1e4, 1.0)
    result = run(free(0.0), ctrl, TABLE)
    assert result.travel_time == 0.0 and result.energy_consumed == 0.0


def test_ten_meters_at_slowest_pair():
    result = simulate(free(10.0), fixed(1.11, 0.4), TABLE, 1e4)
    assert result.travel_time == pytest.approx(25.0, rel=1e-9)
    assert result.energy_consumed == pytest.approx(25.0 * 100.0, rel=1e-9)
    assert result.distance_traveled == 10.0


def test_runs_are_deterministic():
    sc = bundled_scenario("QU").jittered(5)
    cfg = ControllerConfig(Mode.PECC_DELTA, rd_des=0.5)
    a = simulate(sc, cfg, TABLE, 5000.0)
    b = simulate(sc, cfg, TABLE, 5000.0)
    assert a == b


def test_energy_is_rectangular_sum():
    sc = bundled_scenario("PT")
    result = simulate(sc, ControllerConfig(Mode.PECC_DELTA, rd_des=0.75), TABLE, 4000.0)
    energy, t_prev = 0.0, 0.0
    for s in result.trace:
        energy += s.power * (s.t - t_prev)
        t_prev = s.t
        assert s.effective_speed <= s.commanded_speed
    assert result.energy_consumed == pytest.approx(energy, rel=1e-9)
    assert result.energy_consumed == result.trace[-1].cumulative_energy


@pytest.mark.parametrize("name", BUNDLED)
def test_distance_conservation(name):
    sc = bundled_scenario(name).jittered(1)
    result = simulate(sc, ControllerConfig(Mode.EE, rd_des=0.5), TABLE, 1.0)
    assert result.completed
    assert result.distance_traveled == pytest.approx(sc.total_length, abs=0.05 * 2.4)


def test_timeout_flags_incomplete():
    result = simulate(free(100.0), fixed(1.11, 0.4), TABLE, 1.0, timeout=5.0)
    assert not result.completed
    assert result.travel_time == pytest.approx(5.0)


obstacles = st.builds(ObstacleEvent, st.floats(0.0, 18.0), st.floats(0.2, 1.0), st.floats(0.2, 2.4),
                      st.floats(0.0, 1.0))


@given(obstacles, st.sampled_from([(1.11, 2.4), (2.26, 1.2), (1.57, 0.8)]))
@settings(max_examples=40, deadline=None)
def test_adding_obstacle_never_helps(ob, pair):
    base = simulate(free(20.0), fixed(*pair), TABLE, 1e6, record_trace=False)
    hindered = simulate(Scenario("o", 20.0, (ob,)), fixed(*pair), TABLE, 1e6, record_trace=False)
    assert hindered.travel_time >= base.travel_time - 1e-9
    assert hindered.energy_consumed >= base.energy_consumed - 1e-6


def test_stall_average_speed_free_path():
    r24 = simulate(free(30.0), fixed(1.11, 2.4), TABLE, 1e6)
    r20 = simulate(free(30.0), fixed(1.11, 2.0), TABLE, 1e6)
    assert r24.average_speed == pytest.approx(2.0, rel=0.05)
    assert r20.average_speed == pytest.approx(1.8, rel=0.05)


# --- budgets ---------------------------------------------------------------

def test_budgets_are_ordered():
    low, med, high = make_budgets(bundled_scenario("RS"), TABLE, 0.5)
    assert low < med < high


def test_budgets_free_path():
    low, med, high = make_budgets(free(30.0), TABLE, 0.5)
    e_ee = TABLE.record(ControlPair(1.11, 0.8)).energy_per_meter * 30.0
    assert med == pytest.approx(1.15 * e_ee, rel=1e-9)
    assert (low, high) == pytest.approx((0.95 * e_ee, 1.35 * e_ee), rel=1e-9)


def test_ee_free_run_closes_budget_loop():
    sc = bundled_scenario("QU")
    _, med, _ = make_budgets(sc, TABLE, 0.5)
    result = simulate(sc.without_obstacles(), ControllerConfig(Mode.EE, rd_des=0.5), TABLE, med)
    assert result.energy_consumed == pytest.approx(med / 1.15, rel=0.01)


def test_low_budget_overruns_with_obstacles():
    sc = bundled_scenario("QU")
    low, _, _ = make_budgets(sc, TABLE, 0.5)
    for mode in (Mode.EE, Mode.PECC_0):
        result = simulate(sc, ControllerConfig(mode, rd_des=0.5), TABLE, low)
        assert result.energy_consumed / low > 1


def test_trace_csv():
    result = simulate(free(1.0), fixed(2.26, 2.4), TABLE, 1e6)
    lines = trace_to_csv(result.trace).splitlines()
    assert lines[0] == "t_s,pos_m,cmd_mps,eff_mps,power_w,energy_j"
    assert len(lines) == len(result.trace) + 1
