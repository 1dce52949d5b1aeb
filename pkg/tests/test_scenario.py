import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfc_lab.errors import ConfigError
from mfc_lab.plant import TAU1, TAU2, TAU3, StateSpaceSystem, builtin_bank
from mfc_lab.scenario import (
    COLUMNS, S1, S2, S3, S4, S5, S6, S7, S8, SCENARIO_NAMES, TD1, TD2, ReferenceTrajectory,
    ScenarioConfig, SwitchEvent, SwitchingSchedule, apply_schedule, builtin_scenario,
    builtin_scenarios, default_controller, reference_eval, run_closed_loop,
)

KINDS = ("classic_pi", "ipi", "istar_pi")


def plant_sequence(cfg):
    seq = [cfg.schedule.initial_index]
    seq += [e.plant_index for e in cfg.schedule.events if e.plant_index is not None]
    return seq


# -- reference_eval --------------------------------------------------------

def test_reference_examples():
    assert reference_eval(ReferenceTrajectory("step", amplitude=1.0), 0.5) == 1.0
    expo = ReferenceTrajectory("exponential_approach", amplitude=1.0, time_constant=0.1)
    assert reference_eval(expo, 0.0) == 0.0
    expo2 = ReferenceTrajectory("exponential_approach", amplitude=2.0, time_constant=0.5)
    assert reference_eval(expo2, 0.5) == pytest.approx(1.264241, abs=1e-6)


def test_reference_ramp_piecewise_and_onset():
    ramp = ReferenceTrajectory("ramp", slope=2.0, onset=0.5)
    assert [reference_eval(ramp, t) for t in (0.0, 0.5, 1.5)] == [0.0, 0.0, 2.0]
    pw = ReferenceTrajectory("piecewise", segments=[(0.0, 1.0, 0.0, 1.0), (1.0, 2.0, 1.0, 1.0)])
    assert [reference_eval(pw, t) for t in (0.0, 0.5, 1.5, 9.0)] == [0.0, 0.5, 1.0, 1.0]
    with pytest.raises(ConfigError):
        ReferenceTrajectory("piecewise", segments=[(0.0, 1.0, 0.0, 1.0), (1.5, 2.0, 1.0, 1.0)])
    with pytest.raises(ConfigError):
        ReferenceTrajectory("exponential_approach", time_constant=0.0)


# -- apply_schedule --------------------------------------------------------

FIG1 = SwitchingSchedule(events=(SwitchEvent(0.01, S4), SwitchEvent(0.05, S1)), initial_index=S2)


def test_schedule_before_first_switch():
    assert apply_schedule(FIG1, 0.005).plant_index == S2


def test_schedule_between_switches():
    assert apply_schedule(FIG1, 0.03).plant_index == S4


def test_schedule_closed_left():
    assert apply_schedule(FIG1, 0.01).plant_index == S4
    assert apply_schedule(FIG1, 0.05).plant_index == S1


def test_delay_events_keep_plant_and_state_delay_reverts():
    sched = SwitchingSchedule(
        events=(SwitchEvent(0.1, None, 0.002), SwitchEvent(0.2, TD1, None, TAU2), SwitchEvent(0.3, TD2)),
        initial_index=TD1, initial_output_delay=0.001,
    )
    m = apply_schedule(sched, 0.15)
    assert (m.plant_index, m.output_delay) == (TD1, 0.002)
    m = apply_schedule(sched, 0.25)
    assert (m.plant_index, m.state_delay) == (TD1, TAU2)
    m = apply_schedule(sched, 0.35)
    assert (m.plant_index, m.output_delay, m.state_delay, m.events_passed) == (TD2, 0.002, None, 3)


@settings(max_examples=100)
@given(times=st.lists(st.floats(0.0, 1.0), min_size=0, max_size=8, unique=True),
       grid=st.integers(50, 400))
def test_schedule_is_piecewise_constant_with_one_step_per_event(times, grid):
    times = sorted(times)
    sched = SwitchingSchedule(events=tuple(SwitchEvent(t, i % 3) for i, t in enumerate(times)),
                              initial_index=2)
    probes = sorted(set(np.linspace(0, 1.2, grid).tolist() + times))
    passed = [apply_schedule(sched, t).events_passed for t in probes]
    assert passed[0] == sum(1 for t in times if t <= 0.0)
    assert all(b >= a for a, b in zip(passed, passed[1:]))
    assert passed[-1] == len(times)
    for t in times:
        assert apply_schedule(sched, t).events_passed == times.index(t) + 1


def test_schedule_validation():
    with pytest.raises(ConfigError):
        SwitchingSchedule(events=(SwitchEvent(0.2, 1), SwitchEvent(0.1, 2)))
    with pytest.raises(ConfigError):
        SwitchingSchedule(events=(SwitchEvent(0.1, 1, -0.01),))
    with pytest.raises(ConfigError):
        SwitchingSchedule(initial_index=12).validate(builtin_bank())


# -- builtin scenarios -----------------------------------------------------

def test_builtin_scenario_names():
    assert set(builtin_scenarios()) == set(SCENARIO_NAMES)
    assert len(SCENARIO_NAMES) == 8


@pytest.mark.parametrize("name,times,plants", [
    ("fig1", [0.01, 0.05], [S2, S4, S1]),
    ("fig2", [0.025, 0.072], [S2, S3, S5]),
    ("fig3", [0.018, 0.035, 0.072], [S1, S2, S4, S5]),
    ("fig4", [0.35, 0.58], [S6, S8, S7]),
    ("fig6td", [0.2, 0.6, 0.8], [TD2, TD1, TD1, TD1]),
])
def test_builtin_switching_times_and_sequences(name, times, plants):
    cfg = builtin_scenario(name)
    assert cfg.schedule.switch_times() == times
    assert plant_sequence(cfg) == plants


def test_fig6td_state_delays():
    cfg = builtin_scenario("fig6td")
    assert cfg.schedule.initial_state_delay == TAU3
    assert [e.state_delay for e in cfg.schedule.events] == [TAU1, TAU2, TAU3]


@pytest.mark.parametrize("name", ["fig1td", "fig2td"])
def test_delay_change_variants(name):
    cfg = builtin_scenario(name)
    change = [e for e in cfg.schedule.events if e.plant_index is None]
    assert [e.time for e in change] == [0.06]
    assert change[0].output_delay > cfg.schedule.initial_output_delay
    trace = run_closed_loop(cfg)
    before = trace.tau[trace.t < 0.06 - 1e-9]
    after = trace.tau[trace.t >= 0.06 - 1e-9]
    assert np.all(before == cfg.schedule.initial_output_delay)
    assert np.all(after == change[0].output_delay)


def test_fig5td_is_exponential_tracking_of_delay_plant():
    cfg = builtin_scenario("fig5td")
    assert cfg.bank[cfg.schedule.initial_index].kind == "state_delay"
    assert cfg.schedule.initial_state_delay == TAU1
    assert cfg.reference.kind == "exponential_approach"


# -- run_closed_loop -------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_zero_reference_stays_at_rest(kind):
    cfg = dataclasses.replace(builtin_scenario("fig1", kind),
                              reference=ReferenceTrajectory("step", amplitude=0.0))
    trace = run_closed_loop(cfg)
    assert np.all(trace.y == 0.0) and np.all(trace.u == 0.0)


def test_fig1_error_shrinks_from_every_switch():
    cfg = builtin_scenario("fig1")
    trace = run_closed_loop(cfg)
    assert not trace.diverged and np.all(np.isfinite(trace.y))
    for te in cfg.schedule.switch_times():
        k = int(math.ceil(te / cfg.ts - 1e-9))
        assert abs(trace.eps[-1]) < abs(trace.eps[k])


def test_ipi_on_first_order_plant():
    s1 = builtin_bank()[S1]
    cfg = ScenarioConfig([s1], SwitchingSchedule(), ReferenceTrajectory(),
                         default_controller("ipi", 1e-4), 1e-4, 10 * s1.dominant_time_constant())
    assert abs(run_closed_loop(cfg).eps[-1]) < 0.01


@pytest.mark.parametrize("name", ["fig2", "fig6td"])
def test_determinism(name):
    a, b = run_closed_loop(builtin_scenario(name)), run_closed_loop(builtin_scenario(name))
    for c in COLUMNS:
        assert getattr(a, c).tobytes() == getattr(b, c).tobytes()


@pytest.mark.parametrize("kind", KINDS)
def test_causality_by_truncation(kind):
    full_cfg = builtin_scenario("fig3", kind)
    short_cfg = dataclasses.replace(full_cfg, horizon=0.04)
    full, short = run_closed_loop(full_cfg), run_closed_loop(short_cfg)
    n = len(short)
    for c in COLUMNS:
        assert getattr(full, c)[:n].tobytes() == getattr(short, c).tobytes()


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_trace_integrity(name):
    cfg = builtin_scenario(name)
    trace = run_closed_loop(cfg)
    assert len(trace) == math.floor(cfg.horizon / cfg.ts) + 1
    assert np.array_equal(trace.eps, trace.y_ref - trace.y)
    assert np.all(np.diff(trace.t) > 0)
    assert np.allclose(np.diff(trace.t), cfg.ts, rtol=1e-9)
    assert int(np.count_nonzero(np.diff(trace.p))) == _index_changes(cfg)


def _index_changes(cfg):
    active, changes = cfg.schedule.initial_index, 0
    for e in cfg.schedule.events:
        if e.plant_index is not None and e.plant_index != active:
            active = e.plant_index
            changes += 1
    return changes


def test_divergence_truncates_and_marks():
    unstable = StateSpaceSystem([[200.0]], [1.0], [1.0], label="bad")
    cfg = ScenarioConfig([unstable], SwitchingSchedule(), ReferenceTrajectory(),
                         {"kind": "classic_pi", "kp": -1.0, "ki": 0.0}, 1e-3, 1.0)
    trace = run_closed_loop(cfg)
    assert trace.diverged and trace.diverged_at is not None
    assert 0 < len(trace) < cfg.n_samples
    assert np.all(np.isfinite(trace.y))


def test_actuator_limit_clamps():
    cfg = dataclasses.replace(builtin_scenario("fig1", "classic_pi"), actuator_limit=0.5)
    trace = run_closed_loop(cfg)
    assert np.max(np.abs(trace.u)) <= 0.5


def test_config_validation():
    base = builtin_scenario("fig1")
    with pytest.raises(ConfigError, match="ts"):
        dataclasses.replace(base, ts=0.0)
    with pytest.raises(ConfigError, match="horizon"):
        dataclasses.replace(base, horizon=-1.0)
    with pytest.raises(ConfigError):
        dataclasses.replace(base, ts=1e-9, horizon=1.0)
    with pytest.raises(ConfigError):
        dataclasses.replace(base, actuator_limit=0.0)
    with pytest.raises(ConfigError):
        dataclasses.replace(base, controller={"kind": "pid"})


def test_metadata_and_digest():
    cfg = builtin_scenario("fig4")
    trace = run_closed_loop(cfg)
    assert trace.metadata["config_digest"] == cfg.digest()
    assert trace.metadata["controller"] == "istar_pi"
    assert builtin_scenario("fig4").digest() == cfg.digest()
    assert builtin_scenario("fig4", "ipi").digest() != cfg.digest()


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_config_dict_round_trip(name):
    cfg = builtin_scenario(name)
    again = ScenarioConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
