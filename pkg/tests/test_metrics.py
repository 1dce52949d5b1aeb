import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfc_lab.metrics import compute_metrics
from mfc_lab.plant import builtin_bank
from mfc_lab.scenario import (
    ReferenceTrajectory, ScenarioConfig, SimTrace, SwitchEvent, SwitchingSchedule,
    builtin_scenario, default_controller, run_closed_loop,
)

BASELINES = Path(__file__).parent / "baselines" / "nmp_step_metrics.json"


def synthetic(t, y, y_ref=None, events=(), diverged=False):
    """Trace with given output; the config only carries the schedule."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    y_ref = np.ones_like(t) if y_ref is None else np.asarray(y_ref, dtype=float)
    cfg = ScenarioConfig(builtin_bank(), SwitchingSchedule(events=tuple(SwitchEvent(te, 0) for te in events)),
                         ReferenceTrajectory(), {"kind": "classic_pi", "kp": 1.0, "ki": 0.0},
                         float(t[1] - t[0]), float(t[-1]))
    zeros = np.zeros_like(t)
    return SimTrace(t=t, y_ref=y_ref, y=y, u=zeros, eps=y_ref - y, p=zeros.astype(int), tau=zeros,
                    gain_value=zeros, config=cfg, diverged=diverged)


def test_zero_error_trace():
    t = np.linspace(0, 1, 101)
    m = compute_metrics(synthetic(t, np.ones_like(t)))
    assert (m.ise, m.iae, m.overshoot_pct, m.undershoot_pct, m.settling_time) == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_constant_unit_error_over_two_seconds():
    t = np.arange(9) * 0.25
    m = compute_metrics(synthetic(t, np.zeros_like(t)))
    assert m.ise == 2.0 and m.iae == 2.0


@settings(max_examples=100)
@given(c=st.floats(-100, 100), seed=st.integers(0, 2**31 - 1))
def test_integral_scaling(c, seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, 51)
    y = rng.normal(size=t.size)
    base = compute_metrics(synthetic(t, y, y_ref=np.zeros_like(t)))
    scaled = compute_metrics(synthetic(t, c * y, y_ref=np.zeros_like(t)))
    assert scaled.ise == pytest.approx(c * c * base.ise, rel=1e-12, abs=1e-300)
    assert scaled.iae == pytest.approx(abs(c) * base.iae, rel=1e-12, abs=1e-300)


def test_refinement_consistency():
    def ise(ts):
        t = np.arange(0, 1 + ts / 2, ts)
        return compute_metrics(synthetic(t, 1 - np.exp(-5 * t))).ise
    coarse, fine = ise(1e-3), ise(5e-4)
    assert abs(coarse - fine) / fine < 0.01


def test_overshoot_undershoot_and_settling():
    t = np.arange(0, 1.001, 0.01)
    y = np.interp(t, [0, 0.1, 0.3, 0.5, 1.0], [0, -0.2, 1.3, 1.0, 1.0])
    m = compute_metrics(synthetic(t, y))
    assert m.undershoot_pct == pytest.approx(20.0)
    assert m.overshoot_pct == pytest.approx(30.0)
    inside = np.abs(1 - y) <= 0.02
    last_out = np.nonzero(~inside)[0][-1]
    assert m.settling_time == pytest.approx(t[last_out + 1])


def test_unsettled_trace_has_no_settling_time():
    t = np.linspace(0, 1, 101)
    m = compute_metrics(synthetic(t, 0.5 * np.ones_like(t)))
    assert m.settling_time is None


def test_post_switch_recovery():
    t = np.arange(0, 1.0001, 0.01)
    y = np.ones_like(t)
    y[(t >= 0.3) & (t < 0.42)] = 0.5
    y[(t >= 0.7) & (t < 0.75)] = 1.5
    m = compute_metrics(synthetic(t, y, events=(0.3, 0.7)))
    assert m.post_switch_recovery == pytest.approx([0.12, 0.05])


def test_recovery_carries_into_next_segment():
    t = np.arange(0, 1.0001, 0.01)
    y = np.ones_like(t)
    y[(t >= 0.3) & (t < 0.55)] = 0.5
    m = compute_metrics(synthetic(t, y, events=(0.3, 0.5)))
    assert m.post_switch_recovery == pytest.approx([0.25, 0.05])


def test_band_is_configurable():
    t = np.linspace(0, 1, 101)
    y = np.where(t < 0.5, 0.9, 0.97)
    assert compute_metrics(synthetic(t, y), band_pct=2.0).settling_time is None
    assert compute_metrics(synthetic(t, y), band_pct=5.0).settling_time == pytest.approx(0.5)
    with pytest.raises(ValueError):
        compute_metrics(synthetic(t, y), band_pct=0.0)


@pytest.mark.parametrize("flag", [True, False])
def test_diverged_flag_follows_trace(flag):
    t = np.linspace(0, 1, 11)
    m = compute_metrics(synthetic(t, np.ones_like(t), diverged=flag))
    assert m.diverged is flag
    if flag:
        assert m.settling_time is None


def test_real_trace_report():
    trace = run_closed_loop(builtin_scenario("fig3"))
    m = compute_metrics(trace)
    assert not m.diverged
    assert len(m.post_switch_recovery) == 3
    assert m.ise >= 0 and m.iae >= 0
    assert m.peak_u == pytest.approx(np.max(np.abs(trace.u)))
    assert json.loads(json.dumps(m.to_dict()))["ise"] == m.ise


def test_empty_trace_rejected():
    t = np.linspace(0, 1, 11)
    tr = synthetic(t, np.ones_like(t))
    for c in ("t", "y_ref", "y", "u", "eps", "p", "tau", "gain_value"):
        setattr(tr, c, getattr(tr, c)[:0])
    with pytest.raises(ValueError):
        compute_metrics(tr)


@pytest.mark.parametrize("kind", ["classic_pi", "ipi"])
def test_non_min_phase_comparison_baseline(kind):
    baseline = json.loads(BASELINES.read_text())
    s3 = builtin_bank()[2]
    cfg = ScenarioConfig([s3], SwitchingSchedule(), ReferenceTrajectory(),
                         default_controller(kind, 1e-4), 1e-4, 0.05)
    m = compute_metrics(run_closed_loop(cfg))
    assert math.isfinite(m.ise) and not m.diverged
    assert m.ise == pytest.approx(baseline[kind]["ise"], rel=1e-6)
    assert m.iae == pytest.approx(baseline[kind]["iae"], rel=1e-6)
