"""Closed-loop experiments: references, switching schedules and the sample loop."""

from __future__ import annotations

import hashlib
import json
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from mfc_lab.controller import canonical_kind, controller_from_dict
from mfc_lab.errors import ConfigError, ControllerFault, PlantDiverged, check_keys
from mfc_lab.plant import (
    TAU1, TAU2, TAU3, PlantRuntime, StateSpaceSystem, builtin_bank, max_bank_delay,
    switch_active, zoh_step,
)

MAX_SAMPLES = 10**8
REFERENCE_KINDS = ("step", "ramp", "exponential_approach", "piecewise")


@dataclass
class ReferenceTrajectory:
    """Output reference ``y*(t)``.

    ``segments`` (piecewise only) are ``(t_start, t_end, v_start, v_end)``
    linear pieces that must be contiguous; the end values are held outside.
    """

    kind: str = "step"
    amplitude: float = 1.0
    onset: float = 0.0
    slope: float = 0.0
    time_constant: float | None = None
    segments: tuple = ()

    def __post_init__(self):
        if self.kind not in REFERENCE_KINDS:
            raise ConfigError(f"reference.kind must be one of {REFERENCE_KINDS}, got {self.kind!r}")
        if self.kind == "exponential_approach" and not (self.time_constant and self.time_constant > 0):
            raise ConfigError("reference.time_constant must be > 0 for exponential_approach")
        if self.kind == "piecewise":
            self.segments = tuple(tuple(float(v) for v in seg) for seg in self.segments)
            if not self.segments or any(len(s) != 4 for s in self.segments):
                raise ConfigError("reference.segments must be a non-empty list of [t0, t1, v0, v1]")
            for a, b in zip(self.segments, self.segments[1:]):
                if a[1] != b[0]:
                    raise ConfigError("reference.segments must be contiguous")
            if any(s[1] <= s[0] for s in self.segments):
                raise ConfigError("reference.segments must have t1 > t0")
        for name in ("amplitude", "onset", "slope"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"reference.{name} must be finite")

    @classmethod
    def from_dict(cls, d):
        check_keys(d, ("kind", "amplitude", "onset", "slope", "time_constant", "segments"), "reference")
        d = dict(d)
        for name in ("amplitude", "onset", "slope", "time_constant"):
            if name in d and d[name] is not None:
                d[name] = _number(d[name], f"reference.{name}")
        return cls(**d)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "piecewise":
            d["segments"] = [list(s) for s in self.segments]
            return d
        d["onset"] = self.onset
        if self.kind == "ramp":
            d["slope"] = self.slope
        else:
            d["amplitude"] = self.amplitude
        if self.kind == "exponential_approach":
            d["time_constant"] = self.time_constant
        return d


def reference_eval(traj, t):
    if traj.kind == "piecewise":
        segs = traj.segments
        if t <= segs[0][0]:
            return segs[0][2]
        for t0, t1, v0, v1 in segs:
            if t <= t1:
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        return segs[-1][3]
    if t < traj.onset:
        return 0.0
    if traj.kind == "step":
        return traj.amplitude
    if traj.kind == "ramp":
        return traj.slope * (t - traj.onset)
    return traj.amplitude * (1.0 - math.exp(-(t - traj.onset) / traj.time_constant))


@dataclass(frozen=True)
class SwitchEvent:
    """At ``time``: activate ``plant_index`` and/or change delays (None = keep)."""

    time: float
    plant_index: int | None = None
    output_delay: float | None = None
    state_delay: float | None = None

    def to_dict(self):
        d = {"time": self.time}
        for k in ("plant_index", "output_delay", "state_delay"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        return d


@dataclass
class SwitchingSchedule:
    events: tuple = ()
    initial_index: int = 0
    initial_output_delay: float | None = None
    initial_state_delay: float | None = None

    def __post_init__(self):
        self.events = tuple(e if isinstance(e, SwitchEvent) else SwitchEvent(**e) for e in self.events)
        times = [e.time for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("schedule.events: times must be strictly increasing")
        for e in self.events:
            if not (math.isfinite(e.time) and e.time >= 0):
                raise ConfigError(f"schedule.events: time must be finite and >= 0, got {e.time}")
            for name in ("output_delay", "state_delay"):
                v = getattr(e, name)
                if v is not None and not v >= 0:
                    raise ConfigError(f"schedule.events.{name} must be >= 0, got {v}")

    @classmethod
    def from_dict(cls, d):
        check_keys(d, ("events", "initial_index", "initial_output_delay", "initial_state_delay"), "schedule")
        events = []
        for i, e in enumerate(d.get("events", [])):
            where = f"schedule.events[{i}]"
            check_keys(e, ("time", "plant_index", "output_delay", "state_delay"), where, required=("time",))
            events.append(SwitchEvent(
                time=_number(e["time"], f"{where}.time"),
                plant_index=_index(e.get("plant_index"), f"{where}.plant_index"),
                output_delay=_number(e.get("output_delay"), f"{where}.output_delay"),
                state_delay=_number(e.get("state_delay"), f"{where}.state_delay"),
            ))
        return cls(
            events=tuple(events),
            initial_index=_index(d.get("initial_index", 0), "schedule.initial_index"),
            initial_output_delay=_number(d.get("initial_output_delay"), "schedule.initial_output_delay"),
            initial_state_delay=_number(d.get("initial_state_delay"), "schedule.initial_state_delay"),
        )

    def validate(self, bank):
        for p in [self.initial_index] + [e.plant_index for e in self.events if e.plant_index is not None]:
            if not (isinstance(p, int) and 0 <= p < len(bank)):
                raise ConfigError(f"schedule: plant index {p!r} out of range for bank of {len(bank)}")

    def switch_times(self):
        return [e.time for e in self.events]

    def to_dict(self):
        d = {"initial_index": self.initial_index, "events": [e.to_dict() for e in self.events]}
        if self.initial_output_delay is not None:
            d["initial_output_delay"] = self.initial_output_delay
        if self.initial_state_delay is not None:
            d["initial_state_delay"] = self.initial_state_delay
        return d


@dataclass(frozen=True)
class ActiveMode:
    """Plant index and delays in force; ``None`` delays mean the plant's own value."""

    plant_index: int
    output_delay: float | None
    state_delay: float | None
    events_passed: int


def apply_schedule(schedule, t):
    """Mode in force at ``t``: the latest event with ``time <= t`` wins.

    Output delay persists across plant switches; state delay reverts to the new
    plant's own value unless the event sets it.
    """
    p = schedule.initial_index
    out_delay = schedule.initial_output_delay
    state_delay = schedule.initial_state_delay
    passed = 0
    for e in schedule.events:
        if e.time > t:
            break
        passed += 1
        if e.plant_index is not None and e.plant_index != p:
            p = e.plant_index
            state_delay = None
        if e.output_delay is not None:
            out_delay = e.output_delay
        if e.state_delay is not None:
            state_delay = e.state_delay
    return ActiveMode(p, out_delay, state_delay, passed)


_CONFIG_KEYS = ("name", "description", "bank", "schedule", "reference", "controller",
                "ts", "horizon", "actuator_limit")


def _number(v, where):
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _index(v, where):
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    return v


@dataclass
class ScenarioConfig:
    bank: list
    schedule: SwitchingSchedule
    reference: ReferenceTrajectory
    controller: dict
    ts: float
    horizon: float
    actuator_limit: float | None = None
    name: str = "custom"
    description: str = ""

    def __post_init__(self):
        if not (isinstance(self.ts, (int, float)) and math.isfinite(self.ts) and self.ts > 0):
            raise ConfigError(f"ts must be > 0, got {self.ts!r}")
        if not (isinstance(self.horizon, (int, float)) and math.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigError(f"horizon must be > 0, got {self.horizon!r}")
        if self.horizon / self.ts > MAX_SAMPLES:
            raise ConfigError(f"horizon/ts must be <= {MAX_SAMPLES:.0e}")
        if self.actuator_limit is not None and not self.actuator_limit > 0:
            raise ConfigError(f"actuator_limit must be > 0, got {self.actuator_limit}")
        if not self.bank:
            raise ConfigError("bank must contain at least one plant")
        self.schedule.validate(self.bank)
        self.controller = dict(self.controller)
        self.controller["kind"] = canonical_kind(self.controller.get("kind", ""))
        controller_from_dict(self.controller)  # validates

    @property
    def n_samples(self):
        return int(math.floor(self.horizon / self.ts + 1e-9)) + 1

    def max_delay(self):
        extra = [self.schedule.initial_output_delay, self.schedule.initial_state_delay]
        for e in self.schedule.events:
            extra += [e.output_delay, e.state_delay]
        return max_bank_delay(self.bank, *extra)

    def to_dict(self):
        d = {
            "name": self.name,
            "bank": [s.to_dict() for s in self.bank],
            "schedule": self.schedule.to_dict(),
            "reference": self.reference.to_dict(),
            "controller": controller_from_dict(self.controller).to_dict(),
            "ts": self.ts,
            "horizon": self.horizon,
            "actuator_limit": self.actuator_limit,
        }
        if self.description:
            d["description"] = self.description
        return d

    @classmethod
    def from_dict(cls, d):
        """Strict inverse of :meth:`to_dict`.

        ``bank`` may be omitted (builtin bank) and ``controller`` may be a bare
        kind name, which selects the tuned defaults for the sample time.
        """
        check_keys(d, _CONFIG_KEYS, "config", required=("ts", "horizon"))
        ts = _number(d["ts"], "ts")
        bank = d.get("bank")
        if bank is None:
            bank = builtin_bank()
        elif isinstance(bank, list):
            bank = [StateSpaceSystem.from_dict(s, f"bank[{i}]") for i, s in enumerate(bank)]
        else:
            raise ConfigError("bank: expected a list of systems")
        ctrl = d.get("controller", "istar_pi")
        if isinstance(ctrl, str):
            ctrl = default_controller(ctrl, ts)
        limit = d.get("actuator_limit")
        return cls(
            bank=bank,
            schedule=SwitchingSchedule.from_dict(d.get("schedule", {})),
            reference=ReferenceTrajectory.from_dict(d.get("reference", {})),
            controller=ctrl,
            ts=ts,
            horizon=_number(d["horizon"], "horizon"),
            actuator_limit=None if limit is None else _number(limit, "actuator_limit"),
            name=str(d.get("name", "custom")),
            description=str(d.get("description", "")),
        )

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


COLUMNS = ("t", "y_ref", "y", "u", "eps", "p", "tau", "gain_value")


@dataclass
class SimTrace:
    """Per-sample record of a run. Columns are numpy arrays named by :data:`COLUMNS`."""

    t: np.ndarray
    y_ref: np.ndarray
    y: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    p: np.ndarray
    tau: np.ndarray
    gain_value: np.ndarray
    config: ScenarioConfig
    diverged: bool = False
    diverged_at: float | None = None
    divergence_reason: str = ""
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def column(self, name):
        return getattr(self, name)

    def rows(self):
        for i in range(len(self)):
            yield tuple(getattr(self, c)[i] for c in COLUMNS)


def run_closed_loop(config):
    """Simulate the configured loop sample by sample.

    Per sample: apply due schedule events, measure ``y_k``, evaluate ``y*_k``,
    compute and clamp ``u_k``, record, then hold ``u_k`` over one RK4 step.
    Divergence truncates the trace and marks it instead of raising.
    """
    wall0 = _time.perf_counter()
    ts = config.ts
    n = config.n_samples
    sched = config.schedule
    controller = controller_from_dict(config.controller)
    runtime = PlantRuntime.start(
        config.bank, sched.initial_index,
        capacity_horizon=config.max_delay() + ts,
        output_delay=sched.initial_output_delay,
        state_tau=sched.initial_state_delay,
    )
    # closed-left: an event fires at the first sample with t >= event time
    fire_at = [int(math.ceil(e.time / ts - 1e-9)) for e in sched.events]
    cols = {c: np.empty(n) for c in COLUMNS}
    lim = config.actuator_limit
    ev = 0
    count = 0
    diverged, diverged_at, reason = False, None, ""
    for k in range(n):
        t = k * ts
        while ev < len(fire_at) and fire_at[ev] <= k:
            e = sched.events[ev]
            if e.plant_index is not None:
                switch_active(runtime, config.bank, e.plant_index)
            runtime.set_delays(e.output_delay, e.state_delay)
            ev += 1
        y = runtime.measure()
        yref = reference_eval(config.reference, t)
        eps = yref - y
        try:
            u = controller.step(y, yref, t, ts)
        except ControllerFault as exc:
            diverged, diverged_at, reason = True, t, str(exc)
            break
        if lim is not None:
            u = min(max(u, -lim), lim)
        for c, v in zip(COLUMNS, (t, yref, y, u, eps, runtime.active_index,
                                  runtime.effective_tau(), controller.gain_value)):
            cols[c][k] = v
        count = k + 1
        if k + 1 < n:
            try:
                zoh_step(runtime.system, runtime, u, ts)
            except PlantDiverged as exc:
                diverged, diverged_at, reason = True, exc.time, str(exc)
                break
    cols = {c: v[:count].copy() for c, v in cols.items()}
    cols["p"] = cols["p"].astype(int)
    return SimTrace(
        **cols, config=config, diverged=diverged, diverged_at=diverged_at, divergence_reason=reason,
        metadata={
            "name": config.name,
            "controller": config.controller["kind"],
            "config_digest": config.digest(),
            "wall_time": _time.perf_counter() - wall0,
        },
    )


# --- builtin scenarios -------------------------------------------------------

S1, S2, S3, S4, S5, S6, S7, S8, TD1, TD2 = range(10)

FAST_TS = 1e-4
SLOW_TS = 1e-3

# Per-time-scale controller defaults, tuned on the surrogate bank.
TUNINGS = {
    "fast": {
        "classic_pi": {"kind": "classic_pi", "kp": 0.6, "ki": 1500.0},
        "ipi": {"kind": "ipi", "alpha": 5000.0, "order_n": 1, "kp": 0.3, "ki": 0.0},
        "istar_pi": {"kind": "istar_pi", "gain": {"mode": "integrator", "k_i": 40.0},
                     "lambda": {"kind": "constant", "value": -0.1},
                     "delta1": 1.0, "delta2": 1.0, "composition": "multiplicative"},
    },
    "slow": {
        "classic_pi": {"kind": "classic_pi", "kp": 0.2, "ki": 22.0},
        "ipi": {"kind": "ipi", "alpha": 1500.0, "order_n": 1, "kp": 0.04, "ki": 0.0},
        # delta1 > delta2 lets the gain settle below one, adding a proportional path
        "istar_pi": {"kind": "istar_pi", "gain": {"mode": "integrator", "k_i": 2.0},
                     "lambda": {"kind": "constant", "value": -0.1},
                     "delta1": 2.5, "delta2": 1.0, "composition": "multiplicative"},
    },
}

SCALE_SPLIT_TS = 5e-4


def time_scale(ts):
    """``"fast"`` or ``"slow"`` tuning set for a sample time."""
    return "fast" if ts < SCALE_SPLIT_TS else "slow"


def default_controller(kind, ts):
    """Copy of the tuned controller config for ``kind`` at sample time ``ts``."""
    return json.loads(json.dumps(TUNINGS[time_scale(ts)][canonical_kind(kind)]))


_SPECS = {
    "fig1": dict(scale="fast", initial=S2, events=[(0.01, S4), (0.05, S1)], horizon=0.1,
                 description="S2 -> S4 -> S1, t_p1 = 0.01 s, t_p2 = 0.05 s"),
    "fig2": dict(scale="fast", initial=S2, events=[(0.025, S3), (0.072, S5)], horizon=0.12,
                 description="S2 -> S3 -> S5, t_p1 = 0.025 s, t_p2 = 0.072 s"),
    "fig3": dict(scale="fast", initial=S1, events=[(0.018, S2), (0.035, S4), (0.072, S5)], horizon=0.12,
                 description="S1 -> S2 -> S4 -> S5, t_p1 = 0.018 s, t_p2 = 0.035 s, t_p3 = 0.072 s"),
    "fig4": dict(scale="slow", initial=S6, events=[(0.35, S8), (0.58, S7)], horizon=1.0,
                 description="S6 -> S8 -> S7, t_p1 = 0.35 s, t_p2 = 0.58 s"),
    "fig1td": dict(scale="fast", initial=S2, events=[(0.015, S4), (0.055, S1), (0.06, None, 0.0005)],
                   horizon=0.1, initial_output_delay=0.0002,
                   description="S2 -> S4 -> S1, t_p1 = 0.015 s, t_p2 = 0.055 s, output delay change at 0.06 s"),
    "fig2td": dict(scale="fast", initial=S2, events=[(0.025, S4), (0.06, None, 0.0005), (0.072, S1)],
                   horizon=0.12, initial_output_delay=0.0002,
                   description="S2 -> S4 -> S1, t_p1 = 0.025 s, t_p2 = 0.072 s, output delay change at 0.06 s"),
    "fig5td": dict(scale="slow", initial=TD1, events=[], horizon=1.0, initial_state_delay=TAU1,
                   reference={"kind": "exponential_approach", "amplitude": 1.0, "time_constant": 0.1},
                   description="exponential tracking of TD1(tau1)"),
    "fig6td": dict(scale="slow", initial=TD2, initial_state_delay=TAU3,
                   events=[(0.2, TD1, None, TAU1), (0.6, TD1, None, TAU2), (0.8, TD1, None, TAU3)],
                   horizon=1.2,
                   description="TD2(tau3) -> TD1(tau1) -> TD1(tau2) -> TD1(tau3), "
                               "t_p1 = 0.2 s, t_p2 = 0.6 s, t_p3 = 0.8 s"),
}
SCENARIO_NAMES = tuple(_SPECS)


def _event(spec):
    time, p = spec[0], spec[1]
    out_delay = spec[2] if len(spec) > 2 else None
    state_delay = spec[3] if len(spec) > 3 else None
    return SwitchEvent(time, p, out_delay, state_delay)


def builtin_scenario(name, controller="istar_pi", bank=None):
    """One named builtin scenario.

    ``controller`` is either a kind name, which picks the tuned defaults for
    the scenario's time scale, or a full controller config dict.
    """
    if name not in _SPECS:
        raise ConfigError(f"scenario: unknown name {name!r}; expected one of {list(SCENARIO_NAMES)}")
    spec = _SPECS[name]
    if isinstance(controller, str):
        controller = TUNINGS[spec["scale"]][canonical_kind(controller)]
    return ScenarioConfig(
        bank=bank if bank is not None else builtin_bank(),
        schedule=SwitchingSchedule(
            events=tuple(_event(e) for e in spec["events"]),
            initial_index=spec["initial"],
            initial_output_delay=spec.get("initial_output_delay"),
            initial_state_delay=spec.get("initial_state_delay"),
        ),
        reference=ReferenceTrajectory(**spec.get("reference", {"kind": "step", "amplitude": 1.0})),
        controller=json.loads(json.dumps(controller)),
        ts=FAST_TS if spec["scale"] == "fast" else SLOW_TS,
        horizon=spec["horizon"],
        name=name,
        description=spec["description"],
    )


def builtin_scenarios(controller="istar_pi"):
    """All builtin scenarios keyed by name."""
    return {name: builtin_scenario(name, controller) for name in SCENARIO_NAMES}
