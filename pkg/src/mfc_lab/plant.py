"""Switching linear plants with output and state delays.

A plant is ``x' = A x + A_tau x(t - tau) + b u``, ``y = c x(t - output_delay)``,
integrated one sample at a time by a fixed-step RK4 with ``u`` held constant
over the sample. Delayed quantities come from :class:`DelayLine` histories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mfc_lab import kernels
from mfc_lab.errors import ConfigError, PlantDiverged, check_keys

# Delays used by the builtin state-delay plants.
TAU1 = 0.005
TAU2 = 0.010
TAU3 = 0.020
TAUS = {"tau1": TAU1, "tau2": TAU2, "tau3": TAU3}

DIVERGENCE_BOUND = 1e9


class DelayLine:
    """Time-stamped history with linearly interpolated delayed reads.

    Samples live in a ring buffer that grows only while the retained span is
    shorter than ``capacity_horizon``; older samples are overwritten once the
    rest of the buffer still covers the horizon.
    """

    def __init__(self, capacity_horizon, pre_history_value, initial_slots=64):
        if capacity_horizon < 0 or not math.isfinite(capacity_horizon):
            raise ConfigError(f"capacity_horizon must be finite and >= 0, got {capacity_horizon}")
        self.capacity_horizon = float(capacity_horizon)
        self.pre_history_value = np.atleast_1d(np.asarray(pre_history_value, dtype=float)).copy()
        nv = self.pre_history_value.shape[0]
        cap = max(int(initial_slots), 2)
        self._times = np.empty(cap)
        self._values = np.empty((cap, nv))
        self._start = 0
        self._count = 0

    @property
    def width(self):
        return self.pre_history_value.shape[0]

    def __len__(self):
        return self._count

    def _phys(self, i):
        return (self._start + i) % self._times.shape[0]

    @property
    def first_time(self):
        return self._times[self._start] if self._count else None

    @property
    def last_time(self):
        return self._times[self._phys(self._count - 1)] if self._count else None

    def latest(self):
        if not self._count:
            return self.pre_history_value.copy()
        return self._values[self._phys(self._count - 1)].copy()

    def samples(self):
        """Retained ``(time, value)`` pairs, oldest first."""
        return [(float(self._times[self._phys(i)]), self._values[self._phys(i)].copy())
                for i in range(self._count)]

    def _grow(self):
        cap = self._times.shape[0]
        order = [(self._start + i) % cap for i in range(self._count)]
        times = np.empty(2 * cap)
        values = np.empty((2 * cap, self.width))
        times[: self._count] = self._times[order]
        values[: self._count] = self._values[order]
        self._times, self._values, self._start = times, values, 0

    def push(self, t, value):
        """Append a sample. A sample at the newest time replaces that sample."""
        value = np.asarray(value, dtype=float).reshape(self.width)
        if self._count:
            last = self.last_time
            if t == last:
                self._values[self._phys(self._count - 1)] = value
                return
            if not t > last:
                raise ValueError(f"sample time {t} not after newest sample {last}")
        cap = self._times.shape[0]
        if self._count == cap:
            second = self._times[self._phys(1)]
            if second <= t - self.capacity_horizon:
                self._start = (self._start + 1) % cap
                self._count -= 1
            else:
                self._grow()
                cap = self._times.shape[0]
        i = self._phys(self._count)
        self._times[i] = t
        self._values[i] = value
        self._count += 1

    def read(self, t, tau=0.0):
        return read_delayed(self, t, tau)

    def read_into(self, tq, out):
        """Interpolated value at absolute time ``tq`` (no delay checks)."""
        kernels.interp_ring(self._times, self._values, self._start, self._count,
                            self._times.shape[0], float(tq), self.pre_history_value, out)
        return out

    def ring(self):
        """Raw ring state ``(times, values, start, count, cap)`` for the kernels."""
        return self._times, self._values, self._start, self._count, self._times.shape[0]


def read_delayed(line, t, tau):
    """Value of ``line`` at ``t - tau`` by linear interpolation.

    Returns the pre-history value before the first sample and holds the
    newest sample past the end.
    """
    if tau < 0:
        raise ConfigError(f"delay must be >= 0, got {tau}")
    if tau > line.capacity_horizon:
        raise ConfigError(f"delay {tau} exceeds history capacity {line.capacity_horizon}")
    out = np.empty(line.width)
    return line.read_into(t - tau, out)


@dataclass
class StateDelay:
    a_tau: np.ndarray
    tau: float

    def __post_init__(self):
        self.a_tau = np.atleast_2d(np.asarray(self.a_tau, dtype=float))
        self.tau = float(self.tau)
        if self.tau < 0 or not math.isfinite(self.tau):
            raise ConfigError(f"state delay tau must be finite and >= 0, got {self.tau}")


_SYSTEM_KEYS = ("a_matrix", "b_vector", "c_vector", "state_delay", "output_delay",
                "label", "kind", "transfer_function", "signature")


@dataclass
class StateSpaceSystem:
    """One linear plant ``(A, b, c)`` with optional state and output delays.

    ``kind`` is one of ``min_phase``, ``non_min_phase``, ``state_delay`` and
    together with ``transfer_function``/``signature`` documents builtin entries.
    """

    a_matrix: np.ndarray
    b_vector: np.ndarray
    c_vector: np.ndarray
    state_delay: StateDelay | None = None
    output_delay: float = 0.0
    label: str = ""
    kind: str = "min_phase"
    transfer_function: str = ""
    signature: str = ""

    def __post_init__(self):
        self.a_matrix = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        self.b_vector = np.atleast_1d(np.asarray(self.b_vector, dtype=float)).ravel()
        self.c_vector = np.atleast_1d(np.asarray(self.c_vector, dtype=float)).ravel()
        n = self.a_matrix.shape[0]
        if self.a_matrix.shape != (n, n):
            raise ConfigError(f"{self.label or 'system'}: a_matrix must be square, got {self.a_matrix.shape}")
        if self.b_vector.shape != (n,) or self.c_vector.shape != (n,):
            raise ConfigError(
                f"{self.label or 'system'}: b_vector and c_vector must have length {n}, "
                f"got {self.b_vector.shape[0]} and {self.c_vector.shape[0]}"
            )
        if isinstance(self.state_delay, dict):
            self.state_delay = StateDelay(**self.state_delay)
        if self.state_delay is not None and self.state_delay.a_tau.shape != (n, n):
            raise ConfigError(f"{self.label or 'system'}: a_tau must be {n}x{n}")
        self.output_delay = float(self.output_delay)
        if self.output_delay < 0 or not math.isfinite(self.output_delay):
            raise ConfigError(f"{self.label or 'system'}: output_delay must be finite and >= 0")
        for name in ("a_matrix", "b_vector", "c_vector"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigError(f"{self.label or 'system'}: {name} has non-finite entries")

    @property
    def order(self):
        return self.a_matrix.shape[0]

    @property
    def empty_a_tau(self):
        return np.zeros((0, 0))

    def is_hurwitz(self):
        return bool(np.all(np.linalg.eigvals(self.a_matrix).real < 0))

    def dc_gain(self):
        """Steady-state gain ``-c (A + A_tau)^-1 b``."""
        a = self.a_matrix if self.state_delay is None else self.a_matrix + self.state_delay.a_tau
        return float(-self.c_vector @ np.linalg.solve(a, self.b_vector))

    def dominant_time_constant(self):
        """Slowest time constant; for delay plants the slower of the tau=0 and tau=inf limits."""
        mats = [self.a_matrix]
        if self.state_delay is not None:
            mats.append(self.a_matrix + self.state_delay.a_tau)
        rates = [-np.linalg.eigvals(m).real.max() for m in mats]
        return 1.0 / min(rates)

    @classmethod
    def from_dict(cls, d, where="system"):
        check_keys(d, _SYSTEM_KEYS, where, required=("a_matrix", "b_vector", "c_vector"))
        d = dict(d)
        sd = d.pop("state_delay", None)
        if sd is not None:
            check_keys(sd, ("a_tau", "tau"), f"{where}.state_delay", required=("a_tau", "tau"))
            sd = StateDelay(sd["a_tau"], sd["tau"])
        try:
            return cls(state_delay=sd, **d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{where}: {exc}") from None

    def to_dict(self):
        d = {
            "label": self.label,
            "kind": self.kind,
            "a_matrix": self.a_matrix.tolist(),
            "b_vector": self.b_vector.tolist(),
            "c_vector": self.c_vector.tolist(),
            "output_delay": self.output_delay,
        }
        if self.state_delay is not None:
            d["state_delay"] = {"a_tau": self.state_delay.a_tau.tolist(), "tau": self.state_delay.tau}
        if self.transfer_function:
            d["transfer_function"] = self.transfer_function
        if self.signature:
            d["signature"] = self.signature
        return d


@dataclass
class PlantRuntime:
    """Mutable simulation state: active plant, state vector and histories."""

    bank: list
    active_index: int
    state: np.ndarray
    state_history: DelayLine
    output_history: DelayLine
    time: float = 0.0
    output_delay: float = 0.0
    state_tau: float | None = None
    capacity_horizon: float = 0.0
    divergence_bound: float = DIVERGENCE_BOUND
    _scratch: np.ndarray = field(default=None, repr=False)

    @classmethod
    def start(cls, bank, index=0, x0=None, *, t0=0.0, capacity_horizon=None,
              output_delay=None, state_tau=None, divergence_bound=DIVERGENCE_BOUND):
        """Runtime at ``t0`` with constant pre-history ``x(t) = x0`` for ``t < t0``."""
        if not 0 <= index < len(bank):
            raise ConfigError(f"plant index {index} out of range for bank of {len(bank)}")
        system = bank[index]
        x0 = np.zeros(system.order) if x0 is None else np.asarray(x0, dtype=float).copy()
        if x0.shape != (system.order,):
            raise ConfigError(f"x0 must have length {system.order}")
        out_delay = system.output_delay if output_delay is None else float(output_delay)
        if state_tau is None and system.state_delay is not None:
            state_tau = system.state_delay.tau
        if capacity_horizon is None:
            capacity_horizon = max_bank_delay(bank, out_delay, state_tau or 0.0)
        y0 = np.array([system.c_vector @ x0])
        rt = cls(
            bank=list(bank),
            active_index=index,
            state=x0,
            state_history=DelayLine(capacity_horizon, x0),
            output_history=DelayLine(capacity_horizon, y0),
            time=float(t0),
            output_delay=out_delay,
            state_tau=state_tau,
            capacity_horizon=float(capacity_horizon),
            divergence_bound=divergence_bound,
        )
        rt.state_history.push(rt.time, x0)
        rt.output_history.push(rt.time, y0)
        rt._check_delays()
        return rt

    @property
    def system(self):
        return self.bank[self.active_index]

    def _check_delays(self):
        for name, tau in (("output delay", self.output_delay), ("state delay", self.state_tau or 0.0)):
            if tau < 0:
                raise ConfigError(f"{name} must be >= 0, got {tau}")
            if tau > self.capacity_horizon:
                raise ConfigError(f"{name} {tau} exceeds history capacity {self.capacity_horizon}")

    def set_delays(self, output_delay=None, state_tau=None):
        if output_delay is not None:
            self.output_delay = float(output_delay)
        if state_tau is not None:
            self.state_tau = float(state_tau)
        self._check_delays()

    def measure(self):
        """Measured output ``y(t) = c x(t - output_delay)`` at the current time."""
        return float(read_delayed(self.output_history, self.time, self.output_delay)[0])

    def effective_tau(self):
        """Delay reported in traces: state delay for delay plants, else output delay."""
        if self.system.state_delay is not None:
            return float(self.state_tau)
        return self.output_delay


def max_bank_delay(bank, *extra):
    taus = [s.output_delay for s in bank]
    taus += [s.state_delay.tau for s in bank if s.state_delay is not None]
    taus += [float(e) for e in extra if e is not None]
    return max(taus, default=0.0)


def zoh_step(system, runtime, u, ts):
    """Advance ``runtime`` by one sample of length ``ts`` with ``u`` held.

    Returns ``(next_state, y)`` where ``y`` is the measured output at the new
    time. Raises :class:`PlantDiverged` when the state stops being finite or
    leaves ``runtime.divergence_bound``.
    """
    if not ts > 0:
        raise ConfigError(f"ts must be > 0, got {ts}")
    x = runtime.state
    if x.shape != (system.order,):
        raise ConfigError(f"state has length {x.shape[0]}, system {system.label!r} needs {system.order}")
    if runtime._scratch is None or runtime._scratch.shape != x.shape:
        runtime._scratch = np.empty_like(x)
    out = runtime._scratch
    if system.state_delay is not None:
        tau = system.state_delay.tau if runtime.state_tau is None else runtime.state_tau
        if tau > runtime.capacity_horizon:
            raise ConfigError(f"state delay {tau} exceeds history capacity {runtime.capacity_horizon}")
        a_tau = system.state_delay.a_tau
    else:
        tau = 0.0
        a_tau = system.empty_a_tau
    times, values, start, count, cap = runtime.state_history.ring()
    kernels.rk4_step(system.a_matrix, system.b_vector, a_tau, x, float(u), float(ts),
                     float(runtime.time), float(tau), times, values, start, count, cap,
                     runtime.state_history.pre_history_value, out)
    t_new = runtime.time + ts
    if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > runtime.divergence_bound:
        raise PlantDiverged(t_new)
    x_next = out.copy()
    runtime.state = x_next
    runtime.time = t_new
    runtime.state_history.push(t_new, x_next)
    runtime.output_history.push(t_new, np.array([system.c_vector @ x_next]))
    return x_next, runtime.measure()


def switch_active(runtime, bank, p):
    """Make bank entry ``p`` the active plant.

    The state carries over when the order matches; otherwise it restarts at
    zero together with the state history. The output history is kept and its
    newest sample re-evaluated with the new output map.
    """
    if not (isinstance(p, (int, np.integer)) and 0 <= p < len(bank)):
        raise ConfigError(f"plant index {p!r} out of range for bank of {len(bank)}")
    if p == runtime.active_index:
        return runtime
    new = bank[p]
    runtime.bank = list(bank)
    if new.order != runtime.state.shape[0]:
        runtime.state = np.zeros(new.order)
        runtime.state_history = DelayLine(runtime.capacity_horizon, runtime.state)
        runtime.state_history.push(runtime.time, runtime.state)
        runtime._scratch = None
    runtime.active_index = int(p)
    runtime.state_tau = new.state_delay.tau if new.state_delay is not None else None
    runtime.output_history.push(runtime.time, np.array([new.c_vector @ runtime.state]))
    return runtime


def _first_order(label, pole, gain=1.0, **kw):
    return StateSpaceSystem(
        [[-pole]], [pole], [gain], label=label, kind="min_phase",
        transfer_function=f"{gain * pole:g}/(s+{pole:g})", **kw,
    )


def _two_lags(label, a, b, gain=1.0):
    return StateSpaceSystem(
        [[-a, 0.0], [b, -b]], [a, 0.0], [0.0, gain], label=label, kind="min_phase",
        transfer_function=f"{gain * a * b:g}/((s+{a:g})(s+{b:g}))",
        signature="overdamped rise, no overshoot",
    )


def _resonant(label, wn, zeta, gain=1.0):
    return StateSpaceSystem(
        [[0.0, wn], [-wn, -2.0 * zeta * wn]], [0.0, wn], [gain, 0.0], label=label, kind="min_phase",
        transfer_function=f"{gain * wn * wn:g}/(s^2+{2 * zeta * wn:g}s+{wn * wn:g})",
        signature=f"underdamped rise, zeta={zeta:g}",
    )


def _rhp_zero(label, a, b, z, gain=1.0):
    # lag a/(s+a) in series with b(1 - s/z)/(s+b); y = x2 - x2'/z
    return StateSpaceSystem(
        [[-a, 0.0], [b, -b]], [a, 0.0], [-gain * b / z, gain * (1.0 + b / z)],
        label=label, kind="non_min_phase",
        transfer_function=f"{gain * a * b:g}(1-s/{z:g})/((s+{a:g})(s+{b:g}))",
        signature="initial undershoot below zero, then rise to DC gain",
    )


def builtin_bank(td_tau=TAU1):
    """Surrogate plant bank.

    Indices 0-7 are S1..S8 (S1-S5 fast, millisecond scale; S6-S8 slow, tens of
    milliseconds). Indices 8 and 9 are the state-delay plants TD1 and TD2 with
    delay ``td_tau`` (one of :data:`TAUS`).
    """
    s1 = _first_order("S1", 2000.0)
    s1.signature = "first-order rise, time constant 0.5 ms"
    bank = [
        s1,
        _two_lags("S2", 1500.0, 4000.0),
        _rhp_zero("S3", 1500.0, 5000.0, 6000.0),
        _rhp_zero("S4", 2000.0, 6000.0, 5000.0, gain=1.2),
        _resonant("S5", 3000.0, 0.5, gain=0.8),
        _first_order("S6", 50.0),
        _rhp_zero("S7", 40.0, 120.0, 150.0, gain=0.8),
        _resonant("S8", 60.0, 0.7, gain=1.2),
    ]
    bank[5].signature = "first-order rise, time constant 20 ms"
    bank.append(StateSpaceSystem(
        [[-20.0]], [30.0], [1.0], state_delay=StateDelay([[-10.0]], td_tau),
        label="TD1", kind="state_delay",
        transfer_function="30/(s+20+10e^(-s tau))",
        signature="delayed-feedback first-order rise, DC gain 1, stable for every tau",
    ))
    bank.append(StateSpaceSystem(
        [[-30.0, 0.0], [25.0, -25.0]], [45.0, 0.0], [0.0, 1.5],
        state_delay=StateDelay([[-15.0, 0.0], [0.0, 0.0]], td_tau),
        label="TD2", kind="state_delay",
        transfer_function="1.5*25*45/((s+30+15e^(-s tau))(s+25))",
        signature="delayed-feedback second-order rise, DC gain 1.5, stable for every tau",
    ))
    return bank


def bank_index(bank, label):
    for i, s in enumerate(bank):
        if s.label == label:
            return i
    raise ConfigError(f"no bank entry labelled {label!r}")
