"""Discrete model-free controllers and the classic PI baseline.

Three laws share one sampled interface (:meth:`step`):

* classic PI, ``u = Kp e + Ki int(e)``;
* i-PI on the ultra-local model ``y^(n) = F + alpha u``::

      u_k = u_{k-1} - (y^(n)|_{k-1} - y*^(n)|_k) / alpha + C(e)|_k

* i*-PI, which drops the derivatives and scales a recursion on ``u``::

      u_k = G(e) * (u_{k-1} - Lambda(t) (delta1 y* - delta2 y))

  with ``G`` a pure gain or ``K_i int(e)``.

Every integral uses the rectangular rule (accumulate, then use) unless
``integration="trapezoidal"`` is chosen.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from mfc_lab.errors import ConfigError, ControllerFault, check_keys

INTEGRATION_RULES = ("rectangular", "trapezoidal")


def _check_rule(rule):
    if rule not in INTEGRATION_RULES:
        raise ConfigError(f"integration must be one of {INTEGRATION_RULES}, got {rule!r}")


@dataclass
class UltraLocalConfig:
    alpha: float
    order_n: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha != 0):
            raise ConfigError(f"alpha must be finite and non-zero, got {self.alpha}")
        if self.order_n not in (1, 2):
            raise ConfigError(f"order_n must be 1 or 2, got {self.order_n}")


@dataclass
class PiGains:
    kp: float
    ki: float
    integral_state: float = 0.0
    windup_limit: float | None = None
    integration: str = "rectangular"
    _prev_eps: float | None = field(default=None, repr=False)

    def __post_init__(self):
        _check_rule(self.integration)
        if self.windup_limit is not None and not self.windup_limit > 0:
            raise ConfigError(f"windup_limit must be > 0, got {self.windup_limit}")

    def reset(self):
        self.integral_state = 0.0
        self._prev_eps = None


def _integrate(value, prev, x, ts, rule):
    if rule == "rectangular":
        return value + x * ts
    if prev is None:
        return value
    return value + 0.5 * (x + prev) * ts


def classic_pi_update(gains, eps_k, ts):
    """``Kp e_k + Ki int(e)``; updates the integral and applies the windup clamp."""
    if not ts > 0:
        raise ConfigError(f"ts must be > 0, got {ts}")
    gains.integral_state = _integrate(gains.integral_state, gains._prev_eps, eps_k, ts, gains.integration)
    gains._prev_eps = eps_k
    if gains.windup_limit is not None:
        lim = gains.windup_limit
        gains.integral_state = min(max(gains.integral_state, -lim), lim)
    return gains.kp * eps_k + gains.ki * gains.integral_state


def estimate_derivative(window, order_n, ts):
    """Backward difference of order ``order_n`` over the newest samples.

    Returns 0.0 while fewer than ``order_n + 1`` samples are available.
    """
    if order_n not in (1, 2):
        raise ConfigError(f"order_n must be 1 or 2, got {order_n}")
    if len(window) < order_n + 1:
        return 0.0
    if order_n == 1:
        return (window[-1] - window[-2]) / ts
    return (window[-1] - 2.0 * window[-2] + window[-3]) / (ts * ts)


def estimate_F(y_deriv_n, alpha, u):
    """Ultra-local model residual ``F = y^(n) - alpha u``."""
    if alpha == 0:
        raise ConfigError("alpha must be non-zero")
    return y_deriv_n - alpha * u


@dataclass
class IPiState:
    ultra: UltraLocalConfig
    corrector: PiGains
    u_prev: float = 0.0
    deriv_filter: float | None = None
    deriv_window: deque = field(default_factory=deque)
    ref_window: deque = field(default_factory=deque)
    _y_deriv: float = field(default=0.0, repr=False)
    _ref_deriv: float = field(default=0.0, repr=False)

    def __post_init__(self):
        n = self.ultra.order_n + 1
        self.deriv_window = deque(self.deriv_window, maxlen=n)
        self.ref_window = deque(self.ref_window, maxlen=n)
        if self.deriv_filter is not None and not self.deriv_filter > 0:
            raise ConfigError(f"deriv_filter time constant must be > 0, got {self.deriv_filter}")

    @property
    def warming_up(self):
        return len(self.deriv_window) < self.ultra.order_n + 1


def ipi_update(state, y_deriv_prev, yref_deriv_k, eps_k, ts):
    """One i-PI sample; returns ``u_k`` and stores it as ``u_prev``."""
    for name, v in (("y_deriv_prev", y_deriv_prev), ("yref_deriv_k", yref_deriv_k), ("eps_k", eps_k)):
        if not math.isfinite(v):
            raise ControllerFault(float("nan"), f"i-PI input {name} is non-finite")
    correction = classic_pi_update(state.corrector, eps_k, ts)
    u = state.u_prev - (y_deriv_prev - yref_deriv_k) / state.ultra.alpha + correction
    if not math.isfinite(u):
        raise ControllerFault(float("nan"), "i-PI output is non-finite")
    state.u_prev = u
    return u


@dataclass
class GainFunction:
    mode: str = "integrator"
    k_gain: float = 1.0
    k_i: float = 1.0
    accumulator: float = 0.0
    integration: str = "rectangular"
    _prev_eps: float | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("pure_gain", "integrator"):
            raise ConfigError(f"gain mode must be 'pure_gain' or 'integrator', got {self.mode!r}")
        _check_rule(self.integration)

    def reset(self):
        self.accumulator = 0.0
        self._prev_eps = None


def gain_eval(gain, eps_k, ts):
    """Gain function value: ``k_gain``, or ``k_i`` times the running error integral."""
    if not ts > 0:
        raise ConfigError(f"ts must be > 0, got {ts}")
    if gain.mode == "pure_gain":
        return gain.k_gain
    gain.accumulator = _integrate(gain.accumulator, gain._prev_eps, eps_k, ts, gain.integration)
    gain._prev_eps = eps_k
    return gain.k_i * gain.accumulator


@dataclass
class LambdaProfile:
    """Time-varying weight: ``constant``, ``exp_decay`` or ``piecewise_constant``.

    ``breakpoints`` is a sequence of ``(t_i, value_i)``; the value of the
    last breakpoint with ``t_i <= t`` applies, the first value before that.
    """

    kind: str = "constant"
    value: float = 0.0
    time_constant: float | None = None
    breakpoints: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "exp_decay", "piecewise_constant"):
            raise ConfigError(f"lambda kind {self.kind!r} not supported")
        if not math.isfinite(self.value):
            raise ConfigError("lambda value must be finite")
        if self.kind == "exp_decay" and not (self.time_constant and self.time_constant > 0):
            raise ConfigError("exp_decay lambda needs time_constant > 0")
        if self.kind == "piecewise_constant":
            self.breakpoints = tuple((float(t), float(v)) for t, v in self.breakpoints)
            if not self.breakpoints:
                raise ConfigError("piecewise_constant lambda needs at least one breakpoint")
            times = [t for t, _ in self.breakpoints]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigError("lambda breakpoints must be strictly increasing")
            if not all(math.isfinite(v) for _, v in self.breakpoints):
                raise ConfigError("lambda breakpoint values must be finite")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "piecewise_constant":
            d["breakpoints"] = [list(bp) for bp in self.breakpoints]
        else:
            d["value"] = self.value
        if self.kind == "exp_decay":
            d["time_constant"] = self.time_constant
        return d


def lambda_eval(profile, t):
    if profile.kind == "constant":
        return profile.value
    if profile.kind == "exp_decay":
        return profile.value * math.exp(-t / profile.time_constant)
    value = profile.breakpoints[0][1]
    for t_i, v_i in profile.breakpoints:
        if t_i <= t:
            value = v_i
        else:
            break
    return value


@dataclass
class IStarConfig:
    gain: GainFunction = field(default_factory=GainFunction)
    lambda_: LambdaProfile = field(default_factory=LambdaProfile)
    delta1: float = 1.0
    delta2: float = 1.0
    composition: str = "multiplicative"
    u_prev: float = 0.0
    last_gain: float = field(default=0.0, repr=False)

    def __post_init__(self):
        if not (self.delta1 > 0 and self.delta2 > 0):
            raise ConfigError(f"delta1 and delta2 must be > 0, got {self.delta1}, {self.delta2}")
        if self.composition not in ("multiplicative", "cascade"):
            raise ConfigError(f"composition must be 'multiplicative' or 'cascade', got {self.composition!r}")


def istar_update(cfg, y_k, yref_k, t_k, ts):
    """One i*-PI sample; returns ``u_k`` and stores it as ``u_prev``.

    ``multiplicative`` scales the bracket by ``G(e)``; ``cascade`` feeds the
    bracket through the gain function instead (``u = K_i int(bracket)``).
    """
    if not ts > 0:
        raise ConfigError(f"ts must be > 0, got {ts}")
    eps = yref_k - y_k
    core = cfg.u_prev - lambda_eval(cfg.lambda_, t_k) * (cfg.delta1 * yref_k - cfg.delta2 * y_k)
    if cfg.composition == "multiplicative" or cfg.gain.mode == "pure_gain":
        g = gain_eval(cfg.gain, eps, ts)
        u = g * core
    else:
        g = gain_eval(cfg.gain, core, ts)
        u = g
    if not math.isfinite(u):
        raise ControllerFault(t_k)
    cfg.last_gain = g
    cfg.u_prev = u
    return u


class ClassicPI:
    kind = "classic_pi"

    def __init__(self, kp, ki, windup_limit=None, integration="rectangular"):
        self.gains = PiGains(kp, ki, windup_limit=windup_limit, integration=integration)
        self.gain_value = 0.0

    def step(self, y, yref, t, ts):
        u = classic_pi_update(self.gains, yref - y, ts)
        if not math.isfinite(u):
            raise ControllerFault(t)
        self.gain_value = u
        return u

    def to_dict(self):
        g = self.gains
        return {"kind": self.kind, "kp": g.kp, "ki": g.ki, "windup_limit": g.windup_limit,
                "integration": g.integration}


class IntelligentPI:
    """i-PI with backward-difference estimates of ``y^(n)`` and ``y*^(n)``.

    At sample ``k`` the newest difference spans ``[t_{k-1}, t_k]``, the
    interval driven by ``u_{k-1}``; it is the ``y^(n)|_{k-1}`` term.
    ``deriv_filter`` is an optional first-order low-pass time constant
    applied to both estimates.
    """

    kind = "ipi"

    def __init__(self, alpha, kp, ki, order_n=1, windup_limit=None, deriv_filter=None,
                 integration="rectangular"):
        self.state = IPiState(
            UltraLocalConfig(alpha, order_n),
            PiGains(kp, ki, windup_limit=windup_limit, integration=integration),
            deriv_filter=deriv_filter,
        )
        self.gain_value = 0.0

    def _filter(self, prev, raw, ts):
        tc = self.state.deriv_filter
        if tc is None:
            return raw
        return prev + (ts / (tc + ts)) * (raw - prev)

    def step(self, y, yref, t, ts):
        st = self.state
        st.deriv_window.append(y)
        st.ref_window.append(yref)
        n = st.ultra.order_n
        st._y_deriv = self._filter(st._y_deriv, estimate_derivative(st.deriv_window, n, ts), ts)
        st._ref_deriv = self._filter(st._ref_deriv, estimate_derivative(st.ref_window, n, ts), ts)
        try:
            u = ipi_update(st, st._y_deriv, st._ref_deriv, yref - y, ts)
        except ControllerFault as exc:
            raise ControllerFault(t, str(exc)) from None
        self.gain_value = st.corrector.kp * (yref - y) + st.corrector.ki * st.corrector.integral_state
        return u

    def to_dict(self):
        st = self.state
        return {"kind": self.kind, "alpha": st.ultra.alpha, "order_n": st.ultra.order_n,
                "kp": st.corrector.kp, "ki": st.corrector.ki,
                "windup_limit": st.corrector.windup_limit, "deriv_filter": st.deriv_filter,
                "integration": st.corrector.integration}


class IStarPI:
    kind = "istar_pi"

    def __init__(self, gain=None, lambda_=None, delta1=1.0, delta2=1.0, composition="multiplicative"):
        self.cfg = IStarConfig(gain or GainFunction(), lambda_ or LambdaProfile(), delta1, delta2, composition)

    @property
    def gain_value(self):
        return self.cfg.last_gain

    def step(self, y, yref, t, ts):
        return istar_update(self.cfg, y, yref, t, ts)

    def to_dict(self):
        c = self.cfg
        return {
            "kind": self.kind,
            "gain": {"mode": c.gain.mode, "k_gain": c.gain.k_gain, "k_i": c.gain.k_i,
                     "integration": c.gain.integration},
            "lambda": c.lambda_.to_dict(),
            "delta1": c.delta1,
            "delta2": c.delta2,
            "composition": c.composition,
        }


CONTROLLER_KINDS = {"classic_pi": ClassicPI, "ipi": IntelligentPI, "istar_pi": IStarPI}
ALIASES = {"pi": "classic_pi", "i-pi": "ipi", "istar": "istar_pi", "i*-pi": "istar_pi"}

_FIELDS = {
    "classic_pi": {"kind", "kp", "ki", "windup_limit", "integration"},
    "ipi": {"kind", "alpha", "order_n", "kp", "ki", "windup_limit", "deriv_filter", "integration"},
    "istar_pi": {"kind", "gain", "lambda", "delta1", "delta2", "composition"},
}


_NUMERIC = {"kp", "ki", "alpha", "windup_limit", "deriv_filter", "delta1", "delta2",
            "k_gain", "k_i", "value", "time_constant"}


def _check_numbers(d, where):
    for k, v in d.items():
        if k in _NUMERIC and v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"{where}.{k}: expected a number, got {v!r}")


def canonical_kind(name):
    name = ALIASES.get(name, name)
    if name not in CONTROLLER_KINDS:
        raise ConfigError(f"controller: unknown kind {name!r}; expected one of {sorted(CONTROLLER_KINDS)}")
    return name


def controller_from_dict(d):
    """Fresh controller from its config dict (see ``to_dict`` for the schema)."""
    if not isinstance(d, dict):
        raise ConfigError("controller: expected an object")
    kind = canonical_kind(d.get("kind", ""))
    check_keys(d, _FIELDS[kind], "controller")
    args = {k: v for k, v in d.items() if k != "kind"}
    _check_numbers(args, "controller")
    if "order_n" in args and (isinstance(args["order_n"], bool) or not isinstance(args["order_n"], int)):
        raise ConfigError(f"controller.order_n: expected 1 or 2, got {args['order_n']!r}")
    if kind == "istar_pi":
        gain = args.pop("gain", None) or {}
        lam = args.pop("lambda", None) or {}
        if not isinstance(gain, dict) or not isinstance(lam, dict):
            raise ConfigError("controller: 'gain' and 'lambda' must be objects")
        check_keys(gain, {"mode", "k_gain", "k_i", "integration"}, "controller.gain")
        check_keys(lam, {"kind", "value", "time_constant", "breakpoints"}, "controller.lambda")
        _check_numbers(gain, "controller.gain")
        _check_numbers(lam, "controller.lambda")
        return IStarPI(GainFunction(**gain), LambdaProfile(**lam), **args)
    return CONTROLLER_KINDS[kind](**args)
