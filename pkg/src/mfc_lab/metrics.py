"""Tracking-quality metrics over a :class:`~mfc_lab.scenario.SimTrace`."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    ise: float
    iae: float
    overshoot_pct: float
    undershoot_pct: float
    settling_time: float | None
    diverged: bool
    peak_u: float
    post_switch_recovery: list = field(default_factory=list)
    band_pct: float = 2.0

    def to_dict(self):
        return asdict(self)


def _band(trace, band_pct):
    final_ref = float(trace.y_ref[-1])
    scale = abs(final_ref)
    if scale == 0.0:
        scale = float(np.max(np.abs(trace.y_ref))) or 1.0
    return band_pct / 100.0 * scale


def _recovery(t, inside, event_times, t_event):
    """Seconds from ``t_event`` to the first sample from which the error stays
    inside the band up to the next event (or the end of the trace)."""
    start = int(np.searchsorted(t, t_event, side="left"))
    n = len(t)
    if start >= n:
        return None
    later = sorted(te for te in event_times if te > t_event)
    # segment boundaries (sample indices) at and after the event
    bounds = [int(np.searchsorted(t, te, side="left")) for te in later] + [n]
    s = start
    for end in bounds:
        if end <= s:
            continue
        seg = inside[s:end]
        if seg.all():
            return float(t[s] - t_event)
        bad = np.nonzero(~seg)[0]
        s = s + int(bad[-1]) + 1
        if s < end:
            return float(t[s] - t_event)
    return None


def compute_metrics(trace, band_pct=2.0):
    """Metrics on the recorded (finite) prefix of ``trace``.

    Integrals use the left rectangular rule over the sample grid. The band is
    ``band_pct`` percent of the final reference value. Settling time is counted
    from the reference onset; recovery per schedule event is the time until
    the error stays inside the band until the next event.
    """
    if len(trace) == 0:
        raise ValueError("trace is empty")
    if not band_pct > 0:
        raise ValueError(f"band_pct must be > 0, got {band_pct}")
    t = np.asarray(trace.t, dtype=float)
    eps = np.asarray(trace.eps, dtype=float)
    y = np.asarray(trace.y, dtype=float)
    dt = np.diff(t)
    ise = float(np.sum(eps[:-1] ** 2 * dt))
    iae = float(np.sum(np.abs(eps[:-1]) * dt))

    final_ref = float(trace.y_ref[-1])
    if final_ref != 0.0:
        sign = math.copysign(1.0, final_ref)
        overshoot = max(0.0, float(np.max(sign * y)) - abs(final_ref)) / abs(final_ref) * 100.0
        undershoot = max(0.0, -float(np.min(sign * y))) / abs(final_ref) * 100.0
    else:
        overshoot = undershoot = 0.0

    band = _band(trace, band_pct)
    inside = np.abs(eps) <= band
    onset = getattr(trace.config.reference, "onset", 0.0) if trace.config is not None else 0.0
    if trace.diverged or not inside[-1]:
        settling = None
    else:
        outside = np.nonzero(~inside)[0]
        settling = 0.0 if len(outside) == 0 else max(0.0, float(t[outside[-1] + 1] - onset))

    events = trace.config.schedule.switch_times() if trace.config is not None else []
    recovery = []
    for te in events:
        if trace.diverged or te > t[-1]:
            recovery.append(None)
        else:
            recovery.append(_recovery(t, inside, events, te))

    return MetricsReport(
        ise=ise,
        iae=iae,
        overshoot_pct=overshoot,
        undershoot_pct=undershoot,
        settling_time=settling,
        diverged=bool(trace.diverged),
        peak_u=float(np.max(np.abs(trace.u))),
        post_switch_recovery=recovery,
        band_pct=band_pct,
    )
