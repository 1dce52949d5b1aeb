"""Pure-Python fallback for the integration kernels.

Mirrors ``_kernels.pyx`` call for call. Arrays are float64 numpy arrays; the
ring buffer layout is ``times[cap]`` / ``values[cap, nv]`` with the logical
sample ``i`` stored at ``(start + i) % cap``.
"""

import numpy as np


def interp_ring(times, values, start, count, cap, tq, pre, out):
    """Write the linearly interpolated value at time ``tq`` into ``out``.

    Before the first sample ``pre`` is returned; past the newest sample the
    newest value is held.
    """
    if count == 0 or tq < times[start]:
        out[:] = pre
        return
    last = (start + count - 1) % cap
    if tq >= times[last]:
        out[:] = values[last]
        return
    lo, hi = 0, count - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if times[(start + mid) % cap] <= tq:
            lo = mid
        else:
            hi = mid
    i0 = (start + lo) % cap
    t0 = times[i0]
    if t0 == tq:
        out[:] = values[i0]
        return
    i1 = (start + hi) % cap
    frac = (tq - t0) / (times[i1] - t0)
    v0 = values[i0]
    out[:] = v0 + frac * (values[i1] - v0)


def rk4_step(a, b, a_tau, x, u, h, t0, tau, times, values, start, count, cap, pre, out):
    """One classical Runge-Kutta step of x' = A x + A_tau x(t - tau) + b u.

    ``u`` is held over the step. The delayed argument of each stage is read
    from the ring buffer at the stage time and frozen for that stage. Pass an
    empty ``a_tau`` (shape (0, 0)) for a plant without state delay.
    """
    bu = b * u
    if a_tau.shape[0]:
        d1 = np.empty_like(x)
        d2 = np.empty_like(x)
        d4 = np.empty_like(x)
        interp_ring(times, values, start, count, cap, t0 - tau, pre, d1)
        interp_ring(times, values, start, count, cap, t0 + 0.5 * h - tau, pre, d2)
        interp_ring(times, values, start, count, cap, t0 + h - tau, pre, d4)
        k1 = a @ x + a_tau @ d1 + bu
        k2 = a @ (x + 0.5 * h * k1) + a_tau @ d2 + bu
        k3 = a @ (x + 0.5 * h * k2) + a_tau @ d2 + bu
        k4 = a @ (x + h * k3) + a_tau @ d4 + bu
    else:
        k1 = a @ x + bu
        k2 = a @ (x + 0.5 * h * k1) + bu
        k3 = a @ (x + 0.5 * h * k2) + bu
        k4 = a @ (x + h * k3) + bu
    out[:] = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
