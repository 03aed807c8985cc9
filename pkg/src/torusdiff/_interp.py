"""Monotone cubic (Fritsch-Carlson) interpolation kernels.

Used for inverting strictly increasing tables: cumulative distribution
functions, quantile functions and the evolved particle field.  The
interpolant preserves monotonicity of the data, so inverses stay well
defined.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def fc_slopes(x, y):
    """Fritsch-Carlson tangents for a monotone cubic Hermite interpolant."""
    n = x.shape[0]
    m = np.empty(n)
    d = np.empty(n - 1)
    for i in range(n - 1):
        d[i] = (y[i + 1] - y[i]) / (x[i + 1] - x[i])
    m[0] = d[0]
    m[n - 1] = d[n - 2]
    for i in range(1, n - 1):
        if d[i - 1] * d[i] <= 0.0:
            m[i] = 0.0
        else:
            w1 = 2.0 * (x[i + 1] - x[i]) + (x[i] - x[i - 1])
            w2 = (x[i + 1] - x[i]) + 2.0 * (x[i] - x[i - 1])
            m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i])
    return m


@njit(cache=True)
def hermite_eval(x, y, m, xq, out):
    """Evaluate the cubic Hermite interpolant (x, y, m) at sorted-or-not xq."""
    n = x.shape[0]
    for j in range(xq.shape[0]):
        t = xq[j]
        lo = 0
        hi = n - 1
        if t <= x[0]:
            lo = 0
        elif t >= x[n - 1]:
            lo = n - 2
        else:
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if x[mid] <= t:
                    lo = mid
                else:
                    hi = mid
        h = x[lo + 1] - x[lo]
        s = (t - x[lo]) / h
        s2 = s * s
        s3 = s2 * s
        h00 = 2.0 * s3 - 3.0 * s2 + 1.0
        h10 = s3 - 2.0 * s2 + s
        h01 = -2.0 * s3 + 3.0 * s2
        h11 = s3 - s2
        out[j] = (h00 * y[lo] + h10 * h * m[lo]
                  + h01 * y[lo + 1] + h11 * h * m[lo + 1])
    return out


def pchip(x, y, xq):
    """One-shot monotone cubic interpolation of (x, y) at query points xq."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    xq = np.ascontiguousarray(xq, dtype=np.float64)
    m = fc_slopes(x, y)
    out = np.empty_like(xq)
    hermite_eval(x, y, m, xq, out)
    return out


def pseudo_periodic_pchip(x, y, x_period, y_period, xq):
    """Interpolate a pseudo-periodic table: y(x + x_period) = y(x) + y_period.

    The table is extended by one period on each side before the slopes
    are computed, so end intervals see periodic-consistent neighbours,
    and queries are shifted into the covered window first.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xq = np.asarray(xq, dtype=np.float64)
    shifts = np.floor((xq - x[0]) / x_period)
    xs = xq - shifts * x_period
    # endpoint queries can land a hair outside [x0, x0 + period); harmless,
    # the extended table covers them
    xe = np.concatenate((x[:-1] - x_period, x, x[1:] + x_period))
    ye = np.concatenate((y[:-1] - y_period, y, y[1:] + y_period))
    return pchip(xe, ye, xs) + shifts * y_period
