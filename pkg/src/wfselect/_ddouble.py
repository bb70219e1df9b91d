"""Vectorized double-double arithmetic (~31 significant digits).

A value is an unevaluated sum hi + lo of two float64 arrays with
|lo| <= ulp(hi)/2.  Only the handful of operations the alternating-series
walker needs are provided.  Algorithms are the classical error-free
transformations (Knuth two-sum, Dekker split/two-product); no FMA is
assumed.
"""

from __future__ import annotations

import numpy as np

_SPLIT = 134217729.0  # 2**27 + 1, Veltkamp split constant for float64


def two_sum(a, b):
    """Error-free sum: returns (s, e) with s = fl(a+b) and s + e = a + b."""
    s = a + b
    v = s - a
    e = (a - (s - v)) + (b - v)
    return s, e


def quick_two_sum(a, b):
    """Error-free sum assuming |a| >= |b|."""
    s = a + b
    e = b - (s - a)
    return s, e


def _split(a):
    t = _SPLIT * a
    hi = t - (t - a)
    return hi, a - hi


def two_prod(a, b):
    """Error-free product: returns (p, e) with p = fl(a*b) and p + e = a*b."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def dd(a, b=0.0):
    """Build a double-double from one or two floats/arrays (renormalized)."""
    hi, lo = two_sum(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return hi, lo


def add(xh, xl, yh, yl):
    sh, se = two_sum(xh, yh)
    te, tf = two_sum(xl, yl)
    se = se + te
    sh, se = quick_two_sum(sh, se)
    se = se + tf
    return quick_two_sum(sh, se)


def add_f64(xh, xl, y):
    sh, se = two_sum(xh, y)
    se = se + xl
    return quick_two_sum(sh, se)


def mul(xh, xl, yh, yl):
    ph, pe = two_prod(xh, yh)
    pe = pe + (xh * yl + xl * yh)
    return quick_two_sum(ph, pe)


def mul_f64(xh, xl, y):
    ph, pe = two_prod(xh, y)
    pe = pe + xl * y
    return quick_two_sum(ph, pe)


def div(xh, xl, yh, yl):
    q1 = xh / yh
    # r = x - q1*y, computed in double-double
    th, tl = mul_f64(yh, yl, q1)
    rh, rl = add(xh, xl, -th, -tl)
    q2 = rh / yh
    th, tl = mul_f64(yh, yl, q2)
    rh, rl = add(rh, rl, -th, -tl)
    q3 = rh / yh
    qh, ql = quick_two_sum(q1, q2)
    return add_f64(qh, ql, q3)


def div_f64(xh, xl, y):
    q1 = xh / y
    ph, pe = two_prod(q1, y)
    rh = ((xh - ph) - pe) + xl
    q2 = rh / y
    return quick_two_sum(q1, q2)


def neg(xh, xl):
    return -xh, -xl


def exp_neg(t):
    """exp(-t) in double-double for 0 <= t <= 0.75, via the Taylor series.

    Accurate to ~1e-31 relative; used for the per-duration decay constant
    that every series term recurrence multiplies by.
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 0.75):
        raise ValueError("exp_neg expects 0 <= t <= 0.75")
    sh = np.ones_like(t)
    sl = np.zeros_like(t)
    th, tl = np.ones_like(t), np.zeros_like(t)  # running term t^j / j!
    for j in range(1, 45):
        th, tl = mul(th, tl, *dd(-t))
        th, tl = div_f64(th, tl, float(j))
        sh, sl = add(sh, sl, th, tl)
    return sh, sl
