"""Mixture weights of the neutral Wright-Fisher transition density.

The transition density is an infinite Binomial/Beta mixture whose weights
q_m(t) are alternating series

    q_m(t) = sum_{k>=m} (-1)^{k-m} a_km exp(-k(k+theta-1) t / 2),

with a_km a ratio of Gamma functions.  Everything here revolves around
computing rigorous lower/upper brackets of these weights and inverting the
bracketed CDF at a uniform variate, so a sampled mixture index is an exact
draw: a uniform landing inside a bracket gap escalates to a more precise
arithmetic rung instead of being guessed.

Terms are advanced by multiplicative recurrences in k and in m (no Gamma
evaluations in the hot path):

    b_{k+1} = b_k * (th+2k+1)/(th+2k-1) * (th+m+k-1)/(k+1-m) * exp(-(2k+th)t/2)
    seed(m+1) = seed(m) * (th+2m+1)(th+2m)/((th+m)(m+1)) * exp(-(2m+th)t/2)

and partial sums carry a rounding-error widening so a bracket is never
trusted beyond the arithmetic's precision.  The alternating-series bracket
[S_{k-1}, S_k] is only certified once the term ratio is provably below one
for the whole tail (for m>=1 the ratio is monotone; for m=0 with theta<2 a
monotone majorant of the ratio is used instead).

Rungs: float64 (durations >= ~0.08), double-double (>= ~0.024), mpmath
(slow, arbitrary).  Term magnitudes grow like exp(0.8/t), which is what
makes small durations intrinsically expensive.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from . import _ddouble as ddb
from .exceptions import IterationCapError

# Durations below this are refused outright (spec guard): the series needs
# more digits and terms than any budget as t -> 0.
MIN_DURATION = 1e-6

# Per-weight cap on series terms ("refinement rounds").
DEFAULT_MAX_TERMS = 10_000

# Safety margin demanded before the terms-decreasing flag is trusted.
_RATIO_MARGIN = 1e-9

# Relative rounding unit per rung, used to widen partial-sum brackets.
_UNIT_F64 = 2.0 ** -50
_UNIT_DD = 2.0 ** -98

# Route durations below this to the double-double rung directly.
_F64_MIN_T = 0.08


def log_coeff_a(k: int, m: int, theta_total: float) -> float:
    """Logarithm of the series coefficient a_km.

    a_km = (theta+2k-1) * rising(theta+m, k-1) / (m! (k-m)!), where
    rising(a, x) = Gamma(a+x)/Gamma(a); the x = -1 case at k = 0 cancels
    to a_00 = 1 exactly.  Computed in log space so k in the hundreds
    cannot overflow.
    """
    if m < 0 or k < m:
        raise ValueError(f"need 0 <= m <= k, got k={k}, m={m}")
    if not theta_total > 0:
        raise ValueError(f"theta_total must be positive, got {theta_total}")
    if k == 0:
        return 0.0
    th = float(theta_total)
    return float(
        math.log(th + 2.0 * k - 1.0)
        + gammaln(th + m + k - 1.0)
        - gammaln(th + m)
        - gammaln(m + 1.0)
        - gammaln(k - m + 1.0)
    )


def _m_cap(t: float) -> int:
    # The mixture index concentrates near 2/t; four times that plus slack
    # is unreachable except through numerical inconsistency.
    return int(math.ceil(8.0 / t)) + 60


def _dd_exp_neg(xs):
    """exp(-x) in double-double for arrays of x >= 0 (range-reduced Taylor)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size and xs.max() <= 0.75:
        return ddb.exp_neg(xs)
    if xs.size and xs.max() <= 12.0:
        h, l = ddb.exp_neg(xs / 16.0)
        for _ in range(4):
            h, l = ddb.mul(h, l, h, l)
        return h, l
    out_h = np.empty_like(xs)
    out_l = np.empty_like(xs)
    for i, x in enumerate(np.atleast_1d(xs)):
        y = float(x)
        r = 0
        while y > 0.75:
            y /= 2.0
            r += 1
        h, l = ddb.exp_neg(np.array([y]))
        for _ in range(r):
            h, l = ddb.mul(h, l, h, l)
        out_h[i], out_l[i] = h[0], l[0]
    return out_h, out_l


# ---------------------------------------------------------------------------
# Fixed-duration weight brackets, vectorized across m (tables, pdf).


def _bracket_rows_f64(theta, t, m_arr, max_terms):
    """Float64 brackets of q_m(t) for each m in m_arr.

    Rows that cannot be certified within max_terms, or whose bracket is
    wider than 1e-6, come back with lo > hi so the caller escalates them.
    """
    th = float(theta)
    t = float(t)
    m = np.asarray(m_arr, dtype=np.float64)
    n = m.size
    decay = math.exp(-t)

    la = np.array([log_coeff_a(int(mi), int(mi), th) for mi in np.asarray(m_arr, dtype=np.int64)])
    b = np.exp(la - m * (m + th - 1.0) * t / 2.0)
    E = np.exp(-(2.0 * m + th) * t / 2.0)

    k = m.copy()
    sign = np.ones(n)
    s = b.copy()
    s_prev = np.zeros(n)
    absum = np.abs(b)
    flag = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    lo = np.full(n, 1.0)
    hi = np.full(n, 0.0)
    bound_m0 = (m < 0.5) & (th < 2.0)

    for _ in range(max_terms):
        if done.all():
            break
        den1 = th + 2.0 * k - 1.0
        den1 = np.where(np.abs(den1) > 0, den1, 1.0)
        f1 = (th + 2.0 * k + 1.0) / den1
        ratio = np.where(k < 0.5, th + 1.0, f1 * (th + m + k - 1.0) / (k + 1.0 - m))
        ratio_full = ratio * E
        rb = np.where(bound_m0 & (k >= 0.5), f1 * E, ratio_full)
        flag |= (k >= 0.5) & (rb < 1.0 - _RATIO_MARGIN)

        b = b * ratio_full
        E = E * decay
        k = k + 1.0
        sign = -sign
        s_prev = s
        s = s + sign * b
        absum = absum + b

        widen = _UNIT_F64 * absum * (k - m + 3.0)
        eps = np.maximum(1e-15, 4.0 * widen)
        fin = ~done & flag & (b <= eps)
        if fin.any():
            lo[fin] = np.maximum(np.minimum(s_prev, s)[fin] - widen[fin], 0.0)
            hi[fin] = np.maximum(np.maximum(s_prev, s)[fin] + widen[fin], 0.0)
            done[fin] = True
    bad = ~done | (hi - lo > 1e-6)
    lo[bad], hi[bad] = 1.0, 0.0
    return lo, hi


def _bracket_rows_dd(theta, t, m_arr, max_terms):
    """Double-double brackets of q_m(t); same contract as the float64 rows."""
    th = float(theta)
    t = float(t)
    m_i = np.asarray(m_arr, dtype=np.int64)
    m = m_i.astype(np.float64)
    n = m.size
    thv = np.full(n, th)

    dh, dl = _dd_exp_neg(np.full(n, t))
    eh, el = _dd_exp_neg((2.0 * m + th) * t / 2.0)

    # seeds b_m = a_mm exp(-m(m+th-1)t/2) by the m-recurrence from a_00 = 1
    bh = np.ones(n)
    bl = np.zeros(n)
    mmax = int(m_i.max()) if n else 0
    if mmax > 0:
        d1h, d1l = _dd_exp_neg(np.array([t]))
        sh, sl = np.ones(1), np.zeros(1)
        geh, gel = _dd_exp_neg(np.array([th * t / 2.0]))
        for j in range(mmax):
            n1h, n1l = ddb.two_sum(np.array([th]), 2.0 * j + 1.0)
            n2h, n2l = ddb.two_sum(np.array([th]), float(2 * j))
            de_h, de_l = ddb.two_sum(np.array([th]), float(j))
            sh, sl = ddb.mul(sh, sl, n1h, n1l)
            sh, sl = ddb.mul(sh, sl, n2h, n2l)
            sh, sl = ddb.div(sh, sl, de_h, de_l)
            sh, sl = ddb.div_f64(sh, sl, float(j + 1))
            sh, sl = ddb.mul(sh, sl, geh, gel)
            geh, gel = ddb.mul(geh, gel, d1h, d1l)
            hit = m_i == j + 1
            if hit.any():
                bh[hit], bl[hit] = sh[0], sl[0]

    k = m.copy()
    sign = np.ones(n)
    s_h, s_l = bh.copy(), bl.copy()
    sp_h, sp_l = np.zeros(n), np.zeros(n)
    absum = np.abs(bh)
    flag = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    lo = np.full(n, 1.0)
    hi = np.full(n, 0.0)
    bound_m0 = (m < 0.5) & (th < 2.0)

    for _ in range(max_terms):
        if done.all():
            break
        n1h, n1l = ddb.two_sum(thv, 2.0 * k + 1.0)
        n2h, n2l = ddb.two_sum(thv, m + k - 1.0)
        de1h, de1l = ddb.two_sum(thv, 2.0 * k - 1.0)
        de1h = np.where(np.abs(de1h) > 0, de1h, 1.0)
        d2 = k + 1.0 - m

        rh, rl = ddb.mul(bh, bl, n1h, n1l)
        rh, rl = ddb.mul(rh, rl, n2h, n2l)
        rh, rl = ddb.div(rh, rl, de1h, de1l)
        rh, rl = ddb.div_f64(rh, rl, d2)
        k0 = k < 0.5
        if k0.any():
            ah, al = ddb.mul_f64(bh, bl, th + 1.0)
            rh = np.where(k0, ah, rh)
            rl = np.where(k0, al, rl)
        rh, rl = ddb.mul(rh, rl, eh, el)

        with np.errstate(invalid="ignore", divide="ignore"):
            ratio_est = np.where(bh > 0, rh / np.where(bh > 0, bh, 1.0), 0.0)
        f1 = (th + 2.0 * k + 1.0) / np.where(np.abs(th + 2.0 * k - 1.0) > 0, th + 2.0 * k - 1.0, 1.0)
        rb = np.where(bound_m0 & (k >= 0.5), f1 * eh, ratio_est)
        flag |= (k >= 0.5) & (rb < 1.0 - _RATIO_MARGIN)

        eh, el = ddb.mul(eh, el, dh, dl)
        k = k + 1.0
        sign = -sign
        sp_h, sp_l = s_h, s_l
        s_h, s_l = ddb.add(s_h, s_l, np.where(sign > 0, rh, -rh), np.where(sign > 0, rl, -rl))
        absum = absum + np.abs(rh)
        bh, bl = rh, rl

        widen = _UNIT_DD * absum * (k - m + 3.0)
        eps = np.maximum(1e-28, 4.0 * widen)
        fin = ~done & flag & (bh <= eps)
        if fin.any():
            lo[fin] = np.maximum(np.minimum(sp_h, s_h)[fin] - widen[fin], 0.0)
            hi[fin] = np.maximum(np.maximum(sp_h, s_h)[fin] + widen[fin], 0.0)
            done[fin] = True
    bad = ~done | (hi - lo > 1e-6)
    lo[bad], hi[bad] = 1.0, 0.0
    return lo, hi


def _mp_bracket(theta, t, m, max_terms=DEFAULT_MAX_TERMS):
    """(lo, hi) bracket of q_m(t) via mpmath: the last-resort rung."""
    import mpmath as mp

    th = float(theta)
    t = float(t)
    ks = np.arange(m, 4 * m + 400, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        la = (
            np.log(np.maximum(th + 2.0 * ks - 1.0, 1e-300))
            + gammaln(th + m + ks - 1.0)
            - gammaln(th + m)
            - gammaln(m + 1.0)
            - gammaln(ks - m + 1.0)
        )
    if m == 0:
        la[0] = 0.0
    lb_digits = max(0.0, float((la - ks * (ks + th - 1.0) * t / 2.0).max())) / math.log(10.0)
    dps = int(lb_digits) + 40
    if dps > 3000:
        raise IterationCapError(
            f"weight q_{m}({t}) needs ~{dps} digits; duration too small for the exact series"
        )
    with mp.workdps(dps):
        mpt = mp.mpf(t)
        mpth = mp.mpf(th)
        decay = mp.e ** (-mpt)
        E = mp.e ** (-(2 * m + mpth) * mpt / 2)
        b = mp.mpf(1)
        ge = mp.e ** (-mpth * mpt / 2)
        for j in range(m):
            b *= (mpth + 2 * j + 1) * (mpth + 2 * j) / ((mpth + j) * (j + 1)) * ge
            ge *= decay
        s_prev = mp.mpf(0)
        s = b
        sign = 1
        k = m
        flag = False
        eps = mp.mpf(10) ** (-(dps - int(lb_digits) - 20))
        for _ in range(max_terms):
            if k == 0:
                ratio = (mpth + 1) * E
            else:
                ratio = (mpth + 2 * k + 1) / (mpth + 2 * k - 1) * (mpth + m + k - 1) / (k + 1 - m) * E
            if k >= 1:
                rb = (mpth + 2 * k + 1) / (mpth + 2 * k - 1) * E if (m == 0 and th < 2.0) else ratio
                if rb < 1:
                    flag = True
            b = b * ratio
            E *= decay
            k += 1
            sign = -sign
            s_prev = s
            s = s + sign * b
            if flag and b <= eps:
                return (float(max(min(s_prev, s), mp.mpf(0))), float(max(s_prev, s)))
    raise IterationCapError(
        f"weight q_{m}({t}) did not converge within {max_terms} terms (theta={th})"
    )


def weight_brackets(theta_total, t, tail=1e-12, max_terms=DEFAULT_MAX_TERMS):
    """Rigorous brackets (lo, hi) of q_m(t), m = 0..M*, with sum(lo) >= 1 - tail.

    Each row is certified by the cheapest arithmetic rung able to resolve
    it; if a rung's rounding widening makes the tail target unreachable the
    build is retried one rung up.
    """
    t = float(t)
    th = float(theta_total)
    if not th > 0:
        raise ValueError("theta_total must be positive")
    if not t >= MIN_DURATION:
        raise ValueError(f"duration {t} below the supported minimum {MIN_DURATION}")
    rungs = ["f64", "dd"] if t >= _F64_MIN_T else ["dd"]
    for rung in rungs:
        got = _build_brackets(th, t, tail, max_terms, rung, final=rung == "dd")
        if got is not None:
            return got
    raise IterationCapError(
        f"mixture mass below 1-{tail} for all m <= {_m_cap(t)} (theta={th}, t={t})"
    )


def _build_brackets(th, t, tail, max_terms, rung, final):
    cap = _m_cap(t)
    rows = _bracket_rows_f64 if rung == "f64" else _bracket_rows_dd
    los: list[float] = []
    his: list[float] = []
    m0 = 0
    block = 16
    while m0 <= cap:
        ms = np.arange(m0, min(m0 + block, cap + 1))
        lo, hi = rows(th, t, ms, max_terms)
        if final:
            for j in np.flatnonzero(lo > hi):
                lo[j], hi[j] = _mp_bracket(th, t, int(ms[j]), max_terms)
        elif (lo > hi).any():
            return None
        los.extend(lo.tolist())
        his.extend(hi.tolist())
        if sum(los) >= 1.0 - tail:
            break
        m0 += block
    lo_a = np.asarray(los)
    hi_a = np.asarray(his)
    if lo_a.sum() < 1.0 - tail:
        if not final:
            return None
        # the rung's rounding widening eats the tail: sharpen the widest
        # rows at mpmath precision until the mass target is met
        order = np.argsort(lo_a - hi_a)  # widest first
        for j in order:
            lo_a[j], hi_a[j] = _mp_bracket(th, t, int(j), max_terms)
            if lo_a.sum() >= 1.0 - tail:
                break
        else:
            raise IterationCapError(
                f"mixture mass below 1-{tail} for all m <= {cap} (theta={th}, t={t})"
            )
    cut = int(np.searchsorted(np.cumsum(lo_a), 1.0 - tail, side="left")) + 1
    return lo_a[:cut], hi_a[:cut]


class MixtureIndexTable:
    """Converged weight table for one (theta_total, t); exact inverse-CDF sampling.

    Uniforms that land inside a bracket gap or beyond the tabled mass
    (probability <= tail) are resolved individually at mpmath precision,
    so draws stay exact.
    """

    def __init__(self, theta_total: float, t: float, tail: float = 1e-9):
        self.theta_total = float(theta_total)
        self.t = float(t)
        self.tail = float(tail)
        lo, hi = weight_brackets(theta_total, t, tail=tail)
        self.lo = lo
        self.hi = hi
        self.cdf_lo = np.cumsum(lo)
        self.cdf_hi = np.cumsum(hi)

    def sample(self, us) -> np.ndarray:
        """Map uniform variates to exact mixture indices (vectorized)."""
        us = np.atleast_1d(np.asarray(us, dtype=np.float64))
        idx = np.searchsorted(self.cdf_lo, us, side="right")
        prev_hi = np.where(idx > 0, self.cdf_hi[np.maximum(idx - 1, 0)], -np.inf)
        ambiguous = (idx > 0) & (us < prev_hi)
        ambiguous |= idx >= len(self.cdf_lo)
        for j in np.flatnonzero(ambiguous):
            idx[j] = _mp_sample_index(self.theta_total, self.t, float(us[j]))
        return idx.astype(np.int64)


_TABLE_CACHE: dict[tuple[float, float], MixtureIndexTable] = {}
_TABLE_CACHE_MAX = 128


def mixture_table(theta_total: float, t: float) -> MixtureIndexTable:
    """Cached converged table for a repeatedly-used (theta_total, t)."""
    key = (float(theta_total), float(t))
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        if len(_TABLE_CACHE) >= _TABLE_CACHE_MAX:
            _TABLE_CACHE.pop(next(iter(_TABLE_CACHE)))
        tab = MixtureIndexTable(theta_total, t)
        _TABLE_CACHE[key] = tab
    return tab


def _mp_sample_index(theta, t, u, max_terms=DEFAULT_MAX_TERMS):
    """Exact scalar index draw at mpmath precision."""
    cap = _m_cap(t)
    cdf_lo = 0.0
    cdf_hi = 0.0
    m = 0
    while m <= cap:
        w_lo, w_hi = _mp_bracket(theta, t, m, max_terms)
        cdf_lo += w_lo
        cdf_hi += w_hi
        if u < cdf_lo:
            return m
        if u > cdf_hi:
            m += 1
            continue
        raise IterationCapError(f"uniform {u} unresolved at mpmath precision (theta={theta}, t={t})")
    raise IterationCapError(f"index walk exceeded m cap {cap} (theta={theta}, t={t})")


# ---------------------------------------------------------------------------
# Variable-duration batch walker: one row per draw with its own (t, u).
# This is the skeleton-transition workhorse of the selection sampler, where
# durations never repeat so no table can help.


def _walk_batch_f64(theta, t, u, max_terms):
    th = float(theta)
    n = t.size
    decay = np.exp(-t)

    m = np.zeros(n)
    k = np.zeros(n)
    b = np.ones(n)
    E = np.exp(-th * t / 2.0)
    seed_b = np.ones(n)
    seed_E = E.copy()
    s = b.copy()
    s_prev = np.zeros(n)
    absum = np.abs(b)
    sign = np.ones(n)
    flag = np.zeros(n, dtype=bool)
    cdf_lo = np.zeros(n)
    cdf_hi = np.zeros(n)
    out = np.full(n, -1, dtype=np.int64)
    escal = np.zeros(n, dtype=bool)
    mcap = np.ceil(8.0 / t) + 60.0
    bound_m0 = th < 2.0

    for _ in range(max_terms * 4):
        act = (out < 0) & ~escal
        if not act.any():
            break
        den1 = th + 2.0 * k - 1.0
        den1 = np.where(np.abs(den1) > 0, den1, 1.0)
        f1 = (th + 2.0 * k + 1.0) / den1
        ratio = np.where(k < 0.5, th + 1.0, f1 * (th + m + k - 1.0) / (k + 1.0 - m))
        ratio_full = ratio * E
        rb = np.where((m < 0.5) & bound_m0 & (k >= 0.5), f1 * E, ratio_full)
        flag |= act & (k >= 0.5) & (rb < 1.0 - _RATIO_MARGIN)

        b = np.where(act, b * ratio_full, b)
        E = np.where(act, E * decay, E)
        k = np.where(act, k + 1.0, k)
        sign = np.where(act, -sign, sign)
        s_prev = np.where(act, s, s_prev)
        s = np.where(act, s + sign * b, s)
        absum = np.where(act, absum + b, absum)

        widen = _UNIT_F64 * absum * (k - m + 3.0)
        eps = np.maximum(1e-15, 4.0 * widen)
        fin = act & flag & (b <= eps)
        if fin.any():
            w_lo = np.maximum(np.minimum(s_prev, s) - widen, 0.0)
            w_hi = np.maximum(np.maximum(s_prev, s) + widen, 0.0)
            cdf_lo = np.where(fin, cdf_lo + w_lo, cdf_lo)
            cdf_hi = np.where(fin, cdf_hi + w_hi, cdf_hi)
            resolved = fin & (u < cdf_lo - 1e-12)
            out = np.where(resolved, m.astype(np.int64), out)
            advance = fin & ~resolved & (u > cdf_hi + 1e-12)
            escal |= fin & ~resolved & ~advance
            if advance.any():
                seed_b = np.where(
                    advance,
                    seed_b * ((th + 2.0 * m + 1.0) * (th + 2.0 * m)) / ((th + m) * (m + 1.0)) * seed_E,
                    seed_b,
                )
                seed_E = np.where(advance, seed_E * decay, seed_E)
                m = np.where(advance, m + 1.0, m)
                k = np.where(advance, m, k)
                b = np.where(advance, seed_b, b)
                E = np.where(advance, seed_E, E)
                s = np.where(advance, seed_b, s)
                s_prev = np.where(advance, 0.0, s_prev)
                absum = np.where(advance, np.abs(seed_b), absum)
                sign = np.where(advance, 1.0, sign)
                flag &= ~advance
            escal |= (out < 0) & (m > mcap)
    escal |= out < 0
    return out, escal


def _walk_batch_dd(theta, t, u, max_terms):
    th = float(theta)
    n = t.size
    thv = np.full(n, th)
    dh, dl = _dd_exp_neg(t)

    m = np.zeros(n)
    k = np.zeros(n)
    bh, bl = np.ones(n), np.zeros(n)
    eh, el = _dd_exp_neg(th * t / 2.0)
    sb_h, sb_l = np.ones(n), np.zeros(n)
    se_h, se_l = eh.copy(), el.copy()
    s_h, s_l = bh.copy(), bl.copy()
    sp_h, sp_l = np.zeros(n), np.zeros(n)
    absum = np.abs(bh)
    sign = np.ones(n)
    flag = np.zeros(n, dtype=bool)
    cdf_lo = np.zeros(n)
    cdf_hi = np.zeros(n)
    out = np.full(n, -1, dtype=np.int64)
    escal = np.zeros(n, dtype=bool)
    mcap = np.ceil(8.0 / t) + 60.0
    bound_m0 = th < 2.0

    for _ in range(max_terms * 4):
        act = (out < 0) & ~escal
        if not act.any():
            break
        n1h, n1l = ddb.two_sum(thv, 2.0 * k + 1.0)
        n2h, n2l = ddb.two_sum(thv, m + k - 1.0)
        de1h, de1l = ddb.two_sum(thv, 2.0 * k - 1.0)
        de1h = np.where(np.abs(de1h) > 0, de1h, 1.0)

        rh, rl = ddb.mul(bh, bl, n1h, n1l)
        rh, rl = ddb.mul(rh, rl, n2h, n2l)
        rh, rl = ddb.div(rh, rl, de1h, de1l)
        rh, rl = ddb.div_f64(rh, rl, k + 1.0 - m)
        k0 = k < 0.5
        if k0.any():
            ah, al = ddb.mul_f64(bh, bl, th + 1.0)
            rh = np.where(k0, ah, rh)
            rl = np.where(k0, al, rl)
        rh, rl = ddb.mul(rh, rl, eh, el)

        with np.errstate(invalid="ignore", divide="ignore"):
            ratio_est = np.where(bh > 0, rh / np.where(bh > 0, bh, 1.0), 0.0)
        f1 = (th + 2.0 * k + 1.0) / np.where(np.abs(th + 2.0 * k - 1.0) > 0, th + 2.0 * k - 1.0, 1.0)
        rb = np.where((m < 0.5) & bound_m0 & (k >= 0.5), f1 * eh, ratio_est)
        flag |= act & (k >= 0.5) & (rb < 1.0 - _RATIO_MARGIN)

        ehn, eln = ddb.mul(eh, el, dh, dl)
        bh = np.where(act, rh, bh)
        bl = np.where(act, rl, bl)
        eh = np.where(act, ehn, eh)
        el = np.where(act, eln, el)
        k = np.where(act, k + 1.0, k)
        sign = np.where(act, -sign, sign)
        sp_h = np.where(act, s_h, sp_h)
        sp_l = np.where(act, s_l, sp_l)
        nh, nl = ddb.add(s_h, s_l, np.where(sign > 0, bh, -bh), np.where(sign > 0, bl, -bl))
        s_h = np.where(act, nh, s_h)
        s_l = np.where(act, nl, s_l)
        absum = np.where(act, absum + np.abs(bh), absum)

        widen = _UNIT_DD * absum * (k - m + 3.0)
        eps = np.maximum(1e-28, 4.0 * widen)
        fin = act & flag & (bh <= eps)
        if fin.any():
            w_lo = np.maximum(np.minimum(sp_h, s_h) - widen, 0.0)
            w_hi = np.maximum(np.maximum(sp_h, s_h) + widen, 0.0)
            cdf_lo = np.where(fin, cdf_lo + w_lo, cdf_lo)
            cdf_hi = np.where(fin, cdf_hi + w_hi, cdf_hi)
            resolved = fin & (u < cdf_lo - 1e-13)
            out = np.where(resolved, m.astype(np.int64), out)
            advance = fin & ~resolved & (u > cdf_hi + 1e-13)
            escal |= fin & ~resolved & ~advance
            if advance.any():
                a1h, a1l = ddb.two_sum(thv, 2.0 * m + 1.0)
                a2h, a2l = ddb.two_sum(thv, 2.0 * m)
                ad1h, ad1l = ddb.two_sum(thv, m)
                xh, xl = ddb.mul(sb_h, sb_l, a1h, a1l)
                xh, xl = ddb.mul(xh, xl, a2h, a2l)
                xh, xl = ddb.div(xh, xl, ad1h, ad1l)
                xh, xl = ddb.div_f64(xh, xl, m + 1.0)
                xh, xl = ddb.mul(xh, xl, se_h, se_l)
                yh, yl = ddb.mul(se_h, se_l, dh, dl)
                sb_h = np.where(advance, xh, sb_h)
                sb_l = np.where(advance, xl, sb_l)
                se_h = np.where(advance, yh, se_h)
                se_l = np.where(advance, yl, se_l)
                m = np.where(advance, m + 1.0, m)
                k = np.where(advance, m, k)
                bh = np.where(advance, sb_h, bh)
                bl = np.where(advance, sb_l, bl)
                eh = np.where(advance, se_h, eh)
                el = np.where(advance, se_l, el)
                s_h = np.where(advance, sb_h, s_h)
                s_l = np.where(advance, sb_l, s_l)
                sp_h = np.where(advance, 0.0, sp_h)
                sp_l = np.where(advance, 0.0, sp_l)
                absum = np.where(advance, np.abs(sb_h), absum)
                sign = np.where(advance, 1.0, sign)
                flag &= ~advance
            escal |= (out < 0) & (m > mcap)
    escal |= out < 0
    return out, escal


def sample_mixture_indices(theta_total, durations, us, max_terms=DEFAULT_MAX_TERMS):
    """Exact mixture indices for per-draw durations (vectorized ladder).

    Row i returns the smallest m with CDF(m) > us[i] under its own duration.
    Rows route to float64 or double-double by duration and escalate
    individually to mpmath when their uniform lands in a bracket gap.
    """
    t = np.asarray(durations, dtype=np.float64)
    u = np.asarray(us, dtype=np.float64)
    if t.shape != u.shape:
        raise ValueError("durations and uniforms must have matching shapes")
    if t.size == 0:
        return np.empty(0, dtype=np.int64)
    if not np.all(t >= MIN_DURATION):
        raise ValueError(f"durations below the supported minimum {MIN_DURATION}")
    out = np.full(t.size, -1, dtype=np.int64)

    fast = t >= _F64_MIN_T
    if fast.any():
        got, esc = _walk_batch_f64(theta_total, t[fast], u[fast], max_terms)
        idx = np.flatnonzero(fast)
        out[idx[~esc]] = got[~esc]
    rest = out < 0
    if rest.any():
        got, esc = _walk_batch_dd(theta_total, t[rest], u[rest], max_terms)
        idx = np.flatnonzero(rest)
        out[idx[~esc]] = got[~esc]
    rest = out < 0
    for j in np.flatnonzero(rest):
        out[j] = _mp_sample_index(theta_total, float(t[j]), float(u[j]), max_terms)
    return out
