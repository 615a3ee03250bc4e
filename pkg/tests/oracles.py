"""Independent reference implementations used only by the tests."""

import math


def extrema(x):
    """Local extrema by explicit slope-sign inspection, plateaus removed."""
    pts = [float(v) for v in x]
    dedup = [pts[0]]
    for v in pts[1:]:
        if v != dedup[-1]:
            dedup.append(v)
    if len(dedup) < 3:
        return dedup
    out = [dedup[0]]
    for j in range(1, len(dedup) - 1):
        if (dedup[j] > dedup[j - 1]) != (dedup[j + 1] > dedup[j]):
            out.append(dedup[j])
    out.append(dedup[-1])
    return out


def rainflow_reference(x, capacity):
    """Index-based rainflow over the full extrema list.

    1-based indices as in the usual pseudo-code: ``s`` marks the start
    point, ``i`` the newest point being compared.  Returns a list of
    (soc_av, dod_percent, q_cum, weight) in emission order.
    """
    nu = extrema(x)
    if len(nu) < 2:
        return []
    out = []
    q = 0.0
    s, i = 1, 3

    def at(k):
        return nu[k - 1]

    while i <= len(nu):
        d1 = abs(at(i - 2) - at(i - 1))
        d2 = abs(at(i - 1) - at(i))
        if d2 >= d1:
            mid = 0.5 * (at(i - 2) + at(i - 1))
            if i - 2 == s:
                q += d1 * capacity * 0.5
                out.append((mid, d1 * 100.0, q, 0.5))
                del nu[i - 3]
                i -= 1
            else:
                q += d1 * capacity
                out.append((mid, d1 * 100.0, q, 1.0))
                del nu[i - 3:i - 1]
                i -= 2
            while i - s < 2:
                i += 1
        else:
            i += 1
    for k in range(1, len(nu)):
        d = abs(nu[k - 1] - nu[k])
        q += d * capacity * 0.5
        out.append((0.5 * (nu[k - 1] + nu[k]), d * 100.0, q, 0.5))
    return out


def binomial_upper_bound(m, n, beta, tol=1e-14):
    """Largest rho with P[Bin(n, rho) <= m] >= beta, via the Beta quantile identity."""
    from scipy.stats import beta as beta_dist

    if m >= n:
        return 1.0
    return float(beta_dist.ppf(1.0 - beta, m + 1, n - m))


def calendar_closed_form(alpha, years):
    return alpha * (365.0 * years) ** 0.75


def brute_force_min(f, lower, upper, n=101):
    """Grid search over a 2-D box."""
    best = (math.inf, None)
    for a in [lower[0] + (upper[0] - lower[0]) * k / (n - 1) for k in range(n)]:
        for b in [lower[1] + (upper[1] - lower[1]) * k / (n - 1) for k in range(n)]:
            v = f((a, b))
            if v < best[0]:
                best = (v, (a, b))
    return best
