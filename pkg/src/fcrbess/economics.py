"""FCR revenue, German electricity costs, discounted lifetime revenue, NPV, payback and sizing sweeps.

Money is in EUR, energy prices in EUR/MWh, levy rates in EUR/kWh and
FCR prices in EUR per MW per week.
"""

from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import QUARTER_S, DataError, PriceSeries

WEEKS_PER_YEAR = 365.0 / 7.0
CONSUMPTION, LOSSES, EXEMPT = "consumption", "losses", "exempt"


@dataclass(frozen=True)
class Levy:
    name: str
    rate: float  # EUR/kWh
    base: str

    def __post_init__(self):
        if self.base not in (CONSUMPTION, LOSSES, EXEMPT):
            raise ValueError(f"levy base must be one of consumption, losses, exempt; got {self.base!r}")
        if self.rate < 0:
            raise ValueError("levy rate must be >= 0")


CONCESSION_RANGE_CT = (0.11, 2.39)


def default_levies(concession_ct: float = 0.11) -> tuple:
    """German levy table for a storage system (rates in ct/kWh converted to EUR/kWh).

    The concession fee depends on the municipality; it is configurable
    within ``CONCESSION_RANGE_CT``.
    """
    lo, hi = CONCESSION_RANGE_CT
    if not lo <= concession_ct <= hi:
        raise ValueError(f"concession fee {concession_ct} ct/kWh outside [{lo}, {hi}]")
    ct = 0.01
    return (
        Levy("network_charges", 0.0, EXEMPT),
        Levy("electricity_tax", 2.05 * ct, EXEMPT),
        Levy("eeg", 6.88 * ct, LOSSES),
        Levy("kwk", 0.4438 * ct, LOSSES),
        Levy("strom_nev_19", 0.370 * ct, CONSUMPTION),
        Levy("concession", concession_ct * ct, CONSUMPTION),
        Levy("offshore", 0.037 * ct, CONSUMPTION),
        Levy("interruptible_load", 0.011 * ct, CONSUMPTION),
    )


def exponential_path(start: float, end: float, span_years: int, n_years: int) -> tuple:
    """Geometric interpolation from ``start`` to ``end`` over ``span_years``, then flat."""
    g = (end / start) ** (1.0 / span_years)
    return tuple(start * g ** min(k, span_years) for k in range(n_years))


# Illustrative price paths, not market forecasts.
FCR_PRICE_SCENARIOS = {
    "moderate": (2100.0, 1630.0),
    "low": (2100.0, 950.0),
}


def fcr_price_scenario(name: str, n_years: int = 30, span_years: int = 17) -> tuple:
    try:
        start, end = FCR_PRICE_SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown FCR price scenario {name!r}; choose from {sorted(FCR_PRICE_SCENARIOS)}") from None
    return exponential_path(start, end, span_years, n_years)


@dataclass(frozen=True)
class MarketScenario:
    """Prices, levies and rates used to value one BESS.

    ``intraday`` and ``imbalance`` are either 15-min :class:`PriceSeries`
    or flat prices in EUR/MWh.  ``periodic_prices`` wraps series lookups
    around their end, for price years reused across simulated years.
    """

    fcr_price_by_year: tuple
    intraday: PriceSeries | float = 0.0
    imbalance: PriceSeries | float = 0.0
    levies: tuple = field(default_factory=default_levies)
    inflation: float = 0.017
    discount_rate: float = 0.017
    periodic_prices: bool = False
    name: str = "custom"

    def __post_init__(self):
        if len(self.fcr_price_by_year) == 0:
            raise ValueError("fcr_price_by_year is empty")
        if self.discount_rate <= -1 or self.inflation <= -1:
            raise ValueError("rates must exceed -100%")

    @classmethod
    def named(cls, name: str, **kw) -> MarketScenario:
        return cls(fcr_price_scenario(name), name=name, **kw)

    def fcr_price(self, year_k: int) -> float:
        p = self.fcr_price_by_year
        return float(p[min(year_k, len(p) - 1)])

    def fcr_revenue(self, year_k: int, r_mw: float) -> float:
        """Annual FCR revenue for ``r_mw`` contracted in year ``year_k``."""
        return self.fcr_price(year_k) * WEEKS_PER_YEAR * r_mw


def _quarter_energy(p, steps):
    """Energy (MWh) per quarter hour from a per-step power series (W); a trailing partial quarter is kept."""
    n = p.size
    pad = (-n) % steps
    x = np.concatenate([p, np.zeros(pad)]) if pad else p
    return x.reshape(-1, steps).sum(axis=1) * (QUARTER_S / steps) / 3.6e9


def _prices(src, t0, n, periodic):
    if isinstance(src, PriceSeries):
        if abs(src.dt - QUARTER_S) > 1e-9:
            raise DataError("price series must be quarter-hourly")
        if periodic:
            i0 = int(round((t0 - src.start) / src.dt)) % len(src)
            idx = (i0 + np.arange(n)) % len(src)
            out = src.values[idx]
            bad = np.flatnonzero(np.isnan(out))
            if bad.size:
                raise DataError(f"no price at series index {idx[bad[0]]}")
            return out
        return src.window(t0, n)
    return np.full(n, float(src))


@dataclass(frozen=True)
class ElectricityCost:
    intraday: float
    imbalance: float
    levies: dict
    inflation_factor: float

    @property
    def total(self) -> float:
        return self.inflation_factor * (self.intraday + self.imbalance + sum(self.levies.values()))


def electricity_cost_breakdown(trace, scenario: MarketScenario, t0: float = 0.0, year_k: int = 0) -> ElectricityCost:
    """Cost of the energy exchanged in ``trace`` starting at time ``t0`` (quarter-hour aligned).

    Recharge blocks are bought/sold at the intraday price of their
    quarter hour; the rest of the exchange (FCR, overdelivery, clipping,
    HVAC) is settled per quarter hour at the imbalance price.
    Consumption levies apply to grid-in energy, loss levies to
    max(in - out, 0) over the trace.
    """
    dt = trace.dt
    steps = int(round(QUARTER_S / dt))
    if abs(steps * dt - QUARTER_S) > 1e-9:
        raise ValueError("dt must divide 15 min")
    p_grid = np.asarray(trace.p_grid, dtype=float)
    p_rech = np.asarray(trace.p_rech, dtype=float)
    e_rech = _quarter_energy(p_rech, steps)
    e_res = _quarter_energy(p_grid - p_rech, steps)
    nq = e_rech.size
    intraday = float(np.dot(e_rech, _prices(scenario.intraday, t0, nq, scenario.periodic_prices))) if nq else 0.0
    imbalance = float(np.dot(e_res, _prices(scenario.imbalance, t0, nq, scenario.periodic_prices))) if nq else 0.0
    e_in = float(np.sum(np.maximum(p_grid, 0.0))) * dt / 3.6e6
    e_out = float(np.sum(np.maximum(-p_grid, 0.0))) * dt / 3.6e6
    base = {CONSUMPTION: e_in, LOSSES: max(e_in - e_out, 0.0), EXEMPT: 0.0}
    levies = {lv.name: lv.rate * base[lv.base] for lv in scenario.levies}
    return ElectricityCost(intraday, imbalance, levies, (1.0 + scenario.inflation) ** year_k)


def electricity_cost(trace, scenario: MarketScenario, t0: float = 0.0, year_k: int = 0) -> float:
    return electricity_cost_breakdown(trace, scenario, t0, year_k).total


# --- lifetime valuation ----------------------------------------------------------


def year_fraction(c_prev: float, c_k: float, eps_prev: float, eps_k: float | None, eps_req: float,
                  c_eol: float = 0.8) -> float:
    """Share of a year's net revenue that counts, in [0, 1].

    1 while capacity stays at or above ``c_eol`` and the chance bound
    holds; in the year a criterion is crossed, the linear interpolant of
    the crossing point; 0 once a criterion was already violated at the
    start of the year.  ``eps_k = None`` means the bound was not
    evaluated and does not bind.
    """
    if c_k >= c_eol:
        f_cap = 1.0
    elif c_prev <= c_eol:
        f_cap = 0.0
    else:
        f_cap = _ratio(c_prev, c_eol, c_prev, c_k)
    if eps_k is None or eps_k <= eps_req:
        f_eps = 1.0
    elif eps_prev > eps_req:
        f_eps = 0.0
    else:
        f_eps = _ratio(eps_req, eps_prev, eps_k, eps_prev)
    return max(min(f_cap, f_eps, 1.0), 0.0)


def _ratio(a, b, c, d) -> float:
    """(a - b) / (c - d) in exact rationals of the shortest decimal inputs, rounded once."""
    q = [Fraction(repr(float(x))) for x in (a, b, c, d)]
    return float((q[0] - q[1]) / (q[2] - q[3]))


@dataclass(frozen=True)
class YearCash:
    year_k: int
    fcr_revenue: float
    elec_cost: float
    fraction: float
    discounted_net: float
    capacity_after: float
    eps_k: float | None


@dataclass(frozen=True)
class LifetimeResult:
    years: tuple
    k_max: int
    lifetime_years: float
    discounted_net_revenue: float
    cost_bess: float
    npv: float
    payback_years: float | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["years"] = [asdict(y) for y in self.years]
        return d


def payback_period(discounted_net_by_year, cost: float) -> float | None:
    """Years until the cumulative discounted net revenue reaches ``cost``, interpolated within the year."""
    acc = 0.0
    for j, x in enumerate(discounted_net_by_year):
        if x > 0 and acc + x >= cost:
            return j + (cost - acc) / x
        acc += x
    return None if cost > 0 else 0.0


def lifetime_revenue(year_results, scenario: MarketScenario, r_mw: float, cost_bess: float = 0.0,
                     eps_req: float = 0.005, c_eol: float = 0.8) -> LifetimeResult:
    """Discounted net revenue over the simulated years; year j is discounted by (1+gamma)^(j+1).

    ``year_results`` items need ``year_k``, ``capacity_after``, ``eps_k``
    and ``expected_elec_cost`` attributes, ordered by year.
    """
    years = []
    c_prev, eps_prev = 1.0, 0.0
    gamma = scenario.discount_rate
    for y in year_results:
        rev = scenario.fcr_revenue(y.year_k, r_mw)
        frac = year_fraction(c_prev, y.capacity_after, eps_prev, y.eps_k, eps_req, c_eol)
        disc = (rev - y.expected_elec_cost) / (1.0 + gamma) ** (y.year_k + 1) * frac
        years.append(YearCash(y.year_k, rev, y.expected_elec_cost, frac, disc, y.capacity_after, y.eps_k))
        c_prev = y.capacity_after
        if y.eps_k is not None:
            eps_prev = y.eps_k
    total = float(sum(y.discounted_net for y in years))
    return LifetimeResult(
        years=tuple(years),
        k_max=len(years),
        lifetime_years=float(sum(y.fraction for y in years)),
        discounted_net_revenue=total,
        cost_bess=float(cost_bess),
        npv=total - cost_bess,
        payback_years=payback_period([y.discounted_net for y in years], cost_bess),
    )


# --- sizing sweep ------------------------------------------------------------------


DEFAULT_COST_LEVELS = (500.0, 400.0, 300.0)


def bess_cost(e_mwh: float, cost_per_kwh: float) -> float:
    return e_mwh * 1000.0 * cost_per_kwh


def feasibility(e_mwh: float, c_rate: float, r_mw: float = 1.0, eol_capacity: float = 0.8) -> tuple:
    """Static prequalification screen: returns (feasible, reason).

    Needs r <= 80% of rated power, and the end-of-life energy must cover
    r for 30 min in each direction.
    """
    p_max = e_mwh * c_rate
    if r_mw > 0.8 * p_max + 1e-12:
        return False, f"r = {r_mw:g} MW exceeds 80% of {p_max:g} MW"
    if eol_capacity * e_mwh < r_mw * 1.0 - 1e-12:
        return False, f"end-of-life energy {eol_capacity * e_mwh:g} MWh below r x 1 h = {r_mw:g} MWh"
    return True, ""


@dataclass
class SweepPoint:
    e_mwh: float
    c_rate: float
    feasible: bool
    reason: str = ""
    revenue: float = 0.0
    k_max: int = 0
    lifetime_years: float = 0.0
    npv: dict = field(default_factory=dict)
    payback: dict = field(default_factory=dict)
    error: str = ""


def _finish_point(pt: SweepPoint, revenue: float, k_max: int, lifetime: float, cost_levels, by_year=None):
    pt.revenue, pt.k_max, pt.lifetime_years = revenue, k_max, lifetime
    for c in cost_levels:
        cost = bess_cost(pt.e_mwh, c)
        pt.npv[c] = revenue - cost
        pt.payback[c] = payback_period(by_year, cost) if by_year is not None else None
    return pt


def _evaluate_point(args):
    evaluator, e, c, cost_levels = args
    pt = SweepPoint(e, c, True)
    try:
        res = evaluator(e, c)
    except Exception as exc:  # recorded per point; the sweep goes on
        pt.error = f"{type(exc).__name__}: {exc}"
        for lvl in cost_levels:
            pt.npv[lvl] = math.nan
        return pt
    by_year = [y.discounted_net for y in res.years]
    return _finish_point(pt, res.discounted_net_revenue, res.k_max, res.lifetime_years, cost_levels, by_year)


def sizing_sweep(energies, c_rates, evaluator: Callable, r_mw: float = 1.0,
                 cost_levels=DEFAULT_COST_LEVELS, jobs: int = 1) -> list:
    """Evaluate every (energy, C-rate) point.

    ``evaluator(e_mwh, c_rate)`` returns a :class:`LifetimeResult`-like
    object.  Points failing the static screen are not evaluated and get
    NPV = -cost.  With ``jobs > 1`` the evaluator must be picklable.
    """
    points = {}
    todo = []
    for e in energies:
        for c in c_rates:
            ok, reason = feasibility(e, c, r_mw)
            if ok:
                todo.append((evaluator, float(e), float(c), tuple(cost_levels)))
            else:
                points[(float(e), float(c))] = _finish_point(SweepPoint(float(e), float(c), False, reason), 0.0, 0, 0.0,
                                               cost_levels)
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            done = list(ex.map(_evaluate_point, todo))
    else:
        done = [_evaluate_point(t) for t in todo]
    for pt in done:
        points[(pt.e_mwh, pt.c_rate)] = pt
    return [points[(float(e), float(c))] for e in energies for c in c_rates]


def max_npv_point(points, cost_level: float):
    valid = [p for p in points if not math.isnan(p.npv.get(cost_level, math.nan))]
    return max(valid, key=lambda p: p.npv[cost_level]) if valid else None


def write_sweep_csv(points, path, cost_levels=DEFAULT_COST_LEVELS) -> None:
    """Table layout: one row per energy, one NPV column (kEUR) per (cost level, C-rate); '*' marks the maximum."""
    energies = sorted({p.e_mwh for p in points})
    c_rates = sorted({p.c_rate for p in points})
    by = {(p.e_mwh, p.c_rate): p for p in points}
    best = {c: max_npv_point(points, c) for c in cost_levels}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["e_mwh"] + [f"npv_keur_{int(c)}eur_{cr:g}C" for c in cost_levels for cr in c_rates])
        for e in energies:
            row = [f"{e:g}"]
            for c in cost_levels:
                for cr in c_rates:
                    p = by.get((e, cr))
                    if p is None or math.isnan(p.npv.get(c, math.nan)):
                        row.append("")
                        continue
                    mark = "*" if best[c] is p else ""
                    row.append(f"{p.npv[c] / 1000.0:.1f}{mark}")
            w.writerow(row)


def write_sweep_json(points, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([asdict(p) for p in points], fh, indent=2, default=str)
