"""Calendar and cycle ageing, rainflow counting and year-to-year state updates.

Capacity is expressed as a fraction of the initial capacity and
resistance growth as a fraction of the initial resistance.  Calendar
ageing follows a t^0.75 law in days; cycle ageing follows sqrt(Q) for
capacity and a linear law in Q for resistance, with Q the charge
throughput in Ah of one cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, NamedTuple

import numpy as np

from . import kernels

GAS_CONSTANT = 8.314462618
DAYS_PER_YEAR = 365


# --- ageing coefficient functions -----------------------------------------


@dataclass(frozen=True)
class PolyArrhenius:
    """c(soc) * exp(-Ea/R * (1/T - 1/T_ref)), polynomial in SoC, clipped at 0.

    ``coeffs[i]`` multiplies soc**i.  Temperatures are in degC.
    """

    coeffs: tuple
    activation_energy: float = 0.0  # J/mol
    t_ref: float = 25.0

    def __call__(self, soc, temperature):
        soc = np.asarray(soc, dtype=float)
        poly = np.polynomial.polynomial.polyval(soc, np.asarray(self.coeffs, dtype=float))
        tk = np.asarray(temperature, dtype=float) + 273.15
        arr = np.exp(-self.activation_energy / GAS_CONSTANT * (1.0 / tk - 1.0 / (self.t_ref + 273.15)))
        out = np.maximum(poly * arr, 0.0)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BivariatePoly:
    """sum_ij c[i][j] * soc**i * (dod/100)**j, clipped at 0."""

    coeffs: tuple

    def __call__(self, soc, dod):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        soc, dod = np.broadcast_arrays(np.asarray(soc, dtype=float), np.asarray(dod, dtype=float) / 100.0)
        out = np.polynomial.polynomial.polyval2d(soc, dod, c)
        out = np.maximum(out, 0.0)
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class AgeingCoefficients:
    """The four ageing-factor functions.

    alpha_cap/alpha_res take (mean calendar SoC, temperature degC) and are
    per day**0.75; beta_cap takes (cycle mean SoC, DoD %) per sqrt(Ah);
    beta_res per Ah.
    """

    alpha_cap: Callable
    alpha_res: Callable
    beta_cap: Callable
    beta_res: Callable

    @classmethod
    def constant(cls, alpha_cap=0.0, alpha_res=0.0, beta_cap=0.0, beta_res=0.0) -> AgeingCoefficients:
        return cls(
            PolyArrhenius((alpha_cap,)),
            PolyArrhenius((alpha_res,)),
            BivariatePoly(((beta_cap,),)),
            BivariatePoly(((beta_res,),)),
        )

    @classmethod
    def from_config(cls, cfg: dict) -> AgeingCoefficients:
        """Build from a mapping like the ``ageing`` section of the run config."""

        def cal(d):
            return PolyArrhenius(tuple(float(x) for x in d["soc_poly"]),
                                 float(d.get("activation_energy", 0.0)), float(d.get("t_ref", 25.0)))

        def cyc(d):
            return BivariatePoly(tuple(tuple(float(x) for x in row) for row in d["coeffs"]))

        try:
            return cls(cal(cfg["alpha_cap"]), cal(cfg["alpha_res"]), cyc(cfg["beta_cap"]), cyc(cfg["beta_res"]))
        except KeyError as exc:
            raise ValueError(f"ageing config is missing {exc}") from None

    @classmethod
    def illustrative(cls) -> AgeingCoefficients:
        """Order-of-magnitude NMC coefficients for demos; not a published fit."""
        return cls.from_config(ILLUSTRATIVE_AGEING)


ILLUSTRATIVE_AGEING = {
    "alpha_cap": {"soc_poly": [0.8e-4, 1.2e-4], "activation_energy": 58000.0},
    "alpha_res": {"soc_poly": [1.0e-4, 3.0e-4], "activation_energy": 49800.0},
    # 3.8e-4 + 3.65e-3*(soc-0.5)^2 + 2.05e-3*dod
    "beta_cap": {"coeffs": [[3.8e-4 + 3.65e-3 * 0.25, 2.05e-3], [-3.65e-3, 0.0], [3.65e-3, 0.0]]},
    "beta_res": {"coeffs": [[1.0e-5, 5.0e-5]]},
}


# --- rainflow ---------------------------------------------------------------


class CycleRecord(NamedTuple):
    soc_av: float
    dod: float  # percent
    q_cum: float  # Ah, cumulative after this cycle
    weight: float  # 0.5 half cycle, 1.0 full cycle


@dataclass
class CycleRecords:
    """Rainflow output as parallel arrays, in emission order."""

    soc_av: np.ndarray
    dod: np.ndarray
    q_cum: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return self.soc_av.size

    def __iter__(self) -> Iterator[CycleRecord]:
        for row in zip(self.soc_av, self.dod, self.q_cum, self.weight):
            yield CycleRecord(*(float(x) for x in row))

    @property
    def total_throughput(self) -> float:
        return float(self.q_cum[-1]) if len(self) else 0.0

    @property
    def q_increments(self) -> np.ndarray:
        return np.diff(self.q_cum, prepend=0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("soc_av", "dod", "q_cum", "weight"))
            for rec in self:
                w.writerow((repr(rec.soc_av), repr(rec.dod), repr(rec.q_cum),
                            "full" if rec.weight == 1.0 else "half"))


def rainflow(soc_trace, capacity_ah: float) -> CycleRecords:
    """Half and full cycles of a SoC trace with cumulative Ah throughput.

    A half cycle of depth d adds d*C/2 to the throughput, a full cycle
    d*C.  Residual ranges left after the sweep are half cycles.
    """
    x = np.ascontiguousarray(soc_trace, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("rainflow needs a 1-D trace with at least 2 points")
    ext = kernels.turning_points(x)
    soc_av, dod, q, w = kernels.rainflow_extrema(ext, float(capacity_ah))
    return CycleRecords(soc_av, dod, q, w)


# --- loss laws --------------------------------------------------------------


def _sqrt_increments(q_cum: np.ndarray, scale: float) -> np.ndarray:
    root = np.sqrt(scale * q_cum)
    return np.diff(root, prepend=0.0)


def cycle_capacity_loss(records: CycleRecords, coeffs: AgeingCoefficients, scale: float = 1.0) -> float:
    """Capacity lost to cycling: sum of beta_cap * (sqrt(s*Q_i) - sqrt(s*Q_{i-1}))."""
    if len(records) == 0:
        return 0.0
    beta = np.broadcast_to(coeffs.beta_cap(records.soc_av, records.dod), records.soc_av.shape)
    return float(np.sum(beta * _sqrt_increments(records.q_cum, scale)))


def cycle_resistance_growth(records: CycleRecords, coeffs: AgeingCoefficients, scale: float = 1.0) -> float:
    """Relative resistance growth from cycling, linear in throughput."""
    if len(records) == 0:
        return 0.0
    beta = np.broadcast_to(coeffs.beta_res(records.soc_av, records.dod), records.soc_av.shape)
    return float(np.sum(beta * scale * records.q_increments))


def _calendar_time_factor(year_k: int) -> float:
    if year_k < 0:
        raise ValueError("year_k must be >= 0")
    d = DAYS_PER_YEAR
    return (d * (year_k + 1)) ** 0.75 - (d * year_k) ** 0.75


def calendar_loss(soc_av_cal: float, temperature: float, year_k: int, coeffs: AgeingCoefficients) -> float:
    """Capacity lost to storage during operational year ``year_k`` (0-based)."""
    return float(coeffs.alpha_cap(soc_av_cal, temperature)) * _calendar_time_factor(year_k)


def calendar_resistance_growth(soc_av_cal: float, temperature: float, year_k: int,
                               coeffs: AgeingCoefficients) -> float:
    return float(coeffs.alpha_res(soc_av_cal, temperature)) * _calendar_time_factor(year_k)


@dataclass(frozen=True)
class AgeingIncrement:
    """Losses over one year: capacity fractions and relative resistance growth."""

    cycle_loss: float
    calendar_loss: float
    cycle_res_growth: float = 0.0
    calendar_res_growth: float = 0.0
    throughput_ah: float = 0.0
    n_cycles: int = 0

    @property
    def capacity_loss(self) -> float:
        return self.cycle_loss + self.calendar_loss

    @property
    def res_growth(self) -> float:
        return self.cycle_res_growth + self.calendar_res_growth

    def __iter__(self):
        # unpacks as (cycle_loss, calendar_loss)
        yield self.cycle_loss
        yield self.calendar_loss


def year_ageing(soc_trace, n_days: float, coeffs: AgeingCoefficients, temperature: float,
                capacity_ah: float, year_k: int = 0) -> AgeingIncrement:
    """Ageing over one year estimated from ``n_days`` of concatenated SoC.

    Cycle throughput is scaled by 365/n_days before applying the sqrt law;
    calendar ageing uses the mean SoC of the trace.  With n_days = 365 the
    trace is taken as the whole year.
    """
    if n_days <= 0:
        raise ValueError("n_days must be positive")
    soc = np.asarray(soc_trace, dtype=float)
    recs = rainflow(soc, capacity_ah)
    scale = DAYS_PER_YEAR / n_days
    soc_mean = float(np.mean(soc))
    return AgeingIncrement(
        cycle_loss=cycle_capacity_loss(recs, coeffs, scale),
        calendar_loss=calendar_loss(soc_mean, temperature, year_k, coeffs),
        cycle_res_growth=cycle_resistance_growth(recs, coeffs, scale),
        calendar_res_growth=calendar_resistance_growth(soc_mean, temperature, year_k, coeffs),
        throughput_ah=scale * recs.total_throughput,
        n_cycles=len(recs),
    )


def extrapolate_day_samples(soc_trace, n_days: int, coeffs: AgeingCoefficients, temperature: float,
                            capacity_ah: float, year_k: int = 0) -> AgeingIncrement:
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    return year_ageing(soc_trace, n_days, coeffs, temperature, capacity_ah, year_k)


# --- state across years -----------------------------------------------------


@dataclass(frozen=True)
class DegradationState:
    """Capacity fraction and resistances at the start of year ``year_k``."""

    year_k: int
    capacity: float
    r0: float
    r1: float
    r0_init: float = field(default=None)
    r1_init: float = field(default=None)

    def __post_init__(self):
        if self.r0_init is None:
            object.__setattr__(self, "r0_init", self.r0)
        if self.r1_init is None:
            object.__setattr__(self, "r1_init", self.r1)
        if not 0.0 < self.capacity <= 1.0:
            raise ValueError(f"capacity fraction {self.capacity} outside (0, 1]")
        if self.r0 < self.r0_init or self.r1 < self.r1_init:
            raise ValueError("resistances cannot fall below their initial values")

    @classmethod
    def new(cls, cell) -> DegradationState:
        return cls(0, 1.0, cell.r0, cell.r1)


def advance_year(state: DegradationState, cycle_loss: float, calendar_loss: float,
                 res_growth: float) -> DegradationState:
    """Apply one year of losses; resistance growth is relative to the initial values."""
    if cycle_loss < 0 or calendar_loss < 0 or res_growth < 0:
        raise ValueError("losses must be non-negative")
    cap = state.capacity - cycle_loss - calendar_loss
    if cap <= 0.0:
        raise ValueError("capacity exhausted")
    return replace(
        state,
        year_k=state.year_k + 1,
        capacity=cap,
        r0=state.r0 + res_growth * state.r0_init,
        r1=state.r1 + res_growth * state.r1_init,
    )
