"""FCR delivery, recharge scheduling, overdelivery and the 30-minute penalty metric.

Powers are in W with ``p > 0`` meaning consumption from the grid.
Frequency deviations are in Hz relative to 50 Hz.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

OD_LIMIT = 0.2


@dataclass(frozen=True)
class ControllerParams:
    """Decision vector of the recharge controller: gain, SoC setpoint, overdelivery share, deadband width."""

    k_p: float
    soc_0: float
    o_d: float
    db_p: float

    def __post_init__(self):
        if self.k_p < 0:
            raise ValueError("k_p must be >= 0")
        if not 0.0 < self.soc_0 < 1.0:
            raise ValueError("soc_0 must lie in (0, 1)")
        if not 0.0 <= self.o_d <= OD_LIMIT:
            raise ValueError(f"o_d must lie in [0, {OD_LIMIT}]")
        if self.db_p < 0:
            raise ValueError("db_p must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.k_p, self.soc_0, self.o_d, self.db_p], dtype=float)

    @classmethod
    def from_array(cls, x) -> ControllerParams:
        k_p, soc_0, o_d, db_p = (float(v) for v in x)
        return cls(k_p, soc_0, o_d, db_p)


@dataclass(frozen=True)
class MarketRules:
    """Prequalification and market timing rules.

    ``r``, ``rech_granularity``, ``p_rech_max`` and ``p_max`` are in W.
    """

    r: float
    p_max: float
    p_rech_max: float
    delta_f_max: float = 0.2
    deadband_f: float = 0.01
    t_recharge: float = 900.0
    t_lead: float = 300.0
    rech_granularity: float = 100e3

    def __post_init__(self):
        if self.r <= 0 or self.p_max <= 0:
            raise ValueError("r and p_max must be positive")
        if self.r > 0.8 * self.p_max * (1 + 1e-12):
            raise ValueError(f"r = {self.r:g} W exceeds 80% of p_max = {self.p_max:g} W")
        if self.p_rech_max > self.p_max - self.r + 1e-6:
            raise ValueError("p_rech_max must not exceed p_max - r")
        if self.p_rech_max < 0.25 * self.r - 1e-6:
            raise ValueError("p_rech_max must be at least 0.25 r")
        if self.t_lead >= self.t_recharge or self.t_lead < 0:
            raise ValueError("need 0 <= t_lead < t_recharge")
        if self.rech_granularity <= 0:
            raise ValueError("rech_granularity must be positive")

    @classmethod
    def for_bess(cls, r: float, p_max: float, **kw) -> MarketRules:
        """Rules with ``p_rech_max = p_max - r`` unless given."""
        kw.setdefault("p_rech_max", p_max - r)
        return cls(r=r, p_max=p_max, **kw)

    def steps_per_block(self, dt: float) -> int:
        return _whole_steps(self.t_recharge, dt, "t_recharge")

    def lead_steps(self, dt: float) -> int:
        return _whole_steps(self.t_lead, dt, "t_lead")

    def pack(self, dt: float) -> np.ndarray:
        out = np.empty(kernels.RULES_SIZE)
        out[kernels.FCR_R] = self.r
        out[kernels.DF_MAX] = self.delta_f_max
        out[kernels.DF_DEADBAND] = self.deadband_f
        out[kernels.STEPS_PER_BLOCK] = self.steps_per_block(dt)
        out[kernels.LEAD_STEPS] = self.lead_steps(dt)
        out[kernels.GRANULARITY] = self.rech_granularity
        out[kernels.P_RECH_MAX] = self.p_rech_max
        out[kernels.P_MAX] = self.p_max
        return out


def _whole_steps(t: float, dt: float, name: str) -> int:
    n = t / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{name} = {t} s is not a multiple of dt = {dt} s")
    return int(round(n))


@dataclass(frozen=True)
class PenaltyBounds:
    soc_min: float
    soc_max: float

    def __post_init__(self):
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ValueError(f"need 0 <= soc_min < soc_max <= 1, got {self.soc_min}, {self.soc_max}")


@dataclass(frozen=True)
class EmergencyRule:
    """|df| above ``instant``, or above ``lim_a`` for longer than ``dur_a`` s, or ``lim_b`` for ``dur_b`` s."""

    instant: float = 0.2
    lim_a: float = 0.1
    dur_a: float = 300.0
    lim_b: float = 0.05
    dur_b: float = 900.0


def fcr_power(rules: MarketRules, delta_f: float) -> float:
    return kernels.fcr_power(float(delta_f), rules.r, rules.delta_f_max, rules.deadband_f)


def recharge_setpoint(params: ControllerParams, rules: MarketRules, soc_at_t_set: float) -> float:
    """Block recharge power from the SoC sampled ``t_lead`` before the block starts.

    Dead-banded P-law scaled by ``p_max``, rounded toward zero onto the
    granularity grid and limited to ``p_rech_max``.
    """
    return kernels.recharge_setpoint(float(soc_at_t_set), params.k_p, params.soc_0, params.db_p,
                                     rules.p_max, rules.rech_granularity, rules.p_rech_max)


def overdelivery_power(params: ControllerParams, rules: MarketRules, delta_f: float, soc: float) -> float:
    return kernels.overdelivery_power(fcr_power(rules, delta_f), float(soc), params.soc_0, params.o_d)


def grid_power(params: ControllerParams, rules: MarketRules, delta_f: float, soc: float,
               block_setpoint: float) -> float:
    """FCR + recharge + overdelivery, limited to +-p_max with FCR kept intact."""
    pf = fcr_power(rules, delta_f)
    po = kernels.overdelivery_power(pf, float(soc), params.soc_0, params.o_d)
    return kernels.combine_grid_power(pf, float(block_setpoint), po, rules.p_max)[0]


def block_schedule(soc_trace, params: ControllerParams, rules: MarketRules, dt: float) -> np.ndarray:
    """Per-step recharge power implied by a SoC trace (soc[j] = state at the start of step j).

    Useful for checking a simulated trace: the block starting at step m
    uses soc[m - lead]; the first block uses soc[0].
    """
    soc = np.asarray(soc_trace, dtype=float)
    spb = rules.steps_per_block(dt)
    lead = rules.lead_steps(dt)
    n = soc.size - 1
    out = np.empty(n)
    for start in range(0, n, spb):
        idx = start - lead if start >= lead else 0
        out[start:start + spb] = recharge_setpoint(params, rules, soc[idx])
    return out


def emergency_trace(delta_f, dt: float, rule: EmergencyRule = EmergencyRule()) -> np.ndarray:
    """Per-step emergency flag; run lengths start at the beginning of the trace."""
    df = np.ascontiguousarray(delta_f, dtype=float)
    return kernels.emergency_flags(df, float(dt), rule.instant, rule.lim_a, rule.dur_a, rule.lim_b, rule.dur_b)


def emergency_state(delta_f_history, dt: float, rule: EmergencyRule = EmergencyRule()) -> bool:
    """Emergency flag at the last sample of ``delta_f_history``."""
    df = np.asarray(delta_f_history, dtype=float)
    if df.size == 0:
        return False
    return bool(emergency_trace(df, dt, rule)[-1])


def penalty_metric(soc_trace, bounds: PenaltyBounds, emergency=None) -> float:
    """Share of steps with SoC outside the bounds, ignoring emergency steps."""
    soc = np.asarray(soc_trace, dtype=float)
    if soc.size == 0:
        return 0.0
    out = (soc > bounds.soc_max) | (soc < bounds.soc_min)
    if emergency is not None:
        em = np.asarray(emergency, dtype=bool)
        if em.shape != soc.shape:
            raise ValueError("soc and emergency traces must have the same length")
        out &= ~em
    return float(np.count_nonzero(out)) / soc.size
