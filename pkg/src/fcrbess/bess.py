"""Assembled battery system: cells, inverter, HVAC loop and test procedures.

Grid power is positive when the system consumes from the grid.  The
HVAC is supplied from the battery side and its electrical draw is
removed from the power reaching the cells.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import kernels
from .cell import CellParams, CellState, OcvCurve, _read_columns
from .controller import ControllerParams, MarketRules, PenaltyBounds
from .degradation import DegradationState


class PrequalificationError(RuntimeError):
    """The system cannot complete the prequalification discharge test."""


@dataclass(frozen=True)
class InverterCurve:
    """One-way inverter efficiency against load as a fraction of rated power."""

    p_frac: np.ndarray
    efficiency: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.p_frac, dtype=float)
        y = np.ascontiguousarray(self.efficiency, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("inverter curve needs two equal-length 1-D arrays with >= 2 points")
        if np.any(np.diff(x) <= 0) or x[0] < 0:
            raise ValueError("inverter p_frac must be strictly increasing and >= 0")
        if np.any(y <= 0) or np.any(y > 1):
            raise ValueError("inverter efficiency must lie in (0, 1]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "p_frac", x)
        object.__setattr__(self, "efficiency", y)

    def __call__(self, p_frac):
        out = np.interp(np.abs(np.asarray(p_frac, dtype=float)), self.p_frac, self.efficiency)
        return float(out) if out.ndim == 0 else out

    @classmethod
    def from_csv(cls, path) -> InverterCurve:
        x, y = _read_columns(path, 2)
        return cls(x, y)

    @classmethod
    def default(cls) -> InverterCurve:
        """Generic string-inverter shape (placeholder, not a datasheet)."""
        with resources.as_file(resources.files("fcrbess.resources") / "inverter_default.csv") as p:
            return cls.from_csv(p)

    @classmethod
    def ideal(cls) -> InverterCurve:
        return cls(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


@dataclass(frozen=True)
class BessConfig:
    """Static description of a BESS.

    ``n_cells`` defaults to round(E_rated / E_cell); ``hvac_gain`` (W/K)
    defaults to the value that holds a 1 K offset above ``t_ref`` while
    the pack carries rated power at nominal voltage.
    """

    e_rated_mwh: float
    p_max_mw: float
    cell: CellParams = field(default_factory=CellParams)
    ocv: OcvCurve = field(default_factory=OcvCurve.default)
    inverter: InverterCurve = field(default_factory=InverterCurve.default)
    cop: float = 2.5
    t_ref: float = 25.0
    hvac_p_limit_frac: float = 0.02
    dt: float = 10.0
    n_cells: int | None = None
    hvac_gain: float | None = None
    inverter_rated_mw: float | None = None

    def __post_init__(self):
        if self.e_rated_mwh <= 0 or self.p_max_mw <= 0:
            raise ValueError("e_rated_mwh and p_max_mw must be positive")
        if self.dt <= 0 or self.cop <= 0:
            raise ValueError("dt and cop must be positive")
        if not 0 <= self.hvac_p_limit_frac < 1:
            raise ValueError("hvac_p_limit_frac must lie in [0, 1)")
        if self.n_cells is None:
            object.__setattr__(self, "n_cells", int(round(self.e_rated_mwh * 1e6 / self.cell.e_rated_wh)))
        if self.n_cells < 1:
            raise ValueError("system needs at least one cell")
        if self.inverter_rated_mw is None:
            object.__setattr__(self, "inverter_rated_mw", self.p_max_mw)
        if self.hvac_gain is None:
            i_rated = self.p_max_w / (self.n_cells * self.cell.v_nom)
            heat = (self.cell.r0 + self.cell.r1) * i_rated**2 * self.n_cells
            object.__setattr__(self, "hvac_gain", heat / self.cop)

    @classmethod
    def from_rating(cls, e_rated_mwh: float, c_rate: float, **kw) -> BessConfig:
        return cls(e_rated_mwh=e_rated_mwh, p_max_mw=c_rate * e_rated_mwh, **kw)

    @classmethod
    def from_cells(cls, n_cells: int, p_max_w: float, **kw) -> BessConfig:
        cell = kw.get("cell", CellParams())
        return cls(e_rated_mwh=n_cells * cell.e_rated_wh * 1e-6, p_max_mw=p_max_w * 1e-6, n_cells=n_cells, **kw)

    @property
    def p_max_w(self) -> float:
        return self.p_max_mw * 1e6

    @property
    def e_rated_wh(self) -> float:
        return self.e_rated_mwh * 1e6

    @property
    def c_rate(self) -> float:
        return self.p_max_mw / self.e_rated_mwh

    @property
    def hvac_limit_w(self) -> float:
        return self.hvac_p_limit_frac * self.p_max_w


@dataclass
class BessState:
    cell: CellState
    losses_kwh: float = 0.0
    n_clipped: int = 0


def pack_cell(cell: CellParams, degr: DegradationState | None = None) -> np.ndarray:
    out = np.empty(kernels.CELL_SIZE)
    cap = cell.capacity_ah if degr is None else cell.capacity_ah * degr.capacity
    out[kernels.CAP_AH] = cap
    out[kernels.R0] = cell.r0 if degr is None else degr.r0
    out[kernels.R1] = cell.r1 if degr is None else degr.r1
    out[kernels.C1] = cell.c1
    out[kernels.ETA_C] = cell.eta_coulomb
    out[kernels.V_CH] = cell.v_cutoff_charge
    out[kernels.V_DIS] = cell.v_cutoff_discharge
    out[kernels.CP] = cell.heat_capacity
    return out


def pack_plant(config: BessConfig) -> np.ndarray:
    out = np.empty(kernels.PLANT_SIZE)
    out[kernels.N_CELLS] = config.n_cells
    out[kernels.DT] = config.dt
    out[kernels.COP] = config.cop
    out[kernels.T_REF] = config.t_ref
    out[kernels.HVAC_LIMIT] = config.hvac_limit_w
    out[kernels.HVAC_GAIN] = config.hvac_gain
    out[kernels.INV_RATED] = config.inverter_rated_mw * 1e6
    return out


def _curves(config: BessConfig):
    return config.ocv.soc, config.ocv.voltage, config.inverter.p_frac, config.inverter.efficiency


def step_hvac(config: BessConfig, state: BessState, i_cell: float, degr: DegradationState | None = None):
    """HVAC power for the current temperature and the temperature after one step.

    Returns ``(new_temperature, p_hvac)``.
    """
    r0 = config.cell.r0 if degr is None else degr.r0
    r1 = config.cell.r1 if degr is None else degr.r1
    temp = state.cell.temperature
    p_hvac = kernels.hvac_power(temp, pack_plant(config))
    n = config.n_cells
    heat = (r0 + r1) * i_cell * i_cell * n
    t_next = temp + (heat - config.cop * p_hvac) / (config.cell.heat_capacity * n) * config.dt
    return t_next, p_hvac


@dataclass(frozen=True)
class StepResult:
    i_cell: float
    p_bat: float
    p_grid: float
    p_hvac: float
    v_bat: float
    clipped: bool


def step_bess(config: BessConfig, state: BessState, degr: DegradationState | None, p_grid: float):
    """Advance one step at requested grid power ``p_grid`` (W).

    Returns ``(new_state, StepResult)``; ``StepResult.p_grid`` is the power
    actually exchanged after any clipping at the voltage or SoC limits.
    """
    if abs(p_grid) > config.p_max_w * (1 + 1e-12):
        raise ValueError(f"|p_grid| = {abs(p_grid):g} W exceeds p_max = {config.p_max_w:g} W")
    ox, oy, ix, iy = _curves(config)
    c = state.cell
    soc, vc1, temp, pg, pb, ph, i, vb, flag = kernels.bess_step(
        float(p_grid), c.soc, c.v_c1, c.temperature, pack_cell(config.cell, degr), pack_plant(config), ox, oy, ix, iy
    )
    loss_kwh = (pg - pb) * config.dt / 3.6e6
    clipped = flag != kernels.CLIP_NONE
    new = BessState(CellState(soc, vc1, temp), state.losses_kwh + loss_kwh, state.n_clipped + int(clipped))
    return new, StepResult(i, pb, pg, ph, vb, clipped)


@dataclass
class Trace:
    """Per-step decomposition of a simulation.

    ``soc`` and ``temperature`` hold the state at the start of every step
    plus the final state (length n+1); the other series have length n.
    """

    dt: float
    delta_f: np.ndarray
    p_grid: np.ndarray
    p_rech: np.ndarray
    p_od: np.ndarray
    p_hvac: np.ndarray
    i_cell: np.ndarray
    v_bat: np.ndarray
    soc: np.ndarray
    temperature: np.ndarray
    clipped: np.ndarray
    v_c1_final: float = 0.0

    def __len__(self) -> int:
        return self.p_grid.size

    @property
    def energy_in_wh(self) -> float:
        return float(np.sum(np.maximum(self.p_grid, 0.0))) * self.dt / 3600.0

    @property
    def energy_out_wh(self) -> float:
        return float(np.sum(np.maximum(-self.p_grid, 0.0))) * self.dt / 3600.0

    def final_state(self) -> CellState:
        return CellState(float(self.soc[-1]), self.v_c1_final, float(self.temperature[-1]))

    def to_csv(self, path) -> None:
        """One row per step; ``t`` is the end of the step and soc/temperature the state reached."""
        cols = ("t", "delta_f", "p_grid", "p_rech", "p_od", "p_hvac", "i_cell", "v_bat", "soc", "temperature")
        t = (np.arange(len(self)) + 1) * self.dt
        data = (t, self.delta_f, self.p_grid, self.p_rech, self.p_od, self.p_hvac, self.i_cell, self.v_bat,
                self.soc[1:], self.temperature[1:])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*data):
                w.writerow([repr(float(x)) for x in row])


def simulate(config: BessConfig, rules: MarketRules, params: ControllerParams, delta_f,
             degr: DegradationState | None = None, initial: CellState | None = None) -> Trace:
    """Run controller and plant over ``delta_f`` sampled at ``config.dt``.

    The trace is taken to start on a recharge-block boundary.  The
    default initial state is SoC = soc_0 with a relaxed RC branch at
    ``t_ref``.
    """
    df = np.ascontiguousarray(delta_f, dtype=float)
    if df.ndim != 1:
        raise ValueError("delta_f must be 1-D")
    if abs(rules.p_max - config.p_max_w) > 1e-6 * config.p_max_w:
        raise ValueError("market rules and BESS disagree on p_max")
    init = initial or CellState(params.soc_0, 0.0, config.t_ref)
    ox, oy, ix, iy = _curves(config)
    soc, temp, pg, pr, po, ph, i, vb, fl, vc1 = kernels.simulate_trace(
        df, params.as_array(), rules.pack(config.dt), pack_cell(config.cell, degr), pack_plant(config),
        ox, oy, ix, iy, float(init.soc), float(init.v_c1), float(init.temperature),
    )
    return Trace(config.dt, df, pg, pr, po, ph, i, vb, soc, temp, fl != kernels.CLIP_NONE, float(vc1))


def _run_profile(config, degr, profile, soc0, vc10, temp0, stop_on_clip):
    ox, oy, ix, iy = _curves(config)
    return kernels.run_power_profile(
        np.ascontiguousarray(profile, dtype=float), stop_on_clip, pack_cell(config.cell, degr), pack_plant(config),
        ox, oy, ix, iy, float(soc0), float(vc10), float(temp0),
    )


def _max_steps(config, degr, p):
    cap = 1.0 if degr is None else degr.capacity
    hours = 1.5 * config.e_rated_wh * cap / abs(p) + 1.0
    return int(math.ceil(hours * 3600.0 / config.dt))


@dataclass(frozen=True)
class PowerLevelResult:
    power_w: float
    energy_in_wh: float
    energy_out_wh: float

    @property
    def round_trip_efficiency(self) -> float:
        return self.energy_out_wh / self.energy_in_wh if self.energy_in_wh > 0 else 0.0


def characterize_constant_power(config: BessConfig, degr: DegradationState | None, p_levels) -> list:
    """Charge from empty until a limit is hit, then discharge until a limit is hit, per power level.

    Energies are grid-side.  Returns a list of :class:`PowerLevelResult`.
    """
    out = []
    for p in p_levels:
        p = float(p)
        if not 0 < p <= config.inverter_rated_mw * 1e6 * (1 + 1e-12):
            raise ValueError(f"power level {p} W outside (0, inverter rating]")
        n = _max_steps(config, degr, p)
        n1, soc, pg, _, _, vc1, temp = _run_profile(config, degr, np.full(n, p), 0.0, 0.0, config.t_ref, True)
        e_in = float(np.sum(pg)) * config.dt / 3600.0
        n2, _, pg2, _, _, _, _ = _run_profile(config, degr, np.full(n, -p), soc[-1], vc1, temp, True)
        e_out = float(-np.sum(pg2)) * config.dt / 3600.0
        out.append(PowerLevelResult(p, e_in, e_out))
    return out


@dataclass(frozen=True)
class DoppelhoeckerResult:
    soc_min: float
    soc_max: float
    energy_discharged_wh: float

    def bounds(self) -> PenaltyBounds:
        return PenaltyBounds(self.soc_min, self.soc_max)


def _reserve_soc(config, degr, r_w, sign):
    """SoC at which 0.5 h of power r remains in the direction ``sign`` (-1 discharge, +1 charge)."""
    spq = int(round(900.0 / config.dt))
    pulse = np.concatenate([np.full(spq, sign * r_w), np.zeros(spq)])
    head = np.concatenate([pulse, pulse])
    tail = np.full(_max_steps(config, degr, r_w), sign * r_w)
    start = 1.0 if sign < 0 else 0.0
    n, soc, pg, _, flags, _, _ = _run_profile(
        config, degr, np.concatenate([head, tail]), start, 0.0, config.t_ref, True
    )
    if n <= head.size:
        raise PrequalificationError(
            f"cannot hold {r_w / 1e6:g} MW for the two 15-min test pulses ({'dis' if sign < 0 else ''}charge)"
        )
    e = np.concatenate(([0.0], np.cumsum(np.abs(pg)) * config.dt / 3600.0))
    remaining = e[-1] - e
    target = 0.5 * r_w
    k = int(np.argmax(remaining <= target))
    if remaining[0] <= target:
        raise PrequalificationError("system holds less than 30 min of energy at power r")
    w = (remaining[k - 1] - target) / (remaining[k - 1] - remaining[k])
    return soc[k - 1] + w * (soc[k] - soc[k - 1]), float(e[-1])


def doppelhoeckertest(config: BessConfig, degr: DegradationState | None, r_mw: float) -> DoppelhoeckerResult:
    """Prequalification test from full charge and the derived 30-min SoC bounds.

    Profile: two cycles of 15 min discharge at r and 15 min rest, then
    discharge at r until a limit is reached.  ``soc_min`` is the SoC at
    which the remaining grid-side energy equals r x 0.5 h; ``soc_max``
    comes from the mirrored charging test starting empty.
    """
    r_w = r_mw * 1e6
    if r_w <= 0 or r_w > 0.8 * config.p_max_w * (1 + 1e-12):
        raise ValueError("need 0 < r <= 0.8 p_max")
    soc_min, e_dis = _reserve_soc(config, degr, r_w, -1)
    soc_max, _ = _reserve_soc(config, degr, r_w, +1)
    if not soc_min < soc_max:
        raise PrequalificationError(f"30-min bounds collapse: soc_min {soc_min:.4f} >= soc_max {soc_max:.4f}")
    return DoppelhoeckerResult(float(soc_min), float(soc_max), e_dis)

