"""First-order RC equivalent-circuit model of one Li-ion cell."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter

from . import kernels


class DomainError(ValueError):
    """Input outside the domain of a model function."""


class CapabilityError(ValueError):
    """Requested cell power is beyond what the cell can deliver."""


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class CellParams:
    """Electrical and thermal parameters of a cell.

    Defaults are the Sanyo UR18650E values; ``e_rated_wh`` is the product
    of capacity and nominal voltage (2.05 Ah x 3.6 V).
    """

    capacity_ah: float = 2.05
    r0: float = 0.0334
    r1: float = 0.0114
    c1: float = 1867.0
    eta_coulomb: float = 0.99
    v_nom: float = 3.6
    v_cutoff_charge: float = 4.2
    v_cutoff_discharge: float = 2.75
    heat_capacity: float = 40.05  # J/K
    e_rated_wh: float = 7.38

    def __post_init__(self):
        if not (self.r0 >= 0 and self.r1 >= 0 and self.c1 > 0):
            raise ValueError("r0 and r1 must be non-negative and c1 positive")
        if not 0 < self.eta_coulomb <= 1:
            raise ValueError("eta_coulomb must be in (0, 1]")
        if not self.v_cutoff_discharge < self.v_nom < self.v_cutoff_charge:
            raise ValueError("need v_cutoff_discharge < v_nom < v_cutoff_charge")
        if self.capacity_ah <= 0 or self.heat_capacity <= 0:
            raise ValueError("capacity and heat capacity must be positive")
        if abs(self.e_rated_wh - self.capacity_ah * self.v_nom) > 0.005 * self.e_rated_wh:
            raise ValueError("e_rated_wh must equal capacity_ah * v_nom within 0.5%")

    @property
    def tau(self) -> float:
        return self.r1 * self.c1


@dataclass(frozen=True)
class OcvCurve:
    """Open-circuit voltage as a piecewise-linear function of SoC."""

    soc: np.ndarray
    voltage: np.ndarray

    def __post_init__(self):
        soc = np.ascontiguousarray(self.soc, dtype=float)
        v = np.ascontiguousarray(self.voltage, dtype=float)
        if soc.ndim != 1 or soc.shape != v.shape or soc.size < 2:
            raise ValueError("OCV curve needs two equal-length 1-D arrays with >= 2 points")
        if soc[0] != 0.0 or soc[-1] != 1.0:
            raise ValueError("OCV curve must cover SoC 0 to 1")
        if np.any(np.diff(soc) <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("OCV curve must be strictly increasing in SoC and voltage")
        soc.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "soc", soc)
        object.__setattr__(self, "voltage", v)

    @classmethod
    def from_csv(cls, path) -> OcvCurve:
        soc, v = _read_columns(path, 2)
        return cls(soc, v)

    def to_csv(self, path) -> None:
        _write_columns(path, ("soc", "volts"), (self.soc, self.voltage))

    @classmethod
    def default(cls) -> OcvCurve:
        """Generic NMC/graphite curve shipped with the package (placeholder shape)."""
        with resources.as_file(resources.files("fcrbess.resources") / "ocv_nmc_default.csv") as p:
            return cls.from_csv(p)


@dataclass
class CellState:
    soc: float
    v_c1: float = 0.0
    temperature: float = 25.0

    def __post_init__(self):
        if not 0.0 <= self.soc <= 1.0:
            raise DomainError(f"soc {self.soc} outside [0, 1]")


def ocv_lookup(curve: OcvCurve, soc):
    """V_OC at ``soc`` (scalar or array)."""
    s = np.asarray(soc, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0) or np.any(np.isnan(s)):
        raise DomainError("soc outside [0, 1]")
    out = np.interp(s, curve.soc, curve.voltage)
    return float(out) if out.ndim == 0 else out


def solve_current(v_open: float, r0: float, p_cell: float) -> float:
    """Cell current for power ``p_cell`` behind open voltage ``v_open`` (V_OC + V_C1) and ``r0``.

    Solves (v_open + r0*I)*I = p_cell for the root that is continuous
    through p_cell = 0.
    """
    i = kernels.solve_current(float(v_open), float(r0), float(p_cell))
    if math.isnan(i):
        p_lim = -v_open * v_open / (4.0 * r0)
        raise CapabilityError(
            f"cell power {p_cell:.4g} W below the feasible minimum {p_lim:.4g} W"
        )
    return i


def current_from_power(params: CellParams, state: CellState, p_cell: float, curve: OcvCurve) -> float:
    v_open = ocv_lookup(curve, state.soc) + state.v_c1
    return solve_current(v_open, params.r0, p_cell)


def max_discharge_power(params: CellParams, state: CellState, curve: OcvCurve) -> float:
    """Most negative cell power the quadratic admits (W)."""
    v_open = ocv_lookup(curve, state.soc) + state.v_c1
    if params.r0 == 0.0:
        return -math.inf
    return -v_open * v_open / (4.0 * params.r0)


def step_rc_branch(params: CellParams, v_c1: float, i: float, dt: float, r1: float | None = None) -> float:
    """Exact zero-order-hold update of the parallel R1-C1 voltage."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    r1 = params.r1 if r1 is None else r1
    a = kernels.rc_decay(float(dt), float(r1), float(params.c1))
    return v_c1 * a + (1.0 - a) * r1 * i


def step_soc(params: CellParams, soc: float, i: float, dt: float, capacity_ah: float | None = None):
    """Coulomb counting with charge/discharge efficiency split.

    Returns ``(soc_next, clipped)``; ``clipped`` is True when the raw
    update left [0, 1].
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cap_as = (params.capacity_ah if capacity_ah is None else capacity_ah) * 3600.0
    eta = params.eta_coulomb
    if i > 0:
        nxt = soc + eta * i * dt / cap_as
    else:
        nxt = soc + i * dt / (eta * cap_as)
    if nxt > 1.0:
        return 1.0, True
    if nxt < 0.0:
        return 0.0, True
    return nxt, False


# --- pulse-test fitting ---------------------------------------------------


@dataclass
class PulseFit:
    r0: float
    r1: float
    c1: float
    residual_norm: float
    n_points: int = field(default=0)

    def apply(self, params: CellParams) -> CellParams:
        from dataclasses import replace

        return replace(params, r0=self.r0, r1=self.r1, c1=self.c1)


def rc_voltage_response(t, current, curve: OcvCurve, soc0: float, capacity_ah: float,
                        r0: float, r1: float, c1: float, eta_coulomb: float = 1.0) -> np.ndarray:
    """Terminal voltage of the RC model driven by a sampled current profile.

    Current is held constant over each sample interval (zero-order hold);
    positive current charges.
    """
    t = np.asarray(t, dtype=float)
    cur = np.asarray(current, dtype=float)
    dt = np.diff(t)
    cap_as = capacity_ah * 3600.0
    step = np.where(cur[:-1] > 0, eta_coulomb * cur[:-1], cur[:-1] / eta_coulomb) * dt / cap_as
    soc = np.clip(soc0 + np.concatenate(([0.0], np.cumsum(step))), 0.0, 1.0)
    a = np.exp(-dt / (r1 * c1))
    if np.allclose(dt, dt[0]):
        vc1 = lfilter([0.0, (1.0 - a[0]) * r1], [1.0, -a[0]], cur)
    else:
        vc1 = np.zeros(t.size)
        for k in range(t.size - 1):
            vc1[k + 1] = vc1[k] * a[k] + (1.0 - a[k]) * r1 * cur[k]
    return np.interp(soc, curve.soc, curve.voltage) + vc1 + r0 * cur


def synth_pulse(params: CellParams, curve: OcvCurve, soc0: float = 0.5, amplitude: float | None = None,
                dt: float = 1.0):
    """Two rounds of rest / discharge / rest / charge / rest at 1C (or ``amplitude`` A).

    Returns (t, current, voltage) generated with ``params``.
    """
    amp = params.capacity_ah if amplitude is None else amplitude
    segments = [(10, 0.0), (60, -amp), (120, 0.0), (60, amp), (120, 0.0)] * 2
    cur = np.concatenate([np.full(int(d / dt), c) for d, c in segments])
    t = np.arange(cur.size) * dt
    v = rc_voltage_response(t, cur, curve, soc0, params.capacity_ah, params.r0, params.r1, params.c1,
                            params.eta_coulomb)
    return t, cur, v


def fit_rc_from_pulse(t, current, voltage, curve: OcvCurve, soc0: float, capacity_ah: float = 2.05,
                      eta_coulomb: float = 1.0) -> PulseFit:
    """Least-squares fit of (R0, R1, C1) to a measured pulse response.

    Parameters are fitted in log space, which keeps them positive and
    balances their very different magnitudes.
    """
    t = np.asarray(t, dtype=float)
    cur = np.asarray(current, dtype=float)
    v = np.asarray(voltage, dtype=float)
    if not (t.shape == cur.shape == v.shape) or t.size < 4:
        raise FitError("time, current and voltage must be equal-length series")
    steps = np.flatnonzero(np.diff(cur) != 0)
    if steps.size == 0:
        raise FitError("pulse has no current step; R0/R1/C1 are not identifiable")
    if not np.any(cur == 0):
        raise FitError("pulse has no relaxation (zero-current) segment")

    # initial guess: instantaneous jump at the first step gives R0
    k = steps[0]
    di = cur[k + 1] - cur[k]
    r0_0 = max(abs((v[k + 1] - v[k]) / di), 1e-4)
    r1_0 = r0_0 * 0.5
    c1_0 = 30.0 / r1_0

    def resid(logp):
        r0, r1, c1 = np.exp(logp)
        return rc_voltage_response(t, cur, curve, soc0, capacity_ah, r0, r1, c1, eta_coulomb) - v

    best = None
    for scale in (1.0, 0.2, 5.0):
        x0 = np.log([r0_0, r1_0 * scale, c1_0])
        sol = least_squares(resid, x0, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=4000)
        if best is None or sol.cost < best.cost:
            best = sol
    r0, r1, c1 = np.exp(best.x)
    return PulseFit(float(r0), float(r1), float(c1), float(np.linalg.norm(best.fun)), int(t.size))


def read_pulse_csv(path):
    """(t, current, voltage) from a three-column CSV: seconds, amps, volts."""
    return _read_columns(path, 3)


def write_pulse_csv(path, t, current, voltage) -> None:
    _write_columns(path, ("seconds", "amps", "volts"), (t, current, voltage))


def _read_columns(path, ncols):
    rows = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < ncols:
            raise ValueError(f"{path}: expected a header with {ncols} columns")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(x) for x in row[:ncols]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(rows, dtype=float).reshape(-1, ncols)
    return tuple(arr[:, j].copy() for j in range(ncols))


def _write_columns(path, header, columns):
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(x)) for x in row])
