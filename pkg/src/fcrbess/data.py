"""Frequency and price time series: CSV ingest, day-sample pool, seeded draws, synthetic generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import kernels

F_NOM = 50.0
DAY_S = 86400.0
QUARTER_S = 900.0
EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


class DataError(ValueError):
    """Malformed or incomplete input data."""


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; the algorithm is pinned so draws match across platforms."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _parse_time(text: str, where: str) -> float:
    """Seconds since 2000-01-01 UTC from ISO-8601 or plain seconds."""
    s = text.strip()
    try:
        return float(s)
    except ValueError:
        pass
    try:
        ts = datetime.fromisoformat(s.replace("Z", "+00:00"))
    except ValueError:
        raise DataError(f"{where}: cannot parse timestamp {s!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return (ts - EPOCH).total_seconds()


def _format_time(seconds: float) -> str:
    return (EPOCH + timedelta(seconds=float(seconds))).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass(frozen=True)
class FrequencySample:
    """Uniformly sampled frequency deviation (Hz from 50 Hz) starting at ``start`` (s since 2000-01-01 UTC)."""

    start: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("values must be 1-D")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def steps_per_day(self) -> int:
        return _whole(DAY_S, self.dt)

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    def slice_steps(self, i0: int, n: int) -> FrequencySample:
        return FrequencySample(self.start + i0 * self.dt, self.dt, self.values[i0:i0 + n])


def _whole(t, dt):
    n = t / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{t} s is not a multiple of dt = {dt} s")
    return int(round(n))


def load_frequency_csv(path, dt: float = 10.0, column: str | None = None) -> FrequencySample:
    """Read (timestamp, frequency) or (timestamp, delta_f) rows and average onto ``dt``.

    The value column is chosen by header name: ``frequency``/``f``/``hz``
    for absolute values, ``delta_f``/``df`` for deviations, or ``column``.
    The native spacing is taken from the first two rows and must hold
    throughout; ``dt`` must be a whole multiple of it.  A trailing partial
    bucket is dropped.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise DataError(f"{path}: expected a header with a timestamp and a value column")
        names = [h.strip().lower() for h in header]
        if column is not None:
            if column.lower() not in names:
                raise DataError(f"{path}: column {column!r} not in header {header}")
            vcol = names.index(column.lower())
        else:
            vcol = 1
        absolute = names[vcol] in ("frequency", "f", "hz", "freq", "frequency_hz")
        if not absolute and names[vcol] not in ("delta_f", "df", "deviation", "delta_f_hz"):
            raise DataError(f"{path}: cannot tell whether column {header[vcol]!r} is frequency or deviation")
        times = []
        vals = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            t = _parse_time(row[0], where)
            try:
                v = float(row[vcol])
            except (ValueError, IndexError):
                raise DataError(f"{where}: bad value {row[vcol:vcol + 1]}") from None
            if math.isnan(v):
                raise DataError(f"{where}: NaN value")
            if times:
                step = t - times[-1]
                if step <= 0:
                    raise DataError(f"{where}: timestamps not increasing")
                if len(times) >= 2 and abs(step - native) > 1e-6 * native:
                    raise DataError(f"{where}: gap of {step:g} s (expected {native:g} s)")
                if len(times) == 1:
                    native = step
            times.append(t)
            vals.append(v)
    if len(vals) < 2:
        raise DataError(f"{path}: need at least two rows")
    v = np.asarray(vals)
    if absolute:
        v = v - F_NOM
    k = _whole(dt, native) if dt >= native else None
    if k is None:
        raise DataError(f"{path}: dt {dt} s finer than the data spacing {native} s")
    n = v.size // k
    return FrequencySample(times[0], float(dt), v[: n * k].reshape(n, k).mean(axis=1))


def export_frequency_csv(sample: FrequencySample, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("timestamp", "delta_f"))
        for j, x in enumerate(sample.values):
            w.writerow((_format_time(sample.start + j * sample.dt), repr(float(x))))


# --- day-sample pool ----------------------------------------------------------


class SamplePool:
    """Day samples starting at every ``stride`` seconds of a continuous trace.

    Offsets wrap around the end of the trace, so a trace of D whole days
    gives D * 86400 / stride samples.
    """

    def __init__(self, trace: FrequencySample, stride: float = QUARTER_S, day: float = DAY_S):
        if len(trace) == 0:
            raise ValueError("empty trace")
        self.trace = trace
        self.stride_steps = _whole(stride, trace.dt)
        self.day_steps = _whole(day, trace.dt)
        if len(trace) < self.day_steps:
            raise ValueError("trace shorter than one day sample")
        if len(trace) % self.stride_steps:
            raise ValueError("trace length must be a whole number of strides")
        self._ext = np.concatenate([trace.values, trace.values[: self.day_steps]])

    def __len__(self) -> int:
        return len(self.trace) // self.stride_steps

    @property
    def dt(self) -> float:
        return self.trace.dt

    def offset(self, i: int) -> int:
        if not 0 <= i < len(self):
            raise IndexError(i)
        return i * self.stride_steps

    def day(self, i: int) -> np.ndarray:
        o = self.offset(int(i))
        return self._ext[o:o + self.day_steps]

    def sample(self, i: int) -> FrequencySample:
        return FrequencySample(self.trace.start + self.offset(int(i)) * self.dt, self.dt, self.day(i))

    def concat(self, ids) -> np.ndarray:
        return np.concatenate([self.day(i) for i in ids]) if len(ids) else np.empty(0)


def draw_day_ids(pool: SamplePool, n: int, rng) -> np.ndarray:
    """Uniform with-replacement sample ids."""
    if len(pool) == 0:
        raise ValueError("empty pool")
    return make_rng(rng).integers(0, len(pool), size=n)


def draw_day_samples(pool: SamplePool, n: int, seed) -> list:
    return [pool.sample(i) for i in draw_day_ids(pool, n, seed)]


def draw_year_batches(years: list, n_batches: int, n_per_batch: int, seed) -> list:
    """Batches of whole-year traces drawn with replacement from ``years``."""
    rng = make_rng(seed)
    return [[years[j] for j in rng.integers(0, len(years), size=n_per_batch)] for _ in range(n_batches)]


# --- synthetic frequency --------------------------------------------------------


@dataclass(frozen=True)
class SynthFrequencyParams:
    """Mean-reverting noise plus rare rectangular excursions.

    ``std`` is the stationary standard deviation (Hz) of the noise, ``tau``
    its correlation time (s).  Excursions arrive as a Poisson process with
    ``excursion_rate`` per day, last ``excursion_duration`` s and add
    +-``excursion_amplitude`` Hz.
    """

    std: float = 0.02
    tau: float = 300.0
    excursion_rate: float = 0.0
    excursion_amplitude: float = 0.15
    excursion_duration: float = 600.0

    def __post_init__(self):
        if self.std < 0 or self.tau <= 0 or self.excursion_rate < 0 or self.excursion_duration < 0:
            raise ValueError("invalid synthetic frequency parameters")


def synth_frequency(params: SynthFrequencyParams, duration: float, dt: float = 10.0, seed=0,
                    start: float = 0.0) -> FrequencySample:
    n = _whole(duration, dt)
    rng = make_rng(seed)
    a = math.exp(-dt / params.tau)
    scale = params.std * math.sqrt(1.0 - a * a)
    x0 = params.std * rng.standard_normal()
    values = kernels.ou_process(rng.standard_normal(n), a, scale, x0)
    if params.excursion_rate > 0 and params.excursion_amplitude != 0:
        k = rng.poisson(params.excursion_rate * duration / DAY_S)
        starts = rng.integers(0, n, size=k)
        signs = rng.choice((-1.0, 1.0), size=k)
        width = max(1, int(round(params.excursion_duration / dt)))
        for s, sg in zip(starts, signs):
            values[s:s + width] += sg * params.excursion_amplitude
    return FrequencySample(start, dt, values)


# --- prices -----------------------------------------------------------------------


@dataclass(frozen=True)
class PriceSeries:
    """Prices in EUR/MWh at fixed spacing (default 15 min)."""

    start: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=float))

    def __len__(self) -> int:
        return self.values.size

    def window(self, t0: float, n: int) -> np.ndarray:
        """``n`` consecutive prices from time ``t0``; raises DataError on missing entries."""
        i0 = (t0 - self.start) / self.dt
        if abs(i0 - round(i0)) > 1e-6:
            raise DataError(f"time {_format_time(t0)} is not on the price grid")
        i0 = int(round(i0))
        if i0 < 0 or i0 + n > len(self):
            bad = t0 if i0 < 0 else self.start + len(self) * self.dt
            raise DataError(f"no price for {_format_time(bad)}")
        out = self.values[i0:i0 + n]
        nan = np.flatnonzero(np.isnan(out))
        if nan.size:
            raise DataError(f"no price for {_format_time(t0 + nan[0] * self.dt)}")
        return out

    @classmethod
    def constant(cls, price: float, n: int, dt: float = QUARTER_S, start: float = 0.0) -> PriceSeries:
        return cls(start, dt, np.full(n, float(price)))


def load_price_csv(path, dt: float = QUARTER_S) -> PriceSeries:
    """(timestamp, EUR/MWh) rows on a regular ``dt`` grid; empty cells become missing prices."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) is None:
            raise DataError(f"{path}: empty file")
        rows = [(lineno, r) for lineno, r in enumerate(reader, start=2) if r]
    if not rows:
        raise DataError(f"{path}: no data rows")
    t0 = _parse_time(rows[0][1][0], f"{path}:{rows[0][0]}")
    vals = []
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        t = _parse_time(row[0], where)
        expect = t0 + len(vals) * dt
        if abs(t - expect) > 1e-6:
            raise DataError(f"{where}: expected timestamp {_format_time(expect)}, got {row[0]}")
        cell = row[1].strip() if len(row) > 1 else ""
        try:
            vals.append(float(cell) if cell else float("nan"))
        except ValueError:
            raise DataError(f"{where}: bad price {cell!r}") from None
    return PriceSeries(t0, dt, np.array(vals))


def export_price_csv(series: PriceSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("timestamp", "eur_per_mwh"))
        for j, x in enumerate(series.values):
            w.writerow((_format_time(series.start + j * series.dt), "" if np.isnan(x) else repr(float(x))))


def synth_prices(n: int, mean: float = 40.0, std: float = 10.0, seed=0, dt: float = QUARTER_S,
                 daily_amplitude: float = 0.0, start: float = 0.0) -> PriceSeries:
    """AR(1) prices with an optional daily sine; a test fixture, not a market model."""
    rng = make_rng(seed)
    a = 0.9
    noise = kernels.ou_process(rng.standard_normal(n), a, std * math.sqrt(1 - a * a), 0.0)
    t = start + np.arange(n) * dt
    return PriceSeries(start, dt, mean + noise + daily_amplitude * np.sin(2 * np.pi * t / DAY_S))
