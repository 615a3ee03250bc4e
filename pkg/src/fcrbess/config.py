"""YAML run configuration with fail-fast validation.

Every section is optional; missing keys take the defaults of the
shipped example (``fcrbess/resources/example_config.yaml``).  All
problems found are reported together in one :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .bess import BessConfig, InverterCurve
from .cell import CellParams, OcvCurve
from .controller import ControllerParams, EmergencyRule, MarketRules
from .data import SamplePool, SynthFrequencyParams, load_frequency_csv, load_price_csv, synth_frequency
from .degradation import ILLUSTRATIVE_AGEING, AgeingCoefficients
from .economics import DEFAULT_COST_LEVELS, MarketScenario, default_levies, fcr_price_scenario
from .optimizer import OptimizerConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


def example_config_text() -> str:
    return resources.files("fcrbess.resources").joinpath("example_config.yaml").read_text(encoding="utf-8")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


SECTIONS = ("seed", "output_dir", "data", "cell", "bess", "market", "controller", "scenario", "optimizer",
            "ageing", "sweep", "emergency")
_PATH_KEYS = ("frequency_csv", "intraday_csv", "imbalance_csv", "ocv_csv", "inverter_csv")


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> RunConfig:
        defaults = yaml.safe_load(example_config_text())
        base_dir = Path.cwd()
        user = {}
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError([f"config file {path} not found"])
            try:
                user = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
            except yaml.YAMLError as exc:
                raise ConfigError([f"{path}: YAML error: {exc}"]) from None
            if not isinstance(user, dict):
                raise ConfigError([f"{path}: top level must be a mapping"])
            base_dir = path.resolve().parent
        cfg = cls(_merge(_merge(defaults, user), overrides or {}), base_dir)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> RunConfig:
        cfg = cls(_merge(yaml.safe_load(example_config_text()), raw), Path(base_dir))
        cfg.validate()
        return cfg

    # --- validation

    def validate(self) -> None:
        problems = [f"unknown section {k!r}" for k in self.raw if k not in SECTIONS]
        for key in _PATH_KEYS:
            p = self.raw["data"].get(key)
            if p is not None and not self.path(p).is_file():
                problems.append(f"data.{key}: file {self.path(p)} not found")
        if problems:
            raise ConfigError(problems)
        seed = self.raw.get("seed")
        if not isinstance(seed, int) or seed < 0:
            problems.append("seed must be a non-negative integer")
        for name, build in (("cell", self.cell), ("bess", self.bess), ("market", self.rules),
                            ("controller", self.controller), ("optimizer", self.optimizer),
                            ("ageing", self.ageing), ("emergency", self.emergency),
                            ("data.synthetic_frequency", self.synth_params)):
            try:
                build()
            except ConfigError as exc:
                problems.extend(exc.problems)
            except (TypeError, ValueError, KeyError, OSError) as exc:
                problems.append(f"{name}: {exc}")
        try:
            self.scenario(load_prices=False)
        except (TypeError, ValueError, KeyError) as exc:
            problems.append(f"scenario: {exc}")
        sw = self.raw.get("sweep", {})
        if not sw.get("energies") or not sw.get("c_rates"):
            problems.append("sweep: energies and c_rates must be non-empty")
        if problems:
            raise ConfigError(problems)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    # --- builders

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def cell(self) -> CellParams:
        return CellParams(**self.raw.get("cell", {}))

    def ocv(self) -> OcvCurve:
        p = self.raw["data"].get("ocv_csv")
        return OcvCurve.from_csv(self.path(p)) if p else OcvCurve.default()

    def inverter(self) -> InverterCurve:
        p = self.raw["data"].get("inverter_csv")
        return InverterCurve.from_csv(self.path(p)) if p else InverterCurve.default()

    def bess(self, e_mwh: float | None = None, c_rate: float | None = None) -> BessConfig:
        b = dict(self.raw["bess"])
        e = float(e_mwh if e_mwh is not None else b.pop("e_rated_mwh"))
        c = float(c_rate if c_rate is not None else b.pop("c_rate"))
        b.pop("e_rated_mwh", None)
        b.pop("c_rate", None)
        return BessConfig.from_rating(e, c, cell=self.cell(), ocv=self.ocv(), inverter=self.inverter(), **b)

    def rules(self, bess: BessConfig | None = None) -> MarketRules:
        m = dict(self.raw["market"])
        bess = bess or self.bess()
        r = float(m.pop("r_mw")) * 1e6
        gran = float(m.pop("rech_granularity_kw", 100.0)) * 1e3
        prm = m.pop("p_rech_max_mw", None)
        kw = {"rech_granularity": gran, **m}
        if prm is not None:
            kw["p_rech_max"] = float(prm) * 1e6
        return MarketRules.for_bess(r, bess.p_max_w, **kw)

    def controller(self) -> ControllerParams:
        return ControllerParams(**self.raw["controller"])

    def optimizer(self) -> OptimizerConfig:
        o = dict(self.raw["optimizer"])
        for k in ("box_lower", "box_upper"):
            if k in o:
                o[k] = tuple(float(v) for v in o[k])
        return OptimizerConfig(**o)

    def ageing(self) -> AgeingCoefficients:
        a = self.raw.get("ageing", "illustrative")
        return AgeingCoefficients.from_config(ILLUSTRATIVE_AGEING if a == "illustrative" else a)

    def emergency(self) -> EmergencyRule:
        return EmergencyRule(**self.raw.get("emergency", {}))

    def synth_params(self) -> SynthFrequencyParams:
        s = dict(self.raw["data"]["synthetic_frequency"])
        s.pop("days", None)
        return SynthFrequencyParams(**s)

    def scenario(self, load_prices: bool = True) -> MarketScenario:
        s = self.raw["scenario"]
        prices = s["fcr_prices"]
        path = fcr_price_scenario(prices) if isinstance(prices, str) else tuple(float(p) for p in prices)
        data = self.raw["data"]

        def price(csv_key, flat_key):
            p = data.get(csv_key)
            if p and load_prices:
                return load_price_csv(self.path(p))
            return float(s[flat_key])

        return MarketScenario(
            fcr_price_by_year=path,
            intraday=price("intraday_csv", "intraday_price"),
            imbalance=price("imbalance_csv", "imbalance_price"),
            levies=default_levies(float(s.get("concession_ct", 0.11))),
            inflation=float(s["inflation"]),
            discount_rate=float(s["discount_rate"]),
            periodic_prices=bool(s.get("periodic_prices", True)),
            name=prices if isinstance(prices, str) else "custom",
        )

    def frequency(self, seed: int | None = None):
        """Frequency trace from ``data.frequency_csv`` or the synthetic generator."""
        d = self.raw["data"]
        dt = float(self.raw["bess"].get("dt", 10.0))
        if d.get("frequency_csv"):
            return load_frequency_csv(self.path(d["frequency_csv"]), dt, d.get("frequency_column"))
        days = int(d["synthetic_frequency"].get("days", 365))
        return synth_frequency(self.synth_params(), days * 86400.0, dt, self.seed if seed is None else seed)

    def pool(self) -> SamplePool:
        return SamplePool(self.frequency())

    def sweep_grid(self):
        s = self.raw["sweep"]
        return ([float(e) for e in s["energies"]], [float(c) for c in s["c_rates"]],
                tuple(float(c) for c in s.get("cost_levels", DEFAULT_COST_LEVELS)))

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path=None, **overrides) -> RunConfig:
    return RunConfig.load(path, overrides)

