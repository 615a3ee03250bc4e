"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 optimization
ended infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._jit import backend
from .bess import PrequalificationError, doppelhoeckertest, simulate
from .config import ConfigError, RunConfig
from .controller import emergency_trace, penalty_metric
from .data import DataError
from .degradation import rainflow
from .economics import (
    bess_cost,
    electricity_cost_breakdown,
    lifetime_revenue,
    sizing_sweep,
    write_sweep_csv,
    write_sweep_json,
)
from .optimizer import chance_upper_bound, run_lifetime, write_log_csv
from .svg import line_chart

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE = 0, 2, 3, 4


def _versions() -> dict:
    import numba
    import scipy
    import yaml

    return {
        "fcrbess": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "pyyaml": yaml.__version__,
        "backend": backend(),
    }


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _manifest(out: Path, command: str, cfg: RunConfig | None, seed, outputs) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "config_sha256": cfg.hash() if cfg is not None else None,
        "seed": seed,
        "versions": _versions(),
        "outputs": sorted(outputs),
    })


def _load(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None):
        overrides.setdefault("optimizer", {})["jobs"] = args.jobs
    return RunConfig.load(args.config, overrides)


def _outdir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out or (cfg.raw.get("output_dir") if cfg else None) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ---------------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    bess = cfg.bess()
    rules = cfg.rules(bess)
    x = cfg.controller()
    freq = cfg.frequency()
    n = int(round(args.days * 86400.0 / bess.dt))
    if n > len(freq):
        raise DataError(f"frequency data covers {len(freq) * bess.dt / 86400:g} days, {args.days} requested")
    df = freq.values[:n]
    tr = simulate(bess, rules, x, df)
    bounds = doppelhoeckertest(bess, None, rules.r / 1e6).bounds()
    em = emergency_trace(df, bess.dt, cfg.emergency())
    recs = rainflow(tr.soc, bess.cell.capacity_ah)
    cost = electricity_cost_breakdown(tr, cfg.scenario(), freq.start)
    tr.to_csv(out / "trace.csv")
    recs.to_csv(out / "cycles.csv")
    summary = {
        "days": args.days,
        "steps": n,
        "throughput_ah_per_cell": recs.total_throughput,
        "n_cycles": len(recs),
        "penalty_fraction": penalty_metric(tr.soc[1:], bounds, em),
        "soc_min_30min": bounds.soc_min,
        "soc_max_30min": bounds.soc_max,
        "energy_in_kwh": tr.energy_in_wh / 1e3,
        "energy_out_kwh": tr.energy_out_wh / 1e3,
        "clipped_steps": int(np.count_nonzero(tr.clipped)),
        "elec_cost_eur": cost.total,
        "elec_cost_intraday_eur": cost.intraday,
        "elec_cost_imbalance_eur": cost.imbalance,
        "elec_cost_levies_eur": cost.levies,
    }
    _write_json(out / "summary.json", summary)
    outputs = ["trace.csv", "cycles.csv", "summary.json"]
    if args.svg:
        t_h = np.arange(n + 1) * bess.dt / 3600.0
        line_chart(out / "soc.svg", t_h, {"soc": tr.soc}, "State of charge", "hours", "SoC")
        line_chart(out / "power.svg", t_h[:-1], {"p_grid kW": tr.p_grid / 1e3, "p_rech kW": tr.p_rech / 1e3},
                   "Grid and recharge power", "hours", "kW")
        outputs += ["soc.svg", "power.svg"]
    _manifest(out, "simulate", cfg, cfg.seed, outputs)
    print(f"simulated {args.days} day(s): penalty fraction {summary['penalty_fraction']:.3g}, "
          f"{summary['n_cycles']} cycles, elec cost {summary['elec_cost_eur']:.2f} EUR -> {out}")
    return EXIT_OK


def _lifetime(cfg: RunConfig, e_mwh=None, c_rate=None, progress=None):
    bess = cfg.bess(e_mwh, c_rate)
    rules = cfg.rules(bess)
    opt = cfg.optimizer()
    run = run_lifetime(bess, rules, cfg.ageing(), cfg.scenario(), opt, cfg.pool(), cfg.seed, cfg.emergency(),
                       progress)
    life = lifetime_revenue(run.years, cfg.scenario(), rules.r / 1e6, 0.0, opt.eps_req)
    return bess, run, life


def cmd_optimize(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)

    def progress(y):
        print(f"year {y.year_k}: x = {tuple(round(v, 4) for v in y.x_hat)}, eps = {y.eps_k:.3g}, "
              f"capacity -> {y.capacity_after:.4f}, {y.iterations} iterations", flush=True)

    bess, run, life = _lifetime(cfg, progress=progress)
    _write_json(out / "years.json", [y.to_dict() for y in run.years])
    write_log_csv(run.log, out / "optimization_log.csv")
    _, _, levels = cfg.sweep_grid()
    npv = {f"{c:g}": life.discounted_net_revenue - bess_cost(bess.e_rated_mwh, c) for c in levels}
    _write_json(out / "lifetime.json", {"status": run.status, "k_max": run.k_max, "npv_by_cost_level": npv,
                                        **life.to_dict()})
    outputs = ["years.json", "optimization_log.csv", "lifetime.json"]
    if args.svg and run.log:
        it = np.arange(len(run.log))
        line_chart(out / "log.svg", it, {"best objective": [r.best_objective for r in run.log]},
                   "Best objective per generation", "generation (all years)", "EUR")
        outputs.append("log.svg")
    _manifest(out, "optimize", cfg, cfg.seed, outputs)
    print(f"status {run.status}, {run.k_max} year(s), discounted net revenue {life.discounted_net_revenue:.0f} EUR")
    if run.status in ("infeasible", "prequalification"):
        return EXIT_INFEASIBLE
    return EXIT_OK


class SweepEvaluator:
    """Picklable per-point evaluator: full lifetime optimization for one (energy, C-rate)."""

    def __init__(self, raw: dict, base_dir: str):
        self.raw = raw
        self.base_dir = base_dir

    def __call__(self, e_mwh, c_rate):
        cfg = RunConfig.from_dict(self.raw, self.base_dir)
        try:
            _, _, life = _lifetime(cfg, e_mwh, c_rate)
        except PrequalificationError:
            from .economics import LifetimeResult

            return LifetimeResult((), 0, 0.0, 0.0, 0.0, 0.0, None)
        return life


def _parse_grid(text, fallback):
    if not text:
        return fallback
    if ":" in text:
        a, b, s = (float(v) for v in text.split(":"))
        n = int(round((b - a) / s))
        return [round(a + k * s, 10) for k in range(n + 1)]
    return [float(v) for v in text.split(",")]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    energies, c_rates, levels = cfg.sweep_grid()
    energies = _parse_grid(args.energies, energies)
    c_rates = _parse_grid(args.c_rates, c_rates)
    r_mw = float(cfg.raw["market"]["r_mw"])
    raw = dict(cfg.raw, optimizer=dict(cfg.raw["optimizer"], jobs=1))
    ev = SweepEvaluator(raw, str(cfg.base_dir))
    points = sizing_sweep(energies, c_rates, ev, r_mw, levels, jobs=args.jobs or 1)
    write_sweep_csv(points, out / "sweep.csv", levels)
    write_sweep_json(points, out / "sweep.json")
    _manifest(out, "sweep", cfg, cfg.seed, ["sweep.csv", "sweep.json"])
    failed = [p for p in points if p.error]
    for p in failed:
        print(f"point {p.e_mwh:g} MWh / {p.c_rate:g}C failed: {p.error}", file=sys.stderr)
    print(f"swept {len(points)} points ({len(failed)} failed) -> {out / 'sweep.csv'}")
    return EXIT_OK


def _read_soc_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        names = [h.strip().lower() for h in header]
        col = names.index("soc") if "soc" in names else len(names) - 1
        vals = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals.append(float(row[col]))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: bad SoC value") from None
    return np.asarray(vals)


def cmd_rainflow(args) -> int:
    out = _outdir(args, None)
    soc = _read_soc_csv(args.soc_csv)
    if soc.size < 2:
        raise DataError(f"{args.soc_csv}: need at least two SoC values")
    recs = rainflow(soc, args.capacity_ah)
    recs.to_csv(out / "cycles.csv")
    _manifest(out, "rainflow", None, args.seed, ["cycles.csv"])
    print(f"{len(recs)} cycle records, throughput {recs.total_throughput:.6g} Ah -> {out / 'cycles.csv'}")
    return EXIT_OK


def cmd_check_bound(args) -> int:
    if not 0 <= args.m <= args.n:
        raise ConfigError([f"need 0 <= m <= n, got m = {args.m}, n = {args.n}"])
    if not 0 < args.beta < 1:
        raise ConfigError(["beta must lie in (0, 1)"])
    print(f"{chance_upper_bound(args.m, args.n, args.beta):.10g}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--jobs", type=int, default=None, help="parallel workers")
    common.add_argument("--out", type=Path, default=None, help="output directory")

    p = argparse.ArgumentParser(prog="fcrbess", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate fixed controller settings")
    s.add_argument("--days", type=float, default=1.0)
    s.add_argument("--svg", action="store_true", help="also write SVG charts")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("optimize", parents=[common], help="multi-year controller optimization")
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", parents=[common], help="NPV over energy and C-rate")
    s.add_argument("--energies", default=None, help="list a,b,c or range start:stop:step (MWh)")
    s.add_argument("--c-rates", default=None, help="list a,b,c or range start:stop:step")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("rainflow", parents=[common], help="cycle records of a SoC trace CSV")
    s.add_argument("soc_csv", type=Path)
    s.add_argument("--capacity-ah", type=float, default=2.05)
    s.set_defaults(func=cmd_rainflow)

    s = sub.add_parser("check-bound", parents=[common], help="binomial upper bound on a violation probability")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--beta", type=float, default=0.001)
    s.set_defaults(func=cmd_check_bound)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PrequalificationError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
