"""Yearly chance-constrained tuning of the recharge controller and the multi-year driver.

Each operational year the controller vector x = (k_p, soc_0, o_d, db_p)
is chosen by differential evolution (best/1/bin) on a sample-average
objective over day samples.  A growing set of hard day samples turns
the objective into a penalty whenever any of them incurs a 30-min
violation, and a binomial confidence bound on fresh samples certifies
the violation probability.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .bess import BessConfig, PrequalificationError, doppelhoeckertest, simulate
from .cell import CellState
from .controller import ControllerParams, EmergencyRule, MarketRules, PenaltyBounds, emergency_trace, penalty_metric
from .data import DAY_S, SamplePool
from .degradation import DAYS_PER_YEAR, AgeingCoefficients, DegradationState, advance_year, year_ageing
from .economics import MarketScenario, electricity_cost

EOL_CAPACITY = 0.8


@dataclass(frozen=True)
class OptimizerConfig:
    eps_req: float = 0.005
    beta_conf: float = 0.001
    n_c: int = 10_000
    n_c_prime: int = 50_000
    n_D: int = 50
    n_Y: int = 1
    n_check_init: int = 10
    population_size: int = 60
    stop_std_frac: float = 5e-4
    max_iterations: int = 1000
    mutation: float = 0.7
    crossover: float = 0.9
    c_p: float | None = None  # default: 1e4 x first-year FCR revenue
    c_cell: float | None = None  # default: cell_cost_per_kwh x rated kWh
    cell_cost_per_kwh: float = 200.0
    box_lower: tuple = (0.0, 0.3, 0.0, 0.0)
    box_upper: tuple = (10.0, 0.7, 0.2, 0.4)
    max_years: int = 30
    jobs: int = 1

    def __post_init__(self):
        if not 0 < self.eps_req < 1 or not 0 < self.beta_conf < 1:
            raise ValueError("eps_req and beta_conf must lie in (0, 1)")
        if self.n_c < 1 or self.n_c_prime <= self.n_c:
            raise ValueError("need 1 <= n_c < n_c_prime")
        if self.n_D < 1 or self.n_Y < 1:
            raise ValueError("n_D and n_Y must be >= 1")
        if self.population_size < 4:
            raise ValueError("best/1/bin needs at least 4 members")
        if self.n_check_init < 1 or self.max_iterations < 1:
            raise ValueError("n_check_init and max_iterations must be >= 1")
        if not 0 < self.mutation <= 2 or not 0 <= self.crossover <= 1:
            raise ValueError("mutation must lie in (0, 2] and crossover in [0, 1]")
        lo, hi = np.asarray(self.box_lower, float), np.asarray(self.box_upper, float)
        if lo.shape != (4,) or hi.shape != (4,) or np.any(lo > hi):
            raise ValueError("box bounds must be 4-vectors with lower <= upper")
        try:
            ControllerParams.from_array(lo)
            ControllerParams.from_array(hi)
        except ValueError as exc:
            raise ValueError(f"box outside the admissible controller range: {exc}") from None

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.box_lower, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.box_upper, dtype=float)


# --- chance bound -------------------------------------------------------------------


def chance_upper_bound(m: int, n: int, beta_conf: float, tol: float = 1e-12) -> float:
    """sup{rho in [0, 1]: P(Bin(n, rho) <= m) >= beta_conf}, by bisection."""
    if not 0 <= m <= n:
        raise ValueError("need 0 <= m <= n")
    if not 0 < beta_conf < 1:
        raise ValueError("beta_conf must lie in (0, 1)")
    if m == n:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stats.binom.cdf(m, n, mid) >= beta_conf:
            lo = mid
        else:
            hi = mid
    return lo


def max_violations(n: int, beta_conf: float, eps_req: float) -> int:
    """Largest m whose bound stays <= eps_req; -1 if even m = 0 fails."""
    if chance_upper_bound(0, n, beta_conf) > eps_req:
        return -1
    lo, hi = 0, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if chance_upper_bound(mid, n, beta_conf) <= eps_req:
            lo = mid
        else:
            hi = mid
    return lo


def next_check_interval(n_check: int) -> int:
    return n_check + n_check // 2


# --- problem ------------------------------------------------------------------------


@dataclass
class SampleSets:
    D: np.ndarray
    P: list = field(default_factory=list)
    Y: list = field(default_factory=list)


@dataclass(frozen=True)
class SaaTerms:
    fcr_revenue: float
    elec_cost: float
    cycle_loss: float
    calendar_loss: float
    res_growth: float

    def degradation_cost(self, c_cell: float) -> float:
        return (self.cycle_loss + self.calendar_loss) / (1.0 - EOL_CAPACITY) * c_cell

    def value(self, c_cell: float) -> float:
        return -self.fcr_revenue + self.elec_cost + self.degradation_cost(c_cell)


def _seed_seq(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


class YearProblem:
    """Everything needed to evaluate controller settings in year ``degr.year_k``."""

    def __init__(self, bess: BessConfig, rules: MarketRules, degr: DegradationState, bounds: PenaltyBounds,
                 coeffs: AgeingCoefficients, scenario: MarketScenario, config: OptimizerConfig, pool: SamplePool,
                 D, emergency: EmergencyRule = EmergencyRule()):
        if abs(pool.dt - bess.dt) > 1e-12:
            raise ValueError("sample pool and BESS use different time steps")
        self.bess = bess
        self.rules = rules
        self.degr = degr
        self.bounds = bounds
        self.coeffs = coeffs
        self.scenario = scenario
        self.config = config
        self.pool = pool
        self.emergency = emergency
        self.D = np.asarray(D, dtype=np.int64)
        self.P: list = []
        self.r_mw = rules.r / 1e6
        self.fcr_revenue = scenario.fcr_revenue(degr.year_k, self.r_mw)
        self.c_p = config.c_p if config.c_p is not None else 1e4 * scenario.fcr_revenue(0, self.r_mw)
        self.c_cell = config.c_cell if config.c_cell is not None else config.cell_cost_per_kwh * bess.e_rated_mwh * 1e3
        self._d_trace = pool.concat(self.D)
        self.n_evals = 0

    # single traces

    def _initial(self, x: ControllerParams) -> CellState:
        return CellState(x.soc_0, 0.0, self.bess.t_ref)

    def simulate(self, x: ControllerParams, delta_f):
        return simulate(self.bess, self.rules, x, delta_f, self.degr, self._initial(x))

    def day_penalty(self, x: ControllerParams, sample_id: int) -> float:
        df = self.pool.day(int(sample_id))
        tr = self.simulate(x, df)
        em = emergency_trace(df, self.bess.dt, self.emergency)
        return penalty_metric(tr.soc[1:], self.bounds, em)

    def penalties(self, x: ControllerParams, ids) -> np.ndarray:
        ids = list(np.asarray(ids, dtype=np.int64))
        jobs = self.config.jobs
        if jobs > 1 and len(ids) > 1:
            chunks = np.array_split(np.asarray(ids), jobs)
            parts = _map(lambda c: [self.day_penalty(x, i) for i in c], chunks, jobs)
            return np.concatenate([np.asarray(p, dtype=float) for p in parts])
        return np.array([self.day_penalty(x, i) for i in ids], dtype=float)

    def _terms(self, x: ControllerParams, delta_f, n_days: float, t0: float = 0.0) -> tuple:
        tr = self.simulate(x, delta_f)
        inc = year_ageing(tr.soc, n_days, self.coeffs, float(np.mean(tr.temperature)),
                          self.bess.cell.capacity_ah * self.degr.capacity, self.degr.year_k)
        cost = electricity_cost(tr, self.scenario, t0, self.degr.year_k) * DAYS_PER_YEAR / n_days
        return tr, inc, cost

    def saa_terms(self, x: ControllerParams, ids=None) -> SaaTerms:
        """Year estimate from the concatenated day samples ``ids`` (default: D)."""
        if ids is None:
            df, n = self._d_trace, self.D.size
        else:
            df, n = self.pool.concat(np.asarray(ids, dtype=np.int64)), len(ids)
        _, inc, cost = self._terms(x, df, n)
        return SaaTerms(self.fcr_revenue, cost, inc.cycle_loss, inc.calendar_loss, inc.res_growth)

    def year_terms(self, x: ControllerParams, year_traces) -> SaaTerms:
        """Mean over full-year traces (each simulated from soc_0)."""
        out = []
        for df in year_traces:
            n_days = len(df) * self.bess.dt / DAY_S
            _, inc, cost = self._terms(x, df, n_days)
            out.append((cost, inc.cycle_loss, inc.calendar_loss, inc.res_growth))
        c, cy, ca, rg = np.mean(np.asarray(out), axis=0)
        return SaaTerms(self.fcr_revenue, float(c), float(cy), float(ca), float(rg))

    # objective

    def objective(self, xv) -> float:
        """Penalty branch if any hard sample violates, else the SAA cost."""
        x = ControllerParams.from_array(xv)
        self.n_evals += 1
        if self.P:
            worst = max(self.day_penalty(x, i) for i in self.P)
            if worst > 0.0:
                return self.c_p * worst
        return self.saa_terms(x).value(self.c_cell)

    def objective_many(self, X) -> np.ndarray:
        return np.array(_map(self.objective, list(np.asarray(X)), self.config.jobs), dtype=float)

    def in_penalty_branch(self, value: float) -> bool:
        return value > 0.0 and value >= self.c_p / (86400.0 / self.bess.dt) * (1 - 1e-12)


# --- differential evolution -----------------------------------------------------------


def init_population(lower, upper, size: int, rng) -> np.ndarray:
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    return lower + rng.random((size, lower.size)) * (upper - lower)


def differential_evolution_step(X, f, objective_many, rngs, lower, upper, mutation=0.7, crossover=0.9):
    """One synchronous best/1/bin generation with greedy replacement.

    ``rngs[i]`` drives member i.  Trials are clipped to the box.  Returns
    ``(X_new, f_new, best_index)``.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    best = int(np.argmin(f))
    trials = np.empty_like(X)
    for i in range(n):
        rng = rngs[i]
        others = [j for j in range(n) if j != i]
        r1, r2 = rng.choice(others, size=2, replace=False)
        v = X[best] + mutation * (X[r1] - X[r2])
        mask = rng.random(d) < crossover
        mask[rng.integers(d)] = True
        trials[i] = np.clip(np.where(mask, v, X[i]), lower, upper)
    ft = np.asarray(objective_many(trials), dtype=float)
    keep = ft <= f
    X_new = np.where(keep[:, None], trials, X)
    f_new = np.where(keep, ft, f)
    return X_new, f_new, int(np.argmin(f_new))


def converged(f, stop_std_frac: float) -> bool:
    f = np.asarray(f, dtype=float)
    return bool(np.std(f) <= stop_std_frac * abs(np.mean(f)))


class DifferentialEvolution:
    """Minimal best/1/bin optimizer over a box with per-member random streams."""

    def __init__(self, objective_many, lower, upper, population_size=60, mutation=0.7, crossover=0.9,
                 seed=0, stop_std_frac=5e-4):
        self.objective_many = objective_many
        self.lower = np.asarray(lower, float)
        self.upper = np.asarray(upper, float)
        self.mutation = mutation
        self.crossover = crossover
        self.stop_std_frac = stop_std_frac
        ss = _seed_seq(seed)
        init_ss, *member_ss = ss.spawn(population_size + 1)
        self.rngs = [np.random.Generator(np.random.PCG64(s)) for s in member_ss]
        self.X = init_population(self.lower, self.upper, population_size, np.random.Generator(np.random.PCG64(init_ss)))
        self.f = np.asarray(objective_many(self.X), dtype=float)
        self.iterations = 0

    @property
    def best(self):
        i = int(np.argmin(self.f))
        return self.X[i].copy(), float(self.f[i])

    def step(self):
        self.X, self.f, _ = differential_evolution_step(
            self.X, self.f, self.objective_many, self.rngs, self.lower, self.upper, self.mutation, self.crossover
        )
        self.iterations += 1
        return self.best

    def reevaluate(self):
        self.f = np.asarray(self.objective_many(self.X), dtype=float)

    def converged(self) -> bool:
        return converged(self.f, self.stop_std_frac)

    def run(self, max_iterations=200):
        while self.iterations < max_iterations and not self.converged():
            self.step()
        return self.best


# --- penalty-set growth ----------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    m: int
    bound: float
    added: int | None


def grow_penalty_set(problem: YearProblem, x: ControllerParams, rng, m_max: int) -> CheckResult:
    """Draw n_c day samples; if the violation bound fails, add the (m_max+1)-th worst sample to P."""
    cfg = problem.config
    ids = rng.integers(0, len(problem.pool), size=cfg.n_c)
    pen = problem.penalties(x, ids)
    m = int(np.count_nonzero(pen > 0.0))
    bound = chance_upper_bound(m, cfg.n_c, cfg.beta_conf)
    if bound <= cfg.eps_req:
        return CheckResult(True, m, bound, None)
    order = np.lexsort((ids, pen))  # ascending penalty, ties by sample id
    j_star = cfg.n_c - m_max  # 1-based position
    added = int(ids[order[j_star - 1]])
    problem.P.append(added)
    return CheckResult(False, m, bound, added)


# --- one year ---------------------------------------------------------------------------


@dataclass
class YearResult:
    year_k: int
    x_hat: tuple
    eps_k: float
    m_prime: int
    capacity_after: float
    r0_after: float
    r1_after: float
    expected_elec_cost: float
    expected_degr_cost: float
    fcr_revenue: float
    objective: float
    iterations: int
    n_penalty_samples: int
    soc_min: float
    soc_max: float
    feasible: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LogRow:
    year_k: int
    iteration: int
    best_objective: float
    population_std: float
    n_penalty_set: int
    n_check: int
    checked: bool
    m: int


def optimize_year(problem: YearProblem, seed, log: list | None = None):
    """Algorithm body for one year: DE with penalty-set growth, then bound and degradation update.

    Returns ``(YearResult, new DegradationState)``.
    """
    cfg = problem.config
    m_max = max_violations(cfg.n_c, cfg.beta_conf, cfg.eps_req)
    if m_max < 0:
        raise ValueError(f"n_c = {cfg.n_c} is too small to certify eps_req = {cfg.eps_req} at beta = {cfg.beta_conf}")
    ss = _seed_seq(seed)
    de_ss, check_ss, eps_ss, year_ss = ss.spawn(4)
    check_rng = np.random.Generator(np.random.PCG64(check_ss))
    de = DifferentialEvolution(problem.objective_many, cfg.lower, cfg.upper, cfg.population_size,
                               cfg.mutation, cfg.crossover, de_ss, cfg.stop_std_frac)
    n_check = cfg.n_check_init
    since = 0
    while True:
        xb, fb = de.step()
        since += 1
        checked, m = False, -1
        if since == n_check:
            since = 0
            checked = True
            res = grow_penalty_set(problem, ControllerParams.from_array(xb), check_rng, m_max)
            m = res.m
            if res.passed:
                n_check = next_check_interval(n_check)
            else:
                n_check = cfg.n_check_init
                de.reevaluate()
                xb, fb = de.best
        if log is not None:
            log.append(LogRow(problem.degr.year_k, de.iterations, fb, float(np.std(de.f)), len(problem.P),
                              n_check, checked, m))
        if de.converged() or de.iterations >= cfg.max_iterations:
            break

    x_hat = ControllerParams.from_array(xb)
    eps_rng = np.random.Generator(np.random.PCG64(eps_ss))
    ids = eps_rng.integers(0, len(problem.pool), size=cfg.n_c_prime)
    m_prime = int(np.count_nonzero(problem.penalties(x_hat, ids) > 0.0))
    eps_k = chance_upper_bound(m_prime, cfg.n_c_prime, cfg.beta_conf)

    year_rng = np.random.Generator(np.random.PCG64(year_ss))
    year_traces = year_samples(problem.pool, cfg.n_Y, year_rng)
    yt = problem.year_terms(x_hat, year_traces)
    degr = problem.degr
    new_degr = advance_year(degr, yt.cycle_loss, yt.calendar_loss, yt.res_growth)
    result = YearResult(
        year_k=degr.year_k,
        x_hat=tuple(float(v) for v in xb),
        eps_k=eps_k,
        m_prime=m_prime,
        capacity_after=new_degr.capacity,
        r0_after=new_degr.r0,
        r1_after=new_degr.r1,
        expected_elec_cost=yt.elec_cost,
        expected_degr_cost=yt.degradation_cost(problem.c_cell),
        fcr_revenue=problem.fcr_revenue,
        objective=fb,
        iterations=de.iterations,
        n_penalty_samples=len(problem.P),
        soc_min=problem.bounds.soc_min,
        soc_max=problem.bounds.soc_max,
        feasible=bool(eps_k <= cfg.eps_req and not problem.in_penalty_branch(fb)),
    )
    return result, new_degr


def year_samples(pool: SamplePool, n: int, rng) -> list:
    """``n`` one-year traces, each 365 consecutive days from a random pool offset (wrapping)."""
    steps = int(round(DAYS_PER_YEAR * DAY_S / pool.dt))
    vals = pool.trace.values
    out = []
    for start in rng.integers(0, len(pool), size=n):
        o = pool.offset(int(start))
        idx = (o + np.arange(steps)) % vals.size
        out.append(vals[idx])
    return out


# --- lifetime driver ----------------------------------------------------------------------


@dataclass
class LifetimeRun:
    years: list
    status: str  # "end_of_life", "infeasible", "prequalification", "max_years"
    final_state: DegradationState
    log: list

    @property
    def k_max(self) -> int:
        return len(self.years)


def run_lifetime(bess: BessConfig, rules: MarketRules, coeffs: AgeingCoefficients, scenario: MarketScenario,
                 config: OptimizerConfig, pool: SamplePool, seed=0, emergency: EmergencyRule = EmergencyRule(),
                 progress=None) -> LifetimeRun:
    """Repeat the yearly optimization until end of life or the chance bound fails."""
    ss = _seed_seq(seed)
    d_ss, years_ss = ss.spawn(2)
    D = np.random.Generator(np.random.PCG64(d_ss)).integers(0, len(pool), size=config.n_D)
    degr = DegradationState.new(bess.cell)
    eps_prev = 0.0
    results, log = [], []
    status = "max_years"
    year_seeds = years_ss.spawn(config.max_years)
    while degr.capacity >= EOL_CAPACITY and eps_prev <= config.eps_req:
        if degr.year_k >= config.max_years:
            break
        try:
            bounds = doppelhoeckertest(bess, degr, rules.r / 1e6).bounds()
        except PrequalificationError:
            status = "prequalification"
            break
        problem = YearProblem(bess, rules, degr, bounds, coeffs, scenario, config, pool, D, emergency)
        res, degr = optimize_year(problem, year_seeds[degr.year_k], log)
        results.append(res)
        eps_prev = res.eps_k
        if progress is not None:
            progress(res)
    else:
        status = "end_of_life" if degr.capacity < EOL_CAPACITY else "infeasible"
    return LifetimeRun(results, status, degr, log)


def write_log_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("year_k", "iteration", "best_objective", "population_std", "n_penalty_set", "n_check",
                    "checked", "m"))
        for r in rows:
            w.writerow((r.year_k, r.iteration, repr(r.best_objective), repr(r.population_std), r.n_penalty_set,
                        r.n_check, int(r.checked), r.m))


# --- SAA optimality gap ------------------------------------------------------------------------


@dataclass(frozen=True)
class GapEstimate:
    gaps: tuple
    mean: float
    std: float
    bound: float


def saa_gap_bound(gaps, beta_conf: float) -> GapEstimate:
    """One-sided 100(1-beta)% upper confidence bound on the optimality gap from batch gaps G_i.

    G_i = f_i(x_hat) - min_x f_i(x) for batch i of year samples.
    """
    g = np.asarray(gaps, dtype=float)
    n = g.size
    if n < 2:
        raise ValueError("need at least two batches")
    mean = float(np.mean(g))
    sd = float(np.std(g, ddof=1))
    t = float(stats.t.ppf(1.0 - beta_conf, n - 1))
    return GapEstimate(tuple(g.tolist()), mean, sd, mean + sd * t / math.sqrt(n))


def batch_gaps(x_hat, batch_objectives, minimize) -> list:
    """G_i for each batch objective; ``minimize(f)`` returns min_x f(x) (e.g. a short DE run)."""
    return [f(x_hat) - minimize(f) for f in batch_objectives]
