import csv
import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import pytest

from fcrbess.data import PriceSeries
from fcrbess.economics import (
    CONSUMPTION,
    LOSSES,
    Levy,
    LifetimeResult,
    MarketScenario,
    bess_cost,
    default_levies,
    electricity_cost,
    electricity_cost_breakdown,
    exponential_path,
    fcr_price_scenario,
    feasibility,
    lifetime_revenue,
    max_npv_point,
    payback_period,
    sizing_sweep,
    write_sweep_csv,
    write_sweep_json,
    year_fraction,
)


def fake_trace(p_grid, p_rech=None, dt=10.0):
    p_grid = np.asarray(p_grid, dtype=float)
    return SimpleNamespace(dt=dt, p_grid=p_grid, p_rech=np.zeros_like(p_grid) if p_rech is None else p_rech)


@dataclass
class Yr:
    year_k: int
    capacity_after: float
    eps_k: float
    expected_elec_cost: float


class TestYearFraction:
    def test_non_binding(self):
        assert year_fraction(0.95, 0.93, 0.001, 0.002, 0.005) == 1.0

    def test_capacity_interpolation(self):
        assert year_fraction(0.82, 0.78, 0.0, 0.0, 0.005) == 0.5

    def test_past_both(self):
        assert year_fraction(0.79, 0.77, 0.006, 0.007, 0.005) == 0.0

    def test_eps_interpolation(self):
        assert year_fraction(0.9, 0.88, 0.004, 0.006, 0.005) == pytest.approx(0.5)

    def test_binding_minimum(self):
        f = year_fraction(0.82, 0.78, 0.004, 0.0065, 0.005)
        assert f == pytest.approx(min(0.5, 0.4))


class TestElectricityCost:
    def test_idle(self):
        sc = MarketScenario((2000.0,), intraday=40.0, imbalance=60.0)
        assert electricity_cost(fake_trace(np.zeros(90)), sc) == 0.0

    def test_one_euro_block(self):
        p = np.full(90, 100e3)
        sc = MarketScenario((2000.0,), intraday=40.0, imbalance=999.0, levies=())
        assert electricity_cost(fake_trace(p, p.copy()), sc) == pytest.approx(1.0, rel=1e-12)

    def test_imbalance_settles_remainder(self):
        p = np.full(90, -200e3)
        sc = MarketScenario((2000.0,), intraday=40.0, imbalance=30.0, levies=())
        # 50 kWh delivered at 30 EUR/MWh is income
        assert electricity_cost(fake_trace(p), sc) == pytest.approx(-1.5)

    def test_levies_additive(self):
        p = np.concatenate([np.full(90, 100e3), np.full(90, -80e3)])
        tr = fake_trace(p)
        levies = default_levies()
        total = electricity_cost_breakdown(tr, MarketScenario((1.0,), levies=levies)).total
        parts = sum(electricity_cost_breakdown(tr, MarketScenario((1.0,), levies=(lv,))).total for lv in levies)
        assert total == pytest.approx(parts, rel=1e-12)
        # oracle: 25 kWh drawn, 5 kWh of losses
        rate_c = sum(lv.rate for lv in levies if lv.base == CONSUMPTION)
        rate_l = sum(lv.rate for lv in levies if lv.base == LOSSES)
        assert total == pytest.approx(25 * rate_c + 5 * rate_l, rel=1e-12)

    def test_exempt_items_free(self):
        names = {lv.name: lv for lv in default_levies()}
        assert names["electricity_tax"].base == "exempt"
        assert names["network_charges"].rate == 0.0

    def test_inflation(self):
        p = np.full(90, 100e3)
        sc = MarketScenario((1.0,), intraday=40.0, levies=(), inflation=0.02)
        assert electricity_cost(fake_trace(p, p.copy()), sc, year_k=3) == pytest.approx(1.02**3)

    def test_price_series(self):
        p = np.full(180, 100e3)
        sc = MarketScenario((1.0,), intraday=PriceSeries(0.0, 900.0, np.array([40.0, 80.0])), levies=())
        assert electricity_cost(fake_trace(p, p.copy()), sc) == pytest.approx(3.0)

    def test_bad_levy(self):
        with pytest.raises(ValueError):
            Levy("x", 0.1, "nonsense")
        with pytest.raises(ValueError):
            default_levies(5.0)


class TestScenarios:
    def test_paths(self):
        m = fcr_price_scenario("moderate")
        assert m[0] == 2100.0
        assert m[17] == pytest.approx(1630.0)
        assert m[25] == pytest.approx(1630.0)
        low = fcr_price_scenario("low")
        assert all(a >= b for a, b in zip(low, low[1:]))
        with pytest.raises(ValueError):
            fcr_price_scenario("high")

    def test_geometric(self):
        path = exponential_path(100.0, 25.0, 2, 4)
        assert path == pytest.approx((100.0, 50.0, 25.0, 25.0))

    def test_revenue(self):
        sc = MarketScenario((2100.0,))
        assert sc.fcr_revenue(5, 1.0) == pytest.approx(2100.0 * 365 / 7)


class TestLifetime:
    def test_non_binding_discounting(self):
        sc = MarketScenario((1000.0, 900.0, 800.0), discount_rate=0.05)
        ys = [Yr(k, 1.0 - 0.02 * (k + 1), 0.001, 100.0) for k in range(3)]
        res = lifetime_revenue(ys, sc, 1.0, cost_bess=0.0)
        ref = sum((sc.fcr_revenue(k, 1.0) - 100.0) / 1.05 ** (k + 1) for k in range(3))
        assert res.discounted_net_revenue == pytest.approx(ref, rel=1e-12)
        assert res.lifetime_years == 3.0

    def test_npv_slope_in_cost(self):
        sc = MarketScenario((2000.0,))
        ys = [Yr(0, 0.95, 0.0, 0.0)]
        a = lifetime_revenue(ys, sc, 1.0, cost_bess=1e5).npv
        b = lifetime_revenue(ys, sc, 1.0, cost_bess=2e5).npv
        assert a - b == pytest.approx(1e5)

    def test_terminal_fraction(self):
        sc = MarketScenario((2000.0,), discount_rate=0.0)
        ys = [Yr(0, 0.82, 0.0, 0.0), Yr(1, 0.78, 0.0, 0.0)]
        res = lifetime_revenue(ys, sc, 1.0)
        assert res.years[1].fraction == 0.5
        assert res.lifetime_years == 1.5

    def test_payback(self):
        assert payback_period([100.0, 100.0, 100.0], 150.0) == pytest.approx(1.5)
        assert payback_period([100.0], 150.0) is None
        assert payback_period([], 0.0) == 0.0


class TestSweep:
    @pytest.mark.parametrize("e,c,ok", [(1.0, 0.6, False), (2.0, 0.6, False), (2.1, 0.6, True),
                                        (1.7, 0.7, False), (1.8, 0.7, True), (1.2, 1.0, False),
                                        (1.3, 1.0, True), (1.2, 1.5, False), (1.3, 1.5, True)])
    def test_feasibility_pattern(self, e, c, ok):
        assert feasibility(e, c, 1.0)[0] is ok

    def test_infeasible_is_minus_cost(self):
        calls = []

        def evaluator(e, c):
            calls.append((e, c))
            return LifetimeResult((), 0, 0.0, 1.0e6, 0.0, 1.0e6, None)

        pts = sizing_sweep([1.0, 2.1], [0.6], evaluator)
        assert calls == [(2.1, 0.6)]
        assert pts[0].npv == {500.0: -500e3, 400.0: -400e3, 300.0: -300e3}
        assert pts[1].npv[500.0] == pytest.approx(1e6 - bess_cost(2.1, 500.0))

    def test_evaluator_error_recorded(self, tmp_path):
        def evaluator(e, c):
            raise RuntimeError("boom")

        pts = sizing_sweep([1.6], [1.0], evaluator)
        assert "boom" in pts[0].error
        assert math.isnan(pts[0].npv[500.0])
        write_sweep_csv(pts, tmp_path / "s.csv")
        write_sweep_json(pts, tmp_path / "s.json")

    def test_table_layout(self, tmp_path):
        def evaluator(e, c):
            return LifetimeResult((), 1, 1.0, 2.0e6 - 1e5 * abs(e - 1.6), 0.0, 0.0, None)

        pts = sizing_sweep([1.0, 1.6, 2.1], [0.6, 1.0], evaluator)
        best = max_npv_point(pts, 500.0)
        assert (best.e_mwh, best.c_rate) == (1.6, 1.0)
        write_sweep_csv(pts, tmp_path / "s.csv")
        rows = list(csv.reader(open(tmp_path / "s.csv")))
        assert rows[0][0] == "e_mwh"
        assert len(rows[0]) == 1 + 3 * 2
        assert rows[1][1] == "-500.0"
        assert sum(cell.endswith("*") for row in rows[1:] for cell in row) == 3
