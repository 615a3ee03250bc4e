import math

import numpy as np
import pytest

from fcrbess.cell import (
    CapabilityError,
    CellParams,
    CellState,
    DomainError,
    FitError,
    OcvCurve,
    current_from_power,
    fit_rc_from_pulse,
    max_discharge_power,
    ocv_lookup,
    read_pulse_csv,
    solve_current,
    step_rc_branch,
    step_soc,
    synth_pulse,
    write_pulse_csv,
)


class TestOcv:
    def test_knot_is_exact(self, linear_ocv):
        assert ocv_lookup(linear_ocv, 0.0) == 3.0
        assert ocv_lookup(linear_ocv, 1.0) == 4.2

    def test_linear_midpoint(self, linear_ocv):
        assert ocv_lookup(linear_ocv, 0.5) == pytest.approx(3.6, abs=1e-12)

    def test_monotone_on_default_curve(self):
        curve = OcvCurve.default()
        s = np.linspace(0, 1, 501)
        assert np.all(np.diff(ocv_lookup(curve, s)) >= 0)

    @pytest.mark.parametrize("soc", [-0.01, 1.01, float("nan")])
    def test_out_of_domain(self, linear_ocv, soc):
        with pytest.raises(DomainError):
            ocv_lookup(linear_ocv, soc)

    def test_non_monotone_curve_rejected(self):
        with pytest.raises(ValueError):
            OcvCurve(np.array([0.0, 0.5, 1.0]), np.array([3.0, 3.5, 3.4]))

    def test_csv_round_trip(self, tmp_path):
        curve = OcvCurve.default()
        curve.to_csv(tmp_path / "ocv.csv")
        back = OcvCurve.from_csv(tmp_path / "ocv.csv")
        np.testing.assert_array_equal(back.soc, curve.soc)
        np.testing.assert_array_equal(back.voltage, curve.voltage)


class TestSolveCurrent:
    def test_zero_power(self):
        assert solve_current(3.6, 0.0334, 0.0) == 0.0

    def test_against_numeric_root(self):
        # oracle: roots of R0 I^2 + V I - p, picking the one near p/V
        i = solve_current(3.6, 0.0334, 7.2)
        roots = np.roots([0.0334, 3.6, -7.2])
        ref = roots[np.argmin(np.abs(roots - 7.2 / 3.6))].real
        assert i == pytest.approx(ref, rel=1e-12)
        assert i == pytest.approx(1.963, abs=2e-3)

    def test_discharge_root(self):
        i = solve_current(3.6, 0.0334, -7.2)
        roots = np.roots([0.0334, 3.6, 7.2])
        ref = roots[np.argmin(np.abs(roots + 2.0))].real
        assert i == pytest.approx(ref, rel=1e-12)
        assert i < 0

    def test_identity_random(self, rng):
        v = rng.uniform(3.0, 4.3, 2000)
        r0 = rng.uniform(0.005, 0.1, 2000)
        p = rng.uniform(-20, 20, 2000)
        for a, b, c in zip(v, r0, p):
            i = solve_current(a, b, c)
            assert (a + b * i) * i == pytest.approx(c, rel=1e-9, abs=1e-300)

    def test_beyond_capability(self):
        with pytest.raises(CapabilityError):
            solve_current(3.6, 0.0334, -200.0)

    def test_max_discharge_power(self, cell, linear_ocv):
        st = CellState(0.5)
        p = max_discharge_power(cell, st, linear_ocv)
        assert p == pytest.approx(-3.6 ** 2 / (4 * cell.r0))
        i = current_from_power(cell, st, p * 0.999, linear_ocv)
        assert i < 0


class TestRcBranch:
    def test_equilibrium(self, cell):
        assert step_rc_branch(cell, 0.0, 0.0, 10.0) == 0.0

    def test_steady_state(self, cell):
        assert step_rc_branch(cell, 0.0, 2.0, 1e6) == pytest.approx(cell.r1 * 2.0, rel=1e-12)

    def test_closed_form(self, cell):
        tau = 0.0114 * 1867
        ref = 0.0228 * (1 - math.exp(-10 / tau))
        assert step_rc_branch(cell, 0.0, 2.0, 10.0) == pytest.approx(ref, rel=1e-12)
        assert ref == pytest.approx(0.00852, abs=5e-5)

    def test_decays(self, cell):
        v = 0.05
        for _ in range(100):
            nxt = step_rc_branch(cell, v, 0.0, 10.0)
            assert 0 < nxt < v
            v = nxt


class TestSoc:
    def test_zero_current(self, cell):
        assert step_soc(cell, 0.42, 0.0, 10.0) == (0.42, False)

    def test_full_charge_clip(self, cell):
        soc, clipped = step_soc(cell, 0.5, 2.05, 3600.0)
        assert soc == 1.0
        assert clipped

    def test_below_clip(self, cell):
        soc, clipped = step_soc(cell, 0.4, 2.05, 1800.0)
        assert soc == pytest.approx(0.4 + 0.99 * 0.5)
        assert not clipped

    def test_asymmetric_efficiency(self, cell):
        i, dt = 1.5, 600.0
        up, _ = step_soc(cell, 0.5, i, dt)
        down, _ = step_soc(cell, up, -i, dt)
        q = i * dt / (cell.capacity_ah * 3600)
        assert 0.5 - down == pytest.approx((1 / 0.99 - 0.99) * q, rel=1e-9)


class TestParams:
    def test_table_defaults(self):
        p = CellParams()
        assert (p.r0, p.r1, p.c1) == (0.0334, 0.0114, 1867.0)
        assert p.e_rated_wh == pytest.approx(p.capacity_ah * p.v_nom, rel=5e-3)

    def test_rejects_bad_resistance(self):
        with pytest.raises(ValueError):
            CellParams(r0=-1.0)

    def test_state_domain(self):
        with pytest.raises(DomainError):
            CellState(1.5)


class TestPulseFit:
    def test_noiseless_recovery(self, cell):
        curve = OcvCurve.default()
        t, i, v = synth_pulse(cell, curve)
        fit = fit_rc_from_pulse(t, i, v, curve, 0.5, cell.capacity_ah, cell.eta_coulomb)
        for est, true in ((fit.r0, cell.r0), (fit.r1, cell.r1), (fit.c1, cell.c1)):
            assert est == pytest.approx(true, rel=1e-3)

    def test_noisy_recovery_over_seeds(self, cell):
        curve = OcvCurve.default()
        t, i, v = synth_pulse(cell, curve)
        worst = 0.0
        for seed in range(100):
            noisy = v + np.random.default_rng(seed).normal(0, 1e-3, v.size)
            fit = fit_rc_from_pulse(t, i, noisy, curve, 0.5, cell.capacity_ah, cell.eta_coulomb)
            errs = [abs(fit.r0 / cell.r0 - 1), abs(fit.r1 / cell.r1 - 1), abs(fit.c1 / cell.c1 - 1)]
            worst = max(worst, *errs)
        assert worst < 0.05

    def test_no_step_rejected(self, linear_ocv):
        t = np.arange(10.0)
        with pytest.raises(FitError):
            fit_rc_from_pulse(t, np.ones(10), np.full(10, 3.6), linear_ocv, 0.5)

    def test_csv_round_trip(self, tmp_path, cell):
        t, i, v = synth_pulse(cell, OcvCurve.default())
        write_pulse_csv(tmp_path / "p.csv", t, i, v)
        t2, i2, v2 = read_pulse_csv(tmp_path / "p.csv")
        np.testing.assert_array_equal(t, t2)
        np.testing.assert_array_equal(v, v2)
