"""Estimator, chi-square test, and screens against independent oracles."""

import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import quad

from fdibench import (
    EstimationOptions,
    MeasurementPlan,
    MeasurementSet,
    OperatingState,
    UnobservableError,
    chi_square_threshold,
    default_plan,
    detect_bad_data,
    estimate_wls,
    generate_measurements,
    measurement_jacobian,
    observability_check,
    plausibility_check,
    residual_j,
    state_order,
)
from fdibench.powerflow import P_FLOW, P_INJ, Q_FLOW, Q_INJ


def chi2_upper_tail(x: float, k: int) -> float:
    """Survival function by direct numeric integration of the density."""

    def pdf(t):
        return math.exp(
            (k / 2 - 1) * math.log(t) - t / 2 - math.lgamma(k / 2) - (k / 2) * math.log(2)
        )

    val, _ = quad(pdf, x, np.inf)
    return val


def chi2_quantile_oracle(k: int, alpha: float) -> float:
    """Bisection on the integrated tail; no quantile routine involved."""
    lo, hi = 1e-9, 2000.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if chi2_upper_tail(mid, k) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestChiSquareThreshold:
    def test_small_dof_exact_quantiles(self):
        assert chi_square_threshold(10, 0.05) == pytest.approx(18.307, abs=1e-3)
        assert chi_square_threshold(10, 0.05) == pytest.approx(
            chi2_quantile_oracle(10, 0.05), abs=1e-6
        )
        # one degree of freedom at the one-sigma tail of a squared normal
        assert chi_square_threshold(1, 0.3173) == pytest.approx(1.0, abs=1e-3)

    def test_tabulated_band_uses_lower_row(self):
        # between 30 and 100 printed tables step by ten; k snaps down
        assert chi_square_threshold(31, 0.005) == chi_square_threshold(30, 0.005)
        assert chi_square_threshold(39, 0.005) == chi_square_threshold(30, 0.005)
        assert chi_square_threshold(41, 0.005) == chi_square_threshold(40, 0.005)
        assert chi_square_threshold(31, 0.005) == pytest.approx(
            chi2_quantile_oracle(30, 0.005), abs=1e-6
        )

    def test_workbench_operating_point(self):
        assert chi_square_threshold(31, 0.005) == pytest.approx(53.67, abs=0.01)

    def test_exact_again_above_hundred(self):
        assert chi_square_threshold(150, 0.01) == pytest.approx(
            chi2_quantile_oracle(150, 0.01), abs=1e-5
        )
        assert chi_square_threshold(100, 0.005) == pytest.approx(
            chi2_quantile_oracle(100, 0.005), abs=1e-6
        )

    def test_input_validation(self):
        with pytest.raises(ValueError):
            chi_square_threshold(0, 0.05)
        with pytest.raises(ValueError):
            chi_square_threshold(10.5, 0.05)
        with pytest.raises(ValueError):
            chi_square_threshold(10, 0.0)
        with pytest.raises(ValueError):
            chi_square_threshold(10, 1.0)


class TestResidualJ:
    def test_hand_value(self):
        # residuals (1, -2) with sigmas (1, 2): 1 + 1 = 2
        assert residual_j([1.0, 0.0], [0.0, 2.0], [1.0, 2.0]) == pytest.approx(2.0)

    def test_sigma_scaling(self):
        z = np.array([3.0, 4.0, 5.0])
        h = np.array([2.5, 4.5, 4.0])
        j1 = residual_j(z, h, np.ones(3))
        j2 = residual_j(z, h, 2 * np.ones(3))
        assert j2 == pytest.approx(j1 / 4.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=10)
        h = rng.normal(size=10)
        s = rng.uniform(0.5, 2.0, size=10)
        perm = rng.permutation(10)
        assert residual_j(z, h, s) == pytest.approx(residual_j(z[perm], h[perm], s[perm]))

    def test_validation(self):
        with pytest.raises(ValueError):
            residual_j([1.0], [1.0, 2.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            residual_j([1.0], [1.0], [0.0])


class TestEstimator:
    def test_noiseless_recovery(self, wscc9, base_state, genuine_meas):
        est = estimate_wls(wscc9, genuine_meas)
        assert est.converged
        np.testing.assert_allclose(est.estimated_state.v_mag, base_state.v_mag, atol=1e-6)
        np.testing.assert_allclose(est.estimated_state.v_ang, base_state.v_ang, atol=1e-6)
        assert est.residual_j < 1e-12

    def test_calculated_measurements_fit(self, wscc9, genuine_meas):
        est = estimate_wls(wscc9, genuine_meas)
        np.testing.assert_allclose(
            est.calculated_measurements, genuine_meas.values(), atol=1e-6
        )

    def test_noisy_estimate_lands_in_chi_square_band(self, wscc9, base_state):
        noisy = generate_measurements(wscc9, base_state, noise="gaussian", seed=1)
        est = estimate_wls(wscc9, noisy)
        # J ~ chi-square with 31 dof: mean 31, std ~7.9
        assert 5.0 < est.residual_j < 80.0
        # recovered state stays near truth at 1 MW meter noise
        np.testing.assert_allclose(est.estimated_state.v_mag, base_state.v_mag, atol=5e-3)

    def test_unobservable_set_raises(self, wscc9, genuine_meas):
        sparse = MeasurementSet(entries=genuine_meas.entries[:10])
        with pytest.raises(UnobservableError):
            estimate_wls(wscc9, sparse)

    def test_state_order_is_documented_layout(self, wscc9):
        order = [str(v) for v in state_order(wscc9)]
        assert order[:8] == [f"theta_{b}" for b in (2, 3, 4, 5, 6, 7, 8, 9)]
        assert order[8:] == [f"vmag_{b}" for b in range(1, 10)]


class TestBadDataDetector:
    def test_clean_set_passes(self, wscc9, genuine_meas):
        report = detect_bad_data(wscc9, genuine_meas)
        assert report.passed
        assert report.flagged == ()
        assert report.k_dof == 31
        assert report.threshold == pytest.approx(53.67, abs=0.01)

    def test_single_gross_error_identified(self, wscc9, genuine_meas):
        bad_id = "P_4_5"
        entries = tuple(
            dataclasses.replace(e, value=e.value + 30.0) if e.id == bad_id else e
            for e in genuine_meas.entries
        )
        report = detect_bad_data(wscc9, MeasurementSet(entries=entries))
        assert report.flagged == (bad_id,)
        assert report.passed
        assert report.j_trace[0] > report.threshold
        assert report.j_trace[-1] < report.threshold

    def test_gross_reactive_error_identified(self, wscc9, genuine_meas):
        bad_id = "Q_6"
        entries = tuple(
            dataclasses.replace(e, value=e.value - 25.0) if e.id == bad_id else e
            for e in genuine_meas.entries
        )
        report = detect_bad_data(wscc9, MeasurementSet(entries=entries))
        assert report.flagged == (bad_id,)
        assert report.passed

    def test_unobservable_input_reported_not_raised(self, wscc9, genuine_meas):
        sparse = MeasurementSet(entries=genuine_meas.entries[:10])
        report = detect_bad_data(wscc9, sparse)
        assert not report.passed


class TestPlausibility:
    def test_genuine_set_clean(self, wscc9, genuine_meas):
        report = plausibility_check(wscc9, genuine_meas)
        assert report.passed
        assert report.checked == 48

    def _with_value(self, meas, target_id, value):
        return MeasurementSet(
            entries=tuple(
                dataclasses.replace(e, value=value) if e.id == target_id else e
                for e in meas.entries
            )
        )

    def test_flow_magnitude_rule(self, wscc9, genuine_meas):
        report = plausibility_check(wscc9, self._with_value(genuine_meas, "P_4_5", 2000.0))
        assert ("P_4_5", "flow-magnitude") in report.violations

    def test_injection_magnitude_rule(self, wscc9, genuine_meas):
        report = plausibility_check(wscc9, self._with_value(genuine_meas, "P_5", -1000.0))
        assert ("P_5", "injection-magnitude") in report.violations

    def test_injection_sign_rule(self, wscc9, genuine_meas):
        # bus 5 is a pure load; claiming it produces 40 MW is implausible
        report = plausibility_check(wscc9, self._with_value(genuine_meas, "P_5", 40.0))
        assert ("P_5", "injection-sign") in report.violations

    def test_duplicate_id_rule(self, wscc9, genuine_meas):
        doubled = MeasurementSet(entries=genuine_meas.entries + genuine_meas.entries[:1])
        report = plausibility_check(wscc9, doubled)
        assert (genuine_meas.entries[0].id, "duplicate-id") in report.violations


class TestObservability:
    def test_full_plan_observable(self, wscc9):
        report = observability_check(wscc9, default_plan(wscc9))
        assert report.observable
        assert report.rank == 17
        assert report.n_states == 17

    def test_injections_alone_insufficient(self, wscc9):
        plan = default_plan(wscc9)
        inj = MeasurementPlan(
            entries=tuple(e for e in plan.entries if e.kind in (P_INJ, Q_INJ))
        )
        report = observability_check(wscc9, inj)
        assert not report.observable
        assert report.rank < 17

    def _fd_rank(self, wscc9, plan):
        """Independent rank: finite differences of the metered values."""
        flat = OperatingState(np.ones(9), np.zeros(9))

        def h(vm, va):
            st = OperatingState(vm, va)
            return generate_measurements(wscc9, st, plan=plan).values()

        cols = []
        eps = 1e-6
        for var in state_order(wscc9):
            vm = flat.v_mag.copy()
            va = flat.v_ang.copy()
            i = wscc9.index_of(var.bus)
            if var.kind == "theta":
                va_hi, va_lo = va.copy(), va.copy()
                va_hi[i] += eps
                va_lo[i] -= eps
                cols.append((h(vm, va_hi) - h(vm, va_lo)) / (2 * eps))
            else:
                vm_hi, vm_lo = vm.copy(), vm.copy()
                vm_hi[i] += eps
                vm_lo[i] -= eps
                cols.append((h(vm_hi, va) - h(vm_lo, va)) / (2 * eps))
        return int(np.linalg.matrix_rank(np.column_stack(cols)))

    def test_rank_matches_finite_difference_oracle_on_subplans(self, wscc9):
        full = default_plan(wscc9)
        rng = np.random.default_rng(5)
        for _ in range(3):
            take = sorted(rng.choice(len(full.entries), size=22, replace=False))
            plan = MeasurementPlan(entries=tuple(full.entries[i] for i in take))
            report = observability_check(wscc9, plan)
            assert report.rank == self._fd_rank(wscc9, plan)

    def test_analytic_jacobian_matches_finite_differences(self, wscc9, base_state, genuine_meas):
        h_analytic = measurement_jacobian(wscc9, genuine_meas, base_state)
        flat_rank = np.linalg.matrix_rank(h_analytic)
        assert flat_rank == 17
        # spot-check a few columns against central differences of h(x)
        eps = 1e-7

        def h(state):
            return generate_measurements(wscc9, state, plan=genuine_meas.plan()).values() / 100.0

        for col, var in enumerate(state_order(wscc9)):
            if col % 5:
                continue
            vm = base_state.v_mag.copy()
            va = base_state.v_ang.copy()
            i = wscc9.index_of(var.bus)
            if var.kind == "theta":
                hi = OperatingState(vm, np.where(np.arange(9) == i, va + eps, va))
                lo = OperatingState(vm, np.where(np.arange(9) == i, va - eps, va))
            else:
                hi = OperatingState(np.where(np.arange(9) == i, vm + eps, vm), va)
                lo = OperatingState(np.where(np.arange(9) == i, vm - eps, vm), va)
            fd = (h(hi) - h(lo)) / (2 * eps)
            np.testing.assert_allclose(h_analytic[:, col], fd, atol=5e-7)
