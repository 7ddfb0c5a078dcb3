"""Power flow, branch flows, and metering against independent oracles."""

import math

import numpy as np
import pytest

from fdibench import (
    Branch,
    Bus,
    NetworkModel,
    OperatingState,
    PlanError,
    PowerFlowDivergenceError,
    PowerFlowOptions,
    bus_injections,
    build_admittance_matrix,
    compute_branch_flows,
    default_plan,
    generate_measurements,
    load_measurements,
    load_state,
    power_mismatch,
    save_measurements,
    save_state,
    solve_ac_powerflow,
    solve_dc_powerflow,
)
from fdibench.powerflow import P_FLOW, P_INJ, Q_FLOW, Q_INJ


def gauss_seidel_oracle(network, tol=1e-12, max_iter=20000):
    """Independent solver: plain Gauss-Seidel sweeps, no Jacobian anywhere."""
    y = build_admittance_matrix(network)
    n = network.n
    v = np.ones(n, dtype=complex)
    kinds = [b.kind for b in network.buses]
    s_sched = np.array(
        [complex(b.gen_p - b.load_p, b.gen_q - b.load_q) / network.base_mva
         for b in network.buses]
    )
    for i, b in enumerate(network.buses):
        if b.kind in ("slack", "pv"):
            v[i] = b.voltage_setpoint
    for _ in range(max_iter):
        delta = 0.0
        for i, kind in enumerate(kinds):
            if kind == "slack":
                continue
            i_inj = y[i] @ v
            if kind == "pv":
                q = (v[i] * np.conj(i_inj)).imag
                s = complex(s_sched[i].real, q)
            else:
                s = s_sched[i]
            others = y[i] @ v - y[i, i] * v[i]
            new = (np.conj(s / v[i]) - others) / y[i, i]
            if kind == "pv":
                new = network.buses[i].voltage_setpoint * new / abs(new)
            delta = max(delta, abs(new - v[i]))
            v[i] = new
        if delta < tol:
            break
    return OperatingState(np.abs(v), np.angle(v))


def two_bus_pv(load_mw=100.0, x=0.1):
    """Closed-form case: both magnitudes pinned at 1, one unknown angle."""
    return NetworkModel(
        buses=(
            Bus(1, "slack", voltage_setpoint=1.0),
            Bus(2, "pv", voltage_setpoint=1.0, load_p=load_mw),
        ),
        branches=(Branch(1, 2, r=0.0, x=x),),
    )


class TestAcPowerFlow:
    def test_matches_gauss_seidel_oracle(self, wscc9, base_state):
        oracle = gauss_seidel_oracle(wscc9)
        np.testing.assert_allclose(base_state.v_mag, oracle.v_mag, atol=1e-6)
        np.testing.assert_allclose(base_state.v_ang, oracle.v_ang, atol=1e-6)

    def test_two_bus_closed_form_angle(self):
        # 100 MW over x=0.1 p.u. with both |V|=1: sin(theta12) = 0.1 exactly
        state = solve_ac_powerflow(two_bus_pv())
        assert state.v_ang[1] == pytest.approx(-math.asin(0.1), abs=1e-10)
        assert state.v_mag[1] == pytest.approx(1.0, abs=1e-12)

    def test_zero_injection_case_is_flat(self):
        net = NetworkModel(
            buses=(Bus(1, "slack", voltage_setpoint=1.0), Bus(2, "pq")),
            branches=(Branch(1, 2, r=0.01, x=0.1),),
        )
        state = solve_ac_powerflow(net)
        np.testing.assert_allclose(state.v_mag, [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(state.v_ang, [0.0, 0.0], atol=1e-12)

    def test_mismatch_below_tolerance_at_solution(self, wscc9, base_state):
        assert np.max(np.abs(power_mismatch(wscc9, base_state))) < 1e-8

    def test_wscc9_reference_solution(self, wscc9, base_state):
        # long-published solution of this exact case
        v_expect = {5: 0.9956, 6: 1.0127, 7: 1.0258, 8: 1.0159, 9: 1.0324}
        ang_expect = {2: 9.28, 3: 4.6648, 4: -2.2168, 5: -3.9888, 7: 3.7197}
        for bus, v in v_expect.items():
            assert base_state.v_mag[wscc9.index_of(bus)] == pytest.approx(v, abs=5e-4)
        for bus, deg in ang_expect.items():
            assert base_state.angles_deg()[wscc9.index_of(bus)] == pytest.approx(deg, abs=5e-3)

    def test_slack_covers_losses(self, wscc9, base_state):
        p, _ = bus_injections(wscc9, base_state)
        assert p[wscc9.index_of(1)] == pytest.approx(71.64, abs=0.01)
        flows = compute_branch_flows(wscc9, base_state)
        assert flows.p_loss.sum() == pytest.approx(4.641, abs=0.005)

    def test_divergence_raises_with_mismatch(self, wscc9):
        from fdibench import scale_loads

        hopeless = scale_loads(wscc9, 315000.0)
        with pytest.raises(PowerFlowDivergenceError) as err:
            solve_ac_powerflow(hopeless, PowerFlowOptions(max_iter=10))
        assert err.value.max_mismatch > 0

    def test_power_balance_on_converged_cases(self, wscc9):
        from fdibench import scale_loads

        for demand in (200.0, 315.0, 400.0):
            net = scale_loads(wscc9, demand)
            state = solve_ac_powerflow(net)
            p, q = bus_injections(net, state)
            flows = compute_branch_flows(net, state)
            assert p.sum() == pytest.approx(flows.p_loss.sum(), abs=1e-6)
            assert q.sum() == pytest.approx(flows.q_loss.sum(), abs=1e-6)


class TestDcPowerFlow:
    def test_two_bus_closed_form(self):
        state = solve_dc_powerflow(two_bus_pv(load_mw=100.0, x=0.1))
        # theta2 = -P x = -0.1 rad exactly in the linear model
        assert state.v_ang[1] == pytest.approx(-0.1, abs=1e-12)
        np.testing.assert_allclose(state.v_mag, 1.0)

    def test_close_to_ac_on_wscc9(self, wscc9, base_state):
        dc = solve_dc_powerflow(wscc9)
        gap = np.degrees(np.abs(dc.v_ang - base_state.v_ang))
        assert gap.max() < 2.0


class TestBranchFlows:
    def test_matches_complex_arithmetic_oracle(self, wscc9, base_state):
        v = base_state.complex_voltages()
        flows = compute_branch_flows(wscc9, base_state)
        for k, br in enumerate(wscc9.branches):
            f = wscc9.index_of(br.from_bus)
            t = wscc9.index_of(br.to_bus)
            ys = br.series_admittance
            bc = 1j * br.b_shunt / 2.0
            a = br.tap
            i_f = (ys + bc) / a**2 * v[f] - ys / a * v[t]
            i_t = (ys + bc) * v[t] - ys / a * v[f]
            s_f = v[f] * np.conj(i_f) * wscc9.base_mva
            s_t = v[t] * np.conj(i_t) * wscc9.base_mva
            assert flows.p_from[k] == pytest.approx(s_f.real, abs=1e-9)
            assert flows.q_from[k] == pytest.approx(s_f.imag, abs=1e-9)
            assert flows.p_to[k] == pytest.approx(s_t.real, abs=1e-9)
            assert flows.q_to[k] == pytest.approx(s_t.imag, abs=1e-9)

    def test_end_partials_match_finite_differences(self, wscc9, base_state):
        from fdibench.model import branch_pu_params
        from fdibench.powerflow import branch_end_partials, branch_end_values

        br = wscc9.branches[3]            # a line with r, x and charging
        g, b, bc, a = branch_pu_params(br)
        f = wscc9.index_of(br.from_bus)
        t = wscc9.index_of(br.to_bus)
        point = [base_state.v_mag[f], base_state.v_mag[t],
                 base_state.v_ang[f], base_state.v_ang[t]]
        analytic = np.asarray(branch_end_partials(g, b, bc, a, *point))
        eps = 1e-7
        numeric = np.zeros_like(analytic)
        for j in range(4):
            hi = list(point)
            lo = list(point)
            hi[j] += eps
            lo[j] -= eps
            fhi = np.asarray(branch_end_values(g, b, bc, a, *hi))
            flo = np.asarray(branch_end_values(g, b, bc, a, *lo))
            numeric[:, j] = (fhi - flo) / (2 * eps)
        np.testing.assert_allclose(analytic, numeric, atol=1e-6)


class TestMeasurementPlan:
    def test_wscc9_census(self, wscc9):
        plan = default_plan(wscc9)
        assert len(plan) == 48
        kinds = [e.kind for e in plan.entries]
        assert kinds.count(P_FLOW) == 18 and kinds.count(Q_FLOW) == 18
        assert kinds.count(P_INJ) == 6 and kinds.count(Q_INJ) == 6
        inj_buses = sorted({e.from_bus for e in plan.entries if e.kind == P_INJ})
        assert inj_buses == [1, 2, 3, 5, 6, 8]
        # active block first, then the mirroring reactive block
        assert all(k.startswith("P") for k in kinds[:24])
        assert all(k.startswith("Q") for k in kinds[24:])

    def test_ids_unique_and_structured(self, wscc9):
        plan = default_plan(wscc9)
        ids = [e.id for e in plan.entries]
        assert len(set(ids)) == 48
        assert "P_4_5" in ids and "Q_9_3" in ids and "P_1" in ids

    def test_duplicate_entry_rejected(self, wscc9):
        from fdibench import MeasurementPlan

        entry = default_plan(wscc9).entries[0]
        with pytest.raises(PlanError):
            MeasurementPlan(entries=(entry, entry))


class TestGenerateMeasurements:
    def test_noiseless_equals_solved_flows(self, wscc9, base_state, genuine_meas):
        flows = compute_branch_flows(wscc9, base_state)
        p, q = bus_injections(wscc9, base_state)
        by_id = {e.id: e.value for e in genuine_meas}
        for k, br in enumerate(wscc9.branches):
            assert by_id[f"P_{br.from_bus}_{br.to_bus}"] == pytest.approx(flows.p_from[k], abs=1e-12)
            assert by_id[f"P_{br.to_bus}_{br.from_bus}"] == pytest.approx(flows.p_to[k], abs=1e-12)
            assert by_id[f"Q_{br.from_bus}_{br.to_bus}"] == pytest.approx(flows.q_from[k], abs=1e-12)
        for bus in (1, 2, 3, 5, 6, 8):
            i = wscc9.index_of(bus)
            assert by_id[f"P_{bus}"] == pytest.approx(p[i], abs=1e-12)
            assert by_id[f"Q_{bus}"] == pytest.approx(q[i], abs=1e-12)

    def test_gaussian_noise_seeded_determinism(self, wscc9, base_state):
        a = generate_measurements(wscc9, base_state, noise="gaussian", seed=11)
        b = generate_measurements(wscc9, base_state, noise="gaussian", seed=11)
        c = generate_measurements(wscc9, base_state, noise="gaussian", seed=12)
        assert a.values().tolist() == b.values().tolist()
        assert a.values().tolist() != c.values().tolist()

    def test_gaussian_noise_scale(self, wscc9, base_state, genuine_meas):
        noisy = generate_measurements(wscc9, base_state, noise="gaussian", seed=0)
        diff = noisy.values() - genuine_meas.values()
        assert 0.5 < np.std(diff) < 1.5           # sigma is 1 MW per meter
        assert np.max(np.abs(diff)) < 6.0

    def test_unknown_noise_model_rejected(self, wscc9, base_state):
        with pytest.raises(PlanError):
            generate_measurements(wscc9, base_state, noise="salt-and-pepper")


class TestSerialization:
    def test_measurements_round_trip_exactly(self, genuine_meas, tmp_path):
        path = tmp_path / "meas.csv"
        save_measurements(genuine_meas, path)
        again = load_measurements(path)
        assert again == genuine_meas

    def test_state_round_trip(self, base_state, tmp_path):
        path = tmp_path / "state.json"
        save_state(base_state, path)
        again = load_state(path)
        np.testing.assert_array_equal(again.v_mag, base_state.v_mag)
        np.testing.assert_array_equal(again.v_ang, base_state.v_ang)
