"""Weighted-least-squares state estimation and bad-data detection.

The state vector stacks the voltage angles of every non-slack bus (ascending
bus id) followed by the voltage magnitudes of every bus, so a network with n
buses has 2n-1 states.  Measurements enter in MW/Mvar and are converted to
per-unit at the boundary; weights are the inverse squared meter sigmas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import (
    EstimationDivergenceError,
    PlanError,
    UnobservableError,
)
from .model import NetworkModel, PQ, SLACK, branch_pu_params
from .powerflow import (
    MeasurementPlan,
    MeasurementSet,
    OperatingState,
    P_FLOW,
    P_INJ,
    Q_FLOW,
    Q_INJ,
    branch_end_partials,
    branch_end_values,
    bus_injections,
    compute_branch_flows,
    solve_ac_powerflow,
)


@dataclass(frozen=True, order=True)
class StateVariable:
    """One estimator unknown: an angle ('theta') or magnitude ('vmag')."""

    kind: str
    bus: int

    def __post_init__(self):
        if self.kind not in ("theta", "vmag"):
            raise ValueError(f"unknown state variable kind {self.kind!r}")

    def __str__(self) -> str:
        return f"{self.kind}_{self.bus}"


def state_order(network: NetworkModel) -> tuple[StateVariable, ...]:
    """Canonical unknown ordering: non-slack angles, then all magnitudes."""
    slack = network.slack_id
    thetas = [StateVariable("theta", b.id) for b in network.buses if b.id != slack]
    vmags = [StateVariable("vmag", b.id) for b in network.buses]
    return tuple(thetas + vmags)


def pack_state(network: NetworkModel, state: OperatingState) -> np.ndarray:
    slack_idx = network.index_of(network.slack_id)
    keep = [i for i in range(network.n) if i != slack_idx]
    return np.concatenate([state.v_ang[keep], state.v_mag])


def unpack_state(network: NetworkModel, x: np.ndarray) -> OperatingState:
    n = network.n
    slack_idx = network.index_of(network.slack_id)
    va = np.zeros(n)
    keep = [i for i in range(n) if i != slack_idx]
    va[keep] = x[: n - 1]
    return OperatingState(v_mag=np.array(x[n - 1:]), v_ang=va)


class MeasurementModel:
    """Evaluates h(x) and its Jacobian for a list of meter placements.

    ``entries`` may be plan entries or measurements; only ``kind``,
    ``from_bus`` and ``to_bus`` are used.  All values are per-unit.
    """

    def __init__(self, network: NetworkModel, entries):
        self.network = network
        self.entries = tuple(entries)
        n = network.n
        slack_idx = network.index_of(network.slack_id)
        # column of each state variable; slack angle is not a state
        self._theta_col = [None] * n
        col = 0
        for i in range(n):
            if i != slack_idx:
                self._theta_col[i] = col
                col += 1
        self._vmag_col = [n - 1 + i for i in range(n)]
        self._slack_idx = slack_idx
        self._branch_terms = [
            (branch_pu_params(br), network.index_of(br.from_bus), network.index_of(br.to_bus))
            for br in network.branches
        ]
        # entry -> list of (branch_idx, row_in_branch_block) contributions,
        # where rows 0..3 are (P_f, Q_f, P_t, Q_t)
        self._contributions: list[list[tuple[int, int]]] = []
        for e in self.entries:
            if e.kind in (P_FLOW, Q_FLOW):
                hit = None
                for k, br in enumerate(network.branches):
                    if (br.from_bus, br.to_bus) == (e.from_bus, e.to_bus):
                        hit = (k, 0 if e.kind == P_FLOW else 1)
                    elif (br.to_bus, br.from_bus) == (e.from_bus, e.to_bus):
                        hit = (k, 2 if e.kind == P_FLOW else 3)
                    if hit is not None:
                        break
                if hit is None:
                    raise PlanError(
                        f"no branch between {e.from_bus} and {e.to_bus} for {e.kind}"
                    )
                self._contributions.append([hit])
            elif e.kind in (P_INJ, Q_INJ):
                rows = []
                for k, br in enumerate(network.branches):
                    if br.from_bus == e.from_bus:
                        rows.append((k, 0 if e.kind == P_INJ else 1))
                    elif br.to_bus == e.from_bus:
                        rows.append((k, 2 if e.kind == P_INJ else 3))
                self._contributions.append(rows)
            else:
                raise PlanError(f"unknown measurement kind {e.kind!r}")

    @property
    def n_states(self) -> int:
        return 2 * self.network.n - 1

    def _branch_blocks(self, x: np.ndarray, with_partials: bool):
        n = self.network.n
        vm = x[n - 1:]
        va = np.zeros(n)
        col = 0
        for i in range(n):
            if i != self._slack_idx:
                va[i] = x[col]
                col += 1
        values = []
        partials = []
        for (g, b, bc, a), fi, ti in self._branch_terms:
            values.append(branch_end_values(g, b, bc, a, vm[fi], vm[ti], va[fi], va[ti]))
            if with_partials:
                partials.append(
                    branch_end_partials(g, b, bc, a, vm[fi], vm[ti], va[fi], va[ti])
                )
        return values, partials

    def h(self, x: np.ndarray) -> np.ndarray:
        values, _ = self._branch_blocks(x, with_partials=False)
        out = np.empty(len(self.entries))
        for i, rows in enumerate(self._contributions):
            out[i] = sum(values[k][r] for k, r in rows)
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        _, partials = self._branch_blocks(x, with_partials=True)
        h_mat = np.zeros((len(self.entries), self.n_states))
        for i, rows in enumerate(self._contributions):
            for k, r in rows:
                _, fi, ti = self._branch_terms[k]
                block = partials[k]
                # block columns: (vf, vt, tf, tt)
                h_mat[i, self._vmag_col[fi]] += block[r, 0]
                h_mat[i, self._vmag_col[ti]] += block[r, 1]
                if self._theta_col[fi] is not None:
                    h_mat[i, self._theta_col[fi]] += block[r, 2]
                if self._theta_col[ti] is not None:
                    h_mat[i, self._theta_col[ti]] += block[r, 3]
        return h_mat


def measurement_jacobian(
    network: NetworkModel, measurements: MeasurementSet, state: OperatingState
) -> np.ndarray:
    """Measurement Jacobian (p.u.) at a given operating state."""
    model = MeasurementModel(network, measurements.entries)
    return model.jacobian(pack_state(network, state))


@dataclass(frozen=True)
class EstimationOptions:
    tol: float = 1e-8          # max |state update|
    max_iter: int = 50
    raise_on_divergence: bool = True


@dataclass(frozen=True)
class EstimationResult:
    estimated_state: OperatingState
    calculated_measurements: np.ndarray   # MW / Mvar, input order
    residual_j: float
    iterations: int
    converged: bool


def residual_j(measured, calculated, sigmas) -> float:
    """Weighted sum of squared residuals: sum(((z - h)/sigma)^2).

    Dimensionless; any consistent unit works as long as all three inputs
    share it.
    """
    zm = np.asarray(measured, dtype=float)
    zc = np.asarray(calculated, dtype=float)
    sg = np.asarray(sigmas, dtype=float)
    if zm.shape != zc.shape or zm.shape != sg.shape:
        raise ValueError("measured, calculated and sigmas must have equal length")
    if np.any(sg <= 0):
        raise ValueError("sigmas must be positive")
    return float(np.sum(((zm - zc) / sg) ** 2))


# degrees-of-freedom rows of the printed chi-square table; between 30 and 100
# only every tenth row exists and practice reads the nearest lower row
_TABLE_ROWS = tuple(range(1, 31)) + (40, 50, 60, 70, 80, 90, 100)


def chi_square_threshold(k_dof: int, significance: float) -> float:
    """Upper-tail chi-square quantile, read the way printed tables are.

    For 30 < k < 100 the tabulated rows step by ten, and the established
    reading takes the nearest row not exceeding k (e.g. k = 31 uses row 30,
    giving 53.67 at significance 0.005).  At or below 30, and above 100, the
    exact quantile for k is returned.
    """
    if not isinstance(k_dof, (int, np.integer)) or k_dof < 1:
        raise ValueError(f"k_dof must be a positive integer, got {k_dof!r}")
    if not 0.0 < significance < 1.0:
        raise ValueError(f"significance must be in (0, 1), got {significance!r}")
    if k_dof <= 100:
        dof = max(row for row in _TABLE_ROWS if row <= k_dof)
    else:
        dof = int(k_dof)
    return float(chi2.isf(significance, dof))


def estimate_wls(
    network: NetworkModel,
    measurements: MeasurementSet,
    options: EstimationOptions | None = None,
) -> EstimationResult:
    """Gauss-Newton WLS estimate from a flat start.

    Raises :class:`UnobservableError` when the measurement Jacobian is rank
    deficient at the flat start, and :class:`EstimationDivergenceError` when
    the iteration does not settle (unless options say otherwise).
    """
    opts = options or EstimationOptions()
    model = MeasurementModel(network, measurements.entries)
    base = network.base_mva
    z = measurements.values() / base
    sigmas_pu = measurements.sigmas() / base
    w_sqrt = 1.0 / sigmas_pu

    x = pack_state(network, OperatingState(np.ones(network.n), np.zeros(network.n)))
    h0 = model.jacobian(x)
    rank = int(np.linalg.matrix_rank(h0))
    if rank < model.n_states:
        raise UnobservableError(
            f"measurement set does not determine the state "
            f"(rank {rank} < {model.n_states})"
        )

    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        h_mat = model.jacobian(x) if iterations > 1 else h0
        r = z - model.h(x)
        if not np.all(np.isfinite(r)):
            break
        step, *_ = np.linalg.lstsq(h_mat * w_sqrt[:, None], r * w_sqrt, rcond=None)
        x = x + step
        if not np.all(np.isfinite(x)):
            break
        if np.max(np.abs(step)) < opts.tol:
            converged = True
            break

    calc_pu = model.h(x) if np.all(np.isfinite(x)) else np.full(len(z), np.nan)
    j_val = (
        residual_j(z * base, calc_pu * base, measurements.sigmas())
        if np.all(np.isfinite(calc_pu))
        else float("inf")
    )
    if not converged and opts.raise_on_divergence:
        raise EstimationDivergenceError(
            f"WLS iteration did not converge in {opts.max_iter} iterations"
        )
    state = (
        unpack_state(network, x)
        if np.all(np.isfinite(x))
        else OperatingState(np.full(network.n, np.nan), np.zeros(network.n))
    )
    return EstimationResult(
        estimated_state=state,
        calculated_measurements=calc_pu * base,
        residual_j=j_val,
        iterations=iterations,
        converged=converged,
    )


@dataclass(frozen=True)
class BddReport:
    k_dof: int
    threshold: float
    flagged: tuple[str, ...]
    passed: bool
    j_trace: tuple[float, ...]


def detect_bad_data(
    network: NetworkModel,
    measurements: MeasurementSet,
    significance: float = 0.005,
    initial_estimate: EstimationResult | None = None,
) -> BddReport:
    """Chi-square test with largest-normalized-residual removal.

    Estimates, compares J(x) against the chi-square threshold at the current
    redundancy, and while the test fails removes the measurement with the
    largest normalized residual and repeats.  Exhausting redundancy (or
    losing observability) ends the loop with ``passed=False`` rather than an
    exception.
    """
    n_states = 2 * network.n - 1
    current = measurements
    flagged: list[str] = []
    j_trace: list[float] = []
    est = initial_estimate
    k = len(current) - n_states
    threshold = float("nan")
    passed = False
    while True:
        k = len(current) - n_states
        if k < 1:
            break  # no redundancy left to test against
        threshold = chi_square_threshold(k, significance)
        if est is None:
            try:
                est = estimate_wls(network, current)
            except UnobservableError:
                break
        j_trace.append(est.residual_j)
        if est.residual_j <= threshold:
            passed = True
            break
        worst = _largest_normalized_residual(network, current, est)
        if worst is None:
            break
        flagged.append(worst)
        current = current.without({worst})
        est = None
    return BddReport(
        k_dof=k,
        threshold=threshold,
        flagged=tuple(flagged),
        passed=passed,
        j_trace=tuple(j_trace),
    )


def _largest_normalized_residual(
    network: NetworkModel, measurements: MeasurementSet, est: EstimationResult
) -> str | None:
    """Id of the entry with the largest normalized residual, or None.

    Uses the residual covariance Omega = R - H (H' R^-1 H)^-1 H'; entries
    with a (numerically) zero diagonal are critical and are never picked.
    """
    base = network.base_mva
    model = MeasurementModel(network, measurements.entries)
    x = pack_state(network, est.estimated_state)
    h_mat = model.jacobian(x)
    sigmas_pu = measurements.sigmas() / base
    r_diag = sigmas_pu**2
    try:
        gain_inv = np.linalg.inv(h_mat.T @ (h_mat / r_diag[:, None]))
    except np.linalg.LinAlgError:
        return None
    omega_diag = r_diag - np.einsum("ij,jk,ik->i", h_mat, gain_inv, h_mat)
    residuals = measurements.values() / base - model.h(x)
    normalized = np.full(len(residuals), -np.inf)
    usable = omega_diag > 1e-10 * r_diag
    normalized[usable] = np.abs(residuals[usable]) / np.sqrt(omega_diag[usable])
    if not np.any(usable):
        return None
    return measurements.ids[int(np.argmax(normalized))]


@dataclass(frozen=True)
class PlausibilityReport:
    violations: tuple[tuple[str, str], ...]   # (measurement id, rule)
    checked: int

    @property
    def passed(self) -> bool:
        return not self.violations


#: grace applied to the sign-consistency rule so a plausible near-zero
#: injection is never flagged (matches the default meter sigma, MW)
_SIGN_TOLERANCE = 1.0
#: floor for flow/injection reference magnitudes (MVA) so lightly loaded
#: elements keep loose limits
_REFERENCE_FLOOR = 50.0


def plausibility_check(
    network: NetworkModel, measurements: MeasurementSet
) -> PlausibilityReport:
    """Screen measurements against loose physical limits.

    Rules: (a) branch flow magnitudes within twice a per-branch rating proxy
    (2.5x the case's own solved flow, floored); (b) injection magnitudes
    within 1.5x the bus's scheduled injection (floored); (c) active
    injection sign consistent with the bus being a net consumer/producer;
    (d) no duplicate measurement ids.  The limits are deliberately loose so
    that any genuinely solvable state passes.
    """
    state = solve_ac_powerflow(network)
    flows = compute_branch_flows(network, state)
    p_base, q_base = bus_injections(network, state, flows)
    branch_rating = {}
    for kpair, (f, t) in enumerate(flows.branch_pairs):
        mva = max(flows.mva_from()[kpair], flows.mva_to()[kpair])
        branch_rating[frozenset((f, t))] = max(2.5 * mva, _REFERENCE_FLOOR)

    violations: list[tuple[str, str]] = []
    seen: set[str] = set()
    for e in measurements:
        if e.id in seen:
            violations.append((e.id, "duplicate-id"))
            continue
        seen.add(e.id)
        if e.kind in (P_FLOW, Q_FLOW):
            limit = 2.0 * branch_rating.get(frozenset((e.from_bus, e.to_bus)), _REFERENCE_FLOOR)
            if abs(e.value) > limit:
                violations.append((e.id, "flow-magnitude"))
        else:
            i = network.index_of(e.from_bus)
            ref = max(abs(p_base[i]), abs(q_base[i]), _REFERENCE_FLOOR)
            if abs(e.value) > 1.5 * ref:
                violations.append((e.id, "injection-magnitude"))
            if e.kind == P_INJ:
                klass = network.bus(e.from_bus).injection_class
                if klass > 0 and e.value > _SIGN_TOLERANCE:
                    violations.append((e.id, "injection-sign"))
                elif klass < 0 and e.value < -_SIGN_TOLERANCE:
                    violations.append((e.id, "injection-sign"))
    return PlausibilityReport(violations=tuple(violations), checked=len(measurements))


@dataclass(frozen=True)
class ObservabilityReport:
    observable: bool
    rank: int
    n_states: int


def observability_check(
    network: NetworkModel, plan: MeasurementPlan | MeasurementSet
) -> ObservabilityReport:
    """Numeric observability: Jacobian rank at the flat start."""
    entries = plan.entries
    model = MeasurementModel(network, entries)
    x = pack_state(network, OperatingState(np.ones(network.n), np.zeros(network.n)))
    rank = int(np.linalg.matrix_rank(model.jacobian(x)))
    return ObservabilityReport(
        observable=rank == model.n_states, rank=rank, n_states=model.n_states
    )
