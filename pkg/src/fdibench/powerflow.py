"""Power flow solvers, branch flows and measurement generation.

The AC solver is a full-Jacobian Newton-Raphson in polar coordinates.  The
same per-branch flow expressions used here also back the estimator's
measurement model and the attack constraint equations, so every consumer of
a "P flow at bus f toward bus t" agrees to the last ulp.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PlanError, PowerFlowDivergenceError, TopologyError
from .model import NetworkModel, PQ, SLACK, branch_pu_params, build_admittance_matrix

P_FLOW = "P-flow"
Q_FLOW = "Q-flow"
P_INJ = "P-inj"
Q_INJ = "Q-inj"
MEASUREMENT_KINDS = (P_FLOW, Q_FLOW, P_INJ, Q_INJ)

GENUINE = "genuine"
MANIPULATED = "manipulated"

NOISE_NONE = "none"
NOISE_GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class OperatingState:
    """Voltage magnitudes (p.u.) and angles (rad), ascending bus id order."""

    v_mag: np.ndarray
    v_ang: np.ndarray

    def __post_init__(self):
        vm = np.asarray(self.v_mag, dtype=float).copy()
        va = np.asarray(self.v_ang, dtype=float).copy()
        if vm.shape != va.shape or vm.ndim != 1:
            raise ValueError("v_mag and v_ang must be 1-D arrays of equal length")
        vm.setflags(write=False)
        va.setflags(write=False)
        object.__setattr__(self, "v_mag", vm)
        object.__setattr__(self, "v_ang", va)

    @property
    def n(self) -> int:
        return self.v_mag.shape[0]

    def angles_deg(self) -> np.ndarray:
        return np.degrees(self.v_ang)

    def complex_voltages(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


def save_state(state: OperatingState, path: str | Path):
    doc = {"v_mag": state.v_mag.tolist(), "v_ang": state.v_ang.tolist()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_state(path: str | Path) -> OperatingState:
    doc = json.loads(Path(path).read_text())
    return OperatingState(np.asarray(doc["v_mag"]), np.asarray(doc["v_ang"]))


@dataclass(frozen=True)
class PowerFlowOptions:
    tol: float = 1e-8          # max |P,Q mismatch| in p.u.
    max_iter: int = 50


def _scheduled_injections(network: NetworkModel) -> np.ndarray:
    """Net scheduled complex injection per bus, p.u. (production positive)."""
    s = np.zeros(network.n, dtype=complex)
    for i, b in enumerate(network.buses):
        s[i] = complex(b.gen_p - b.load_p, b.gen_q - b.load_q) / network.base_mva
    return s


def solve_ac_powerflow(
    network: NetworkModel, options: PowerFlowOptions | None = None
) -> OperatingState:
    """Newton-Raphson AC power flow from a flat start.

    Returns the converged operating state; raises
    :class:`PowerFlowDivergenceError` (with the final mismatch) otherwise.
    """
    opts = options or PowerFlowOptions()
    y = build_admittance_matrix(network)
    n = network.n
    kinds = [b.kind for b in network.buses]
    slack = kinds.index(SLACK)
    pvpq = [i for i in range(n) if i != slack]
    pq = [i for i in range(n) if kinds[i] == PQ]

    vm = np.ones(n)
    va = np.zeros(n)
    for i, b in enumerate(network.buses):
        if b.voltage_setpoint is not None and b.kind != PQ:
            vm[i] = b.voltage_setpoint
    s_spec = _scheduled_injections(network)

    def mismatch_vector(vm, va):
        v = vm * np.exp(1j * va)
        mis = v * np.conj(y @ v) - s_spec
        return np.concatenate([mis.real[pvpq], mis.imag[pq]])

    f = mismatch_vector(vm, va)
    for _ in range(opts.max_iter):
        if np.max(np.abs(f)) < opts.tol:
            return OperatingState(vm, va)
        v = vm * np.exp(1j * va)
        ibus = y @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vnorm = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
        ds_dvm = diag_v @ np.conj(y @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm
        j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
        j12 = ds_dvm.real[np.ix_(pvpq, pq)]
        j21 = ds_dva.imag[np.ix_(pq, pvpq)]
        j22 = ds_dvm.imag[np.ix_(pq, pq)]
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowDivergenceError(
                f"singular power-flow Jacobian: {exc}", float(np.max(np.abs(f)))
            ) from exc
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        if not np.all(np.isfinite(vm)) or not np.all(np.isfinite(va)) or np.any(vm <= 0):
            raise PowerFlowDivergenceError("power flow diverged (voltage collapse)", float("inf"))
        f = mismatch_vector(vm, va)
    if np.max(np.abs(f)) < opts.tol:
        return OperatingState(vm, va)
    raise PowerFlowDivergenceError(
        f"power flow did not converge in {opts.max_iter} iterations "
        f"(max mismatch {np.max(np.abs(f)):.3e} p.u.)",
        float(np.max(np.abs(f))),
    )


def power_mismatch(network: NetworkModel, state: OperatingState) -> float:
    """Max |P,Q mismatch| (p.u.) over non-slack P rows and PQ-bus Q rows."""
    y = build_admittance_matrix(network)
    kinds = [b.kind for b in network.buses]
    slack = kinds.index(SLACK)
    pvpq = [i for i in range(network.n) if i != slack]
    pq = [i for i in range(network.n) if kinds[i] == PQ]
    v = state.complex_voltages()
    mis = v * np.conj(y @ v) - _scheduled_injections(network)
    return float(np.max(np.abs(np.concatenate([mis.real[pvpq], mis.imag[pq]]))))


def solve_dc_powerflow(network: NetworkModel) -> OperatingState:
    """Linear active-power flow: flat magnitudes, angles from B' theta = P."""
    if not network.is_connected():
        raise TopologyError(f"network {network.name or '<unnamed>'} is not connected")
    n = network.n
    b_mat = np.zeros((n, n))
    for br in network.branches:
        f = network.index_of(br.from_bus)
        t = network.index_of(br.to_bus)
        b = 1.0 / (br.x * br.tap)
        b_mat[f, f] += b
        b_mat[t, t] += b
        b_mat[f, t] -= b
        b_mat[t, f] -= b
    p = np.array([(b.gen_p - b.load_p) / network.base_mva for b in network.buses])
    slack = [i for i, b in enumerate(network.buses) if b.kind == SLACK][0]
    keep = [i for i in range(n) if i != slack]
    try:
        theta_red = np.linalg.solve(b_mat[np.ix_(keep, keep)], p[keep])
    except np.linalg.LinAlgError as exc:
        raise TopologyError(f"singular DC susceptance matrix: {exc}") from exc
    va = np.zeros(n)
    va[keep] = theta_red
    return OperatingState(np.ones(n), va)


# -- branch flow expressions -------------------------------------------------
#
# With series admittance g + jb, half charging bc and tap a on the from side
# (theta = angle_from - angle_to):
#
#   P_f =  g/a^2 Vf^2 - Vf Vt/a (g cos + b sin)
#   Q_f = -(b+bc)/a^2 Vf^2 - Vf Vt/a (g sin - b cos)
#   P_t =  g Vt^2 - Vf Vt/a (g cos - b sin)
#   Q_t = -(b+bc) Vt^2 + Vf Vt/a (g sin + b cos)


def branch_end_values(
    g: float, b: float, bc: float, a: float,
    vf: float, vt: float, tf: float, tt: float,
) -> tuple[float, float, float, float]:
    """(P_f, Q_f, P_t, Q_t) in p.u. for one branch at the given end voltages."""
    c = math.cos(tf - tt)
    s = math.sin(tf - tt)
    prod = vf * vt / a
    p_f = g / (a * a) * vf * vf - prod * (g * c + b * s)
    q_f = -(b + bc) / (a * a) * vf * vf - prod * (g * s - b * c)
    p_t = g * vt * vt - prod * (g * c - b * s)
    q_t = -(b + bc) * vt * vt + prod * (g * s + b * c)
    return p_f, q_f, p_t, q_t


def branch_end_partials(
    g: float, b: float, bc: float, a: float,
    vf: float, vt: float, tf: float, tt: float,
) -> np.ndarray:
    """4x4 Jacobian of (P_f, Q_f, P_t, Q_t) w.r.t. (vf, vt, tf, tt), p.u."""
    c = math.cos(tf - tt)
    s = math.sin(tf - tt)
    prod = vf * vt / a
    gc_bs = g * c + b * s      # appears in P_f
    gs_bc = g * s - b * c      # appears in Q_f
    gc_mbs = g * c - b * s     # appears in P_t
    gs_pbc = g * s + b * c     # appears in Q_t
    out = np.empty((4, 4))
    # P_f
    out[0, 0] = 2.0 * g / (a * a) * vf - (vt / a) * gc_bs
    out[0, 1] = -(vf / a) * gc_bs
    out[0, 2] = prod * gs_bc
    out[0, 3] = -prod * gs_bc
    # Q_f
    out[1, 0] = -2.0 * (b + bc) / (a * a) * vf - (vt / a) * gs_bc
    out[1, 1] = -(vf / a) * gs_bc
    out[1, 2] = -prod * gc_bs
    out[1, 3] = prod * gc_bs
    # P_t
    out[2, 0] = -(vt / a) * gc_mbs
    out[2, 1] = 2.0 * g * vt - (vf / a) * gc_mbs
    out[2, 2] = prod * gs_pbc
    out[2, 3] = -prod * gs_pbc
    # Q_t
    out[3, 0] = (vt / a) * gs_pbc
    out[3, 1] = -2.0 * (b + bc) * vt + (vf / a) * gs_pbc
    out[3, 2] = prod * gc_mbs
    out[3, 3] = -prod * gc_mbs
    return out


@dataclass(frozen=True)
class BranchFlowSet:
    """Per-branch end flows in MW / Mvar, in the network's branch order."""

    branch_pairs: tuple[tuple[int, int], ...]
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray

    def __post_init__(self):
        for name in ("p_from", "q_from", "p_to", "q_to"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p_loss(self) -> np.ndarray:
        return self.p_from + self.p_to

    @property
    def q_loss(self) -> np.ndarray:
        return self.q_from + self.q_to

    def mva_from(self) -> np.ndarray:
        return np.hypot(self.p_from, self.q_from)

    def mva_to(self) -> np.ndarray:
        return np.hypot(self.p_to, self.q_to)


def compute_branch_flows(network: NetworkModel, state: OperatingState) -> BranchFlowSet:
    nb = len(network.branches)
    p_f = np.empty(nb)
    q_f = np.empty(nb)
    p_t = np.empty(nb)
    q_t = np.empty(nb)
    for k, br in enumerate(network.branches):
        g, b, bc, a = branch_pu_params(br)
        f = network.index_of(br.from_bus)
        t = network.index_of(br.to_bus)
        vals = branch_end_values(
            g, b, bc, a, state.v_mag[f], state.v_mag[t], state.v_ang[f], state.v_ang[t]
        )
        p_f[k], q_f[k], p_t[k], q_t[k] = (v * network.base_mva for v in vals)
    return BranchFlowSet(
        branch_pairs=tuple((br.from_bus, br.to_bus) for br in network.branches),
        p_from=p_f, q_from=q_f, p_to=p_t, q_to=q_t,
    )


def bus_injections(
    network: NetworkModel, state: OperatingState, flows: BranchFlowSet | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Net (P, Q) injection per bus in MW / Mvar, production positive."""
    flows = flows if flows is not None else compute_branch_flows(network, state)
    p = np.zeros(network.n)
    q = np.zeros(network.n)
    for k, br in enumerate(network.branches):
        f = network.index_of(br.from_bus)
        t = network.index_of(br.to_bus)
        p[f] += flows.p_from[k]
        q[f] += flows.q_from[k]
        p[t] += flows.p_to[k]
        q[t] += flows.q_to[k]
    return p, q


# -- measurement plans and sets ----------------------------------------------


def measurement_id(kind: str, from_bus: int, to_bus: int) -> str:
    prefix = "P" if kind in (P_FLOW, P_INJ) else "Q"
    if kind in (P_FLOW, Q_FLOW):
        return f"{prefix}_{from_bus}_{to_bus}"
    return f"{prefix}_{from_bus}"


@dataclass(frozen=True)
class PlanEntry:
    """Placement of one meter.

    Flow meters sit at ``from_bus`` and look toward ``to_bus``; injection
    meters have ``to_bus`` 0.  ``sigma`` is the meter standard deviation in
    MW / Mvar and weights the estimator.
    """

    kind: str
    from_bus: int
    to_bus: int = 0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in MEASUREMENT_KINDS:
            raise PlanError(f"unknown measurement kind {self.kind!r}")
        if not self.sigma > 0:
            raise PlanError(f"{self.id}: sigma must be positive")
        if self.kind in (P_INJ, Q_INJ) and self.to_bus != 0:
            raise PlanError(f"{self.id}: injection entries must have to_bus = 0")
        if self.kind in (P_FLOW, Q_FLOW) and self.to_bus == 0:
            raise PlanError("flow entries need a to_bus")

    @property
    def id(self) -> str:
        return measurement_id(self.kind, self.from_bus, self.to_bus)


@dataclass(frozen=True)
class MeasurementPlan:
    entries: tuple[PlanEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise PlanError(f"duplicate measurement id(s): {dupes}")

    def __len__(self) -> int:
        return len(self.entries)

    def validate_against(self, network: NetworkModel):
        known = set(network.bus_ids)
        for e in self.entries:
            if e.from_bus not in known:
                raise PlanError(f"{e.id}: unknown bus {e.from_bus}")
            if e.kind in (P_FLOW, Q_FLOW):
                if e.to_bus not in known:
                    raise PlanError(f"{e.id}: unknown bus {e.to_bus}")
                if network.branch_between(e.from_bus, e.to_bus) is None:
                    raise PlanError(f"{e.id}: no branch between {e.from_bus} and {e.to_bus}")


def default_plan(network: NetworkModel, sigma: float = 1.0) -> MeasurementPlan:
    """Full flow coverage plus injections wherever something is connected.

    Both ends of every branch get P and Q flow meters; every bus with a
    nonzero injection class gets P and Q injection meters.  On the 9-bus
    case this yields the standard 48-meter layout.
    """
    entries: list[PlanEntry] = []
    inj_buses = [b.id for b in network.buses if b.injection_class != 0]
    for kind_flow, kind_inj in ((P_FLOW, P_INJ), (Q_FLOW, Q_INJ)):
        for br in network.branches:
            entries.append(PlanEntry(kind_flow, br.from_bus, br.to_bus, sigma))
            entries.append(PlanEntry(kind_flow, br.to_bus, br.from_bus, sigma))
        for bus_id in inj_buses:
            entries.append(PlanEntry(kind_inj, bus_id, 0, sigma))
    return MeasurementPlan(tuple(entries))


@dataclass(frozen=True)
class Measurement:
    id: str
    kind: str
    from_bus: int
    to_bus: int
    value: float
    sigma: float
    provenance: str = GENUINE


@dataclass(frozen=True)
class MeasurementSet:
    entries: tuple[Measurement, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entries)

    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    def sigmas(self) -> np.ndarray:
        return np.array([e.sigma for e in self.entries])

    def entry(self, meas_id: str) -> Measurement:
        for e in self.entries:
            if e.id == meas_id:
                return e
        raise KeyError(meas_id)

    def without(self, ids: set[str] | frozenset[str]) -> "MeasurementSet":
        return MeasurementSet(tuple(e for e in self.entries if e.id not in ids))

    def plan(self) -> MeasurementPlan:
        return MeasurementPlan(
            tuple(PlanEntry(e.kind, e.from_bus, e.to_bus, e.sigma) for e in self.entries)
        )

    def manipulated_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entries if e.provenance == MANIPULATED)


def generate_measurements(
    network: NetworkModel,
    state: OperatingState,
    plan: MeasurementPlan | None = None,
    noise: str = NOISE_NONE,
    seed: int | None = None,
) -> MeasurementSet:
    """Meter readings for an operating state, in MW / Mvar.

    ``noise="none"`` reproduces the flow equations exactly;
    ``noise="gaussian"`` adds a zero-mean draw with each meter's sigma,
    deterministic under a fixed ``seed``.
    """
    if noise not in (NOISE_NONE, NOISE_GAUSSIAN):
        raise PlanError(f"unknown noise model {noise!r}")
    plan = plan if plan is not None else default_plan(network)
    plan.validate_against(network)
    flows = compute_branch_flows(network, state)
    p_inj, q_inj = bus_injections(network, state, flows)
    flow_lookup: dict[tuple[str, int, int], float] = {}
    for k, (f, t) in enumerate(flows.branch_pairs):
        flow_lookup[(P_FLOW, f, t)] = flows.p_from[k]
        flow_lookup[(P_FLOW, t, f)] = flows.p_to[k]
        flow_lookup[(Q_FLOW, f, t)] = flows.q_from[k]
        flow_lookup[(Q_FLOW, t, f)] = flows.q_to[k]

    values = np.empty(len(plan))
    for i, e in enumerate(plan.entries):
        if e.kind in (P_FLOW, Q_FLOW):
            values[i] = flow_lookup[(e.kind, e.from_bus, e.to_bus)]
        elif e.kind == P_INJ:
            values[i] = p_inj[network.index_of(e.from_bus)]
        else:
            values[i] = q_inj[network.index_of(e.from_bus)]
    if noise == NOISE_GAUSSIAN:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, [e.sigma for e in plan.entries])

    return MeasurementSet(
        tuple(
            Measurement(e.id, e.kind, e.from_bus, e.to_bus, float(values[i]), e.sigma, GENUINE)
            for i, e in enumerate(plan.entries)
        )
    )


MEASUREMENT_COLUMNS = ["id", "kind", "from_bus", "to_bus", "value", "sigma", "provenance"]


def save_measurements(measurements: MeasurementSet, path: str | Path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MEASUREMENT_COLUMNS)
        for e in measurements:
            writer.writerow([e.id, e.kind, e.from_bus, e.to_bus, repr(e.value), e.sigma, e.provenance])


def load_measurements(path: str | Path) -> MeasurementSet:
    p = Path(path)
    with p.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != MEASUREMENT_COLUMNS:
            raise PlanError(f"{p}: expected header {','.join(MEASUREMENT_COLUMNS)}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            try:
                entries.append(
                    Measurement(
                        id=row["id"],
                        kind=row["kind"],
                        from_bus=int(row["from_bus"]),
                        to_bus=int(row["to_bus"]),
                        value=float(row["value"]),
                        sigma=float(row["sigma"]),
                        provenance=row["provenance"],
                    )
                )
            except (KeyError, ValueError) as exc:
                raise PlanError(f"{p} line {lineno}: bad measurement row ({exc})") from exc
    return MeasurementSet(tuple(entries))
