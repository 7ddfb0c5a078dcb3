"""Electrical stealth audit of paired normal/attack dataset records.

The audit asks, from the measurement tables alone, whether an attacked
record is distinguishable from its genuine partner: passive buses must pass
through exactly what enters them, total injected power must cover metered
losses, and the weighted residual must sit below the chi-square threshold.
A coordinated false-data injection passes all three; crude tampering fails
at least one.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .dataset import DatasetRecord
from .errors import PairingError
from .estimation import chi_square_threshold, residual_j
from .model import NO_INJECTION, NetworkModel
from .powerflow import P_FLOW, P_INJ, Q_FLOW, Q_INJ

#: per-bus zero-sum tolerance at passive buses, MW / Mvar
P_BALANCE_TOL_MW = 1e-4
Q_BALANCE_TOL_MVAR = 1e-4
#: injections-minus-losses tolerance for the whole case, MW / Mvar
GLOBAL_MISMATCH_TOL_MW = 1e-3


@dataclass(frozen=True)
class RecordAudit:
    """Balance sums and residual statistics of a single record."""

    record_id: str
    label: str
    no_injection_sums: dict[int, tuple[float, float]]   # bus -> (P, Q) sums
    global_mismatch: tuple[float, float]                # (P, Q), MW / Mvar
    residual_j: float
    flagged: tuple[str, ...]
    flows_covered: bool


@dataclass(frozen=True)
class AnalysisReport:
    """Paired verdict; ``stealthy`` is true iff every check passed."""

    timestamp: datetime
    k_dof: int
    threshold: float
    normal: RecordAudit
    attack: RecordAudit
    checks: dict[str, bool]

    @property
    def stealthy(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        def audit_doc(a: RecordAudit) -> dict:
            return {
                "record_id": a.record_id,
                "label": a.label,
                "no_injection_sums": {
                    str(bus): [p, q] for bus, (p, q) in sorted(a.no_injection_sums.items())
                },
                "global_mismatch": list(a.global_mismatch),
                "residual_j": a.residual_j,
                "flagged": list(a.flagged),
                "flows_covered": a.flows_covered,
            }

        return {
            "timestamp": self.timestamp.isoformat(),
            "k_dof": self.k_dof,
            "threshold": self.threshold,
            "normal": audit_doc(self.normal),
            "attack": audit_doc(self.attack),
            "checks": dict(self.checks),
            "stealthy": self.stealthy,
        }


def audit_record(network: NetworkModel, record: DatasetRecord) -> RecordAudit:
    """Balance sums, residual and flag census for one record.

    Sums use the *measured* column only — the audit must stand on what the
    meters claim, not on any estimate.  Residuals are weighted at 1 MW /
    1 Mvar per meter, matching the default metering accuracy.
    """
    passive = [b.id for b in network.buses if b.injection_class == NO_INJECTION]
    sums: dict[int, tuple[float, float]] = {}
    covered = True
    for bus in passive:
        p_rows = [r for r in record.rows if r.kind == P_FLOW and r.from_bus == bus]
        q_rows = [r for r in record.rows if r.kind == Q_FLOW and r.from_bus == bus]
        incident = len(network.branches_at(bus))
        if len(p_rows) != incident or len(q_rows) != incident:
            covered = False
        sums[bus] = (
            sum(r.measured for r in p_rows),
            sum(r.measured for r in q_rows),
        )
    p_inj = sum(r.measured for r in record.rows if r.kind == P_INJ)
    q_inj = sum(r.measured for r in record.rows if r.kind == Q_INJ)
    p_loss = sum(r.measured for r in record.rows if r.kind == P_FLOW)
    q_loss = sum(r.measured for r in record.rows if r.kind == Q_FLOW)
    measured = np.array([r.measured for r in record.rows])
    estimated = np.array([r.estimated for r in record.rows])
    j = residual_j(measured, estimated, np.ones_like(measured))
    return RecordAudit(
        record_id=record.record_id,
        label=record.label,
        no_injection_sums=sums,
        global_mismatch=(p_inj - p_loss, q_inj - q_loss),
        residual_j=j,
        flagged=tuple(r.measurement_id for r in record.rows if r.bdd_flag),
        flows_covered=covered,
    )


def analyze_pair(
    network: NetworkModel,
    normal_record: DatasetRecord,
    attack_record: DatasetRecord,
    significance: float = 0.005,
    balance_tol: float = P_BALANCE_TOL_MW,
    reactive_tol: float = Q_BALANCE_TOL_MVAR,
    global_tol: float = GLOBAL_MISMATCH_TOL_MW,
) -> AnalysisReport:
    """Audit a normal/attack record pair taken at the same instant.

    Raises :class:`PairingError` when the records are not comparable (taken
    at different timestamps, or metering different quantities).  The default
    tolerances suit noiseless telemetry; widen them when auditing records
    generated with meter noise.
    """
    if normal_record.timestamp != attack_record.timestamp:
        raise PairingError(
            f"records are not a pair: {normal_record.record_id} is at "
            f"{normal_record.timestamp.isoformat()} but {attack_record.record_id} "
            f"is at {attack_record.timestamp.isoformat()}"
        )
    ids_a = tuple(r.measurement_id for r in normal_record.rows)
    ids_b = tuple(r.measurement_id for r in attack_record.rows)
    if ids_a != ids_b:
        raise PairingError(
            f"records {normal_record.record_id} and {attack_record.record_id} "
            f"meter different quantities and cannot be compared"
        )

    n_states = 2 * network.n - 1
    k_dof = len(normal_record.rows) - n_states
    if k_dof < 1:
        raise PairingError(
            f"records carry {len(normal_record.rows)} measurements for "
            f"{n_states} states; no redundancy to audit"
        )
    threshold = chi_square_threshold(k_dof, significance)

    audits = {
        "normal": audit_record(network, normal_record),
        "attack": audit_record(network, attack_record),
    }
    checks: dict[str, bool] = {}
    for name, audit in audits.items():
        checks[f"{name}-no-injection-balance"] = all(
            abs(p) < balance_tol and abs(q) < reactive_tol
            for p, q in audit.no_injection_sums.values()
        )
        checks[f"{name}-global-balance"] = (
            abs(audit.global_mismatch[0]) < global_tol
            and abs(audit.global_mismatch[1]) < global_tol
        )
        checks[f"{name}-chi-square"] = (
            audit.residual_j < threshold and not audit.flagged
        )
        checks[f"{name}-flow-coverage"] = audit.flows_covered

    return AnalysisReport(
        timestamp=normal_record.timestamp,
        k_dof=k_dof,
        threshold=threshold,
        normal=audits["normal"],
        attack=audits["attack"],
        checks=checks,
    )
