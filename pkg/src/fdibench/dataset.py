"""Labeled dataset generation: demand ingestion, scaling, record batches.

A dataset is built from a demand time series: each point scales the
fixture grid to that total demand, solves the genuine load flow, and emits
one normal record plus (by default) two attacked records.  Records carry the
measurement table the estimator saw together with its verdicts, so the
files stand on their own for training or audit work.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .attack import AttackSpec, solve_attack
from .errors import (
    AttackInfeasibleError,
    EstimationDivergenceError,
    IngestionError,
    PowerFlowDivergenceError,
)
from .estimation import (
    BddReport,
    EstimationResult,
    detect_bad_data,
    estimate_wls,
)
from .model import NetworkModel
from .powerflow import (
    GENUINE,
    MeasurementSet,
    generate_measurements,
    solve_ac_powerflow,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DemandProfile:
    """Ordered (timestamp, total demand) series; demand in MW."""

    points: tuple[tuple[datetime, float], ...]
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def ingest_demand_csv(path: str | Path) -> DemandProfile:
    """Read a (timestamp, demand_mw) CSV into a validated profile.

    Timestamps must be ISO-8601 and strictly increasing; demand must be
    positive.  Violations name the offending row.
    """
    p = Path(path)
    if not p.exists():
        raise IngestionError(f"{p}: file not found")
    points: list[tuple[datetime, float]] = []
    with p.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:2] != ["timestamp", "demand_mw"]:
            raise IngestionError(f"{p}: expected header timestamp,demand_mw")
        prev: datetime | None = None
        for lineno, row in enumerate(reader, start=2):
            try:
                ts = datetime.fromisoformat(row["timestamp"])
                demand = float(row["demand_mw"])
            except (KeyError, ValueError) as exc:
                raise IngestionError(f"{p} row {lineno}: unparseable ({exc})") from exc
            if not math.isfinite(demand) or demand <= 0:
                raise IngestionError(f"{p} row {lineno}: demand must be positive, got {demand}")
            if prev is not None and ts <= prev:
                raise IngestionError(
                    f"{p} row {lineno}: timestamp {ts.isoformat()} not after previous"
                )
            points.append((ts, demand))
            prev = ts
    return DemandProfile(points=tuple(points), source=str(p))


def synthesize_demand_profile(
    points: int,
    cadence_minutes: int = 30,
    start: datetime | None = None,
    base_mw: float = 315.0,
    source: str = "synthetic-sinusoid",
) -> DemandProfile:
    """Deterministic demand curve: daily swing plus a smaller harmonic.

    Values stay between roughly 0.58 and 0.98 of ``base_mw``, so scaled
    cases remain comfortably solvable.  No randomness: the same arguments
    always give the same profile.
    """
    if points < 0:
        raise IngestionError(f"points must be non-negative, got {points}")
    t0 = start or datetime(2018, 1, 1)
    out = []
    for i in range(points):
        ts = t0 + timedelta(minutes=cadence_minutes * i)
        hours = (ts - t0).total_seconds() / 3600.0
        factor = (
            0.78
            + 0.17 * math.sin(2 * math.pi * (hours - 15.0) / 24.0)
            + 0.03 * math.sin(2 * math.pi * hours / 12.0 + 0.5)
        )
        out.append((ts, base_mw * factor))
    return DemandProfile(points=tuple(out), source=source)


def save_demand_csv(profile: DemandProfile, path: str | Path) -> None:
    """Write a profile in the same two-column format ingestion reads."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "demand_mw"])
        for ts, demand in profile:
            writer.writerow([ts.isoformat(), f"{demand:.3f}"])


BUNDLED_PROFILES = ("demand_3day_halfhourly", "demand_6day_halfhourly")


def bundled_demand_path(name: str) -> Path:
    """Filesystem path of a demand profile shipped with the package."""
    if name not in BUNDLED_PROFILES:
        raise IngestionError(
            f"unknown bundled profile {name!r}; available: {', '.join(BUNDLED_PROFILES)}"
        )
    from importlib.resources import files

    return Path(str(files("fdibench").joinpath("data", f"{name}.csv")))


def scale_loads(network: NetworkModel, demand_mw: float) -> NetworkModel:
    """Scale the case to a total demand, preserving load proportions.

    Every load's P is multiplied by ``demand_mw / base_total_load`` and its
    Q by the same factor, so each load keeps its power factor.  Generator
    active dispatch scales by the same factor: holding generation at base
    values while demand drops would push the slack machine into absorbing
    tens of MW, which no sane operating point does (the slack still picks
    up the loss difference).
    """
    if not demand_mw > 0:
        raise IngestionError(f"demand must be positive, got {demand_mw}")
    base_total = network.total_load_p
    if base_total <= 0:
        raise IngestionError("network has no load to scale")
    factor = demand_mw / base_total
    new_buses = []
    for b in network.buses:
        new_buses.append(
            replace(
                b,
                load_p=b.load_p * factor,
                load_q=b.load_q * factor,
                gen_p=b.gen_p * factor,
            )
        )
    return replace(network, buses=tuple(new_buses))


@dataclass(frozen=True)
class DatasetConfig:
    """Knobs of the generation pipeline; hashes into the manifest digest."""

    seed: int = 7
    attacks_per_point: int = 2
    center_bus: int = 5
    delta_choices: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    significance: float = 0.005
    noise: str = "none"
    records_per_file: int = 432

    def digest(self) -> str:
        doc = asdict(self)
        doc["delta_choices"] = list(doc["delta_choices"])
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class RecordRow:
    """One measurement line of a record (the nine dataset attributes)."""

    measurement_id: str
    kind: str
    from_bus: int
    to_bus: int
    measured: float
    estimated: float
    deviation_pct: float
    bdd_flag: bool
    provenance: str


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    timestamp: datetime
    label: str                      # "normal" | "attack"
    rows: tuple[RecordRow, ...]

    def manipulated_count(self) -> int:
        return sum(1 for r in self.rows if r.provenance != GENUINE)


def _deviation_pct(measured: float, estimated: float) -> float:
    # relative deviation with a 1 MW floor so near-zero flows don't blow up
    return 100.0 * (measured - estimated) / max(abs(estimated), 1.0)


def _build_record(
    record_id: str,
    timestamp: datetime,
    label: str,
    measurements: MeasurementSet,
    est: EstimationResult,
    bdd: BddReport,
) -> DatasetRecord:
    flagged = set(bdd.flagged)
    rows = tuple(
        RecordRow(
            measurement_id=e.id,
            kind=e.kind,
            from_bus=e.from_bus,
            to_bus=e.to_bus,
            measured=e.value,
            estimated=float(est.calculated_measurements[i]),
            deviation_pct=_deviation_pct(e.value, float(est.calculated_measurements[i])),
            bdd_flag=e.id in flagged,
            provenance=e.provenance,
        )
        for i, e in enumerate(measurements.entries)
    )
    return DatasetRecord(record_id=record_id, timestamp=timestamp, label=label, rows=rows)


def _point_rng(config: DatasetConfig, point_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng((config.seed, stream, point_index))


def _noise_seed(config: DatasetConfig, point_index: int, stream: int) -> int | None:
    if config.noise == "none":
        return None
    return int(_point_rng(config, point_index, stream).integers(0, 2**63 - 1))


def generate_normal_records(
    profile: DemandProfile,
    network: NetworkModel,
    config: DatasetConfig | None = None,
    skip_log: list | None = None,
) -> Iterator[DatasetRecord]:
    """One genuine record per demand point; solver failures are skipped.

    Per point: scale the case, solve the load flow, meter it, estimate and
    run bad-data detection, emit.  Skips are logged (and appended to
    ``skip_log`` as (timestamp, stage, message) when given).
    """
    config = config or DatasetConfig()
    for i, (ts, demand) in enumerate(profile):
        try:
            scaled = scale_loads(network, demand)
            state = solve_ac_powerflow(scaled)
            meas = generate_measurements(
                scaled, state, noise=config.noise, seed=_noise_seed(config, i, 0)
            )
            est = estimate_wls(scaled, meas)
            bdd = detect_bad_data(scaled, meas, config.significance, initial_estimate=est)
        except (PowerFlowDivergenceError, EstimationDivergenceError) as exc:
            logger.warning("skipping normal point %s: %s", ts.isoformat(), exc)
            if skip_log is not None:
                skip_log.append((ts, "normal", str(exc)))
            continue
        yield _build_record(f"normal-{i + 1:06d}", ts, "normal", meas, est, bdd)


def generate_attack_records(
    profile: DemandProfile,
    network: NetworkModel,
    config: DatasetConfig | None = None,
    skip_log: list | None = None,
) -> Iterator[DatasetRecord]:
    """Attacked records: ``attacks_per_point`` per demand point.

    Seed perturbations alternate sign (+d1, -d2, ...) with magnitudes drawn
    per point from ``delta_choices`` by a seeded generator, so a fixed
    config reproduces the same corpus byte for byte.  Infeasible points are
    skipped the same way normal generation skips solver failures.
    """
    config = config or DatasetConfig()
    for i, (ts, demand) in enumerate(profile):
        try:
            scaled = scale_loads(network, demand)
            baseline = solve_ac_powerflow(scaled)
            genuine = generate_measurements(
                scaled, baseline, noise=config.noise, seed=_noise_seed(config, i, 1)
            )
        except PowerFlowDivergenceError as exc:
            logger.warning("skipping attack point %s: %s", ts.isoformat(), exc)
            if skip_log is not None:
                skip_log.append((ts, "attack-baseline", str(exc)))
            continue
        rng = _point_rng(config, i, 2)
        deltas = rng.choice(config.delta_choices, size=config.attacks_per_point)
        for k in range(config.attacks_per_point):
            delta = float(deltas[k]) * (1.0 if k % 2 == 0 else -1.0)
            spec = AttackSpec(center_bus=config.center_bus, delta=delta)
            try:
                attack = solve_attack(scaled, baseline, spec, genuine=genuine)
                est = estimate_wls(scaled, attack.corrupted)
                bdd = detect_bad_data(
                    scaled, attack.corrupted, config.significance, initial_estimate=est
                )
            except (AttackInfeasibleError, EstimationDivergenceError) as exc:
                logger.warning(
                    "skipping attack %s at %s: %s", k + 1, ts.isoformat(), exc
                )
                if skip_log is not None:
                    skip_log.append((ts, f"attack-{k + 1}", str(exc)))
                continue
            yield _build_record(
                f"attack-{i + 1:06d}-{k + 1}", ts, "attack", attack.corrupted, est, bdd
            )


RECORD_COLUMNS = [
    "record_id", "timestamp", "label",
    "measurement_id", "kind", "from_bus", "to_bus",
    "measured", "estimated", "deviation_pct", "bdd_flag", "provenance",
]


@dataclass(frozen=True)
class DatasetManifest:
    normal_records: int
    attack_records: int
    total_records: int
    attributes_per_row: int
    measurements_per_record: int
    records_per_file: int
    seed: int
    config_digest: str
    dataset_digest: str
    files: tuple[str, ...]
    skipped: tuple[tuple[str, str, str], ...] = ()
    source: str = ""

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["files"] = list(self.files)
        doc["skipped"] = [list(s) for s in self.skipped]
        return doc


def write_dataset(
    records: Iterable[DatasetRecord],
    out_dir: str | Path,
    records_per_file: int = 432,
    config: DatasetConfig | None = None,
    skip_log: list | None = None,
    source: str = "",
) -> DatasetManifest:
    """Write records into per-class partitioned CSV files plus a manifest.

    Files are ``normal_000.csv``, ``attack_000.csv``, ... with at most
    ``records_per_file`` records each; ``manifest.json`` carries counts,
    seeds and content digests, and ``SCHEMA.md`` documents the column
    layout.  Streaming: one record is held in memory at a time.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = config or DatasetConfig()
    counts = {"normal": 0, "attack": 0}
    writers: dict[str, tuple] = {}
    files: list[str] = []
    meas_per_record: int | None = None

    def _writer_for(label: str):
        # rotate to a fresh partition whenever the current one is full
        current = writers.get(label)
        if current is not None and current[2] < records_per_file:
            return current
        if current is not None:
            current[0].close()
        index = counts[label] // records_per_file
        name = f"{label}_{index:03d}.csv"
        fh = (out / name).open("w", newline="")
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        files.append(name)
        writers[label] = [fh, writer, 0]
        return writers[label]

    for rec in records:
        if rec.label not in counts:
            raise ValueError(f"record {rec.record_id} has unknown label {rec.label!r}")
        if meas_per_record is None:
            meas_per_record = len(rec.rows)
        slot = _writer_for(rec.label)
        for row in rec.rows:
            slot[1].writerow([
                rec.record_id,
                rec.timestamp.isoformat(),
                rec.label,
                row.measurement_id,
                row.kind,
                row.from_bus,
                row.to_bus,
                repr(row.measured),
                repr(row.estimated),
                repr(row.deviation_pct),
                "true" if row.bdd_flag else "false",
                row.provenance,
            ])
        slot[2] += 1
        counts[rec.label] += 1
    for fh, _, _ in writers.values():
        fh.close()

    digest = hashlib.sha256()
    for name in sorted(files):
        digest.update(name.encode())
        digest.update((out / name).read_bytes())
    manifest = DatasetManifest(
        normal_records=counts["normal"],
        attack_records=counts["attack"],
        total_records=counts["normal"] + counts["attack"],
        attributes_per_row=9,
        measurements_per_record=meas_per_record or 0,
        records_per_file=records_per_file,
        seed=config.seed,
        config_digest=config.digest(),
        dataset_digest=digest.hexdigest(),
        files=tuple(sorted(files)),
        skipped=tuple(
            (ts.isoformat(), stage, msg) for ts, stage, msg in (skip_log or [])
        ),
        source=source,
    )
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    (out / "SCHEMA.md").write_text(_SCHEMA_TEXT)
    return manifest


_SCHEMA_TEXT = """\
# Dataset schema

Each CSV row is one measurement of one record. The first three columns bind
the row to its record; the remaining nine are the record attributes proper.
The nine-attribute layout is this project's declared interpretation of
"measurement table plus estimator verdicts" — other layouts are possible.

| column | meaning |
| --- | --- |
| record_id | record the row belongs to (e.g. `normal-000012`, `attack-000012-2`) |
| timestamp | ISO-8601 demand-point timestamp |
| label | `normal` or `attack` |
| measurement_id | meter id, e.g. `P_4_5` (P flow at bus 4 toward 5) or `Q_6` (Q injection at bus 6) |
| kind | `P-flow`, `Q-flow`, `P-inj`, `Q-inj` |
| from_bus | metered bus |
| to_bus | far-end bus for flows, `0` for injections |
| measured | telemetered value, MW or Mvar (production-positive injections) |
| estimated | estimator's fitted value for the same meter |
| deviation_pct | `100*(measured - estimated)/max(abs(estimated), 1 MW)` |
| bdd_flag | `true` if bad-data identification flagged this meter |
| provenance | `genuine` or `manipulated` (ground-truth label, not visible to the estimator) |

`manifest.json` carries record counts per class, the generation seed, a
config digest, a content digest over the data files, the partition size,
and any skipped points.
"""


def read_records(path: str | Path) -> list[DatasetRecord]:
    """Parse one partition CSV back into records (order preserved)."""
    p = Path(path)
    records: list[DatasetRecord] = []
    current_id: str | None = None
    pending: dict | None = None
    rows: list[RecordRow] = []

    def _flush():
        if pending is not None:
            records.append(
                DatasetRecord(
                    record_id=pending["record_id"],
                    timestamp=pending["timestamp"],
                    label=pending["label"],
                    rows=tuple(rows),
                )
            )

    with p.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != RECORD_COLUMNS:
            raise IngestionError(f"{p}: expected header {','.join(RECORD_COLUMNS)}")
        for lineno, raw in enumerate(reader, start=2):
            try:
                if raw["record_id"] != current_id:
                    _flush()
                    current_id = raw["record_id"]
                    pending = {
                        "record_id": raw["record_id"],
                        "timestamp": datetime.fromisoformat(raw["timestamp"]),
                        "label": raw["label"],
                    }
                    rows = []
                rows.append(
                    RecordRow(
                        measurement_id=raw["measurement_id"],
                        kind=raw["kind"],
                        from_bus=int(raw["from_bus"]),
                        to_bus=int(raw["to_bus"]),
                        measured=float(raw["measured"]),
                        estimated=float(raw["estimated"]),
                        deviation_pct=float(raw["deviation_pct"]),
                        bdd_flag=raw["bdd_flag"] == "true",
                        provenance=raw["provenance"],
                    )
                )
            except (KeyError, ValueError) as exc:
                raise IngestionError(f"{p} row {lineno}: bad record row ({exc})") from exc
    _flush()
    return records


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
