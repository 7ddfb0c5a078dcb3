"""Reading and writing grid case files.

Two formats are supported:

* ``case-json``: one JSON document::

      {"name": "...", "base_mva": 100.0,
       "buses":    [{"id": 1, "kind": "slack", "voltage_setpoint": 1.04,
                     "load_p": 0, "load_q": 0, "gen_p": 0, "gen_q": 0}, ...],
       "branches": [{"from_bus": 1, "to_bus": 4, "r": 0.0, "x": 0.0576,
                     "b_shunt": 0.0, "tap": 1.0, "kind": "transformer"}, ...]}

* ``case-csv``: a directory holding ``buses.csv`` and ``branches.csv`` with
  fixed column order (see ``BUS_COLUMNS`` / ``BRANCH_COLUMNS``).  The CSV pair
  carries no base power field; 100 MVA is assumed.

Bundled cases are addressed by name ("wscc9").
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

from .errors import CaseFormatError, TopologyError
from .model import Bus, Branch, NetworkModel

CASE_JSON = "case-json"
CASE_CSV = "case-csv"

BUS_COLUMNS = ["id", "kind", "voltage_setpoint", "load_p", "load_q", "gen_p", "gen_q"]
BRANCH_COLUMNS = ["from_bus", "to_bus", "r", "x", "b_shunt", "tap", "kind"]

#: cases shipped inside the package, addressable by bare name on the CLI
BUNDLED_CASES = ("wscc9",)


def _require(condition: bool, message: str):
    if not condition:
        raise CaseFormatError(message)


def _bus_from_record(rec: dict, where: str) -> Bus:
    try:
        setpoint = rec.get("voltage_setpoint")
        if setpoint in (None, ""):
            setpoint = None
        else:
            setpoint = float(setpoint)
        return Bus(
            id=int(rec["id"]),
            kind=str(rec["kind"]).strip().lower(),
            voltage_setpoint=setpoint,
            load_p=float(rec.get("load_p") or 0.0),
            load_q=float(rec.get("load_q") or 0.0),
            gen_p=float(rec.get("gen_p") or 0.0),
            gen_q=float(rec.get("gen_q") or 0.0),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CaseFormatError(f"{where}: bad bus record ({exc})") from exc


def _branch_from_record(rec: dict, where: str) -> Branch:
    try:
        return Branch(
            from_bus=int(rec["from_bus"]),
            to_bus=int(rec["to_bus"]),
            r=float(rec.get("r") or 0.0),
            x=float(rec["x"]),
            b_shunt=float(rec.get("b_shunt") or 0.0),
            tap=float(rec.get("tap") or 1.0),
            kind=str(rec.get("kind") or "line").strip().lower(),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CaseFormatError(f"{where}: bad branch record ({exc})") from exc


def _load_case_json(path: Path) -> NetworkModel:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"{path}: not valid JSON ({exc})") from exc
    _require(isinstance(doc, dict), f"{path}: top level must be an object")
    _require("buses" in doc and "branches" in doc, f"{path}: missing buses/branches")
    buses = [
        _bus_from_record(rec, f"{path} buses[{i}]") for i, rec in enumerate(doc["buses"])
    ]
    branches = [
        _branch_from_record(rec, f"{path} branches[{i}]")
        for i, rec in enumerate(doc["branches"])
    ]
    network = NetworkModel(
        buses=tuple(buses),
        branches=tuple(branches),
        base_mva=float(doc.get("base_mva", 100.0)),
        name=str(doc.get("name", path.stem)),
    )
    if not network.is_connected():
        raise TopologyError(f"{path}: network is not connected")
    return network


def _read_csv_rows(path: Path, columns: list[str]) -> list[dict]:
    if not path.exists():
        raise CaseFormatError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        _require(
            reader.fieldnames is not None and list(reader.fieldnames) == columns,
            f"{path}: expected header {','.join(columns)}",
        )
        return [dict(row) for row in reader]


def _load_case_csv(directory: Path) -> NetworkModel:
    _require(directory.is_dir(), f"{directory}: case-csv path must be a directory")
    bus_rows = _read_csv_rows(directory / "buses.csv", BUS_COLUMNS)
    branch_rows = _read_csv_rows(directory / "branches.csv", BRANCH_COLUMNS)
    buses = [
        _bus_from_record(rec, f"{directory / 'buses.csv'} line {i + 2}")
        for i, rec in enumerate(bus_rows)
    ]
    branches = [
        _branch_from_record(rec, f"{directory / 'branches.csv'} line {i + 2}")
        for i, rec in enumerate(branch_rows)
    ]
    network = NetworkModel(buses=tuple(buses), branches=tuple(branches), name=directory.name)
    if not network.is_connected():
        raise TopologyError(f"{directory}: network is not connected")
    return network


def load_network(path: str | Path, format: str | None = None) -> NetworkModel:
    """Load a case from ``path``; format inferred from the path when omitted."""
    p = Path(path)
    if format is None:
        format = CASE_CSV if p.is_dir() else CASE_JSON
    if format == CASE_JSON:
        return _load_case_json(p)
    if format == CASE_CSV:
        return _load_case_csv(p)
    raise CaseFormatError(f"unknown case format {format!r}")


def _bus_record(b: Bus) -> dict:
    return {
        "id": b.id,
        "kind": b.kind,
        "voltage_setpoint": b.voltage_setpoint,
        "load_p": b.load_p,
        "load_q": b.load_q,
        "gen_p": b.gen_p,
        "gen_q": b.gen_q,
    }


def _branch_record(br: Branch) -> dict:
    return {
        "from_bus": br.from_bus,
        "to_bus": br.to_bus,
        "r": br.r,
        "x": br.x,
        "b_shunt": br.b_shunt,
        "tap": br.tap,
        "kind": br.kind,
    }


def save_network(network: NetworkModel, path: str | Path, format: str | None = None):
    """Write a case back out; round-trips with :func:`load_network`."""
    p = Path(path)
    if format is None:
        format = CASE_JSON if p.suffix == ".json" else CASE_CSV
    if format == CASE_JSON:
        doc = {
            "name": network.name,
            "base_mva": network.base_mva,
            "buses": [_bus_record(b) for b in network.buses],
            "branches": [_branch_record(br) for br in network.branches],
        }
        p.write_text(json.dumps(doc, indent=2) + "\n")
    elif format == CASE_CSV:
        p.mkdir(parents=True, exist_ok=True)
        with (p / "buses.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=BUS_COLUMNS)
            writer.writeheader()
            for b in network.buses:
                rec = _bus_record(b)
                rec["voltage_setpoint"] = "" if rec["voltage_setpoint"] is None else rec["voltage_setpoint"]
                writer.writerow(rec)
        with (p / "branches.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=BRANCH_COLUMNS)
            writer.writeheader()
            for br in network.branches:
                writer.writerow(_branch_record(br))
    else:
        raise CaseFormatError(f"unknown case format {format!r}")


def bundled_case_path(name: str) -> Path:
    if name not in BUNDLED_CASES:
        raise CaseFormatError(f"unknown bundled case {name!r} (have: {', '.join(BUNDLED_CASES)})")
    return Path(str(resources.files("fdibench.data") / f"{name}.json"))


def load_wscc9() -> NetworkModel:
    """The 9-bus, 9-branch, 3-machine western-system test case."""
    return load_network(bundled_case_path("wscc9"), CASE_JSON)


def resolve_case(spec: str, format: str | None = None) -> NetworkModel:
    """CLI helper: ``spec`` is a bundled case name or a filesystem path."""
    if spec in BUNDLED_CASES:
        return load_network(bundled_case_path(spec), CASE_JSON)
    p = Path(spec)
    if not p.exists():
        raise CaseFormatError(f"case {spec!r}: no bundled case or file with that name")
    return load_network(p, format)
