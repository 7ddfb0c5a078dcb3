"""Network model: buses, branches, admittance matrices.

Everything downstream (power flow, estimation, attack synthesis) works on the
immutable :class:`NetworkModel` built here.  Conventions:

* per-unit on ``base_mva`` (100 MVA by default); loads/generation are stored
  in MW / Mvar and converted at the numeric boundary,
* bus positions in every matrix follow ascending bus id,
* branches use the pi model with an off-nominal tap on the *from* side.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import CaseValidationError, TopologyError

SLACK = "slack"
PV = "pv"
PQ = "pq"
BUS_KINDS = (SLACK, PV, PQ)

LINE = "line"
TRANSFORMER = "transformer"
BRANCH_KINDS = (LINE, TRANSFORMER)

#: injection column codes: net consumer, net producer, no injection
LOAD_INJECTION = 1
GENERATION_INJECTION = -1
NO_INJECTION = 0


@dataclass(frozen=True)
class Bus:
    """One network node.

    ``voltage_setpoint`` is the regulated magnitude (p.u.) and is required
    for slack and PV buses.  ``load_*`` / ``gen_*`` are scheduled values in
    MW / Mvar; the slack machine's actual output is a power-flow result, so
    its scheduled ``gen_p`` is conventionally left at zero.
    """

    id: int
    kind: str
    voltage_setpoint: float | None = None
    load_p: float = 0.0
    load_q: float = 0.0
    gen_p: float = 0.0
    gen_q: float = 0.0

    def __post_init__(self):
        if self.id < 1:
            raise CaseValidationError(f"bus id must be a positive integer, got {self.id}")
        if self.kind not in BUS_KINDS:
            raise CaseValidationError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.kind in (SLACK, PV):
            if self.voltage_setpoint is None or not self.voltage_setpoint > 0:
                raise CaseValidationError(
                    f"bus {self.id}: {self.kind} bus needs a positive voltage setpoint"
                )
        for name in ("load_p", "load_q", "gen_p", "gen_q"):
            if not np.isfinite(getattr(self, name)):
                raise CaseValidationError(f"bus {self.id}: {name} is not finite")

    @property
    def injection_class(self) -> int:
        """+1 net consumer, -1 net producer, 0 passive connection point.

        A slack or PV bus always hosts a machine, so it never classifies as
        passive even when its scheduled output is zero (the slack's usually
        is).  Mixed buses are classified by the sign of the net active
        injection, falling back to the reactive one on a tie.
        """
        has_load = self.load_p != 0.0 or self.load_q != 0.0
        has_gen = self.kind != PQ or self.gen_p != 0.0 or self.gen_q != 0.0
        if not has_load and not has_gen:
            return NO_INJECTION
        net_p = self.gen_p - self.load_p
        if net_p > 0:
            return GENERATION_INJECTION
        if net_p < 0:
            return LOAD_INJECTION
        if has_gen and not has_load:
            return GENERATION_INJECTION
        if has_load and not has_gen:
            return LOAD_INJECTION
        return GENERATION_INJECTION if self.gen_q - self.load_q > 0 else LOAD_INJECTION


@dataclass(frozen=True)
class Branch:
    """Pi-model branch; ``b_shunt`` is the total line charging susceptance."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    tap: float = 1.0
    kind: str = LINE

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise CaseValidationError(f"branch {self.from_bus}-{self.to_bus}: self loop")
        if self.x == 0.0:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus}: zero series reactance"
            )
        if self.r < 0.0:
            raise CaseValidationError(f"branch {self.from_bus}-{self.to_bus}: negative r")
        if not self.tap > 0.0:
            raise CaseValidationError(f"branch {self.from_bus}-{self.to_bus}: tap must be > 0")
        if self.kind not in BRANCH_KINDS:
            raise CaseValidationError(
                f"branch {self.from_bus}-{self.to_bus}: unknown kind {self.kind!r}"
            )

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class NetworkModel:
    """Immutable snapshot of one grid case.

    Buses are kept sorted by id; branches keep their file order, which also
    fixes the listing order of flow measurements.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(sorted(self.buses, key=lambda b: b.id)))
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.base_mva > 0:
            raise CaseValidationError("base_mva must be positive")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseValidationError(f"duplicate bus id(s): {dupes}")
        if sum(1 for b in self.buses if b.kind == SLACK) != 1:
            raise CaseValidationError("exactly one slack bus is required")
        known = set(ids)
        seen_pairs: set[tuple[int, int]] = set()
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseValidationError(
                    f"branch {br.from_bus}-{br.to_bus} references an unknown bus"
                )
            pair = (min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
            if pair in seen_pairs:
                raise CaseValidationError(f"parallel branch between buses {pair[0]} and {pair[1]}")
            seen_pairs.add(pair)

    # -- lookups ------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    def index_of(self, bus_id: int) -> int:
        """Matrix row/column of a bus (ascending-id ordering)."""
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise CaseValidationError(f"unknown bus id {bus_id}") from None

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.index_of(bus_id)]

    @property
    def slack_id(self) -> int:
        return next(b.id for b in self.buses if b.kind == SLACK)

    def neighbors(self, bus_id: int) -> tuple[int, ...]:
        out = set()
        for br in self.branches:
            if br.from_bus == bus_id:
                out.add(br.to_bus)
            elif br.to_bus == bus_id:
                out.add(br.from_bus)
        return tuple(sorted(out))

    def branches_at(self, bus_id: int) -> tuple[Branch, ...]:
        return tuple(
            br for br in self.branches if bus_id in (br.from_bus, br.to_bus)
        )

    def branch_between(self, a: int, b: int) -> Branch | None:
        for br in self.branches:
            if {br.from_bus, br.to_bus} == {a, b}:
                return br
        return None

    @property
    def total_load_p(self) -> float:
        return sum(b.load_p for b in self.buses)

    def is_connected(self) -> bool:
        if not self.buses:
            return False
        seen = {self.buses[0].id}
        frontier = [self.buses[0].id]
        while frontier:
            here = frontier.pop()
            for nb in self.neighbors(here):
                if nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        return len(seen) == self.n

    def with_loads(self, loads: dict[int, tuple[float, float]]) -> "NetworkModel":
        """Return a copy with (load_p, load_q) replaced for the given buses."""
        new_buses = []
        for b in self.buses:
            if b.id in loads:
                p, q = loads[b.id]
                new_buses.append(replace(b, load_p=p, load_q=q))
            else:
                new_buses.append(b)
        return replace(self, buses=tuple(new_buses))


@dataclass(frozen=True)
class ExtendedAdmittanceMatrix:
    """Bus admittance matrix with a trailing injection-class column.

    ``y`` is the complex n-by-n admittance matrix; ``injection_column[k]``
    codes bus k as +1 (net consumer), -1 (net producer) or 0 (no injection).
    The attack-area search walks this structure and nothing else: together
    the two parts carry the full topology and the location of every
    injection.
    """

    y: np.ndarray
    injection_column: tuple[int, ...]
    bus_ids: tuple[int, ...]

    def __post_init__(self):
        n = len(self.bus_ids)
        if self.y.shape != (n, n) or len(self.injection_column) != n:
            raise CaseValidationError("extended admittance parts have inconsistent shape")
        self.y.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        """Stored shape: n rows by n+1 columns."""
        n = len(self.bus_ids)
        return (n, n + 1)

    def as_array(self) -> np.ndarray:
        """Dense n-by-(n+1) complex array, injection codes in the last column."""
        col = np.asarray(self.injection_column, dtype=float).reshape(-1, 1)
        return np.hstack([self.y, col.astype(complex)])

    def index_of(self, bus_id: int) -> int:
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise CaseValidationError(f"unknown bus id {bus_id}") from None

    def neighbors(self, bus_id: int) -> tuple[int, ...]:
        """Bus ids electrically coupled to ``bus_id`` (nonzero off-diagonal)."""
        i = self.index_of(bus_id)
        row = self.y[i]
        return tuple(
            self.bus_ids[j] for j in range(len(self.bus_ids)) if j != i and row[j] != 0
        )


def branch_pu_params(branch: Branch) -> tuple[float, float, float, float]:
    """Series conductance g, series susceptance b, half charging bc, tap a."""
    ys = branch.series_admittance
    return ys.real, ys.imag, branch.b_shunt / 2.0, branch.tap


def build_admittance_matrix(network: NetworkModel) -> np.ndarray:
    """Assemble the complex bus admittance matrix (pi model, tap on from side).

    Raises :class:`TopologyError` when the network graph is not connected:
    every solver downstream assumes a single electrical island.
    """
    if not network.is_connected():
        raise TopologyError(f"network {network.name or '<unnamed>'} is not connected")
    n = network.n
    y = np.zeros((n, n), dtype=complex)
    for br in network.branches:
        f = network.index_of(br.from_bus)
        t = network.index_of(br.to_bus)
        ys = br.series_admittance
        bc = 1j * br.b_shunt / 2.0
        a = br.tap
        y[f, f] += (ys + bc) / (a * a)
        y[t, t] += ys + bc
        y[f, t] += -ys / a
        y[t, f] += -ys / a
    return y


def build_extended_ybus(network: NetworkModel) -> ExtendedAdmittanceMatrix:
    """Admittance matrix extended with the per-bus injection-class column."""
    y = build_admittance_matrix(network)
    column = tuple(b.injection_class for b in network.buses)
    return ExtendedAdmittanceMatrix(y=y, injection_column=column, bus_ids=network.bus_ids)
