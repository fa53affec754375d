"""Feeder graph data model, document ingestion, fault scenarios, and radiality utilities.

A feeder is described by a single JSON document (see :func:`load_network`).
Impedances are given in ohms and demands in kW/kvar; everything is converted
to per-unit on the document's MVA/kV bases at load time.  All model objects
are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx


class FeederFormatError(ValueError):
    """Raised when a feeder or scenario document cannot be parsed."""


class ValidationError(ValueError):
    """Raised when a parsed object violates a model invariant."""


@dataclass(frozen=True)
class Bus:
    """A distribution bus with demand and voltage limits (per unit)."""

    id: int
    p_demand: float  # pu
    q_demand: float  # pu
    v_min: float  # pu
    v_max: float  # pu
    is_substation: bool
    pd_kw: float  # raw document value, kept for exact round-trips
    qd_kvar: float


@dataclass(frozen=True)
class Line:
    """A distribution line; ``switchable`` lines carry a tie/sectionalizing switch."""

    id: int
    from_bus: int
    to_bus: int
    r: float  # pu
    x: float  # pu
    switchable: bool
    normally_open: bool
    r_ohm: float
    x_ohm: float


@dataclass(frozen=True)
class Network:
    """Validated feeder graph. Buses and lines are stored sorted by id."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    base_mva: float
    base_kv: float
    _bus_index: dict = field(default_factory=dict, compare=False, repr=False)
    _line_index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "buses", tuple(sorted(self.buses, key=lambda b: b.id)))
        object.__setattr__(self, "lines", tuple(sorted(self.lines, key=lambda l: l.id)))
        object.__setattr__(self, "_bus_index", {b.id: b for b in self.buses})
        object.__setattr__(self, "_line_index", {l.id: l for l in self.lines})
        _validate_network(self)

    def bus(self, bus_id: int) -> Bus:
        return self._bus_index[bus_id]

    def line(self, line_id: int) -> Line:
        return self._line_index[line_id]

    @property
    def substation(self) -> Bus:
        return next(b for b in self.buses if b.is_substation)

    @property
    def switchable_lines(self) -> tuple[Line, ...]:
        return tuple(l for l in self.lines if l.switchable)

    @property
    def switch_ids(self) -> tuple[int, ...]:
        return tuple(l.id for l in self.switchable_lines)


@dataclass(frozen=True)
class FaultScenario:
    """A named set of faulted (outaged) non-switchable lines."""

    name: str
    faulted_lines: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "faulted_lines", frozenset(int(i) for i in self.faulted_lines))


NO_FAULT = FaultScenario(name="no-fault", faulted_lines=frozenset())


@dataclass(frozen=True)
class SwitchAssignment:
    """Closed/open decision for every switchable line, keyed by line id."""

    statuses: tuple[tuple[int, bool], ...]

    def __post_init__(self) -> None:
        items = tuple(sorted((int(k), bool(v)) for k, v in self.statuses))
        ids = [k for k, _ in items]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate switch id in assignment")
        object.__setattr__(self, "statuses", items)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, bool]) -> "SwitchAssignment":
        return cls(statuses=tuple(mapping.items()))

    def as_dict(self) -> dict[int, bool]:
        return dict(self.statuses)

    def closed(self, line_id: int) -> bool:
        for k, v in self.statuses:
            if k == line_id:
                return v
        raise KeyError(f"line {line_id} is not in the assignment")

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.statuses)

    def hamming(self, other: "SwitchAssignment") -> int:
        if self.ids != other.ids:
            raise ValidationError("assignments cover different switch sets")
        return sum(a != b for (_, a), (_, b) in zip(self.statuses, other.statuses))


def _validate_network(net: Network) -> None:
    if net.base_mva <= 0 or net.base_kv <= 0:
        raise ValidationError("per-unit bases must be positive")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("bus ids are not unique")
    substations = [b.id for b in net.buses if b.is_substation]
    if len(substations) != 1:
        raise ValidationError(f"expected exactly one substation, found {len(substations)}")
    for b in net.buses:
        if not (0.0 < b.v_min <= b.v_max):
            raise ValidationError(f"bus {b.id}: voltage bounds must satisfy 0 < v_min <= v_max")
        if b.p_demand < 0 or b.q_demand < 0:
            raise ValidationError(f"bus {b.id}: demands must be nonnegative")
        if b.is_substation and (b.p_demand != 0 or b.q_demand != 0):
            raise ValidationError(f"substation bus {b.id} must have zero demand")
    line_ids = [l.id for l in net.lines]
    if len(set(line_ids)) != len(line_ids):
        raise ValidationError("line ids are not unique")
    for l in net.lines:
        if l.from_bus not in net._bus_index:
            raise ValidationError(f"line {l.id}: from-bus {l.from_bus} does not exist")
        if l.to_bus not in net._bus_index:
            raise ValidationError(f"line {l.id}: to-bus {l.to_bus} does not exist")
        if l.from_bus == l.to_bus:
            raise ValidationError(f"line {l.id}: endpoints must differ")
        if l.r < 0 or l.x < 0 or l.r + l.x <= 0:
            raise ValidationError(f"line {l.id}: need r >= 0, x >= 0 and r + x > 0")
        if not l.switchable and l.normally_open:
            raise ValidationError(f"line {l.id}: only switchable lines may be normally open")
    g = nx.Graph()
    g.add_nodes_from(ids)
    g.add_edges_from((l.from_bus, l.to_bus) for l in net.lines)
    if len(net.buses) > 0 and not nx.is_connected(g):
        raise ValidationError("network graph is disconnected even with all switches closed")


def load_network(text: str) -> Network:
    """Parse and validate a feeder document.

    Document shape::

        {"base_mva": f, "base_kv": f,
         "buses": [{"id": n, "pd_kw": f, "qd_kvar": f, "vmin_pu": f,
                    "vmax_pu": f, "substation": b}, ...],
         "lines": [{"id": n, "from": n, "to": n, "r_ohm": f, "x_ohm": f,
                    "switchable": b, "normally_open": b}, ...]}

    Conversion: r_pu = r_ohm * base_mva / base_kv**2, power_pu = kW / (1000 * base_mva).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederFormatError(f"malformed feeder document: {exc}") from exc
    try:
        base_mva = float(doc["base_mva"])
        base_kv = float(doc["base_kv"])
        bus_docs = doc["buses"]
        line_docs = doc["lines"]
    except (KeyError, TypeError) as exc:
        raise FeederFormatError(f"feeder document missing required field: {exc}") from exc
    if base_mva <= 0 or base_kv <= 0:
        raise ValidationError("per-unit bases must be positive")
    z_base_inv = base_mva / base_kv**2
    s_base_kw = 1000.0 * base_mva
    buses = []
    for d in bus_docs:
        try:
            buses.append(
                Bus(
                    id=int(d["id"]),
                    p_demand=float(d["pd_kw"]) / s_base_kw,
                    q_demand=float(d["qd_kvar"]) / s_base_kw,
                    v_min=float(d["vmin_pu"]),
                    v_max=float(d["vmax_pu"]),
                    is_substation=bool(d.get("substation", False)),
                    pd_kw=float(d["pd_kw"]),
                    qd_kvar=float(d["qd_kvar"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FeederFormatError(f"bad bus entry {d!r}: {exc}") from exc
    lines = []
    for d in line_docs:
        try:
            lines.append(
                Line(
                    id=int(d["id"]),
                    from_bus=int(d["from"]),
                    to_bus=int(d["to"]),
                    r=float(d["r_ohm"]) * z_base_inv,
                    x=float(d["x_ohm"]) * z_base_inv,
                    switchable=bool(d.get("switchable", False)),
                    normally_open=bool(d.get("normally_open", False)),
                    r_ohm=float(d["r_ohm"]),
                    x_ohm=float(d["x_ohm"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FeederFormatError(f"bad line entry {d!r}: {exc}") from exc
    return Network(buses=tuple(buses), lines=tuple(lines), base_mva=base_mva, base_kv=base_kv)


def load_network_file(path: str | Path) -> Network:
    return load_network(Path(path).read_text())


def save_network(net: Network) -> str:
    """Serialize a network back to the feeder document format.

    Raw document units are preserved, so load -> save -> load round-trips
    to an identical Network.
    """
    doc = {
        "base_mva": net.base_mva,
        "base_kv": net.base_kv,
        "buses": [
            {
                "id": b.id,
                "pd_kw": b.pd_kw,
                "qd_kvar": b.qd_kvar,
                "vmin_pu": b.v_min,
                "vmax_pu": b.v_max,
                "substation": b.is_substation,
            }
            for b in net.buses
        ],
        "lines": [
            {
                "id": l.id,
                "from": l.from_bus,
                "to": l.to_bus,
                "r_ohm": l.r_ohm,
                "x_ohm": l.x_ohm,
                "switchable": l.switchable,
                "normally_open": l.normally_open,
            }
            for l in net.lines
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def load_scenario(text: str) -> FaultScenario:
    """Parse a scenario document: {"name": s, "faulted_lines": [n, ...]}."""
    try:
        doc = json.loads(text)
        return FaultScenario(name=str(doc["name"]), faulted_lines=frozenset(int(i) for i in doc["faulted_lines"]))
    except json.JSONDecodeError as exc:
        raise FeederFormatError(f"malformed scenario document: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise FeederFormatError(f"bad scenario document: {exc}") from exc


def load_scenario_file(path: str | Path) -> FaultScenario:
    return load_scenario(Path(path).read_text())


def validate_scenario(net: Network, scenario: FaultScenario) -> None:
    """Check that every faulted line exists and is non-switchable."""
    for lid in sorted(scenario.faulted_lines):
        if lid not in net._line_index:
            raise ValidationError(f"scenario {scenario.name!r}: faulted line {lid} does not exist")
        if net.line(lid).switchable:
            raise ValidationError(f"scenario {scenario.name!r}: line {lid} is switchable and cannot be faulted")


def validate_assignment(net: Network, assignment: SwitchAssignment) -> None:
    """Check that the assignment keys are exactly the switchable line ids."""
    expected = tuple(sorted(net.switch_ids))
    if assignment.ids != expected:
        raise ValidationError(f"assignment covers switches {assignment.ids}, expected {expected}")


def effective_status(net: Network, scenario: FaultScenario, assignment: SwitchAssignment) -> dict[int, bool]:
    """Closed/open status of every line under a fault scenario and switch decision.

    Non-switchable lines are closed unless faulted; switchable lines follow the
    assignment regardless of the scenario.
    """
    validate_scenario(net, scenario)
    validate_assignment(net, assignment)
    status = {}
    for l in net.lines:
        if l.switchable:
            status[l.id] = assignment.closed(l.id)
        else:
            status[l.id] = l.id not in scenario.faulted_lines
    return status


def is_spanning_tree(net: Network, closed: Iterable[int]) -> bool:
    """True iff the closed lines form a connected acyclic subgraph covering all buses."""
    closed = set(closed)
    unknown = closed - set(net._line_index)
    if unknown:
        raise ValidationError(f"unknown line ids: {sorted(unknown)}")
    if len(closed) != len(net.buses) - 1:
        return False
    g = nx.Graph()
    g.add_nodes_from(b.id for b in net.buses)
    g.add_edges_from((net.line(i).from_bus, net.line(i).to_bus) for i in closed)
    # right edge count + connected implies acyclic
    return nx.is_connected(g)


def enumerate_radial_configs(net: Network, scenario: FaultScenario) -> list[SwitchAssignment]:
    """All switch assignments whose effective status is a spanning tree.

    Candidates are the 2**|SW| assignments over the switchable lines, returned
    in lexicographic order of the (sorted-by-id) open/closed bit tuples.
    """
    validate_scenario(net, scenario)
    switch_ids = tuple(sorted(net.switch_ids))
    fixed_closed = [
        l.id for l in net.lines if not l.switchable and l.id not in scenario.faulted_lines
    ]
    result = []
    for bits in itertools.product((False, True), repeat=len(switch_ids)):
        assignment = SwitchAssignment.from_mapping(dict(zip(switch_ids, bits)))
        closed = fixed_closed + [i for i, v in zip(switch_ids, bits) if v]
        if is_spanning_tree(net, closed):
            result.append(assignment)
    return result
