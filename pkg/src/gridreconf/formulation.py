"""Reconfiguration model builders: branch-flow and bus-injection MICPs.

Both models share the same objective (grid import plus value-of-lost-load
weighted real curtailment), radiality rows, and switch-status coupling; they
differ in how line physics is written:

* branch-flow: per-line squared current with the cone
  P_ij^2 + Q_ij^2 <= nu_i^l * I_l and the quadratic voltage-drop equality;
* bus-injection: per-line auxiliary pair (R_l, T_l) with the cone
  R_l^2 + T_l^2 <= nu_i^l * nu_j^l and linear directed-flow definitions.

The conic IR's rotated cone means 2 p q >= ||u||^2, so each line carries one
auxiliary "half" variable (I/2 or nu_j^l/2) to express the product forms
exactly.  Open lines are driven to zero flow purely through the status bounds
on the per-line voltage copies; no big-M constants appear anywhere.

Flow-definition rows are multiplied through by r^2 + x^2 so coefficient
magnitudes stay at impedance scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .conic import ConicProgram, ProgramBuilder
from .netmodel import (
    FaultScenario,
    Network,
    SwitchAssignment,
    ValidationError,
    validate_scenario,
)

BRANCH_FLOW = "branch-flow"
BUS_INJECTION = "bus-injection"
DEFAULT_VOLL = 1000.0


@dataclass(frozen=True)
class MicpModel:
    """A built reconfiguration program plus its binary metadata and symbol map."""

    program: ConicProgram
    binary_vars: tuple[int, ...]
    var_map: dict
    kind: str
    voll: float
    network: Network
    scenario: FaultScenario
    line_cones: dict = field(default_factory=dict, repr=False)

    def var(self, *key) -> int:
        return self.var_map[key]


@dataclass(frozen=True)
class LineFlow:
    line_id: int
    closed: bool
    p: float
    q: float
    current_sq: float
    beta_fwd: float
    beta_rev: float


@dataclass(frozen=True)
class FlowSolution:
    """Physical quantities decoded from a solver vector."""

    kind: str
    bus_voltage_sq: dict[int, float]
    served_p: dict[int, float]
    curtailed_p: dict[int, float]
    served_q: dict[int, float]
    curtailed_q: dict[int, float]
    lines: tuple[LineFlow, ...]
    p_grid: float
    q_grid: float
    objective: float
    assignment: SwitchAssignment
    x: np.ndarray = field(repr=False)

    def line(self, line_id: int) -> LineFlow:
        for lf in self.lines:
            if lf.line_id == line_id:
                return lf
        raise KeyError(line_id)

    def total_curtailed_p(self) -> float:
        return float(sum(self.curtailed_p.values()))

    def validity_report(self, network: Network, tol: float = 1e-6) -> list[str]:
        """Human-readable list of violated physical invariants (empty when clean)."""
        issues = []
        for bus in network.buses:
            nu = self.bus_voltage_sq[bus.id]
            if nu < bus.v_min**2 - tol or nu > bus.v_max**2 + tol:
                issues.append(
                    f"bus {bus.id}: squared voltage {nu!r} outside "
                    f"[{bus.v_min**2!r}, {bus.v_max**2!r}]"
                )
            if abs(self.served_p[bus.id] + self.curtailed_p[bus.id] - bus.p_demand) > tol:
                issues.append(f"bus {bus.id}: served + curtailed real demand mismatch")
            if abs(self.served_q[bus.id] + self.curtailed_q[bus.id] - bus.q_demand) > tol:
                issues.append(f"bus {bus.id}: served + curtailed reactive demand mismatch")
        for lf in self.lines:
            if not lf.closed and max(abs(lf.p), abs(lf.q), abs(lf.current_sq)) > tol:
                issues.append(f"line {lf.line_id}: open but carries flow or current")
        return issues


def _line_status_rows(builder: ProgramBuilder, sym: dict, line, side: str,
                      bus_vmax_sq: float, alpha_idx: int | None, delta: float) -> None:
    """Couple a per-line voltage copy to its bus voltage through the line status.

    Encodes 0 <= nu_side^l <= vmax^2 * s and 0 <= nu - nu_side^l <= vmax^2 * (1 - s)
    with s either the switch variable or the constant fault status.
    """
    nu_l = sym["nu_from", line.id] if side == "from" else sym["nu_to", line.id]
    bus = line.from_bus if side == "from" else line.to_bus
    nu_bus = sym["nu", bus]
    s1 = builder.add_var(nonneg=True)
    s2 = builder.add_var(nonneg=True)
    s3 = builder.add_var(nonneg=True)
    if alpha_idx is not None:
        builder.add_row({nu_l: 1.0, alpha_idx: -bus_vmax_sq, s1: 1.0}, 0.0)
        builder.add_row({nu_bus: 1.0, nu_l: -1.0, s2: -1.0}, 0.0)
        builder.add_row({nu_bus: 1.0, nu_l: -1.0, alpha_idx: bus_vmax_sq, s3: 1.0}, bus_vmax_sq)
    else:
        builder.add_row({nu_l: 1.0, s1: 1.0}, bus_vmax_sq * delta)
        builder.add_row({nu_bus: 1.0, nu_l: -1.0, s2: -1.0}, 0.0)
        builder.add_row({nu_bus: 1.0, nu_l: -1.0, s3: 1.0}, bus_vmax_sq * (1.0 - delta))


def _build_common(builder: ProgramBuilder, net: Network, scenario: FaultScenario,
                  voll: float) -> tuple[dict, dict[int, float], list[int]]:
    """Variables and rows shared by both formulations.

    Returns the symbol map, the per-line constant status (non-switchable lines
    only), and the binary variable indices in line-id order.
    """
    sym: dict = {}
    sub = net.substation.id
    for bus in net.buses:
        sym["nu", bus.id] = builder.add_var(box=(bus.v_min**2, bus.v_max**2))
        sym["pds", bus.id] = builder.add_var(nonneg=True)
        sym["pc", bus.id] = builder.add_var(
            nonneg=True, cost=voll if bus.id != sub else 0.0)
        sym["qds", bus.id] = builder.add_var(nonneg=True)
        sym["qc", bus.id] = builder.add_var(nonneg=True)
        builder.add_row({sym["pds", bus.id]: 1.0, sym["pc", bus.id]: 1.0}, bus.p_demand)
        builder.add_row({sym["qds", bus.id]: 1.0, sym["qc", bus.id]: 1.0}, bus.q_demand)
    sym["pgrid",] = builder.add_var(cost=1.0)
    sym["qgrid",] = builder.add_var()
    # slack-bus voltage reference
    builder.add_row({sym["nu", sub]: 1.0}, 1.0)

    delta: dict[int, float] = {}
    binaries: list[int] = []
    for line in net.lines:
        if line.switchable:
            sym["alpha", line.id] = builder.add_var(box=(0.0, 1.0))
            binaries.append(sym["alpha", line.id])
        else:
            delta[line.id] = 0.0 if line.id in scenario.faulted_lines else 1.0
        # parent-pointer pair; the substation side and faulted lines are pinned
        dead = delta.get(line.id) == 0.0
        fwd_box = (0.0, 0.0) if dead or line.from_bus == sub else (0.0, 1.0)
        rev_box = (0.0, 0.0) if dead or line.to_bus == sub else (0.0, 1.0)
        sym["beta_fwd", line.id] = builder.add_var(box=fwd_box)
        sym["beta_rev", line.id] = builder.add_var(box=rev_box)
        pair = {sym["beta_fwd", line.id]: 1.0, sym["beta_rev", line.id]: 1.0}
        if line.switchable:
            pair[sym["alpha", line.id]] = -1.0
            builder.add_row(pair, 0.0)
        else:
            builder.add_row(pair, delta[line.id])
    for bus in net.buses:
        if bus.id == sub:
            continue
        row: dict[int, float] = {}
        for line in net.lines:
            if line.from_bus == bus.id:
                row[sym["beta_fwd", line.id]] = 1.0
            elif line.to_bus == bus.id:
                row[sym["beta_rev", line.id]] = 1.0
        builder.add_row(row, 1.0)
    return sym, delta, binaries


def build_branch_flow(net: Network, scenario: FaultScenario,
                      voll: float = DEFAULT_VOLL) -> MicpModel:
    """Branch-flow reconfiguration MICP (squared voltages/currents, line P/Q)."""
    if voll <= 0:
        raise ValidationError("voll must be positive")
    validate_scenario(net, scenario)
    builder = ProgramBuilder()
    sym, delta, binaries = _build_common(builder, net, scenario, voll)
    sub = net.substation.id
    line_cones: dict[int, tuple[int, ...]] = {}
    for line in net.lines:
        lid = line.id
        if delta.get(lid) == 0.0:
            # faulted line: the whole physical block is structurally zero
            sym["nu_from", lid] = builder.add_var(box=(0.0, 0.0))
            sym["nu_to", lid] = builder.add_var(box=(0.0, 0.0))
            sym["isq", lid] = builder.add_var(box=(0.0, 0.0))
            sym["p", lid] = builder.add_var(box=(0.0, 0.0))
            sym["q", lid] = builder.add_var(box=(0.0, 0.0))
            continue
        sym["nu_from", lid] = builder.add_var()
        sym["nu_to", lid] = builder.add_var(nonneg=True)
        sym["isq", lid] = builder.add_var(nonneg=True)
        sym["p", lid] = builder.add_var()
        sym["q", lid] = builder.add_var()
        half = builder.add_var()
        builder.add_row({sym["isq", lid]: 1.0, half: -2.0}, 0.0)
        builder.add_rotated_cone(sym["nu_from", lid], half, [sym["p", lid], sym["q", lid]])
        line_cones[lid] = (sym["nu_from", lid], half, sym["p", lid], sym["q", lid])
        r, x = line.r, line.x
        builder.add_row(
            {
                sym["nu_to", lid]: 1.0,
                sym["nu_from", lid]: -1.0,
                sym["p", lid]: 2.0 * r,
                sym["q", lid]: 2.0 * x,
                sym["isq", lid]: -(r**2 + x**2),
            },
            0.0,
        )
        a_idx = sym.get(("alpha", lid))
        _line_status_rows(builder, sym, line, "from", net.bus(line.from_bus).v_max**2,
                          a_idx, delta.get(lid, 1.0))
        _line_status_rows(builder, sym, line, "to", net.bus(line.to_bus).v_max**2,
                          a_idx, delta.get(lid, 1.0))
    # nodal balances; the substation row instead defines the grid import
    for bus in net.buses:
        p_row: dict[int, float] = {}
        q_row: dict[int, float] = {}
        for line in net.lines:
            if line.to_bus == bus.id:
                p_row[sym["p", line.id]] = 1.0
                p_row[sym["isq", line.id]] = -line.r
                q_row[sym["q", line.id]] = 1.0
                q_row[sym["isq", line.id]] = -line.x
            elif line.from_bus == bus.id:
                p_row[sym["p", line.id]] = -1.0
                q_row[sym["q", line.id]] = -1.0
        if bus.id == sub:
            p_row[sym["pgrid",]] = 1.0
            q_row[sym["qgrid",]] = 1.0
            builder.add_row(p_row, 0.0)
            builder.add_row(q_row, 0.0)
        else:
            p_row[sym["pds", bus.id]] = -1.0
            q_row[sym["qds", bus.id]] = -1.0
            builder.add_row(p_row, 0.0)
            builder.add_row(q_row, 0.0)
    return MicpModel(
        program=builder.build(),
        binary_vars=tuple(binaries),
        var_map=sym,
        kind=BRANCH_FLOW,
        voll=voll,
        network=net,
        scenario=scenario,
    )


def build_bus_injection(net: Network, scenario: FaultScenario,
                        voll: float = DEFAULT_VOLL) -> MicpModel:
    """Bus-injection reconfiguration MICP (per-line R/T auxiliaries, directed flows)."""
    if voll <= 0:
        raise ValidationError("voll must be positive")
    validate_scenario(net, scenario)
    builder = ProgramBuilder()
    sym, delta, binaries = _build_common(builder, net, scenario, voll)
    sub = net.substation.id
    for line in net.lines:
        lid = line.id
        sym["nu_from", lid] = builder.add_var()
        sym["nu_to", lid] = builder.add_var(nonneg=True)
        sym["isq", lid] = builder.add_var(nonneg=True)
        sym["r_aux", lid] = builder.add_var()
        sym["t_aux", lid] = builder.add_var()
        sym["p", lid] = builder.add_var()
        sym["q", lid] = builder.add_var()
        sym["p_rev", lid] = builder.add_var()
        sym["q_rev", lid] = builder.add_var()
        r_nn = builder.add_var(nonneg=True)
        builder.add_row({sym["r_aux", lid]: 1.0, r_nn: -1.0}, 0.0)
        half = builder.add_var()
        builder.add_row({sym["nu_to", lid]: 1.0, half: -2.0}, 0.0)
        builder.add_rotated_cone(sym["nu_from", lid], half,
                                 [sym["r_aux", lid], sym["t_aux", lid]])
        r, x = line.r, line.x
        z2 = r**2 + x**2
        nf, nt = sym["nu_from", lid], sym["nu_to", lid]
        ra, ta = sym["r_aux", lid], sym["t_aux", lid]
        builder.add_row({sym["p", lid]: z2, nf: -r, ra: r, ta: -x}, 0.0)
        builder.add_row({sym["q", lid]: z2, nf: -x, ra: x, ta: r}, 0.0)
        builder.add_row({sym["p_rev", lid]: z2, nt: -r, ra: r, ta: x}, 0.0)
        builder.add_row({sym["q_rev", lid]: z2, nt: -x, ra: x, ta: -r}, 0.0)
        builder.add_row({sym["isq", lid]: z2, nf: -1.0, nt: -1.0, ra: 2.0}, 0.0)
        a_idx = sym.get(("alpha", lid))
        _line_status_rows(builder, sym, line, "from", net.bus(line.from_bus).v_max**2,
                          a_idx, delta.get(lid, 1.0))
        _line_status_rows(builder, sym, line, "to", net.bus(line.to_bus).v_max**2,
                          a_idx, delta.get(lid, 1.0))
    # nodal balance: served demand plus power leaving the bus sums to zero
    for bus in net.buses:
        p_row: dict[int, float] = {}
        q_row: dict[int, float] = {}
        for line in net.lines:
            if line.from_bus == bus.id:
                p_row[sym["p", line.id]] = 1.0
                q_row[sym["q", line.id]] = 1.0
            elif line.to_bus == bus.id:
                p_row[sym["p_rev", line.id]] = 1.0
                q_row[sym["q_rev", line.id]] = 1.0
        if bus.id == sub:
            p_row[sym["pgrid",]] = -1.0
            q_row[sym["qgrid",]] = -1.0
            builder.add_row(p_row, 0.0)
            builder.add_row(q_row, 0.0)
        else:
            p_row[sym["pds", bus.id]] = 1.0
            q_row[sym["qds", bus.id]] = 1.0
            builder.add_row(p_row, 0.0)
            builder.add_row(q_row, 0.0)
    return MicpModel(
        program=builder.build(),
        binary_vars=tuple(binaries),
        var_map=sym,
        kind=BUS_INJECTION,
        voll=voll,
        network=net,
        scenario=scenario,
    )


def build_model(kind: str, net: Network, scenario: FaultScenario,
                voll: float = DEFAULT_VOLL) -> MicpModel:
    if kind == BRANCH_FLOW:
        return build_branch_flow(net, scenario, voll)
    if kind == BUS_INJECTION:
        return build_bus_injection(net, scenario, voll)
    raise ValueError(f"unknown model kind {kind!r}")


def fix_binaries(model: MicpModel, assignment: SwitchAssignment) -> ConicProgram:
    """Continuous subproblem with every switch variable pinned to its decision."""
    replacements = {}
    given = assignment.as_dict()
    for line in model.network.switchable_lines:
        if line.id not in given:
            raise ValidationError(f"assignment is missing switch {line.id}")
        v = 1.0 if given[line.id] else 0.0
        replacements[model.var("alpha", line.id)] = (v, v)
    return model.program.with_boxes(replacements)


def relax_binaries(model: MicpModel) -> ConicProgram:
    """Continuous relaxation: switch variables range over [0, 1]."""
    return model.program.with_boxes(
        {idx: (0.0, 1.0) for idx in model.binary_vars})


def extract_solution(model: MicpModel, x: np.ndarray,
                     assignment: SwitchAssignment) -> FlowSolution:
    """Decode a solver vector into named physical quantities."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.program.n_vars,):
        raise ValidationError(
            f"solver vector has length {x.shape}, expected {model.program.n_vars}")
    net = model.network
    sym = model.var_map
    bus_voltage_sq = {b.id: float(x[sym["nu", b.id]]) for b in net.buses}
    served_p = {b.id: float(x[sym["pds", b.id]]) for b in net.buses}
    curtailed_p = {b.id: float(x[sym["pc", b.id]]) for b in net.buses}
    served_q = {b.id: float(x[sym["qds", b.id]]) for b in net.buses}
    curtailed_q = {b.id: float(x[sym["qc", b.id]]) for b in net.buses}
    given = assignment.as_dict()
    lines = []
    for line in net.lines:
        if line.switchable:
            closed = bool(given[line.id])
        else:
            closed = line.id not in model.scenario.faulted_lines
        lines.append(
            LineFlow(
                line_id=line.id,
                closed=closed,
                p=float(x[sym["p", line.id]]),
                q=float(x[sym["q", line.id]]),
                current_sq=float(x[sym["isq", line.id]]),
                beta_fwd=float(x[sym["beta_fwd", line.id]]),
                beta_rev=float(x[sym["beta_rev", line.id]]),
            )
        )
    objective = model.program.objective(x)
    sub = net.substation.id
    recomputed = float(x[sym["pgrid",]]) + model.voll * sum(
        curtailed_p[b.id] for b in net.buses if b.id != sub)
    if abs(objective - recomputed) > 1e-9 * max(1.0, abs(objective)):
        raise RuntimeError(
            f"objective cross-check failed: c.x = {objective!r}, "
            f"decoded = {recomputed!r}")
    return FlowSolution(
        kind=model.kind,
        bus_voltage_sq=bus_voltage_sq,
        served_p=served_p,
        curtailed_p=curtailed_p,
        served_q=served_q,
        curtailed_q=curtailed_q,
        lines=tuple(lines),
        p_grid=float(x[sym["pgrid",]]),
        q_grid=float(x[sym["qgrid",]]),
        objective=objective,
        assignment=assignment,
        x=x,
    )


def cone_exactness(model: MicpModel, solution: FlowSolution) -> float:
    """Worst relaxation residual over closed lines (0 when every line is open).

    branch-flow: |P^2 + Q^2 - nu_i^l I_l|; bus-injection: |R^2 + T^2 - nu_i^l nu_j^l|.
    """
    x = solution.x
    sym = model.var_map
    worst = 0.0
    for lf in solution.lines:
        if not lf.closed:
            continue
        lid = lf.line_id
        if model.kind == BRANCH_FLOW:
            res = (x[sym["p", lid]] ** 2 + x[sym["q", lid]] ** 2
                   - x[sym["nu_from", lid]] * x[sym["isq", lid]])
        else:
            res = (x[sym["r_aux", lid]] ** 2 + x[sym["t_aux", lid]] ** 2
                   - x[sym["nu_from", lid]] * x[sym["nu_to", lid]])
        worst = max(worst, abs(float(res)))
    return worst
